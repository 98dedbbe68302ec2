//! Continuous-control sorting benchmark with an evolutionary trajectory
//! oracle, behavioral-cloning warm-starts and PPO training.
//!
//! The crate is organized around the experiment pipeline:
//!
//! - [`env`] — seeded two-stage sorting simulator
//! - [`cma`] — CMA-ES and frozen-seed trajectory optimization
//! - [`nn`] — dense networks, analytic gradients, Adam, checkpoints
//! - [`ppo`] — Gaussian-policy PPO with periodic evaluation
//! - [`bc`] — behavioral-cloning pretraining on oracle demonstrations
//! - [`agents`] — uniform agent interface and non-learning baselines
//! - [`bench`] — seeded multi-agent benchmark and summary statistics
//! - [`cli`] — subcommand entry points used by the `evosort` binary

pub mod agents;
pub mod bc;
pub mod bench;
pub mod cli;
pub mod cma;
pub mod env;
pub mod error;
pub mod exec;
pub mod nn;
pub mod ppo;
pub mod rng;
pub mod seeds;
pub mod textio;

pub use error::{Error, Result};
