//! `evosort` — demonstration generation, training and benchmarking for the
//! continuous sorting benchmark.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use evosort::cli;
use evosort::ppo::TrainConfig;
use evosort::seeds;

#[derive(Parser)]
#[command(
    name = "evosort",
    about = "Continuous sorting benchmark: CMA-ES oracle demos, PPO/PPO+BC training, seeded benchmark",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Environment parameter overrides; flags mirror the config file keys.
#[derive(Args, Debug, Default)]
struct EnvOverrides {
    #[arg(long)]
    episode_length: Option<usize>,
    #[arg(long)]
    q_max: Option<f64>,
    #[arg(long)]
    theta_a: Option<f64>,
    #[arg(long)]
    theta_b: Option<f64>,
    #[arg(long)]
    accuracy_base_a: Option<f64>,
    #[arg(long)]
    accuracy_base_b: Option<f64>,
    #[arg(long)]
    accuracy_drop_a: Option<f64>,
    #[arg(long)]
    accuracy_drop_b: Option<f64>,
    #[arg(long)]
    accuracy_exponent: Option<f64>,
    #[arg(long)]
    history_len: Option<usize>,
    #[arg(long)]
    sampling_mode: Option<String>,
    #[arg(long)]
    batch_size_min_frac: Option<f64>,
    #[arg(long)]
    batch_size_max_frac: Option<f64>,
}

impl EnvOverrides {
    fn as_kv(&self) -> Vec<(String, String)> {
        let mut kv = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.push((k.to_string(), v));
            }
        };
        push("episode_length", self.episode_length.map(|v| v.to_string()));
        push("q_max", self.q_max.map(|v| v.to_string()));
        push("theta_a", self.theta_a.map(|v| v.to_string()));
        push("theta_b", self.theta_b.map(|v| v.to_string()));
        push(
            "accuracy_base_a",
            self.accuracy_base_a.map(|v| v.to_string()),
        );
        push(
            "accuracy_base_b",
            self.accuracy_base_b.map(|v| v.to_string()),
        );
        push(
            "accuracy_drop_a",
            self.accuracy_drop_a.map(|v| v.to_string()),
        );
        push(
            "accuracy_drop_b",
            self.accuracy_drop_b.map(|v| v.to_string()),
        );
        push(
            "accuracy_exponent",
            self.accuracy_exponent.map(|v| v.to_string()),
        );
        push("history_len", self.history_len.map(|v| v.to_string()));
        push("sampling_mode", self.sampling_mode.clone());
        push(
            "batch_size_min_frac",
            self.batch_size_min_frac.map(|v| v.to_string()),
        );
        push(
            "batch_size_max_frac",
            self.batch_size_max_frac.map(|v| v.to_string()),
        );
        kv
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate oracle demonstration trajectories with CMA-ES.
    DemoGen {
        /// Flat key-value environment config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// First demonstration seed.
        #[arg(long, default_value_t = seeds::DEMO_SEED_BASE)]
        seed_base: u64,
        /// Number of demonstrations.
        #[arg(long, default_value_t = seeds::DEMO_SEED_COUNT)]
        count: u64,
        /// Worker threads for candidate evaluation (default: rayon's choice).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory (default: $EVOSORT_OUT/demos).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        env: EnvOverrides,
    },
    /// Train PPO, optionally warm-started with behavioral cloning.
    Train {
        /// ppo | ppo_bc
        #[arg(long)]
        variant: cli::TrainVariant,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Demonstration directory (required for ppo_bc).
        #[arg(long)]
        demos: Option<PathBuf>,
        /// First training episode seed.
        #[arg(long, default_value_t = seeds::TRAIN_SEED_BASE)]
        train_seed: u64,
        /// Network initialization seed (shared across matched run pairs).
        #[arg(long, default_value_t = 0)]
        init_seed: u64,
        /// Total environment steps.
        #[arg(long)]
        total_timesteps: Option<u64>,
        /// Evaluation cadence in environment steps.
        #[arg(long)]
        eval_freq: Option<u64>,
        /// Output directory (default: $EVOSORT_OUT/train_<variant>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        env: EnvOverrides,
    },
    /// Run the eight-agent benchmark over the 20 test seeds.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding ppo/, ppo_bc/ checkpoints (and optional oracle/).
        #[arg(long)]
        artifacts: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory (default: $EVOSORT_OUT/benchmark).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        env: EnvOverrides,
    },
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::DemoGen {
            config,
            seed_base,
            count,
            jobs,
            out,
            env,
        } => {
            let env_config = cli::resolve_env_config(config.as_deref(), &env.as_kv())?;
            let out = out.unwrap_or_else(|| cli::default_out_dir("demos"));
            let outcome = cli::cmd_demo_gen(&env_config, seed_base, count, jobs, &out)?;
            println!(
                "demo-gen: {} files in {} (mean demo reward {:.3})",
                outcome.written.len(),
                out.display(),
                outcome.mean_demo_reward
            );
            if !outcome.failures.is_empty() {
                for (seed, error) in &outcome.failures {
                    eprintln!("demo-gen: seed {seed} failed: {error}");
                }
                anyhow::bail!(
                    "{} of {count} demonstrations failed; see {}",
                    outcome.failures.len(),
                    outcome.manifest.display()
                );
            }
            Ok(())
        }
        Command::Train {
            variant,
            config,
            demos,
            train_seed,
            init_seed,
            total_timesteps,
            eval_freq,
            out,
            env,
        } => {
            let env_config = cli::resolve_env_config(config.as_deref(), &env.as_kv())?;
            let mut train_config = TrainConfig {
                train_seed,
                init_seed,
                ..TrainConfig::default()
            };
            if let Some(t) = total_timesteps {
                train_config.total_timesteps = t;
            }
            if let Some(f) = eval_freq {
                train_config.eval_freq = f;
            }
            let out =
                out.unwrap_or_else(|| cli::default_out_dir(&format!("train_{}", variant.as_str())));
            let outcome =
                cli::cmd_train(&env_config, &train_config, variant, demos.as_deref(), &out)?;
            println!(
                "train {}: best eval {:.3} @ {} steps, final eval {:.3}, artifacts in {}",
                variant.as_str(),
                outcome.outcome.best_eval.mean_return,
                outcome.outcome.best_eval.steps,
                outcome
                    .outcome
                    .eval_curve
                    .last()
                    .map(|p| p.mean_return)
                    .unwrap_or(f64::NAN),
                out.display()
            );
            Ok(())
        }
        Command::Benchmark {
            config,
            artifacts,
            jobs,
            out,
            env,
        } => {
            let env_config = cli::resolve_env_config(config.as_deref(), &env.as_kv())?;
            let out = out.unwrap_or_else(|| cli::default_out_dir("benchmark"));
            let outcome = cli::cmd_benchmark(&env_config, &artifacts, &out, jobs)?;
            for summary in outcome.report.summarize() {
                println!(
                    "{:12} mean {:8.3}  std {:7.3}  min {:8.3}  max {:8.3}",
                    summary.agent, summary.mean, summary.std, summary.min, summary.max
                );
            }
            println!("benchmark: reports in {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run().context("evosort failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err:#}");
            ExitCode::FAILURE
        }
    }
}
