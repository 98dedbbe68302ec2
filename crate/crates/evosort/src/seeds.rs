//! Seed discipline shared by the whole pipeline.
//!
//! Test, evaluation, training and demonstration episodes draw from strictly
//! separated seed ranges so that no agent is ever scored on inputs it saw
//! during training or demonstration generation.

use crate::error::{Error, Result};

/// Benchmark test seeds: `0..20`.
pub const TEST_SEED_BASE: u64 = 0;
pub const TEST_SEED_COUNT: u64 = 20;

/// Periodic-evaluation seeds during training: `500..505`.
pub const EVAL_SEED_BASE: u64 = 500;
pub const EVAL_SEED_COUNT: u64 = 5;

/// First training episode seed; training stays within `[1000, 3000)`.
pub const TRAIN_SEED_BASE: u64 = 1000;
pub const TRAIN_SEED_LIMIT: u64 = 3000;

/// Demonstration seeds: `3000..3100`.
pub const DEMO_SEED_BASE: u64 = 3000;
pub const DEMO_SEED_COUNT: u64 = 100;

pub fn test_seeds() -> impl Iterator<Item = u64> {
    TEST_SEED_BASE..TEST_SEED_BASE + TEST_SEED_COUNT
}

pub fn eval_seeds() -> impl Iterator<Item = u64> {
    EVAL_SEED_BASE..EVAL_SEED_BASE + EVAL_SEED_COUNT
}

pub fn demo_seeds() -> impl Iterator<Item = u64> {
    DEMO_SEED_BASE..DEMO_SEED_BASE + DEMO_SEED_COUNT
}

/// Checks that half-open seed ranges are pairwise disjoint.
pub fn assert_disjoint(ranges: &[(&str, u64, u64)]) -> Result<()> {
    for (i, &(name_a, start_a, end_a)) in ranges.iter().enumerate() {
        for &(name_b, start_b, end_b) in &ranges[i + 1..] {
            if start_a < end_b && start_b < end_a {
                return Err(Error::Config(format!(
                    "seed ranges overlap: {name_a} [{start_a}, {end_a}) and {name_b} [{start_b}, {end_b})"
                )));
            }
        }
    }
    Ok(())
}
