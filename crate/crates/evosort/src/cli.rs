//! Subcommand entry points for the `evosort` binary.
//!
//! Each subcommand resolves its configuration (defaults, then config file,
//! then flag overrides), runs the corresponding pipeline stage, writes its
//! artifacts, and finishes with an atomically written manifest that records
//! every config value, seed range and artifact path needed to reproduce the
//! run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::bc::{bc_loss_csv, bc_pretrain, DemoSet};
use crate::bench::{run_benchmark, BenchAgent, BenchmarkReport};
use crate::cma::{optimize_trajectory, CmaConfig, Demonstration};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::exec;
use crate::ppo::{eval_curve_csv, train, GaussianPolicy, TrainConfig, TrainOutcome};
use crate::rng::{seeded_rng, Stream};
use crate::seeds;
use crate::textio::atomic_write;

/// Environment variable naming the default output root.
pub const OUT_ENV_VAR: &str = "EVOSORT_OUT";

/// Default output directory for a subcommand: `$EVOSORT_OUT/<name>` when the
/// variable is set, `./evosort-out/<name>` otherwise.
pub fn default_out_dir(subcommand: &str) -> PathBuf {
    let root = std::env::var_os(OUT_ENV_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("evosort-out"));
    root.join(subcommand)
}

/// Resolves the environment config: defaults, then the optional config
/// file, then `key=value` flag overrides, validated at the end.
pub fn resolve_env_config(
    config_path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<EnvConfig> {
    let mut config = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            EnvConfig::from_kv_str(&text)?
        }
        None => EnvConfig::default(),
    };
    for (key, value) in overrides {
        config.apply_kv(key, value)?;
    }
    config.validate()?;
    Ok(config)
}

/// Ordered key-value record of one run, written atomically at run end.
#[derive(Debug)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
    started: Instant,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        let mut manifest = Self {
            entries: Vec::new(),
            started: Instant::now(),
        };
        manifest.push("subcommand", subcommand);
        manifest
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn push_env_config(&mut self, config: &EnvConfig) {
        for line in config.to_kv_string().lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.push(&format!("env.{}", k.trim()), v.trim());
            }
        }
    }

    pub fn push_train_config(&mut self, config: &TrainConfig) {
        self.push("train.total_timesteps", config.total_timesteps);
        self.push("train.eval_freq", config.eval_freq);
        self.push("train.n_steps", config.n_steps);
        self.push("train.minibatch_size", config.minibatch_size);
        self.push("train.update_epochs", config.update_epochs);
        self.push("train.gamma", config.gamma);
        self.push("train.gae_lambda", config.gae_lambda);
        self.push("train.clip", config.clip);
        self.push("train.value_coef", config.value_coef);
        self.push("train.entropy_coef", config.entropy_coef);
        self.push("train.max_grad_norm", config.max_grad_norm);
        self.push("train.learning_rate", config.learning_rate);
        self.push("train.train_seed", config.train_seed);
        self.push("train.init_seed", config.init_seed);
        self.push("train.eval_episodes", config.eval_episodes);
        self.push("train.eval_seed_base", config.eval_seed_base);
    }

    /// Writes `manifest.txt` in `dir`, appending the wall-clock duration.
    pub fn write(mut self, dir: &Path) -> Result<PathBuf> {
        self.push(
            "duration_seconds",
            format!("{:.3}", self.started.elapsed().as_secs_f64()),
        );
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        let path = dir.join("manifest.txt");
        atomic_write(&path, &out)?;
        Ok(path)
    }
}

/// Outcome of `demo-gen`.
#[derive(Debug)]
pub struct DemoGenOutcome {
    pub written: Vec<PathBuf>,
    pub failures: Vec<(u64, String)>,
    pub mean_demo_reward: f64,
    pub manifest: PathBuf,
}

/// Optimizes one oracle trajectory per seed and writes the demonstration
/// files. Failures do not abort the batch: completed files are kept and the
/// manifest lists every failed seed.
pub fn cmd_demo_gen(
    env_config: &EnvConfig,
    seed_base: u64,
    count: u64,
    jobs: Option<usize>,
    out_dir: &Path,
) -> Result<DemoGenOutcome> {
    env_config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let cma_config = CmaConfig::for_trajectory(env_config.episode_length);
    let seed_list: Vec<u64> = (seed_base..seed_base + count).collect();

    // Demo generation is a pure function of the environment seed: the
    // optimizer reuses it, so a rerun reproduces every file bitwise.
    let results = exec::run_with_jobs(jobs, || {
        exec::map_ordered(&seed_list, |&seed| {
            optimize_trajectory(env_config, seed, &cma_config, seed)
        })
    });

    let mut manifest = RunManifest::new("demo-gen");
    manifest.push_env_config(env_config);
    manifest.push("cma.lambda", cma_config.lambda);
    manifest.push("cma.sigma0", cma_config.sigma0);
    manifest.push("cma.max_generations", cma_config.max_generations);
    manifest.push("seed_base", seed_base);
    manifest.push("seed_count", count);

    let mut written = Vec::new();
    let mut failures = Vec::new();
    let mut reward_sum = 0.0;
    for (seed, result) in seed_list.iter().zip(results) {
        match result.and_then(|demo| {
            let path = out_dir.join(Demonstration::file_name(demo.seed));
            demo.save(&path)?;
            Ok((path, demo.cumulative_reward))
        }) {
            Ok((path, reward)) => {
                reward_sum += reward;
                written.push(path);
            }
            Err(e) => failures.push((*seed, e.to_string())),
        }
    }
    let mean_demo_reward = if written.is_empty() {
        f64::NAN
    } else {
        reward_sum / written.len() as f64
    };

    manifest.push("files_written", written.len());
    manifest.push("mean_demo_reward", crate::textio::fmt_f64(mean_demo_reward));
    for (seed, error) in &failures {
        manifest.push(&format!("failure.{seed}"), error);
    }
    let manifest = manifest.write(out_dir)?;

    Ok(DemoGenOutcome {
        written,
        failures,
        mean_demo_reward,
        manifest,
    })
}

/// Training variant selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainVariant {
    Ppo,
    PpoBc,
}

impl TrainVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainVariant::Ppo => "ppo",
            TrainVariant::PpoBc => "ppo_bc",
        }
    }
}

impl std::str::FromStr for TrainVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppo" => Ok(TrainVariant::Ppo),
            "ppo_bc" => Ok(TrainVariant::PpoBc),
            other => Err(Error::Config(format!(
                "unknown train variant `{other}` (expected ppo|ppo_bc)"
            ))),
        }
    }
}

/// Outcome of `train`.
#[derive(Debug)]
pub struct TrainCmdOutcome {
    pub outcome: TrainOutcome,
    pub best_path: PathBuf,
    pub final_path: PathBuf,
    pub eval_curve_path: PathBuf,
    pub bc_loss_path: Option<PathBuf>,
    pub manifest: PathBuf,
}

/// Number of behavioral-cloning epochs for the warm-started variant.
pub const BC_EPOCHS: usize = 10;

/// Trains one variant and writes best/final checkpoints, the evaluation
/// curve and the manifest. `ppo_bc` runs behavioral cloning on the stored
/// demonstration set before fine-tuning.
pub fn cmd_train(
    env_config: &EnvConfig,
    train_config: &TrainConfig,
    variant: TrainVariant,
    demos_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<TrainCmdOutcome> {
    env_config.validate()?;
    train_config.validate(env_config.episode_length)?;
    std::fs::create_dir_all(out_dir)?;

    let mut manifest = RunManifest::new("train");
    manifest.push("variant", variant.as_str());
    manifest.push_env_config(env_config);
    manifest.push_train_config(train_config);

    let (warm_start, bc_loss_path) = match variant {
        TrainVariant::Ppo => (None, None),
        TrainVariant::PpoBc => {
            let demos_dir = demos_dir
                .ok_or_else(|| Error::Config("ppo_bc needs a demonstration directory".into()))?;
            let demos = DemoSet::load_standard(demos_dir)?;
            let mut policy = GaussianPolicy::new(train_config.init_seed);
            let mut rng = seeded_rng(train_config.train_seed, Stream::BcShuffle);
            let bc = bc_pretrain(&mut policy, &demos, BC_EPOCHS, &mut rng)?;
            let path = out_dir.join("bc_loss.csv");
            atomic_write(&path, &bc_loss_csv(&bc.loss_curve))?;
            manifest.push("bc.demos_dir", demos_dir.display());
            manifest.push("bc.epochs", BC_EPOCHS);
            manifest.push("bc.demo_count", demos.len());
            manifest.push("bc.initial_mae", crate::textio::fmt_f64(bc.initial_mae));
            manifest.push("bc.final_mae", crate::textio::fmt_f64(bc.final_mae));
            (Some(policy), Some(path))
        }
    };

    let outcome = train(env_config, train_config, warm_start)?;

    let best_path = out_dir.join("best.ckpt");
    let final_path = out_dir.join("final.ckpt");
    outcome.best_policy.save(&best_path)?;
    outcome.final_policy.save(&final_path)?;
    let eval_curve_path = out_dir.join("eval_curve.csv");
    atomic_write(
        &eval_curve_path,
        &eval_curve_csv(&outcome.initial_eval, &outcome.eval_curve),
    )?;

    manifest.push("total_steps", outcome.total_steps);
    manifest.push("episodes_used", outcome.episodes_used);
    manifest.push(
        "train_seed_range",
        format!(
            "[{}, {})",
            train_config.train_seed,
            train_config.train_seed + outcome.episodes_used
        ),
    );
    manifest.push(
        "initial_eval_mean",
        crate::textio::fmt_f64(outcome.initial_eval.mean_return),
    );
    manifest.push(
        "best_eval_mean",
        crate::textio::fmt_f64(outcome.best_eval.mean_return),
    );
    manifest.push(
        "final_eval_mean",
        crate::textio::fmt_f64(
            outcome
                .eval_curve
                .last()
                .map(|p| p.mean_return)
                .unwrap_or(f64::NAN),
        ),
    );
    manifest.push("artifact.best", "best.ckpt");
    manifest.push("artifact.final", "final.ckpt");
    manifest.push("artifact.eval_curve", "eval_curve.csv");
    if bc_loss_path.is_some() {
        manifest.push("artifact.bc_loss", "bc_loss.csv");
    }
    let manifest = manifest.write(out_dir)?;

    Ok(TrainCmdOutcome {
        outcome,
        best_path,
        final_path,
        eval_curve_path,
        bc_loss_path,
        manifest,
    })
}

/// The full benchmark roster, in report order.
pub const BENCHMARK_AGENTS: [&str; 8] = [
    "random",
    "static",
    "rule",
    "ppo_best",
    "ppo_final",
    "ppo_bc_best",
    "ppo_bc_final",
    "oracle",
];

/// Outcome of `benchmark`.
#[derive(Debug)]
pub struct BenchmarkCmdOutcome {
    pub report: BenchmarkReport,
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
    pub manifest: PathBuf,
}

fn load_checkpoint(artifacts_dir: &Path, relative: &str) -> Result<GaussianPolicy> {
    let path = artifacts_dir.join(relative);
    if !path.exists() {
        return Err(Error::Config(format!(
            "missing checkpoint {}",
            path.display()
        )));
    }
    GaussianPolicy::load(&path)
}

/// Oracle demonstrations for the benchmark seeds: read from
/// `<artifacts>/oracle` when present, otherwise re-optimized on the test
/// seeds and stored under `<out>/oracle`. Both paths yield identical
/// trajectories because demo generation is a pure function of the seed.
fn oracle_demos(
    env_config: &EnvConfig,
    artifacts_dir: &Path,
    out_dir: &Path,
    seed_list: &[u64],
    jobs: Option<usize>,
) -> Result<std::collections::BTreeMap<u64, Demonstration>> {
    let stored = artifacts_dir.join("oracle");
    let cma_config = CmaConfig::for_trajectory(env_config.episode_length);
    let generated_dir = out_dir.join("oracle");

    enum Source {
        Stored(PathBuf),
        Optimize(u64),
    }
    let sources: Vec<Source> = seed_list
        .iter()
        .map(|&seed| {
            let path = stored.join(Demonstration::file_name(seed));
            if path.exists() {
                Source::Stored(path)
            } else {
                Source::Optimize(seed)
            }
        })
        .collect();

    let demos: Vec<Demonstration> = exec::run_with_jobs(jobs, || {
        exec::map_ordered(&sources, |source| match source {
            Source::Stored(path) => Demonstration::load(path),
            Source::Optimize(seed) => optimize_trajectory(env_config, *seed, &cma_config, *seed),
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut map = std::collections::BTreeMap::new();
    for demo in demos {
        let path = generated_dir.join(Demonstration::file_name(demo.seed));
        if !stored.join(Demonstration::file_name(demo.seed)).exists() {
            demo.save(&path)?;
        }
        map.insert(demo.seed, demo);
    }
    Ok(map)
}

/// Runs the eight-agent benchmark on the test seeds and writes
/// `results.csv`, `summary.csv` and the manifest.
pub fn cmd_benchmark(
    env_config: &EnvConfig,
    artifacts_dir: &Path,
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<BenchmarkCmdOutcome> {
    env_config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let seed_list: Vec<u64> = seeds::test_seeds().collect();

    // Fail fast on seed-discipline violations before touching artifacts.
    seeds::assert_disjoint(&[
        (
            "test",
            seeds::TEST_SEED_BASE,
            seeds::TEST_SEED_BASE + seeds::TEST_SEED_COUNT,
        ),
        (
            "eval",
            seeds::EVAL_SEED_BASE,
            seeds::EVAL_SEED_BASE + seeds::EVAL_SEED_COUNT,
        ),
        ("train", seeds::TRAIN_SEED_BASE, seeds::TRAIN_SEED_LIMIT),
        (
            "demo",
            seeds::DEMO_SEED_BASE,
            seeds::DEMO_SEED_BASE + seeds::DEMO_SEED_COUNT,
        ),
    ])?;

    let ppo_best = load_checkpoint(artifacts_dir, "ppo/best.ckpt")?;
    let ppo_final = load_checkpoint(artifacts_dir, "ppo/final.ckpt")?;
    let ppo_bc_best = load_checkpoint(artifacts_dir, "ppo_bc/best.ckpt")?;
    let ppo_bc_final = load_checkpoint(artifacts_dir, "ppo_bc/final.ckpt")?;
    let demos = oracle_demos(env_config, artifacts_dir, out_dir, &seed_list, jobs)?;

    let roster = vec![
        BenchAgent::Random,
        BenchAgent::Static(crate::agents::STATIC_ACTION),
        BenchAgent::Rule {
            threshold: env_config.theta_a.max(env_config.theta_b),
        },
        BenchAgent::Policy {
            name: "ppo_best".into(),
            policy: ppo_best,
        },
        BenchAgent::Policy {
            name: "ppo_final".into(),
            policy: ppo_final,
        },
        BenchAgent::Policy {
            name: "ppo_bc_best".into(),
            policy: ppo_bc_best,
        },
        BenchAgent::Policy {
            name: "ppo_bc_final".into(),
            policy: ppo_bc_final,
        },
        BenchAgent::Oracle { demos },
    ];
    debug_assert_eq!(
        roster.iter().map(|a| a.name()).collect::<Vec<_>>(),
        BENCHMARK_AGENTS
    );

    let report = exec::run_with_jobs(jobs, || run_benchmark(&roster, env_config, &seed_list))?;
    let expected_cells = roster.len() * seed_list.len();
    if report.entries.len() != expected_cells {
        return Err(Error::Protocol(format!(
            "benchmark produced {} cells, expected {expected_cells}",
            report.entries.len()
        )));
    }

    let results_path = out_dir.join("results.csv");
    atomic_write(&results_path, &report.results_csv())?;
    let summary_path = out_dir.join("summary.csv");
    atomic_write(&summary_path, &report.summary_csv())?;

    let mut manifest = RunManifest::new("benchmark");
    manifest.push_env_config(env_config);
    manifest.push("artifacts_dir", artifacts_dir.display());
    manifest.push(
        "test_seeds",
        format!(
            "[{}, {})",
            seeds::TEST_SEED_BASE,
            seeds::TEST_SEED_BASE + seeds::TEST_SEED_COUNT
        ),
    );
    for name in BENCHMARK_AGENTS {
        manifest.push(&format!("agent.{name}"), "ok");
    }
    manifest.push("cells", report.entries.len());
    manifest.push("artifact.results", "results.csv");
    manifest.push("artifact.summary", "summary.csv");
    let manifest = manifest.write(out_dir)?;

    Ok(BenchmarkCmdOutcome {
        report,
        results_path,
        summary_path,
        manifest,
    })
}
