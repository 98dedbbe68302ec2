//! Two-stage continuous sorting simulator.
//!
//! An episode processes a stream of stochastically generated input batches of
//! mixed material A/B. The single continuous action sets the fed fraction of
//! each batch; separation accuracy degrades with load, misclassified mass
//! accumulates in the output containers, and the reward trades throughput
//! against the purity of both output streams.
//!
//! All stochasticity lives in the input generator, which is seeded per
//! episode: identical (config, seed, action sequence) replays bitwise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{seeded_rng, Stream};

/// Number of ratio observations kept in the history window.
pub const HISTORY_LEN: usize = 5;
/// Observation layout: `HISTORY_LEN` mixture ratios followed by both purities.
pub const OBS_DIM: usize = HISTORY_LEN + 2;

/// 7-dimensional continuous observation, every component in `[0, 1]`.
pub type Observation = [f64; OBS_DIM];

/// Rule used by the input generator to draw batch compositions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    Constant,
    Uniform,
    Trend,
    Seasonal,
}

impl SamplingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingMode::Constant => "constant",
            SamplingMode::Uniform => "uniform",
            SamplingMode::Trend => "trend",
            SamplingMode::Seasonal => "seasonal",
        }
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(SamplingMode::Constant),
            "uniform" => Ok(SamplingMode::Uniform),
            "trend" => Ok(SamplingMode::Trend),
            "seasonal" => Ok(SamplingMode::Seasonal),
            other => Err(Error::Config(format!(
                "unknown sampling_mode `{other}` (expected constant|uniform|trend|seasonal)"
            ))),
        }
    }
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full parameter set of the sorting process.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub episode_length: usize,
    pub q_max: f64,
    pub theta_a: f64,
    pub theta_b: f64,
    pub accuracy_base_a: f64,
    pub accuracy_base_b: f64,
    pub accuracy_drop_a: f64,
    pub accuracy_drop_b: f64,
    pub accuracy_exponent: f64,
    pub history_len: usize,
    pub sampling_mode: SamplingMode,
    pub batch_size_min_frac: f64,
    pub batch_size_max_frac: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            episode_length: 100,
            q_max: 100.0,
            theta_a: 0.90,
            theta_b: 0.90,
            accuracy_base_a: 0.95,
            accuracy_base_b: 0.95,
            accuracy_drop_a: 0.20,
            accuracy_drop_b: 0.25,
            accuracy_exponent: 2.0,
            history_len: HISTORY_LEN,
            sampling_mode: SamplingMode::Uniform,
            batch_size_min_frac: 0.5,
            batch_size_max_frac: 1.0,
        }
    }
}

impl EnvConfig {
    /// Checks every config invariant; returned errors name the violated field.
    pub fn validate(&self) -> Result<()> {
        if self.episode_length < 1 {
            return Err(Error::Config("episode_length must be >= 1".into()));
        }
        if !(self.q_max.is_finite() && self.q_max > 0.0) {
            return Err(Error::Config("q_max must be finite and positive".into()));
        }
        for (name, theta) in [("theta_a", self.theta_a), ("theta_b", self.theta_b)] {
            if !(theta > 0.0 && theta < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        for (name, base, drop) in [
            ("a", self.accuracy_base_a, self.accuracy_drop_a),
            ("b", self.accuracy_base_b, self.accuracy_drop_b),
        ] {
            if !(base > 0.0 && base <= 1.0) {
                return Err(Error::Config(format!(
                    "accuracy_base_{name} must lie in (0, 1]"
                )));
            }
            if drop < 0.0 {
                return Err(Error::Config(format!("accuracy_drop_{name} must be >= 0")));
            }
            // Sorting never worse than a coin flip at full load.
            if base - drop < 0.5 {
                return Err(Error::Config(format!(
                    "accuracy_base_{name} - accuracy_drop_{name} must be >= 0.5"
                )));
            }
        }
        if self.accuracy_exponent <= 0.0 {
            return Err(Error::Config("accuracy_exponent must be > 0".into()));
        }
        if self.history_len != HISTORY_LEN {
            return Err(Error::Config(format!(
                "history_len is fixed at {HISTORY_LEN} (observation dimension contract)"
            )));
        }
        if !(0.0 <= self.batch_size_min_frac
            && self.batch_size_min_frac <= self.batch_size_max_frac
            && self.batch_size_max_frac <= 1.0)
        {
            return Err(Error::Config(
                "batch size fractions must satisfy 0 <= min <= max <= 1".into(),
            ));
        }
        Ok(())
    }
}

impl EnvConfig {
    /// Flat `key = value` text form, keys exactly as the field names.
    pub fn to_kv_string(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("string write");
        kv("episode_length", self.episode_length.to_string());
        kv("q_max", self.q_max.to_string());
        kv("theta_a", self.theta_a.to_string());
        kv("theta_b", self.theta_b.to_string());
        kv("accuracy_base_a", self.accuracy_base_a.to_string());
        kv("accuracy_base_b", self.accuracy_base_b.to_string());
        kv("accuracy_drop_a", self.accuracy_drop_a.to_string());
        kv("accuracy_drop_b", self.accuracy_drop_b.to_string());
        kv("accuracy_exponent", self.accuracy_exponent.to_string());
        kv("history_len", self.history_len.to_string());
        kv("sampling_mode", self.sampling_mode.to_string());
        kv("batch_size_min_frac", self.batch_size_min_frac.to_string());
        kv("batch_size_max_frac", self.batch_size_max_frac.to_string());
        out
    }

    /// Applies one `key = value` override.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let parse_f = |v: &str| {
            v.parse::<f64>()
                .map_err(|e| Error::Config(format!("bad value `{v}` for {key}: {e}")))
        };
        let parse_u = |v: &str| {
            v.parse::<usize>()
                .map_err(|e| Error::Config(format!("bad value `{v}` for {key}: {e}")))
        };
        match key {
            "episode_length" => self.episode_length = parse_u(value)?,
            "q_max" => self.q_max = parse_f(value)?,
            "theta_a" => self.theta_a = parse_f(value)?,
            "theta_b" => self.theta_b = parse_f(value)?,
            "accuracy_base_a" => self.accuracy_base_a = parse_f(value)?,
            "accuracy_base_b" => self.accuracy_base_b = parse_f(value)?,
            "accuracy_drop_a" => self.accuracy_drop_a = parse_f(value)?,
            "accuracy_drop_b" => self.accuracy_drop_b = parse_f(value)?,
            "accuracy_exponent" => self.accuracy_exponent = parse_f(value)?,
            "history_len" => self.history_len = parse_u(value)?,
            "sampling_mode" => self.sampling_mode = value.parse()?,
            "batch_size_min_frac" => self.batch_size_min_frac = parse_f(value)?,
            "batch_size_max_frac" => self.batch_size_max_frac = parse_f(value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses the flat key-value form (`#` comments and blank lines allowed)
    /// on top of the defaults, then validates.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            config.apply_kv(key.trim(), value)?;
        }
        config.validate()?;
        Ok(config)
    }
}

/// One sampled inflow batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBatch {
    /// Mass units available this step.
    pub size: f64,
    /// Fraction of material A in the batch.
    pub ratio_a: f64,
}

/// Accumulated output masses. All fields are non-decreasing within an episode.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Containers {
    pub a_true: f64,
    pub a_false: f64,
    pub b_true: f64,
    pub b_false: f64,
    pub residual: f64,
}

impl Containers {
    pub fn total(&self) -> f64 {
        self.a_true + self.a_false + self.b_true + self.b_false + self.residual
    }

    pub fn purity_a(&self) -> f64 {
        purity(self.a_true, self.a_false)
    }

    pub fn purity_b(&self) -> f64 {
        purity(self.b_true, self.b_false)
    }
}

/// Per-step measurements alongside the reward.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub quantity: f64,
    pub purity_a: f64,
    pub purity_b: f64,
}

/// Outcome of one environment transition.
#[derive(Debug, Clone, Copy)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Load-dependent separation accuracy: `base - drop * load^exponent`.
pub fn sorting_accuracy(load_fraction: f64, base: f64, drop: f64, exponent: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&load_fraction) {
        return Err(Error::Domain(format!(
            "load_fraction {load_fraction} outside [0, 1]"
        )));
    }
    Ok(base - drop * load_fraction.powf(exponent))
}

/// Routes a batch through both stages, accumulating expected masses.
///
/// Stage A extracts type A with accuracy `acc_a`; the remaining flow enters
/// stage B where type B is extracted with accuracy `acc_b`. Whatever neither
/// stage claims ends up in the residual container. Total mass is conserved
/// exactly.
pub fn apply_sorting(
    batch_mass_a: f64,
    batch_mass_b: f64,
    acc_a: f64,
    acc_b: f64,
    containers: &mut Containers,
) {
    let (m_a, m_b) = (batch_mass_a, batch_mass_b);
    containers.a_true += acc_a * m_a;
    containers.a_false += (1.0 - acc_a) * m_b;
    let rem_a = (1.0 - acc_a) * m_a;
    let rem_b = acc_a * m_b;
    containers.b_true += acc_b * rem_b;
    containers.b_false += (1.0 - acc_b) * rem_a;
    containers.residual += acc_b * rem_a + (1.0 - acc_b) * rem_b;
}

/// Fraction of correctly sorted mass; empty containers count as pure.
pub fn purity(true_mass: f64, false_mass: f64) -> f64 {
    let total = true_mass + false_mass;
    if total > 0.0 {
        true_mass / total
    } else {
        1.0
    }
}

/// Purity term of the reward: a strong linear penalty below the threshold,
/// a small bonus above it that decays to zero as purity approaches unity.
/// Continuous at `p = theta` with value 0.25.
pub fn purity_reward(p: f64, theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Domain(format!("theta {theta} outside (0, 1)")));
    }
    Ok(if p < theta {
        -10.0 + 10.25 * (p / theta)
    } else {
        0.25 * (1.0 - (p - theta) / (1.0 - theta))
    })
}

/// Overall step reward: throughput term plus both purity terms.
pub fn step_reward(
    q: f64,
    q_max: f64,
    p_a: f64,
    p_b: f64,
    theta_a: f64,
    theta_b: f64,
) -> Result<f64> {
    if q < 0.0 || q > q_max {
        return Err(Error::Domain(format!("quantity {q} outside [0, {q_max}]")));
    }
    Ok(
        0.25 * (2.0 * q / q_max - 1.0)
            + purity_reward(p_a, theta_a)?
            + purity_reward(p_b, theta_b)?,
    )
}

/// Sorting process simulator, deterministic given `(config, seed)`.
#[derive(Debug, Clone)]
pub struct SortingEnv {
    config: EnvConfig,
    t: usize,
    rng: ChaCha8Rng,
    ratio_history: [f64; HISTORY_LEN],
    containers: Containers,
    last_quantity: f64,
    processed_total: f64,
}

impl SortingEnv {
    /// Validates the config and starts the first episode.
    pub fn new(config: EnvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut env = Self {
            config,
            t: 0,
            rng: seeded_rng(seed, Stream::Env),
            ratio_history: [0.5; HISTORY_LEN],
            containers: Containers::default(),
            last_quantity: 0.0,
            processed_total: 0.0,
        };
        env.reset(seed);
        Ok(env)
    }

    /// Begins a fresh episode: empty containers, neutral ratio history,
    /// generator reseeded from `seed`.
    pub fn reset(&mut self, seed: u64) -> Observation {
        self.t = 0;
        self.rng = seeded_rng(seed, Stream::Env);
        self.ratio_history = [0.5; HISTORY_LEN];
        self.containers = Containers::default();
        self.last_quantity = 0.0;
        self.processed_total = 0.0;
        self.observation()
    }

    /// Draws the next inflow batch.
    ///
    /// Consumes exactly two generator draws regardless of sampling mode, so a
    /// seed produces the same raw draw sequence under every mode. `step`
    /// calls this internally; calling it directly advances the generator.
    pub fn sample_batch(&mut self) -> InputBatch {
        let u_size: f64 = self.rng.gen();
        let u_ratio: f64 = self.rng.gen();
        let cfg = &self.config;
        let min_size = cfg.batch_size_min_frac * cfg.q_max;
        let max_size = cfg.batch_size_max_frac * cfg.q_max;
        let size = min_size + (max_size - min_size) * u_size;
        let frac = self.t as f64 / cfg.episode_length as f64;
        let noise = 0.1 * u_ratio - 0.05;
        let ratio_a = match cfg.sampling_mode {
            SamplingMode::Constant => 0.5,
            SamplingMode::Uniform => 0.2 + 0.6 * u_ratio,
            SamplingMode::Trend => (0.3 + 0.4 * frac + noise).clamp(0.0, 1.0),
            SamplingMode::Seasonal => {
                let season = 0.25 * (2.0 * std::f64::consts::PI * self.t as f64 / 25.0).sin();
                (0.5 + season + noise).clamp(0.0, 1.0)
            }
        };
        InputBatch { size, ratio_a }
    }

    /// Advances one timestep: samples a batch, feeds the action-selected
    /// fraction through both sorting stages, and scores the result.
    pub fn step(&mut self, action: f64) -> Result<StepResult> {
        if self.t >= self.config.episode_length {
            return Err(Error::Protocol(format!(
                "step called on finished episode (t = {})",
                self.t
            )));
        }
        if !action.is_finite() {
            return Err(Error::Input(format!("non-finite action {action}")));
        }
        let action = action.clamp(-1.0, 1.0);

        let batch = self.sample_batch();
        let feed_fraction = (action + 1.0) / 2.0;
        let quantity = feed_fraction * batch.size;
        let load = quantity / self.config.q_max;
        let acc_a = sorting_accuracy(
            load,
            self.config.accuracy_base_a,
            self.config.accuracy_drop_a,
            self.config.accuracy_exponent,
        )?;
        let acc_b = sorting_accuracy(
            load,
            self.config.accuracy_base_b,
            self.config.accuracy_drop_b,
            self.config.accuracy_exponent,
        )?;
        apply_sorting(
            quantity * batch.ratio_a,
            quantity * (1.0 - batch.ratio_a),
            acc_a,
            acc_b,
            &mut self.containers,
        );

        self.ratio_history.rotate_left(1);
        self.ratio_history[HISTORY_LEN - 1] = batch.ratio_a;

        let purity_a = self.containers.purity_a();
        let purity_b = self.containers.purity_b();
        let reward = step_reward(
            quantity,
            self.config.q_max,
            purity_a,
            purity_b,
            self.config.theta_a,
            self.config.theta_b,
        )?;

        self.last_quantity = quantity;
        self.processed_total += quantity;
        self.t += 1;

        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.t == self.config.episode_length,
            info: StepInfo {
                quantity,
                purity_a,
                purity_b,
            },
        })
    }

    /// Current observation: ratio history (oldest first) plus both purities.
    pub fn observation(&self) -> Observation {
        let mut obs = [0.0; OBS_DIM];
        obs[..HISTORY_LEN].copy_from_slice(&self.ratio_history);
        obs[HISTORY_LEN] = self.containers.purity_a();
        obs[HISTORY_LEN + 1] = self.containers.purity_b();
        obs
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.t >= self.config.episode_length
    }

    pub fn containers(&self) -> &Containers {
        &self.containers
    }

    pub fn last_quantity(&self) -> f64 {
        self.last_quantity
    }

    /// Running sum of processed quantities, for conservation checks.
    pub fn processed_total(&self) -> f64 {
        self.processed_total
    }
}

/// Rolls an action sequence through a fresh episode and returns the
/// cumulative reward. Actions are clipped by the environment boundary.
pub fn rollout_actions(config: &EnvConfig, seed: u64, actions: &[f64]) -> Result<f64> {
    let mut env = SortingEnv::new(config.clone(), seed)?;
    let mut total = 0.0;
    for &a in actions {
        total += env.step(a)?.reward;
    }
    Ok(total)
}
