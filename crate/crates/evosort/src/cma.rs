//! Covariance matrix adaptation evolution strategy and the trajectory oracle.
//!
//! The strategy is the canonical one: log-linear recombination weights over
//! the better half of the population, cumulative step-size adaptation, and a
//! rank-1 plus rank-mu covariance update, refreshing the eigendecomposition
//! every generation. Minimization convention throughout.
//!
//! `optimize_trajectory` applies it to episode-long action sequences: each
//! candidate is scored on an environment with a frozen seed, which turns the
//! stochastic control problem into a deterministic objective and gives the
//! optimizer full foresight of the input sequence. The resulting incumbent
//! doubles as an expert demonstration.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::env::{EnvConfig, Observation, SortingEnv};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{seeded_rng, Stream};
use crate::textio::{fmt_f64, parse_f64, parse_u64};

/// Strategy configuration. Defaults match the trajectory-oracle setup:
/// population 16, initial step size 0.1, 30 generations, zero start, actions
/// bounded to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaConfig {
    pub dim: usize,
    pub lambda: usize,
    pub sigma0: f64,
    pub max_generations: usize,
    pub mean0: Vec<f64>,
    /// Element-wise bound applied when candidates are evaluated; the
    /// sampling distribution itself is unbounded.
    pub lower: f64,
    pub upper: f64,
}

impl CmaConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            lambda: 16,
            sigma0: 0.1,
            max_generations: 30,
            mean0: vec![0.0; dim],
            lower: -1.0,
            upper: 1.0,
        }
    }

    /// Configuration for optimizing one action per environment step.
    pub fn for_trajectory(episode_length: usize) -> Self {
        Self::new(episode_length)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be >= 1".into()));
        }
        if self.lambda < 4 {
            return Err(Error::Config("lambda must be >= 4".into()));
        }
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(Error::Config("sigma0 must be positive".into()));
        }
        if self.mean0.len() != self.dim {
            return Err(Error::Config(format!(
                "mean0 has {} entries, dim is {}",
                self.mean0.len(),
                self.dim
            )));
        }
        if self.lower >= self.upper {
            return Err(Error::Config(
                "lower bound must be below upper bound".into(),
            ));
        }
        Ok(())
    }
}

/// Full strategy state.
#[derive(Debug, Clone)]
pub struct CmaState {
    dim: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    mean: DVector<f64>,
    sigma: f64,
    covariance: DMatrix<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    eig_basis: DMatrix<f64>,
    eig_sqrt: DVector<f64>,
    generation: usize,
    best_solution: Option<Vec<f64>>,
    best_fitness: f64,
}

impl CmaState {
    /// Initializes the strategy with the canonical default constants
    /// computed from `dim` and `lambda`.
    pub fn new(config: &CmaConfig) -> Result<Self> {
        config.validate()?;
        let n = config.dim as f64;
        let mu = config.lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu =
            (2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff)).min(1.0 - c_1);
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

        Ok(Self {
            dim: config.dim,
            lambda: config.lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            mean: DVector::from_column_slice(&config.mean0),
            sigma: config.sigma0,
            covariance: DMatrix::identity(config.dim, config.dim),
            p_sigma: DVector::zeros(config.dim),
            p_c: DVector::zeros(config.dim),
            eig_basis: DMatrix::identity(config.dim, config.dim),
            eig_sqrt: DVector::from_element(config.dim, 1.0),
            generation: 0,
            best_solution: None,
            best_fitness: f64::INFINITY,
        })
    }

    /// Samples `lambda` candidates `mean + sigma * B * D * z`. Candidate
    /// order is fixed by the generator state.
    pub fn ask(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        if self.eig_sqrt.iter().any(|d| !d.is_finite())
            || self.eig_basis.iter().any(|b| !b.is_finite())
        {
            return Err(Error::Numerical(format!(
                "covariance eigendecomposition is non-finite at generation {} (sigma = {})",
                self.generation, self.sigma
            )));
        }
        let mut candidates = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            let z = DVector::from_fn(self.dim, |_, _| StandardNormal.sample(rng));
            let scaled = self.eig_sqrt.component_mul(&z);
            let x = &self.mean + self.sigma * &self.eig_basis * scaled;
            candidates.push(x.as_slice().to_vec());
        }
        Ok(candidates)
    }

    /// Ranks the evaluated candidates (minimization, ties broken by
    /// candidate index) and applies the full strategy update.
    pub fn tell(&mut self, candidates: &[Vec<f64>], fitnesses: &[f64]) -> Result<()> {
        if candidates.len() != self.lambda || fitnesses.len() != self.lambda {
            return Err(Error::Input(format!(
                "expected {} candidates and fitnesses, got {} and {}",
                self.lambda,
                candidates.len(),
                fitnesses.len()
            )));
        }
        if let Some(i) = fitnesses.iter().position(|f| !f.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite fitness {} for candidate {i}",
                fitnesses[i]
            )));
        }

        let mut order: Vec<usize> = (0..self.lambda).collect();
        order.sort_by(|&a, &b| {
            fitnesses[a]
                .partial_cmp(&fitnesses[b])
                .expect("finite fitnesses")
                .then(a.cmp(&b))
        });

        self.consider(&candidates[order[0]], fitnesses[order[0]]);

        let old_mean = self.mean.clone();
        let mut new_mean = DVector::zeros(self.dim);
        for (w, &idx) in self.weights.iter().zip(&order) {
            new_mean += *w * DVector::from_column_slice(&candidates[idx]);
        }
        let y_w = (&new_mean - &old_mean) / self.sigma;

        // C^{-1/2} y_w through the cached eigendecomposition.
        let inv_sqrt = DVector::from_fn(self.dim, |i, _| 1.0 / self.eig_sqrt[i]);
        let whitened =
            &self.eig_basis * inv_sqrt.component_mul(&(self.eig_basis.transpose() * &y_w));

        self.p_sigma = (1.0 - self.c_sigma) * &self.p_sigma
            + (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt() * whitened;

        let decay = 1.0 - (1.0 - self.c_sigma).powi(2 * (self.generation as i32 + 1));
        let p_sigma_norm = self.p_sigma.norm();
        let h_sigma =
            if p_sigma_norm / decay.sqrt() < (1.4 + 2.0 / (self.dim as f64 + 1.0)) * self.chi_n {
                1.0
            } else {
                0.0
            };

        self.p_c = (1.0 - self.c_c) * &self.p_c
            + h_sigma * (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt() * &y_w;

        let mut rank_mu = DMatrix::zeros(self.dim, self.dim);
        for (w, &idx) in self.weights.iter().zip(&order) {
            let y = (DVector::from_column_slice(&candidates[idx]) - &old_mean) / self.sigma;
            rank_mu += *w * &y * y.transpose();
        }

        let delta_h = (1.0 - h_sigma) * self.c_c * (2.0 - self.c_c);
        self.covariance = (1.0 - self.c_1 - self.c_mu + self.c_1 * delta_h) * &self.covariance
            + self.c_1 * &self.p_c * self.p_c.transpose()
            + self.c_mu * rank_mu;

        self.sigma *= ((self.c_sigma / self.d_sigma) * (p_sigma_norm / self.chi_n - 1.0)).exp();
        self.mean = new_mean;
        self.generation += 1;
        self.refresh_eigen()
    }

    /// Offers an externally evaluated solution to the incumbent.
    pub fn consider(&mut self, solution: &[f64], fitness: f64) {
        if fitness < self.best_fitness {
            self.best_fitness = fitness;
            self.best_solution = Some(solution.to_vec());
        }
    }

    fn refresh_eigen(&mut self) -> Result<()> {
        self.covariance = (&self.covariance + self.covariance.transpose()) * 0.5;
        if self.covariance.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical(format!(
                "covariance has non-finite entries at generation {} (sigma = {})",
                self.generation, self.sigma
            )));
        }
        let eigen = self.covariance.clone().symmetric_eigen();
        if eigen.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "eigendecomposition failed at generation {} (non-finite eigenvalues)",
                self.generation
            )));
        }
        // Floor keeps the decomposition usable against rounding drift.
        self.eig_sqrt = eigen.eigenvalues.map(|v| v.max(1e-30).sqrt());
        self.eig_basis = eigen.eigenvectors;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn mu(&self) -> usize {
        self.mu
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Eigenvalues of the current covariance (squares of the cached roots).
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eig_sqrt.iter().map(|d| d * d).collect()
    }

    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.best_solution
            .as_deref()
            .map(|s| (s, self.best_fitness))
    }

    #[cfg(test)]
    pub(crate) fn poison_covariance(&mut self) {
        self.eig_sqrt[0] = f64::NAN;
    }
}

/// Open-loop oracle trajectory: the incumbent action sequence of a frozen
/// seed optimization, with its replayed per-step record.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub seed: u64,
    pub actions: Vec<f64>,
    /// Observation the agent saw before each action.
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub cumulative_reward: f64,
}

impl Demonstration {
    /// Checks internal consistency: equal lengths, bounded actions, and the
    /// cumulative sum matching the per-step rewards.
    pub fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        if self.observations.len() != n || self.rewards.len() != n {
            return Err(Error::Format(format!(
                "demonstration lengths disagree: {} actions, {} observations, {} rewards",
                n,
                self.observations.len(),
                self.rewards.len()
            )));
        }
        if let Some(a) = self.actions.iter().find(|a| !(-1.0..=1.0).contains(*a)) {
            return Err(Error::Format(format!("action {a} outside [-1, 1]")));
        }
        let sum: f64 = self.rewards.iter().sum();
        if (sum - self.cumulative_reward).abs() > 1e-9 {
            return Err(Error::Format(format!(
                "cumulative reward {} does not match reward sum {sum}",
                self.cumulative_reward
            )));
        }
        Ok(())
    }

    /// Conventional file name for a stored demonstration.
    pub fn file_name(seed: u64) -> String {
        format!("demo_{seed}.txt")
    }

    /// Writes the line-oriented text format:
    /// `seed,<int>,cumulative,<float>` then one `t,action,reward,obs0..obs6`
    /// line per step, floats exact under round-trip.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        use std::fmt::Write as _;
        let mut out = String::new();
        writeln!(
            out,
            "seed,{},cumulative,{}",
            self.seed,
            fmt_f64(self.cumulative_reward)
        )
        .expect("string write");
        for (t, ((action, reward), obs)) in self
            .actions
            .iter()
            .zip(&self.rewards)
            .zip(&self.observations)
            .enumerate()
        {
            write!(out, "{t},{},{}", fmt_f64(*action), fmt_f64(*reward)).expect("string write");
            for o in obs.iter() {
                write!(out, ",{}", fmt_f64(*o)).expect("string write");
            }
            out.push('\n');
        }
        crate::textio::atomic_write(path, &out)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?;
        let fields: Vec<&str> = header.split(',').collect();
        if fields.len() != 4 || fields[0] != "seed" || fields[2] != "cumulative" {
            return Err(Error::Format(format!(
                "{}: bad header `{header}`",
                path.display()
            )));
        }
        let seed = parse_u64(fields[1])?;
        let cumulative_reward = parse_f64(fields[3])?;

        let mut actions = Vec::new();
        let mut observations = Vec::new();
        let mut rewards = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 + crate::env::OBS_DIM {
                return Err(Error::Format(format!(
                    "{}: line {} has {} fields, expected {}",
                    path.display(),
                    i + 2,
                    cols.len(),
                    3 + crate::env::OBS_DIM
                )));
            }
            let t = parse_u64(cols[0])? as usize;
            if t != actions.len() {
                return Err(Error::Format(format!(
                    "{}: step index {t} out of order",
                    path.display()
                )));
            }
            actions.push(parse_f64(cols[1])?);
            rewards.push(parse_f64(cols[2])?);
            let mut obs = [0.0; crate::env::OBS_DIM];
            for (slot, col) in obs.iter_mut().zip(&cols[3..]) {
                *slot = parse_f64(col)?;
            }
            observations.push(obs);
        }
        let demo = Self {
            seed,
            actions,
            observations,
            rewards,
            cumulative_reward,
        };
        demo.validate()?;
        Ok(demo)
    }
}

/// Negative cumulative reward of the clipped action sequence on a fresh
/// frozen-seed episode.
fn trajectory_fitness(
    env_config: &EnvConfig,
    env_seed: u64,
    actions: &[f64],
    lower: f64,
    upper: f64,
) -> Result<f64> {
    let mut env = SortingEnv::new(env_config.clone(), env_seed)?;
    let mut total = 0.0;
    for &a in actions {
        total += env.step(a.clamp(lower, upper))?.reward;
    }
    Ok(-total)
}

/// Optimizes an episode-long action sequence against the frozen `env_seed`
/// and returns the replayed incumbent as a demonstration.
///
/// The initial mean is evaluated once and seeds the incumbent, so the result
/// never scores below the starting point. Candidate evaluations within a
/// generation run through [`exec::map_ordered`] (parallel when enabled) with
/// fitness order matching candidate order.
pub fn optimize_trajectory(
    env_config: &EnvConfig,
    env_seed: u64,
    cma_config: &CmaConfig,
    opt_rng_seed: u64,
) -> Result<Demonstration> {
    env_config.validate()?;
    cma_config.validate()?;
    if cma_config.dim != env_config.episode_length {
        return Err(Error::Config(format!(
            "trajectory dim {} must equal episode_length {}",
            cma_config.dim, env_config.episode_length
        )));
    }

    let mut rng = seeded_rng(opt_rng_seed, Stream::Cma);
    let mut state = CmaState::new(cma_config)?;
    let (lower, upper) = (cma_config.lower, cma_config.upper);

    let initial_fitness =
        trajectory_fitness(env_config, env_seed, &cma_config.mean0, lower, upper)?;
    state.consider(&cma_config.mean0, initial_fitness);

    for _ in 0..cma_config.max_generations {
        let candidates = state.ask(&mut rng)?;
        let fitnesses: Vec<f64> = exec::map_ordered(&candidates, |c| {
            trajectory_fitness(env_config, env_seed, c, lower, upper)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        state.tell(&candidates, &fitnesses)?;
    }

    let (incumbent, incumbent_fitness) = state.best().expect("incumbent seeded from mean0");
    let actions: Vec<f64> = incumbent.iter().map(|a| a.clamp(lower, upper)).collect();

    let mut env = SortingEnv::new(env_config.clone(), env_seed)?;
    let mut observations = Vec::with_capacity(actions.len());
    let mut rewards = Vec::with_capacity(actions.len());
    let mut obs = env.observation();
    for &a in &actions {
        observations.push(obs);
        let step = env.step(a)?;
        rewards.push(step.reward);
        obs = step.observation;
    }
    let cumulative_reward: f64 = rewards.iter().sum();
    debug_assert!((cumulative_reward + incumbent_fitness).abs() < 1e-9);

    Ok(Demonstration {
        seed: env_seed,
        actions,
        observations,
        rewards,
        cumulative_reward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn init_strategy_constants() {
        let mut config = CmaConfig::new(100);
        config.mean0 = vec![0.0; 100];
        let state = CmaState::new(&config).unwrap();
        assert_eq!(state.mu(), 8);
        let wsum: f64 = state.weights().iter().sum();
        assert!((wsum - 1.0).abs() < 1e-12);
        assert!(state.weights().windows(2).all(|w| w[0] > w[1]));
        for ev in state.eigenvalues() {
            assert!((ev - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ask_is_deterministic_given_rng() {
        let config = CmaConfig::new(12);
        let state = CmaState::new(&config).unwrap();
        let a = state.ask(&mut seeded_rng(5, Stream::Cma)).unwrap();
        let b = state.ask(&mut seeded_rng(5, Stream::Cma)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ask_collapses_to_mean_at_tiny_sigma() {
        let mut config = CmaConfig::new(6);
        config.sigma0 = 1e-300;
        config.mean0 = vec![0.25; 6];
        let state = CmaState::new(&config).unwrap();
        for candidate in state.ask(&mut seeded_rng(0, Stream::Cma)).unwrap() {
            for (c, m) in candidate.iter().zip(&config.mean0) {
                assert!((c - m).abs() < 1e-250);
            }
        }
    }

    #[test]
    fn ask_empirical_mean_matches_state_mean() {
        let mut config = CmaConfig::new(4);
        config.mean0 = vec![0.3, -0.2, 0.0, 0.7];
        let state = CmaState::new(&config).unwrap();
        let mut rng = seeded_rng(123, Stream::Cma);
        let draws = 100_000 / config.lambda * config.lambda;
        let mut sums = [0.0; 4];
        for _ in 0..draws / config.lambda {
            for candidate in state.ask(&mut rng).unwrap() {
                for (s, c) in sums.iter_mut().zip(&candidate) {
                    *s += c;
                }
            }
        }
        // sigma = 0.1, identity covariance: standard error 0.1 / sqrt(draws).
        let tolerance = 3.0 * 0.1 / (draws as f64).sqrt();
        for (s, m) in sums.iter().zip(&config.mean0) {
            let empirical = s / draws as f64;
            assert!(
                (empirical - m).abs() < tolerance,
                "empirical {empirical} vs mean {m}"
            );
        }
    }

    #[test]
    fn tell_rejects_non_finite_fitness_naming_index() {
        let config = CmaConfig::new(3);
        let mut state = CmaState::new(&config).unwrap();
        let candidates = state.ask(&mut seeded_rng(1, Stream::Cma)).unwrap();
        let mut fitnesses: Vec<f64> = candidates.iter().map(|c| sphere(c)).collect();
        fitnesses[5] = f64::NAN;
        match state.tell(&candidates, &fitnesses) {
            Err(Error::Input(msg)) => assert!(msg.contains("candidate 5"), "{msg}"),
            other => panic!("expected input error, got {other:?}"),
        }
    }

    #[test]
    fn tell_rejects_length_mismatch() {
        let config = CmaConfig::new(3);
        let mut state = CmaState::new(&config).unwrap();
        let candidates = state.ask(&mut seeded_rng(1, Stream::Cma)).unwrap();
        assert!(matches!(
            state.tell(&candidates[..4], &[0.0; 4]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn equal_fitness_recombines_by_candidate_index() {
        let config = CmaConfig::new(2);
        let mut state = CmaState::new(&config).unwrap();
        let candidates = state.ask(&mut seeded_rng(2, Stream::Cma)).unwrap();
        let fitnesses = vec![1.0; config.lambda];
        state.tell(&candidates, &fitnesses).unwrap();
        // Ties resolve to index order, so recombination uses candidates 0..mu.
        let mut expected = [0.0; 2];
        for (w, candidate) in state.weights().to_vec().iter().zip(&candidates) {
            expected[0] += w * candidate[0];
            expected[1] += w * candidate[1];
        }
        assert!((state.mean()[0] - expected[0]).abs() < 1e-12);
        assert!((state.mean()[1] - expected[1]).abs() < 1e-12);
        assert_eq!(state.best().unwrap().0, candidates[0].as_slice());
    }

    #[test]
    fn incumbent_is_monotone_and_covariance_stays_symmetric() {
        let mut config = CmaConfig::new(5);
        config.mean0 = vec![1.0; 5];
        config.sigma0 = 0.3;
        let mut state = CmaState::new(&config).unwrap();
        let mut rng = seeded_rng(7, Stream::Cma);
        let mut last_best = f64::INFINITY;
        for _ in 0..60 {
            let candidates = state.ask(&mut rng).unwrap();
            let fitnesses: Vec<f64> = candidates.iter().map(|c| sphere(c)).collect();
            state.tell(&candidates, &fitnesses).unwrap();
            let (_, best) = state.best().unwrap();
            assert!(best <= last_best);
            last_best = best;
            let c = state.covariance();
            for i in 0..5 {
                for j in 0..5 {
                    assert!((c[(i, j)] - c[(j, i)]).abs() < 1e-10);
                }
            }
            for ev in state.eigenvalues() {
                assert!(ev > 0.0);
            }
        }
    }

    #[test]
    fn sphere_converges_within_300_generations() {
        let mut config = CmaConfig::new(10);
        config.sigma0 = 0.5;
        config.mean0 = vec![1.0; 10];
        let mut state = CmaState::new(&config).unwrap();
        let mut rng = seeded_rng(42, Stream::Cma);
        let mut converged_at = None;
        for gen in 0..300 {
            let candidates = state.ask(&mut rng).unwrap();
            let fitnesses: Vec<f64> = candidates.iter().map(|c| sphere(c)).collect();
            state.tell(&candidates, &fitnesses).unwrap();
            if state.best().unwrap().1 < 1e-10 {
                converged_at = Some(gen);
                break;
            }
        }
        assert!(
            converged_at.is_some(),
            "best fitness {} after 300 generations",
            state.best().unwrap().1
        );
    }

    #[test]
    fn poisoned_state_reports_numerical_error() {
        let config = CmaConfig::new(3);
        let mut state = CmaState::new(&config).unwrap();
        state.poison_covariance();
        assert!(matches!(
            state.ask(&mut seeded_rng(0, Stream::Cma)),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = CmaConfig::new(4);
        c.lambda = 3;
        assert!(CmaState::new(&c).is_err());
        let mut c = CmaConfig::new(4);
        c.sigma0 = 0.0;
        assert!(c.validate().is_err());
        let mut c = CmaConfig::new(4);
        c.lower = 1.0;
        c.upper = -1.0;
        assert!(c.validate().is_err());
        let mut c = CmaConfig::new(4);
        c.mean0 = vec![0.0; 3];
        assert!(c.validate().is_err());
    }

    fn small_env() -> EnvConfig {
        EnvConfig {
            episode_length: 20,
            ..EnvConfig::default()
        }
    }

    fn small_cma() -> CmaConfig {
        let mut c = CmaConfig::for_trajectory(20);
        c.max_generations = 10;
        c
    }

    #[test]
    fn dim_mismatch_is_configuration_error() {
        let env_config = small_env();
        let cma_config = CmaConfig::for_trajectory(21);
        assert!(matches!(
            optimize_trajectory(&env_config, 0, &cma_config, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn trajectory_optimization_is_deterministic() {
        let env_config = small_env();
        let cma_config = small_cma();
        let a = optimize_trajectory(&env_config, 3, &cma_config, 3).unwrap();
        let b = optimize_trajectory(&env_config, 3, &cma_config, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trajectory_beats_zero_action_baseline_and_is_self_consistent() {
        let env_config = small_env();
        let cma_config = small_cma();
        for seed in [0, 1, 2] {
            let demo = optimize_trajectory(&env_config, seed, &cma_config, seed).unwrap();
            demo.validate().unwrap();
            assert_eq!(demo.actions.len(), 20);
            assert!(demo.actions.iter().all(|a| (-1.0..=1.0).contains(a)));
            let zero_reward =
                -trajectory_fitness(&env_config, seed, &[0.0; 20], -1.0, 1.0).unwrap();
            assert!(
                demo.cumulative_reward >= zero_reward,
                "seed {seed}: {} < {zero_reward}",
                demo.cumulative_reward
            );
            // Replaying the stored actions reproduces the stored rewards.
            let replayed =
                -trajectory_fitness(&env_config, seed, &demo.actions, -1.0, 1.0).unwrap();
            assert!((replayed - demo.cumulative_reward).abs() < 1e-9);
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_and_serial_generation_evaluation_agree() {
        let env_config = small_env();
        let cma_config = small_cma();
        let state = CmaState::new(&cma_config).unwrap();
        let candidates = state.ask(&mut seeded_rng(11, Stream::Cma)).unwrap();
        let eval = |c: &Vec<f64>| trajectory_fitness(&env_config, 5, c, -1.0, 1.0).unwrap();
        let par = exec::map_ordered(&candidates, eval);
        let seq = exec::map_ordered_seq(&candidates, eval);
        let par_bits: Vec<u64> = par.iter().map(|f| f.to_bits()).collect();
        let seq_bits: Vec<u64> = seq.iter().map(|f| f.to_bits()).collect();
        assert_eq!(par_bits, seq_bits);
    }

    #[test]
    fn demonstration_file_roundtrip() {
        let env_config = small_env();
        let mut cma_config = small_cma();
        cma_config.max_generations = 3;
        let demo = optimize_trajectory(&env_config, 9, &cma_config, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(Demonstration::file_name(demo.seed));
        demo.save(&path).unwrap();
        let loaded = Demonstration::load(&path).unwrap();
        assert_eq!(loaded, demo);
        // Rewriting produces the identical byte stream.
        let first = std::fs::read(&path).unwrap();
        loaded.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn demonstration_load_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.txt");
        std::fs::write(&path, "nonsense\n").unwrap();
        assert!(matches!(Demonstration::load(&path), Err(Error::Format(_))));
        std::fs::write(&path, "seed,1,cumulative,0.0\n0,2.0,0.0,0,0,0,0,0,0,0\n").unwrap();
        assert!(matches!(Demonstration::load(&path), Err(Error::Format(_))));
    }
}
