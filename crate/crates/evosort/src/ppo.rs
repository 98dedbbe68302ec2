//! Proximal policy optimization over the sorting environment.
//!
//! A Gaussian policy (MLP mean head, single state-independent log-std,
//! separate critic) is trained with clipped surrogate updates on rollouts
//! collected from auto-resetting episodes. Every `eval_freq` environment
//! steps the policy is evaluated deterministically on the fixed evaluation
//! seeds; the best intermediate parameters and the final parameters are both
//! retained to expose training instability.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::env::{EnvConfig, Observation, SortingEnv, OBS_DIM};
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{AdamState, Checkpoint, Mlp};
use crate::rng::{seeded_rng, Stream};
use crate::seeds;

/// Actor and critic share this architecture.
pub const POLICY_LAYER_SIZES: [usize; 4] = [OBS_DIM, 32, 32, 1];
/// Clamp range of the learnable log standard deviation.
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Checkpoint section names.
const SECTION_ACTOR: &str = "actor";
const SECTION_CRITIC: &str = "critic";
const SECTION_LOG_STD: &str = "log_std";
const SECTION_ADAM_M: &str = "adam_m";
const SECTION_ADAM_V: &str = "adam_v";
const SECTION_ADAM_T: &str = "adam_t";

/// Gaussian policy with state-independent exploration noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: f64,
}

impl GaussianPolicy {
    /// Fresh orthogonally initialized policy: gain sqrt(2) on hidden layers,
    /// 0.01 on the actor output, 1.0 on the critic output, log-std 0.
    pub fn new(init_seed: u64) -> Self {
        let mut rng = seeded_rng(init_seed, Stream::Init);
        let actor = Mlp::orthogonal(&POLICY_LAYER_SIZES, 2.0f64.sqrt(), 0.01, &mut rng);
        let critic = Mlp::orthogonal(&POLICY_LAYER_SIZES, 2.0f64.sqrt(), 1.0, &mut rng);
        assert_eq!(actor.param_count(), 1345);
        assert_eq!(critic.param_count(), 1345);
        Self {
            actor,
            critic,
            log_std: 0.0,
        }
    }

    /// Total trainable parameters: both networks plus the log-std scalar.
    pub fn param_count() -> usize {
        2 * 1345 + 1
    }

    pub fn mean_action(&self, obs: &Observation) -> f64 {
        self.actor.eval(obs)
    }

    /// Evaluation-mode action: the mean, clipped to the action bounds.
    pub fn deterministic_action(&self, obs: &Observation) -> f64 {
        self.mean_action(obs).clamp(-1.0, 1.0)
    }

    pub fn value(&self, obs: &Observation) -> f64 {
        self.critic.eval(obs)
    }

    /// Draws a pre-clip action and its log-density.
    pub fn sample_action(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let mean = self.mean_action(obs);
        let z: f64 = rand_distr::StandardNormal.sample(rng);
        let action = mean + self.log_std.exp() * z;
        (action, self.log_prob(mean, action))
    }

    /// Gaussian log-density of `action` under `N(mean, exp(log_std)^2)`.
    pub fn log_prob(&self, mean: f64, action: f64) -> f64 {
        let z = (action - mean) / self.log_std.exp();
        -0.5 * z * z - self.log_std - 0.5 * LN_2PI
    }

    /// Differential entropy of the action distribution.
    pub fn entropy(&self) -> f64 {
        0.5 * (1.0 + LN_2PI) + self.log_std
    }

    /// Flat view `[actor | critic | log_std]` used by the shared optimizer.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut flat = self.actor.flatten();
        flat.extend(self.critic.flatten());
        flat.push(self.log_std);
        flat
    }

    /// Restores from the flat layout, clamping log-std into range.
    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != Self::param_count() {
            return Err(Error::Input(format!(
                "expected {} parameters, got {}",
                Self::param_count(),
                params.len()
            )));
        }
        let n = self.actor.param_count();
        self.actor.set_from_flat(&params[..n])?;
        self.critic.set_from_flat(&params[n..2 * n])?;
        self.log_std = params[2 * n].clamp(LOG_STD_MIN, LOG_STD_MAX);
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        ckpt.push(SECTION_ACTOR, self.actor.flatten());
        ckpt.push(SECTION_CRITIC, self.critic.flatten());
        ckpt.push(SECTION_LOG_STD, vec![self.log_std]);
        ckpt
    }

    /// Checkpoint including optimizer moments, for exact training resume.
    pub fn to_checkpoint_with_adam(&self, adam: &AdamState) -> Checkpoint {
        let mut ckpt = self.to_checkpoint();
        let (m, v) = adam.moments();
        ckpt.push(SECTION_ADAM_M, m.to_vec());
        ckpt.push(SECTION_ADAM_V, v.to_vec());
        ckpt.push(SECTION_ADAM_T, vec![adam.step_count() as f64]);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut policy = Self {
            actor: Mlp::zeros(&POLICY_LAYER_SIZES),
            critic: Mlp::zeros(&POLICY_LAYER_SIZES),
            log_std: 0.0,
        };
        policy.actor.set_from_flat(ckpt.require(SECTION_ACTOR)?)?;
        policy.critic.set_from_flat(ckpt.require(SECTION_CRITIC)?)?;
        let log_std = ckpt.require(SECTION_LOG_STD)?;
        if log_std.len() != 1 {
            return Err(Error::Format("log_std section must hold one value".into()));
        }
        policy.log_std = log_std[0].clamp(LOG_STD_MIN, LOG_STD_MAX);
        Ok(policy)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

use rand_distr::Distribution;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub total_timesteps: u64,
    pub eval_freq: u64,
    pub n_steps: usize,
    pub minibatch_size: usize,
    pub update_epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub learning_rate: f64,
    /// First training episode seed; episodes consume consecutive seeds.
    pub train_seed: u64,
    /// Seed for parameter initialization (shared by matched run pairs).
    pub init_seed: u64,
    pub eval_episodes: usize,
    pub eval_seed_base: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_timesteps: 100_000,
            eval_freq: 5_000,
            n_steps: 2048,
            minibatch_size: 64,
            update_epochs: 10,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            learning_rate: 3e-4,
            train_seed: seeds::TRAIN_SEED_BASE,
            init_seed: 0,
            eval_episodes: seeds::EVAL_SEED_COUNT as usize,
            eval_seed_base: seeds::EVAL_SEED_BASE,
        }
    }
}

impl TrainConfig {
    /// Number of rollout/update cycles for the configured budget.
    pub fn update_count(&self) -> u64 {
        self.total_timesteps.div_ceil(self.n_steps as u64)
    }

    /// Validates hyperparameters and the seed discipline against the
    /// episode length (training episode seeds must stay clear of the test,
    /// evaluation and demonstration ranges).
    pub fn validate(&self, episode_length: usize) -> Result<()> {
        if self.total_timesteps == 0 || self.eval_freq == 0 {
            return Err(Error::Config(
                "timestep and eval budgets must be positive".into(),
            ));
        }
        if self.n_steps == 0 || self.minibatch_size == 0 || self.update_epochs == 0 {
            return Err(Error::Config(
                "rollout and update sizes must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config(
                "gamma and gae_lambda must lie in [0, 1]".into(),
            ));
        }
        if self.clip <= 0.0 {
            return Err(Error::Config("clip must be positive".into()));
        }
        if self.train_seed < seeds::TRAIN_SEED_BASE {
            return Err(Error::Config(format!(
                "train_seed must be >= {}",
                seeds::TRAIN_SEED_BASE
            )));
        }
        let max_episodes =
            (self.update_count() * self.n_steps as u64).div_ceil(episode_length as u64) + 1;
        let train_end = self.train_seed + max_episodes;
        if train_end > seeds::TRAIN_SEED_LIMIT {
            return Err(Error::Config(format!(
                "training would consume seeds up to {train_end}, crossing into the \
                 demonstration range at {}",
                seeds::TRAIN_SEED_LIMIT
            )));
        }
        seeds::assert_disjoint(&[
            (
                "test",
                seeds::TEST_SEED_BASE,
                seeds::TEST_SEED_BASE + seeds::TEST_SEED_COUNT,
            ),
            (
                "eval",
                self.eval_seed_base,
                self.eval_seed_base + self.eval_episodes as u64,
            ),
            ("train", self.train_seed, train_end),
            (
                "demo",
                seeds::DEMO_SEED_BASE,
                seeds::DEMO_SEED_BASE + seeds::DEMO_SEED_COUNT,
            ),
        ])
    }
}

/// Fixed-capacity transition store for one update.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub observations: Vec<Observation>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Critic bootstrap for the observation after the final stored step.
    pub last_value: f64,
}

impl RolloutBuffer {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            observations: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            last_value: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Generalized advantage estimation by backward recursion; episode
/// boundaries (done flags) reset the recursion. Returns `(advantages,
/// returns)` with `returns = advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    assert_eq!(rewards.len(), dones.len());
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 == n {
            last_value
        } else {
            values[t + 1]
        };
        let nonterminal = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * nonterminal - values[t];
        gae = delta + gamma * lambda * nonterminal * gae;
        advantages[t] = gae;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// Collects transitions from auto-resetting episodes with consecutive seeds.
#[derive(Debug)]
pub struct RolloutCollector {
    env: SortingEnv,
    obs: Observation,
    next_seed: u64,
    episodes_started: u64,
}

impl RolloutCollector {
    pub fn new(env_config: &EnvConfig, first_seed: u64) -> Result<Self> {
        let env = SortingEnv::new(env_config.clone(), first_seed)?;
        let obs = env.observation();
        Ok(Self {
            env,
            obs,
            next_seed: first_seed + 1,
            episodes_started: 1,
        })
    }

    pub fn episodes_started(&self) -> u64 {
        self.episodes_started
    }

    /// Gathers exactly `n_steps` transitions, storing pre-clip actions with
    /// their Gaussian log-densities and the critic's value estimates.
    pub fn collect(
        &mut self,
        policy: &GaussianPolicy,
        n_steps: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<RolloutBuffer> {
        let mut buffer = RolloutBuffer::with_capacity(n_steps);
        for _ in 0..n_steps {
            let obs = self.obs;
            let (action, log_prob) = policy.sample_action(&obs, rng);
            let value = policy.value(&obs);
            let step = self.env.step(action.clamp(-1.0, 1.0))?;

            buffer.observations.push(obs);
            buffer.actions.push(action);
            buffer.log_probs.push(log_prob);
            buffer.values.push(value);
            buffer.rewards.push(step.reward);
            buffer.dones.push(step.done);

            self.obs = if step.done {
                if self.next_seed >= seeds::TRAIN_SEED_LIMIT {
                    return Err(Error::Config(format!(
                        "training seed {} reached the demonstration range",
                        self.next_seed
                    )));
                }
                let obs = self.env.reset(self.next_seed);
                self.next_seed += 1;
                self.episodes_started += 1;
                obs
            } else {
                step.observation
            };
        }
        buffer.last_value = policy.value(&self.obs);
        Ok(buffer)
    }
}

/// Mean losses and clip diagnostics of one update.
#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Runs `update_epochs` passes of shuffled minibatch updates with the
/// clipped surrogate objective. Advantages are normalized once per update.
pub fn ppo_update(
    policy: &mut GaussianPolicy,
    adam: &mut AdamState,
    buffer: &RolloutBuffer,
    config: &TrainConfig,
    shuffle_rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let n = buffer.len();
    if n == 0 {
        return Err(Error::Input("empty rollout buffer".into()));
    }
    let (raw_advantages, returns) = compute_gae(
        &buffer.rewards,
        &buffer.values,
        &buffer.dones,
        buffer.last_value,
        config.gamma,
        config.gae_lambda,
    );
    let mean = raw_advantages.iter().sum::<f64>() / n as f64;
    let variance = raw_advantages
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / n as f64;
    let std = variance.sqrt();
    let advantages: Vec<f64> = raw_advantages
        .iter()
        .map(|a| (a - mean) / (std + 1e-8))
        .collect();

    let actor_len = policy.actor.param_count();
    let critic_len = policy.critic.param_count();
    let mut params = policy.flat_params();

    let mut sum_policy_loss = 0.0;
    let mut sum_value_loss = 0.0;
    let mut sum_entropy = 0.0;
    let mut clipped = 0usize;
    let mut samples = 0usize;
    let mut minibatches = 0usize;

    let mut indices: Vec<usize> = (0..n).collect();
    for _ in 0..config.update_epochs {
        indices.shuffle(shuffle_rng);
        for chunk in indices.chunks(config.minibatch_size) {
            let batch = chunk.len() as f64;
            let mut grads = vec![0.0; params.len()];
            let mut batch_policy_loss = 0.0;
            let mut batch_value_loss = 0.0;

            for &i in chunk {
                let obs = &buffer.observations[i];
                let advantage = advantages[i];

                let (mean_action, actor_cache) = policy.actor.forward(obs)?;
                let std_dev = policy.log_std.exp();
                let z = (buffer.actions[i] - mean_action) / std_dev;
                let log_prob = -0.5 * z * z - policy.log_std - 0.5 * LN_2PI;
                let ratio = (log_prob - buffer.log_probs[i]).exp();

                let unclipped = ratio * advantage;
                let clipped_surrogate =
                    ratio.clamp(1.0 - config.clip, 1.0 + config.clip) * advantage;
                batch_policy_loss += -unclipped.min(clipped_surrogate);
                if (ratio - 1.0).abs() > config.clip {
                    clipped += 1;
                }

                // Gradient flows only while the unclipped branch is active.
                if unclipped <= clipped_surrogate {
                    let d_logp_d_mean = z / std_dev;
                    let d_mean = -advantage * ratio * d_logp_d_mean / batch;
                    let actor_grads = policy.actor.backward(&actor_cache, d_mean)?;
                    for (g, ag) in grads[..actor_len].iter_mut().zip(actor_grads) {
                        *g += ag;
                    }
                    let d_logp_d_log_std = z * z - 1.0;
                    grads[actor_len + critic_len] += -advantage * ratio * d_logp_d_log_std / batch;
                }
                // Entropy regularization acts on log_std alone.
                grads[actor_len + critic_len] += -config.entropy_coef / batch;

                let (value, critic_cache) = policy.critic.forward(obs)?;
                let value_error = value - returns[i];
                batch_value_loss += config.value_coef * value_error * value_error;
                let d_value = config.value_coef * 2.0 * value_error / batch;
                let critic_grads = policy.critic.backward(&critic_cache, d_value)?;
                for (g, cg) in grads[actor_len..actor_len + critic_len]
                    .iter_mut()
                    .zip(critic_grads)
                {
                    *g += cg;
                }
            }

            let batch_loss = (batch_policy_loss + batch_value_loss) / batch
                - config.entropy_coef * policy.entropy();
            if !batch_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {batch_loss} in update (policy {batch_policy_loss}, \
                     value {batch_value_loss})"
                )));
            }

            // Global gradient-norm clipping across every parameter.
            let norm: f64 = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > config.max_grad_norm {
                let scale = config.max_grad_norm / norm;
                for g in &mut grads {
                    *g *= scale;
                }
            }
            adam.step(&mut params, &grads)?;
            policy.set_flat_params(&params)?;
            // Keep the optimizer's view consistent with the clamp.
            params[actor_len + critic_len] = policy.log_std;

            sum_policy_loss += batch_policy_loss / batch;
            sum_value_loss += batch_value_loss / batch;
            sum_entropy += policy.entropy();
            samples += chunk.len();
            minibatches += 1;
        }
    }

    Ok(UpdateStats {
        policy_loss: sum_policy_loss / minibatches as f64,
        value_loss: sum_value_loss / minibatches as f64,
        entropy: sum_entropy / minibatches as f64,
        clip_fraction: clipped as f64 / samples as f64,
    })
}

/// One point of the periodic evaluation curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub steps: u64,
    pub mean_return: f64,
    pub std_return: f64,
}

/// Deterministic evaluation (action = clipped mean) over consecutive seeds.
/// Returns per-episode cumulative rewards.
pub fn evaluate_policy(
    policy: &GaussianPolicy,
    env_config: &EnvConfig,
    seed_base: u64,
    episodes: usize,
) -> Result<Vec<f64>> {
    let seeds: Vec<u64> = (seed_base..seed_base + episodes as u64).collect();
    exec::map_ordered(&seeds, |&seed| {
        let mut env = SortingEnv::new(env_config.clone(), seed)?;
        let mut total = 0.0;
        let mut obs = env.observation();
        while !env.done() {
            let step = env.step(policy.deterministic_action(&obs))?;
            total += step.reward;
            obs = step.observation;
        }
        Ok(total)
    })
    .into_iter()
    .collect()
}

fn eval_point(
    policy: &GaussianPolicy,
    env_config: &EnvConfig,
    config: &TrainConfig,
    steps: u64,
) -> Result<EvalPoint> {
    let returns = evaluate_policy(
        policy,
        env_config,
        config.eval_seed_base,
        config.eval_episodes,
    )?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let variance = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok(EvalPoint {
        steps,
        mean_return: mean,
        std_return: variance.sqrt(),
    })
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_policy: GaussianPolicy,
    pub best_policy: GaussianPolicy,
    /// Evaluation before the first update (the warm-start baseline).
    pub initial_eval: EvalPoint,
    /// One entry per `eval_freq` crossing; the final entry evaluates the
    /// final parameters.
    pub eval_curve: Vec<EvalPoint>,
    pub best_eval: EvalPoint,
    pub total_steps: u64,
    pub episodes_used: u64,
    pub update_stats: Vec<UpdateStats>,
}

/// Full PPO run. `warm_start` substitutes for the fresh initialization when
/// present (the behavioral-cloning path).
pub fn train(
    env_config: &EnvConfig,
    config: &TrainConfig,
    warm_start: Option<GaussianPolicy>,
) -> Result<TrainOutcome> {
    env_config.validate()?;
    config.validate(env_config.episode_length)?;

    let mut policy = warm_start.unwrap_or_else(|| GaussianPolicy::new(config.init_seed));
    let mut adam = AdamState::new(GaussianPolicy::param_count(), config.learning_rate);
    let mut action_rng = seeded_rng(config.train_seed, Stream::PpoAction);
    let mut shuffle_rng = seeded_rng(config.train_seed, Stream::PpoShuffle);
    let mut collector = RolloutCollector::new(env_config, config.train_seed)?;

    let initial_eval = eval_point(&policy, env_config, config, 0)?;

    let mut eval_curve = Vec::new();
    let mut update_stats = Vec::new();
    let mut best_policy = policy.clone();
    let mut best_eval: Option<EvalPoint> = None;
    let mut steps_done: u64 = 0;
    let mut evals_done: u64 = 0;

    while steps_done < config.total_timesteps {
        let buffer = collector.collect(&policy, config.n_steps, &mut action_rng)?;
        steps_done += buffer.len() as u64;
        let stats = ppo_update(&mut policy, &mut adam, &buffer, config, &mut shuffle_rng)?;
        update_stats.push(stats);

        while (evals_done + 1) * config.eval_freq <= steps_done {
            evals_done += 1;
            let point = eval_point(&policy, env_config, config, evals_done * config.eval_freq)?;
            if best_eval.is_none_or(|b| point.mean_return > b.mean_return) {
                best_eval = Some(point);
                best_policy = policy.clone();
            }
            eval_curve.push(point);
        }
    }

    let best_eval = best_eval.ok_or_else(|| {
        Error::Config("eval_freq exceeds total_timesteps; no evaluation happened".into())
    })?;

    Ok(TrainOutcome {
        final_policy: policy,
        best_policy,
        initial_eval,
        eval_curve,
        best_eval,
        total_steps: steps_done,
        episodes_used: collector.episodes_started(),
        update_stats,
    })
}

/// Renders the evaluation curve as `steps,mean_return,std_return` CSV, the
/// initial evaluation first.
pub fn eval_curve_csv(initial: &EvalPoint, curve: &[EvalPoint]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("steps,mean_return,std_return\n");
    for point in std::iter::once(initial).chain(curve) {
        writeln!(
            out,
            "{},{},{}",
            point.steps,
            crate::textio::fmt_f64(point.mean_return),
            crate::textio::fmt_f64(point.std_return)
        )
        .expect("string write");
    }
    out
}
