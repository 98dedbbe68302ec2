//! Behavioral-cloning warm-start.
//!
//! Supervised regression of the actor mean onto oracle demonstration
//! actions: mean squared error over shuffled minibatches, Adam at the shared
//! learning rate, a fixed number of epochs. The critic and the exploration
//! log-std are left untouched; only the behavior is cloned.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::cma::Demonstration;
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::AdamState;
use crate::ppo::GaussianPolicy;
use crate::seeds;

/// Loaded demonstration corpus with its flattened supervision pairs.
#[derive(Debug, Clone)]
pub struct DemoSet {
    demos: Vec<Demonstration>,
}

impl DemoSet {
    pub fn new(demos: Vec<Demonstration>) -> Result<Self> {
        if demos.is_empty() {
            return Err(Error::Input("empty demonstration set".into()));
        }
        for demo in &demos {
            demo.validate()
                .map_err(|e| Error::Format(format!("demonstration for seed {}: {e}", demo.seed)))?;
        }
        Ok(Self { demos })
    }

    /// Reads every `demo_<seed>.txt` in `dir` for the given seeds, failing
    /// on the first missing or malformed file.
    pub fn load_dir(dir: &std::path::Path, seeds: impl Iterator<Item = u64>) -> Result<Self> {
        let mut demos = Vec::new();
        for seed in seeds {
            let path = dir.join(Demonstration::file_name(seed));
            if !path.exists() {
                return Err(Error::Config(format!(
                    "missing demonstration file {}",
                    path.display()
                )));
            }
            demos.push(Demonstration::load(&path)?);
        }
        Self::new(demos)
    }

    /// The standard 100-demonstration corpus (seeds 3000..3100).
    pub fn load_standard(dir: &std::path::Path) -> Result<Self> {
        Self::load_dir(dir, seeds::demo_seeds())
    }

    pub fn demos(&self) -> &[Demonstration] {
        &self.demos
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    /// Flattened `(observation, action)` supervision pairs.
    pub fn pairs(&self) -> Vec<(Observation, f64)> {
        self.demos
            .iter()
            .flat_map(|d| {
                d.observations
                    .iter()
                    .copied()
                    .zip(d.actions.iter().copied())
            })
            .collect()
    }

    pub fn mean_return(&self) -> f64 {
        self.demos.iter().map(|d| d.cumulative_reward).sum::<f64>() / self.demos.len() as f64
    }
}

/// Pretraining record: per-epoch mean MSE plus the imitation error measured
/// over the whole corpus before and after.
#[derive(Debug, Clone)]
pub struct BcOutcome {
    pub loss_curve: Vec<f64>,
    pub initial_mae: f64,
    pub final_mae: f64,
    /// Root-mean-square imitation residual after the final epoch; the
    /// policy's log-std is set to its log.
    pub residual_rms: f64,
}

/// Mean absolute imitation error of the actor over the corpus.
pub fn imitation_mae(policy: &GaussianPolicy, demos: &DemoSet) -> f64 {
    let pairs = demos.pairs();
    pairs
        .iter()
        .map(|(obs, action)| (policy.mean_action(obs) - action).abs())
        .sum::<f64>()
        / pairs.len() as f64
}

/// Mean squared imitation error of the actor over the corpus.
pub fn imitation_mse(policy: &GaussianPolicy, demos: &DemoSet) -> f64 {
    let pairs = demos.pairs();
    pairs
        .iter()
        .map(|(obs, action)| {
            let err = policy.mean_action(obs) - action;
            err * err
        })
        .sum::<f64>()
        / pairs.len() as f64
}

const BC_LEARNING_RATE: f64 = 3e-4;
const BC_MINIBATCH: usize = 64;

/// Behavioral-cloning epochs over the demonstration set.
///
/// The actor mean is regressed onto the demonstration actions; the critic is
/// never touched. After the final epoch the exploration log-std is set to
/// the log RMS imitation residual (capped at the initialization value): the
/// Gaussian maximum-likelihood scale for the cloned behavior. Leaving the
/// fresh-init noise in place lets the first fine-tuning updates erase the
/// cloned behavior before the critic can score it.
pub fn bc_pretrain(
    policy: &mut GaussianPolicy,
    demos: &DemoSet,
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BcOutcome> {
    if demos.is_empty() {
        return Err(Error::Input("empty demonstration set".into()));
    }
    let pairs = demos.pairs();
    let initial_mae = imitation_mae(policy, demos);

    let mut adam = AdamState::new(policy.actor.param_count(), BC_LEARNING_RATE);
    let mut actor_params = policy.actor.flatten();
    let mut indices: Vec<usize> = (0..pairs.len()).collect();
    let mut loss_curve = Vec::with_capacity(epochs);

    for _ in 0..epochs {
        indices.shuffle(rng);
        let mut epoch_loss_sum = 0.0;
        let mut minibatches = 0usize;
        for chunk in indices.chunks(BC_MINIBATCH) {
            let batch = chunk.len() as f64;
            let mut grads = vec![0.0; actor_params.len()];
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (obs, target) = &pairs[i];
                let (output, cache) = policy.actor.forward(obs)?;
                let err = output - target;
                batch_loss += err * err;
                let sample_grads = policy.actor.backward(&cache, 2.0 * err / batch)?;
                for (g, sg) in grads.iter_mut().zip(sample_grads) {
                    *g += sg;
                }
            }
            batch_loss /= batch;
            if !batch_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite cloning loss {batch_loss}"
                )));
            }
            adam.step(&mut actor_params, &grads)?;
            policy.actor.set_from_flat(&actor_params)?;
            epoch_loss_sum += batch_loss;
            minibatches += 1;
        }
        loss_curve.push(epoch_loss_sum / minibatches as f64);
    }

    let residual_rms = (pairs
        .iter()
        .map(|(obs, action)| {
            let err = policy.mean_action(obs) - action;
            err * err
        })
        .sum::<f64>()
        / pairs.len() as f64)
        .sqrt();
    policy.log_std = residual_rms
        .ln()
        .clamp(crate::ppo::LOG_STD_MIN, 0.0)
        .min(policy.log_std);

    Ok(BcOutcome {
        loss_curve,
        initial_mae,
        final_mae: imitation_mae(policy, demos),
        residual_rms,
    })
}

/// Renders the loss curve as `epoch,mse` CSV.
pub fn bc_loss_csv(loss_curve: &[f64]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("epoch,mse\n");
    for (epoch, mse) in loss_curve.iter().enumerate() {
        writeln!(out, "{epoch},{}", crate::textio::fmt_f64(*mse)).expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_rng, Stream};

    fn constant_demo(seed: u64, action: f64, steps: usize) -> Demonstration {
        let obs = [0.5, 0.5, 0.5, 0.5, 0.5, 1.0, 1.0];
        Demonstration {
            seed,
            actions: vec![action; steps],
            observations: vec![obs; steps],
            rewards: vec![0.0; steps],
            cumulative_reward: 0.0,
        }
    }

    #[test]
    fn empty_demo_set_is_rejected() {
        assert!(matches!(DemoSet::new(vec![]), Err(Error::Input(_))));
    }

    #[test]
    fn cloning_constant_target_reduces_loss() {
        let demos = DemoSet::new(vec![constant_demo(3000, 0.6, 50)]).unwrap();
        let mut policy = GaussianPolicy::new(0);
        let critic_before = policy.critic.flatten();
        let outcome = bc_pretrain(
            &mut policy,
            &demos,
            10,
            &mut seeded_rng(0, Stream::BcShuffle),
        )
        .unwrap();
        assert_eq!(outcome.loss_curve.len(), 10);
        assert!(outcome.loss_curve.last().unwrap() < &outcome.loss_curve[0]);
        // The critic must be bit-identical; log-std carries the residual.
        assert_eq!(policy.critic.flatten(), critic_before);
        assert!((policy.log_std - outcome.residual_rms.ln().clamp(-20.0, 0.0)).abs() < 1e-12);
        assert!(policy.log_std <= 0.0);
    }

    #[test]
    fn cloning_is_deterministic() {
        let demos = DemoSet::new(vec![
            constant_demo(3000, 0.25, 40),
            constant_demo(3001, -0.5, 40),
        ])
        .unwrap();
        let run = || {
            let mut policy = GaussianPolicy::new(4);
            bc_pretrain(
                &mut policy,
                &demos,
                5,
                &mut seeded_rng(4, Stream::BcShuffle),
            )
            .unwrap();
            policy.actor.flatten()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn imitation_error_drops_after_cloning() {
        // Corpus size matters: enough minibatch steps per epoch for Adam at
        // 3e-4 to move the actor output toward the target.
        let demos =
            DemoSet::new((0..20).map(|i| constant_demo(3000 + i, 0.8, 100)).collect()).unwrap();
        let mut policy = GaussianPolicy::new(1);
        let outcome = bc_pretrain(
            &mut policy,
            &demos,
            10,
            &mut seeded_rng(1, Stream::BcShuffle),
        )
        .unwrap();
        assert!(
            outcome.final_mae <= 0.5 * outcome.initial_mae,
            "MAE {} -> {}",
            outcome.initial_mae,
            outcome.final_mae
        );
    }

    #[test]
    fn loss_csv_shape() {
        let csv = bc_loss_csv(&[0.5, 0.25]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "epoch,mse");
        assert!(lines[1].starts_with("0,"));
        assert!(lines[2].starts_with("1,"));
    }

    #[test]
    fn load_dir_names_missing_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let err = DemoSet::load_dir(dir.path(), 3000..3002).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("demo_3000.txt"), "{msg}"),
            other => panic!("expected configuration error, got {other:?}"),
        }
    }
}
