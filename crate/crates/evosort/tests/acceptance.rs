//! Acceptance gate: one test per criterion, each printing a pass line.
//!
//! Criteria 6-10 share one full-scale pipeline run (100 demonstrations, two
//! 100k-step trainings, the eight-agent benchmark) built lazily behind a
//! `OnceLock`. Everything is seeded, so the suite is deterministic; the
//! warm-start criterion applies its documented single-rerun rule with the
//! train seed incremented if the first matched pair fails an ordering.

use std::path::PathBuf;
use std::sync::OnceLock;

use rand::Rng;

use evosort::agents::{RandomAgent, RuleBasedAgent, StaticAgent};
use evosort::bench::BenchmarkReport;
use evosort::cli::{cmd_benchmark, cmd_demo_gen, cmd_train, TrainVariant};
use evosort::cma::{CmaConfig, CmaState};
use evosort::env::{purity_reward, step_reward, EnvConfig, SortingEnv};
use evosort::nn::Mlp;
use evosort::ppo::{compute_gae, GaussianPolicy, TrainConfig, TrainOutcome};
use evosort::rng::{seeded_rng, Stream};
use evosort::seeds;

struct Artifacts {
    #[allow(dead_code)]
    root: tempfile::TempDir,
    demos_dir: PathBuf,
    artifacts_dir: PathBuf,
    mean_demo_reward: f64,
    ppo: TrainOutcome,
    ppo_bc: TrainOutcome,
    bc_loss_curve: Vec<f64>,
    report: BenchmarkReport,
    bench_dir: PathBuf,
    train_seed_used: u64,
    warm_start_orderings_hold: bool,
}

static ARTIFACTS: OnceLock<Artifacts> = OnceLock::new();

fn orderings_hold(report: &BenchmarkReport, ppo: &TrainOutcome, ppo_bc: &TrainOutcome) -> bool {
    let mean = |agent: &str| {
        let rewards = report.agent_rewards(agent);
        rewards.iter().sum::<f64>() / rewards.len() as f64
    };
    mean("ppo_bc_best") > mean("ppo_best")
        && mean("ppo_bc_final") > mean("ppo_final")
        && ppo_bc.initial_eval.mean_return > ppo.initial_eval.mean_return
}

fn artifacts() -> &'static Artifacts {
    ARTIFACTS.get_or_init(|| {
        let root = tempfile::tempdir().expect("tempdir");
        let env_config = EnvConfig::default();
        let demos_dir = root.path().join("demos");

        let demo_outcome = cmd_demo_gen(
            &env_config,
            seeds::DEMO_SEED_BASE,
            seeds::DEMO_SEED_COUNT,
            None,
            &demos_dir,
        )
        .expect("demo generation");
        assert!(demo_outcome.failures.is_empty(), "demo generation failed");

        // Matched training pair at the base seed; the warm-start criterion
        // permits exactly one rerun with the seed incremented.
        let mut train_seed = seeds::TRAIN_SEED_BASE;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let artifacts_dir = root.path().join(format!("artifacts_{train_seed}"));
            let train_config = TrainConfig {
                train_seed,
                ..TrainConfig::default()
            };
            let ppo = cmd_train(
                &env_config,
                &train_config,
                TrainVariant::Ppo,
                None,
                &artifacts_dir.join("ppo"),
            )
            .expect("ppo training");
            let ppo_bc = cmd_train(
                &env_config,
                &train_config,
                TrainVariant::PpoBc,
                Some(&demos_dir),
                &artifacts_dir.join("ppo_bc"),
            )
            .expect("ppo_bc training");

            let bench_dir = root.path().join(format!("bench_{train_seed}"));
            let bench =
                cmd_benchmark(&env_config, &artifacts_dir, &bench_dir, None).expect("benchmark");

            let hold = orderings_hold(&bench.report, &ppo.outcome, &ppo_bc.outcome);
            if hold || attempt == 2 {
                let bc_loss_curve =
                    std::fs::read_to_string(artifacts_dir.join("ppo_bc").join("bc_loss.csv"))
                        .expect("bc loss artifact")
                        .lines()
                        .skip(1)
                        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
                        .collect();
                return Artifacts {
                    root,
                    demos_dir,
                    artifacts_dir,
                    mean_demo_reward: demo_outcome.mean_demo_reward,
                    ppo: ppo.outcome,
                    ppo_bc: ppo_bc.outcome,
                    bc_loss_curve,
                    report: bench.report,
                    bench_dir,
                    train_seed_used: train_seed,
                    warm_start_orderings_hold: hold,
                };
            }
            train_seed += 1;
        }
    })
}

fn mean_of(report: &BenchmarkReport, agent: &str) -> f64 {
    let rewards = report.agent_rewards(agent);
    rewards.iter().sum::<f64>() / rewards.len() as f64
}

#[test]
fn criterion_01_reward_function_suite() {
    let theta = 0.9;
    let eps = 1e-9;
    let below = purity_reward(theta - eps, theta).unwrap();
    let above = purity_reward(theta + eps, theta).unwrap();
    assert!(
        (below - above).abs() < 1e-6,
        "discontinuity at threshold: {below} vs {above}"
    );
    assert_eq!(purity_reward(theta, theta).unwrap(), 0.25);
    assert_eq!(purity_reward(1.0, theta).unwrap(), 0.0);
    assert_eq!(purity_reward(0.0, theta).unwrap(), -10.0);

    let top = step_reward(100.0, 100.0, theta, theta, theta, theta).unwrap();
    assert!((top - 0.75).abs() < 1e-12);
    let bottom = step_reward(0.0, 100.0, 1.0, 1.0, theta, theta).unwrap();
    assert!((bottom - (-0.25)).abs() < 1e-12);

    println!("[acceptance] criterion 1 (reward function suite): PASS");
}

#[test]
fn criterion_02_determinism_and_conservation() {
    let config = EnvConfig::default();
    let mut rng = seeded_rng(2024, Stream::Agent);
    for case in 0..100 {
        let seed: u64 = rng.gen_range(0..10_000);
        let actions: Vec<f64> = (0..config.episode_length)
            .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
            .collect();

        let mut env_a = SortingEnv::new(config.clone(), seed).unwrap();
        let mut env_b = SortingEnv::new(config.clone(), seed).unwrap();
        for (t, &action) in actions.iter().enumerate() {
            let ra = env_a.step(action).unwrap();
            let rb = env_b.step(action).unwrap();
            assert_eq!(
                ra.reward.to_bits(),
                rb.reward.to_bits(),
                "case {case} step {t}: rewards diverged"
            );
            assert_eq!(ra.observation, rb.observation);

            let total = env_a.containers().total();
            let processed = env_a.processed_total();
            let relative = (total - processed).abs() / processed.max(1.0);
            assert!(
                relative < 1e-9,
                "case {case} step {t}: conservation violated ({total} vs {processed})"
            );
        }
    }
    println!("[acceptance] criterion 2 (determinism + conservation): PASS");
}

#[test]
fn criterion_03_gradient_correctness() {
    let mut rng = seeded_rng(3, Stream::Init);
    let mlp = Mlp::orthogonal(&[7, 32, 32, 1], 2.0f64.sqrt(), 1.0, &mut rng);
    let h = 1e-5;
    let base = mlp.flatten();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let input: Vec<f64> = (0..7).map(|_| rng.gen::<f64>()).collect();
        let output_grad = rng.gen::<f64>() * 2.0 - 1.0;
        let (_, cache) = mlp.forward(&input).unwrap();
        let analytic = mlp.backward(&cache, output_grad).unwrap();
        for i in 0..base.len() {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i] += h;
            minus[i] -= h;
            let mut m_plus = mlp.clone();
            let mut m_minus = mlp.clone();
            m_plus.set_from_flat(&plus).unwrap();
            m_minus.set_from_flat(&minus).unwrap();
            let numeric = output_grad * (m_plus.eval(&input) - m_minus.eval(&input)) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
    }
    assert!(worst < 1e-5, "max relative gradient error {worst}");
    println!("[acceptance] criterion 3 (gradient correctness, max rel err {worst:.2e}): PASS");
}

#[test]
#[allow(clippy::needless_range_loop)]
fn criterion_04_gae_oracle_equivalence() {
    let mut rng = seeded_rng(4, Stream::PpoShuffle);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = 12;
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < 0.3).collect();
        let last_value = rng.gen::<f64>() * 2.0 - 1.0;
        let gamma = rng.gen::<f64>();
        let lambda = rng.gen::<f64>();

        let (fast, _) = compute_gae(&rewards, &values, &dones, last_value, gamma, lambda);

        // Brute force: explicit weighted sum of TD residuals.
        for t in 0..n {
            let mut advantage = 0.0;
            let mut weight = 1.0;
            for l in t..n {
                let next_value = if l + 1 == n {
                    last_value
                } else {
                    values[l + 1]
                };
                let nonterminal = if dones[l] { 0.0 } else { 1.0 };
                advantage += weight * (rewards[l] + gamma * next_value * nonterminal - values[l]);
                if dones[l] {
                    break;
                }
                weight *= gamma * lambda;
            }
            worst = worst.max((fast[t] - advantage).abs());
        }
    }
    assert!(worst < 1e-10, "max abs GAE deviation {worst}");
    println!("[acceptance] criterion 4 (GAE oracle equivalence, max dev {worst:.2e}): PASS");
}

#[test]
fn criterion_05_cma_sphere_sanity() {
    let mut config = CmaConfig::new(10);
    config.sigma0 = 0.5;
    config.mean0 = vec![1.0; 10];
    let mut state = CmaState::new(&config).unwrap();
    let mut rng = seeded_rng(5, Stream::Cma);
    let mut last_best = f64::INFINITY;
    let mut converged = None;
    for generation in 0..300 {
        let candidates = state.ask(&mut rng).unwrap();
        let fitnesses: Vec<f64> = candidates
            .iter()
            .map(|c| c.iter().map(|x| x * x).sum())
            .collect();
        state.tell(&candidates, &fitnesses).unwrap();
        let (_, best) = state.best().unwrap();
        assert!(
            best <= last_best,
            "incumbent rose at generation {generation}: {last_best} -> {best}"
        );
        last_best = best;
        if best < 1e-10 {
            converged = Some(generation);
            break;
        }
    }
    let generation = converged.expect("sphere did not reach 1e-10 within 300 generations");
    println!("[acceptance] criterion 5 (CMA-ES sphere < 1e-10 at generation {generation}): PASS");
}

#[test]
fn criterion_06_oracle_dominance() {
    let a = artifacts();
    let oracle_mean = mean_of(&a.report, "oracle");
    for agent in &a.report.agents {
        if agent != "oracle" {
            let other = mean_of(&a.report, agent);
            assert!(
                oracle_mean > other,
                "oracle mean {oracle_mean} not strictly above {agent} ({other})"
            );
        }
    }

    let oracle_rewards = a.report.agent_rewards("oracle");
    let mut top_count = 0;
    for (i, &oracle_reward) in oracle_rewards.iter().enumerate() {
        let best_other = a
            .report
            .agents
            .iter()
            .filter(|agent| agent.as_str() != "oracle")
            .map(|agent| a.report.agent_rewards(agent)[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if oracle_reward >= best_other {
            top_count += 1;
        }
    }
    assert!(
        top_count >= 18,
        "oracle is the per-seed maximum on only {top_count}/20 seeds"
    );
    println!(
        "[acceptance] criterion 6 (oracle dominance: mean {oracle_mean:.3}, top on {top_count}/20 seeds): PASS"
    );
}

#[test]
fn criterion_07_warm_start_benefit() {
    let a = artifacts();
    assert!(
        a.warm_start_orderings_hold,
        "warm-start orderings failed at train seeds {} and {}",
        seeds::TRAIN_SEED_BASE,
        seeds::TRAIN_SEED_BASE + 1
    );
    let bc_best = mean_of(&a.report, "ppo_bc_best");
    let best = mean_of(&a.report, "ppo_best");
    let bc_final = mean_of(&a.report, "ppo_bc_final");
    let fin = mean_of(&a.report, "ppo_final");
    assert!(bc_best > best);
    assert!(bc_final > fin);
    assert!(a.ppo_bc.initial_eval.mean_return > a.ppo.initial_eval.mean_return);
    println!(
        "[acceptance] criterion 7 (warm start at seed {}: best {bc_best:.3} > {best:.3}, \
         final {bc_final:.3} > {fin:.3}, step-0 {:.3} > {:.3}): PASS",
        a.train_seed_used, a.ppo_bc.initial_eval.mean_return, a.ppo.initial_eval.mean_return
    );
}

#[test]
fn criterion_08_baseline_ordering() {
    let a = artifacts();
    let random = mean_of(&a.report, "random");
    let rule = mean_of(&a.report, "rule");
    let ppo_best = mean_of(&a.report, "ppo_best");
    assert!(
        ppo_best > random,
        "ppo_best {ppo_best} does not beat random {random}"
    );
    assert!(rule > random, "rule {rule} does not beat random {random}");
    println!(
        "[acceptance] criterion 8 (ppo_best {ppo_best:.3} > random {random:.3}; \
         rule {rule:.3} > random): PASS"
    );
}

#[test]
fn criterion_09_bc_learning() {
    let a = artifacts();
    let first = a.bc_loss_curve[0];
    let last = *a.bc_loss_curve.last().unwrap();
    assert_eq!(a.bc_loss_curve.len(), 10);
    let decreased = last < first;
    let halved = last <= 0.5 * first;
    let reduction = 100.0 * (1.0 - last / first);
    if decreased && halved {
        println!(
            "[acceptance] criterion 9 (BC MSE {first:.4} -> {last:.4}, {reduction:.0}% reduction): PASS"
        );
    } else {
        println!(
            "[acceptance] criterion 9 (BC MSE {first:.4} -> {last:.4}, {reduction:.1}% reduction, \
             >= 50% required): FAIL"
        );
    }
    assert!(decreased, "BC loss did not decrease: {first} -> {last}");
    // The >= 50% reduction clause cannot hold for foresight demonstrations:
    // most of the imitation error is the oracle's seed-specific information,
    // which no observation-conditioned regressor can remove. The assertion
    // stays as specified.
    assert!(
        halved,
        "BC loss reduction below 50%: {first} -> {last} ({reduction:.1}%)"
    );
}

#[test]
fn criterion_10_end_to_end_reproducibility() {
    let a = artifacts();
    let env_config = EnvConfig::default();

    // Rerun the benchmark stage from the recorded inputs: bitwise-equal
    // results.csv.
    let rerun_dir = a.root.path().join("bench_rerun");
    let rerun = cmd_benchmark(&env_config, &a.artifacts_dir, &rerun_dir, Some(2)).unwrap();
    let original = std::fs::read(a.bench_dir.join("results.csv")).unwrap();
    let repeated = std::fs::read(rerun_dir.join("results.csv")).unwrap();
    assert_eq!(
        original, repeated,
        "results.csv is not bitwise reproducible"
    );
    assert_eq!(rerun.report, a.report);

    // Demo files regenerate bitwise as well.
    let sample = a.demos_dir.join("demo_3042.txt");
    let before = std::fs::read(&sample).unwrap();
    let redo_dir = a.root.path().join("demo_redo");
    cmd_demo_gen(&env_config, 3042, 1, None, &redo_dir).unwrap();
    assert_eq!(
        std::fs::read(redo_dir.join("demo_3042.txt")).unwrap(),
        before
    );

    println!("[acceptance] criterion 10 (end-to-end reproducibility): PASS");
}

// Supporting checks the criteria lean on, kept in the gate so a regression
// is visible next to the criterion it would undermine.

#[test]
fn supporting_full_scale_eval_curve_shape() {
    let a = artifacts();
    // 100,000 steps at eval cadence 5,000: exactly 20 during-training
    // evaluations, the last one at the full budget.
    assert_eq!(a.ppo.eval_curve.len(), 20);
    assert_eq!(a.ppo_bc.eval_curve.len(), 20);
    assert_eq!(a.ppo.eval_curve.last().unwrap().steps, 100_000);
    assert_eq!(a.ppo.initial_eval.steps, 0);
    let best = a
        .ppo
        .eval_curve
        .iter()
        .map(|p| p.mean_return)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.ppo.best_eval.mean_return, best);
}

#[test]
fn supporting_warm_start_wins_per_seed_at_step_zero() {
    // The warm-started policy beats the untrained one on at least 15 of the
    // 20 comparison seeds before any fine-tuning.
    let a = artifacts();
    let config = EnvConfig::default();
    let demos = evosort::bc::DemoSet::load_standard(&a.demos_dir).unwrap();
    let untrained = GaussianPolicy::new(0);
    let mut warmed = GaussianPolicy::new(0);
    let mut rng = seeded_rng(seeds::TRAIN_SEED_BASE, Stream::BcShuffle);
    evosort::bc::bc_pretrain(&mut warmed, &demos, 10, &mut rng).unwrap();

    let mut wins = 0;
    for seed in seeds::test_seeds() {
        let cold = evosort::agents::run_episode(
            &mut evosort::agents::PolicyAgent::new(untrained.clone()),
            &config,
            seed,
        )
        .unwrap();
        let warm = evosort::agents::run_episode(
            &mut evosort::agents::PolicyAgent::new(warmed.clone()),
            &config,
            seed,
        )
        .unwrap();
        if warm > cold {
            wins += 1;
        }
    }
    assert!(wins >= 15, "warm start wins only {wins}/20 step-0 comparisons");
}

#[test]
fn supporting_demo_set_quality() {
    let a = artifacts();
    let config = EnvConfig::default();
    let mut static_sum = 0.0;
    for seed in seeds::demo_seeds() {
        static_sum += evosort::agents::run_episode(&mut StaticAgent::new(), &config, seed).unwrap();
    }
    let static_mean = static_sum / seeds::DEMO_SEED_COUNT as f64;
    assert!(
        a.mean_demo_reward > static_mean,
        "demos ({}) do not beat static rollouts ({static_mean})",
        a.mean_demo_reward
    );
}

#[test]
fn supporting_policy_agents_match_checkpoints() {
    let a = artifacts();
    let config = EnvConfig::default();
    let policy = GaussianPolicy::load(&a.artifacts_dir.join("ppo").join("best.ckpt")).unwrap();
    let from_report = a.report.agent_rewards("ppo_best");
    for (i, seed) in seeds::test_seeds().enumerate() {
        let reward = evosort::agents::run_episode(
            &mut evosort::agents::PolicyAgent::new(policy.clone()),
            &config,
            seed,
        )
        .unwrap();
        assert_eq!(reward.to_bits(), from_report[i].to_bits());
    }
}

#[test]
fn supporting_nonlearning_baselines_are_deterministic() {
    let config = EnvConfig::default();
    for seed in seeds::test_seeds() {
        let r1 = evosort::agents::run_episode(&mut RandomAgent::new(seed), &config, seed).unwrap();
        let r2 = evosort::agents::run_episode(&mut RandomAgent::new(seed), &config, seed).unwrap();
        assert_eq!(r1.to_bits(), r2.to_bits());
        let b1 =
            evosort::agents::run_episode(&mut RuleBasedAgent::for_config(&config), &config, seed)
                .unwrap();
        let b2 =
            evosort::agents::run_episode(&mut RuleBasedAgent::for_config(&config), &config, seed)
                .unwrap();
        assert_eq!(b1.to_bits(), b2.to_bits());
    }
}
