//! Seeded multi-agent benchmark and summary statistics.
//!
//! Every registered agent plays one full episode per test seed with
//! deterministic action selection; (agent, seed) cells are independent and
//! evaluated through the ordered parallel map, so the report is a pure
//! function of checkpoints, demonstrations, configs and seeds.

use std::collections::BTreeMap;

use crate::agents::{Agent, PolicyAgent, RandomAgent, ReplayAgent, RuleBasedAgent, StaticAgent};
use crate::cma::Demonstration;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::exec;
use crate::ppo::GaussianPolicy;
use crate::textio::{fmt_f64, parse_f64, parse_u64};

/// One benchmark cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchEntry {
    pub agent: String,
    pub seed: u64,
    pub cumulative_reward: f64,
}

/// Registered benchmark participant; a fresh episode-level controller is
/// instantiated per cell.
#[derive(Clone)]
pub enum BenchAgent {
    Random,
    Static(f64),
    Rule {
        threshold: f64,
    },
    Policy {
        name: String,
        policy: GaussianPolicy,
    },
    /// Oracle trajectories re-optimized on the benchmark seeds, keyed by seed.
    Oracle {
        demos: BTreeMap<u64, Demonstration>,
    },
}

impl BenchAgent {
    pub fn name(&self) -> &str {
        match self {
            BenchAgent::Random => "random",
            BenchAgent::Static(_) => "static",
            BenchAgent::Rule { .. } => "rule",
            BenchAgent::Policy { name, .. } => name,
            BenchAgent::Oracle { .. } => "oracle",
        }
    }

    fn instantiate(&self, seed: u64) -> Result<Box<dyn Agent>> {
        Ok(match self {
            BenchAgent::Random => Box::new(RandomAgent::new(seed)),
            BenchAgent::Static(action) => Box::new(StaticAgent::with_action(*action)),
            BenchAgent::Rule { threshold } => Box::new(RuleBasedAgent::new(*threshold)),
            BenchAgent::Policy { policy, .. } => Box::new(PolicyAgent::new(policy.clone())),
            BenchAgent::Oracle { demos } => {
                let demo = demos.get(&seed).ok_or_else(|| {
                    Error::Config(format!(
                        "missing oracle demonstration {} for benchmark seed {seed}",
                        Demonstration::file_name(seed)
                    ))
                })?;
                Box::new(ReplayAgent::new(demo.actions.clone()))
            }
        })
    }
}

/// Per-agent descriptive statistics over the benchmark seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSummary {
    pub agent: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Complete benchmark outcome: raw cells in roster-major, seed-minor order.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub entries: Vec<BenchEntry>,
    pub agents: Vec<String>,
    pub seeds: Vec<u64>,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n-1 denominator); zero for fewer than two
/// samples.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Linearly interpolated quantile of an ascending slice:
/// index `h = (n - 1) p`, interpolating between the straddling samples.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BenchmarkReport {
    /// Rewards of one agent in seed order.
    pub fn agent_rewards(&self, agent: &str) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.agent == agent)
            .map(|e| e.cumulative_reward)
            .collect()
    }

    /// Summary rows in roster order, recomputed from the raw entries.
    pub fn summarize(&self) -> Vec<AgentSummary> {
        self.agents
            .iter()
            .map(|agent| {
                let rewards = self.agent_rewards(agent);
                let mut sorted = rewards.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite rewards"));
                AgentSummary {
                    agent: agent.clone(),
                    mean: mean(&rewards),
                    std: sample_std(&rewards),
                    min: sorted[0],
                    q25: quantile(&sorted, 0.25),
                    median: quantile(&sorted, 0.5),
                    q75: quantile(&sorted, 0.75),
                    max: *sorted.last().unwrap(),
                }
            })
            .collect()
    }

    /// `agent,seed,cumulative_reward` rows, exact float round-trip.
    pub fn results_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("agent,seed,cumulative_reward\n");
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{}",
                e.agent,
                e.seed,
                fmt_f64(e.cumulative_reward)
            )
            .expect("string write");
        }
        out
    }

    /// Rebuilds a report (roster order, seed list) from `results_csv` text.
    pub fn from_results_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("agent,seed,cumulative_reward") => {}
            other => return Err(Error::Format(format!("bad results header: {other:?}"))),
        }
        let mut entries = Vec::new();
        let mut agents: Vec<String> = Vec::new();
        let mut seeds: Vec<u64> = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::Format(format!("bad results row `{line}`")));
            }
            let entry = BenchEntry {
                agent: cols[0].to_string(),
                seed: parse_u64(cols[1])?,
                cumulative_reward: parse_f64(cols[2])?,
            };
            if !agents.contains(&entry.agent) {
                agents.push(entry.agent.clone());
            }
            if !seeds.contains(&entry.seed) {
                seeds.push(entry.seed);
            }
            entries.push(entry);
        }
        Ok(Self {
            entries,
            agents,
            seeds,
        })
    }

    /// `agent,mean,std,min,q25,median,q75,max` rows.
    pub fn summary_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("agent,mean,std,min,q25,median,q75,max\n");
        for s in self.summarize() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.agent,
                fmt_f64(s.mean),
                fmt_f64(s.std),
                fmt_f64(s.min),
                fmt_f64(s.q25),
                fmt_f64(s.median),
                fmt_f64(s.q75),
                fmt_f64(s.max)
            )
            .expect("string write");
        }
        out
    }
}

/// Runs every agent on every seed (one episode per cell). Cells are
/// independent; evaluation order never affects the report.
pub fn run_benchmark(
    agents: &[BenchAgent],
    env_config: &EnvConfig,
    seeds: &[u64],
) -> Result<BenchmarkReport> {
    env_config.validate()?;
    if agents.is_empty() || seeds.is_empty() {
        return Err(Error::Input("benchmark needs agents and seeds".into()));
    }
    let mut names: Vec<String> = Vec::with_capacity(agents.len());
    for agent in agents {
        let name = agent.name().to_string();
        if names.contains(&name) {
            return Err(Error::Config(format!("duplicate benchmark agent `{name}`")));
        }
        names.push(name);
    }

    let cells: Vec<(usize, u64)> = agents
        .iter()
        .enumerate()
        .flat_map(|(i, _)| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let entries: Vec<BenchEntry> = exec::map_ordered(&cells, |&(agent_idx, seed)| {
        let agent = &agents[agent_idx];
        let mut controller = agent.instantiate(seed)?;
        let reward = crate::agents::run_episode(controller.as_mut(), env_config, seed)?;
        Ok(BenchEntry {
            agent: agent.name().to_string(),
            seed,
            cumulative_reward: reward,
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    Ok(BenchmarkReport {
        entries,
        agents: names,
        seeds: seeds.to_vec(),
    })
}
