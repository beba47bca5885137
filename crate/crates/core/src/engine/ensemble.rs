//! Independent seeded replicas of one configuration, run in parallel and
//! reduced in run order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_dsa, EngineError, RunOptions, StepSchedule, TrajectoryRecord};
use crate::problems::ProblemOracle;
use crate::rng::derive_seed;
use crate::topology::MixingSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub runs: usize,
    pub master_seed: u64,
    /// Worker threads; `0` uses the rayon default.
    pub jobs: usize,
    /// Per-run options; the seed is replaced by `derive_seed(master_seed, k)`.
    pub run: RunOptions,
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let m = values.len();
        if m == 0 {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / m as f64;
        let se = if m > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
            (var / m as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: usize,
    pub h_bar_sq: Stat,
    pub grad_sq: Stat,
    pub cons_err: Stat,
}

/// Ensemble summary over the runs that completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub completed: usize,
    /// `(run, last valid step)` for each divergent run.
    pub diverged: Vec<(usize, usize)>,
    pub seeds: Vec<u64>,
    pub tau_draws: Vec<usize>,
    /// `E‖h̄(θ̄_c^{(τ)})‖²`, using the exact expectation over `τ` per run.
    pub h_bar_sq: Stat,
    pub grad_sq: Stat,
    /// `E‖θ̃_o^{(τ)}‖`.
    pub cons_err: Stat,
    /// `E max_i ‖θ_i^{(τ)} − θ̄_c^{(τ)}‖`.
    pub max_dev: Stat,
    /// `E‖θ_i^{(τ)} − θ̄_c^{(τ)}‖` per agent.
    pub agent_dev: Vec<Stat>,
    /// The agent with the largest mean deviation, and its statistic.
    pub worst_agent: usize,
    pub max_agent_dev: Stat,
    /// The same quantities at the single drawn `τ` of each run.
    pub h_bar_sq_at_tau: Stat,
    pub grad_sq_at_tau: Stat,
    pub max_agent_dev_at_tau: Stat,
    pub checkpoints: Vec<Checkpoint>,
}

impl Aggregate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("aggregate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub struct EnsembleResult {
    pub records: Vec<Result<TrajectoryRecord, EngineError>>,
    pub aggregate: Aggregate,
}

fn max_stat(stats: &[Stat]) -> (usize, Stat) {
    stats
        .iter()
        .copied()
        .enumerate()
        .fold((0, Stat { mean: f64::NEG_INFINITY, se: 0.0 }), |best, (i, s)| {
            if s.mean > best.1.mean {
                (i, s)
            } else {
                best
            }
        })
}

/// Runs `opts.runs` replicas. Results are identical for any `jobs`.
pub fn run_ensemble(
    oracle: &dyn ProblemOracle,
    mixing: &MixingSchedule,
    steps: &StepSchedule,
    opts: &EnsembleOptions,
) -> Result<EnsembleResult, EngineError> {
    if opts.runs == 0 {
        return Err(EngineError::Config("ensemble needs at least one run".into()));
    }
    let seeds: Vec<u64> = (0..opts.runs).map(|k| derive_seed(opts.master_seed, k as u64)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| EngineError::Config(format!("thread pool: {e}")))?;
    let records: Vec<Result<TrajectoryRecord, EngineError>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| run_dsa(oracle, mixing, steps, &RunOptions { seed, ..opts.run.clone() }))
            .collect()
    });
    if let Some(Err(e)) = records.iter().find(|r| matches!(r, Err(e) if !matches!(e, EngineError::Divergence { .. }))) {
        return Err(e.clone());
    }
    let aggregate = aggregate(&records, &seeds);
    Ok(EnsembleResult { records, aggregate })
}

fn aggregate(records: &[Result<TrajectoryRecord, EngineError>], seeds: &[u64]) -> Aggregate {
    let ok: Vec<&TrajectoryRecord> = records.iter().filter_map(|r| r.as_ref().ok()).collect();
    let diverged = records
        .iter()
        .enumerate()
        .filter_map(|(k, r)| match r {
            Err(EngineError::Divergence { t }) => Some((k, *t)),
            _ => None,
        })
        .collect();
    let col = |f: &dyn Fn(&TrajectoryRecord) -> f64| Stat::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
    let n = ok.first().map_or(0, |r| r.meta.agents);
    let agent_dev: Vec<Stat> = (0..n).map(|i| col(&|r| r.tau_mean.agent_dev[i])).collect();
    let agent_dev_at_tau: Vec<Stat> = (0..n).map(|i| col(&|r| r.at_tau.agent_dev[i])).collect();
    let (worst_agent, max_agent_dev) = max_stat(&agent_dev);
    let checkpoints = match ok.first() {
        Some(first) => first
            .rows
            .iter()
            .enumerate()
            .map(|(j, row)| Checkpoint {
                t: row.t,
                h_bar_sq: col(&|r| r.rows[j].h_bar_sq),
                grad_sq: col(&|r| r.rows[j].grad_sq),
                cons_err: col(&|r| r.rows[j].cons_err),
            })
            .collect(),
        None => Vec::new(),
    };
    Aggregate {
        runs: records.len(),
        completed: ok.len(),
        diverged,
        seeds: seeds.to_vec(),
        tau_draws: ok.iter().map(|r| r.meta.tau).collect(),
        h_bar_sq: col(&|r| r.tau_mean.h_bar_sq),
        grad_sq: col(&|r| r.tau_mean.grad_sq),
        cons_err: col(&|r| r.tau_mean.cons_err),
        max_dev: col(&|r| r.tau_mean.max_dev),
        agent_dev,
        worst_agent,
        max_agent_dev,
        h_bar_sq_at_tau: col(&|r| r.at_tau.h_bar_sq),
        grad_sq_at_tau: col(&|r| r.at_tau.grad_sq),
        max_agent_dev_at_tau: max_stat(&agent_dev_at_tau).1,
        checkpoints,
    }
}
