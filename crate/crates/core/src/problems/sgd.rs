//! Decentralized least-squares SGD on data streamed by per-agent chains.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::constants::{Constant, ConstantsBundle};
use super::{LinearProblem, ProblemError, Quadratic, SampleLayout};
use crate::linalg::spectral_norm;
use crate::markov::MarkovModel;
use crate::rng::stream_rng;

/// Data points `(a_x, b_x)` indexed by the agent's chain state `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// Least-squares loss `V_i(θ; x) = ½(a_xᵀθ − b_x)²` with `H_i = ∇_θ V_i`.
///
/// Agent `i`'s samples follow `chains[i]`, whose state indexes `datasets[i]`.
pub fn make_ergodic_sgd_problem(
    datasets: &[Dataset],
    chains: Vec<MarkovModel>,
) -> Result<LinearProblem, ProblemError> {
    if datasets.is_empty() {
        return Err(ProblemError::Dimension("no agents".into()));
    }
    if datasets.len() != chains.len() {
        return Err(ProblemError::Dimension(format!(
            "{} datasets but {} chains",
            datasets.len(),
            chains.len()
        )));
    }
    let d = datasets[0].dim();
    if d == 0 {
        return Err(ProblemError::Dimension("features must be non-empty".into()));
    }
    let mut jacobians = Vec::with_capacity(datasets.len());
    let mut offsets = Vec::with_capacity(datasets.len());
    let mut potentials = Vec::with_capacity(datasets.len());
    let mut l_h = 0.0f64;
    for (i, (data, chain)) in datasets.iter().zip(&chains).enumerate() {
        if data.features.len() != data.len() {
            return Err(ProblemError::Dimension(format!(
                "agent {}: {} feature rows for {} targets",
                i + 1,
                data.features.len(),
                data.len()
            )));
        }
        if data.len() != chain.states() {
            return Err(ProblemError::Dimension(format!(
                "agent {}: {} data points for a {}-state chain",
                i + 1,
                data.len(),
                chain.states()
            )));
        }
        if data.features.iter().any(|row| row.len() != d) {
            return Err(ProblemError::Dimension(format!(
                "agent {}: feature rows must all have length {d}",
                i + 1
            )));
        }
        let mu = chain.stationary();
        let mut per_j = Vec::with_capacity(data.len());
        let mut per_g = Vec::with_capacity(data.len());
        let mut q_mat = DMatrix::zeros(d, d);
        let mut q_vec = DVector::zeros(d);
        let mut r = 0.0;
        for (x, (row, &b)) in data.features.iter().zip(&data.targets).enumerate() {
            let a = DVector::from_column_slice(row);
            let outer = &a * a.transpose();
            l_h = l_h.max(a.norm_squared());
            q_mat += &outer * mu[x];
            q_vec += &a * (b * mu[x]);
            r += 0.5 * b * b * mu[x];
            per_j.push(outer);
            per_g.push(a * b);
        }
        jacobians.push(per_j);
        offsets.push(per_g);
        potentials.push(Quadratic { q_mat, q_vec, r });
    }
    let problem = LinearProblem::new(SampleLayout::Independent(chains), jacobians, offsets, potentials)?;
    let l_v = spectral_norm(&problem.hessian_matrix());
    let analytic = ConstantsBundle {
        agents: Some(Constant::analytic(datasets.len() as f64)),
        c0: Some(Constant::analytic(1.0)),
        d0: Some(Constant::analytic(1.0)),
        l_h: Some(Constant::exact(l_h)),
        l_v: Some(Constant::exact(l_v)),
        ..ConstantsBundle::default()
    };
    Ok(problem.with_analytic(analytic))
}

/// Random heterogeneous least-squares toy.
///
/// Each agent keeps one feature vector across its states while its targets
/// move with a sticky chain, so the stochastic part of `H_i` does not scale
/// with `θ` and the noise constants are finite uniformly in `θ`. Agents carry
/// distinct target offsets, making the pooled system inconsistent (`V★ > 0`).
pub fn sgd_toy(agents: usize, states: usize, dim: usize, seed: u64) -> (Vec<Dataset>, Vec<MarkovModel>) {
    let mut rng = stream_rng(seed, 0x5ad);
    let mut datasets = Vec::with_capacity(agents);
    let mut chains = Vec::with_capacity(agents);
    for i in 0..agents {
        let mut a: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let scale = 1.0 / crate::linalg::norm(&a).max(1e-12);
        a.iter_mut().for_each(|v| *v *= scale);
        let shift = i as f64 - 0.5 * (agents as f64 - 1.0);
        let targets = (0..states)
            .map(|_| shift + rng.sample::<f64, _>(StandardNormal))
            .collect();
        datasets.push(Dataset { features: vec![a; states], targets });
        chains.push(sticky_chain(states, 0.5, &mut rng));
    }
    (datasets, chains)
}

/// `P = s·I + (1 − s)·𝟙πᵀ` with a random positive `π`.
fn sticky_chain(states: usize, stay: f64, rng: &mut impl Rng) -> MarkovModel {
    let w: Vec<f64> = (0..states).map(|_| 0.2 + rng.random::<f64>()).collect();
    let total: f64 = w.iter().sum();
    let p = DMatrix::from_fn(states, states, |r, c| {
        let base = (1.0 - stay) * w[c] / total;
        if r == c {
            base + stay
        } else {
            base
        }
    });
    MarkovModel::new(p).expect("positive kernel is ergodic")
}
