//! Decentralized TD(0) policy evaluation with linear features.
//!
//! The sampled state is the transition pair `(x, x′)`, so all agents share
//! one chain on the pairs with `P(x, x′) > 0`. Updates are written as
//! descent directions, `H_i(θ; x, x′) = Φ(x)(Φ(x) − δΦ(x′))ᵀθ − Φ(x)R_i(x)`
//! for discount `δ`, which is the negated temporal-difference step, so that
//! `h̄(θ) = Ā(θ − θ★)` points along `∇V` for `V(θ) = ½‖θ − θ★‖²`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::constants::{Constant, ConstantsBundle};
use super::{LinearProblem, ProblemError, Quadratic, SampleLayout};
use crate::linalg::{from_rows, min_singular_value, rank, spectral_norm};
use crate::markov::MarkovModel;
use crate::rng::stream_rng;

/// Markov reward process under a fixed policy with per-agent rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSpec {
    /// `S × S` row-stochastic kernel.
    pub transition: Vec<Vec<f64>>,
    /// `S × d` table whose row `x` is `Φ(x)`.
    pub features: Vec<Vec<f64>>,
    /// `n × S` table whose row `i` is `R_i(·)`.
    pub local_rewards: Vec<Vec<f64>>,
    pub discount: f64,
}

impl MdpSpec {
    pub fn states(&self) -> usize {
        self.transition.len()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn agents(&self) -> usize {
        self.local_rewards.len()
    }

    /// `R = (1/n) Σ R_i`.
    pub fn mean_reward(&self) -> Vec<f64> {
        let n = self.agents() as f64;
        (0..self.states())
            .map(|x| self.local_rewards.iter().map(|r| r[x]).sum::<f64>() / n)
            .collect()
    }

    /// `max_x ‖Φ(x)‖`.
    pub fn feature_bound(&self) -> f64 {
        self.features.iter().map(|r| crate::linalg::norm(r)).fold(0.0, f64::max)
    }

    /// `max_{i,x} |R_i(x)|`.
    pub fn reward_bound(&self) -> f64 {
        self.local_rewards.iter().flatten().fold(0.0, |a, &r| a.max(r.abs()))
    }

    pub fn feature_matrix(&self) -> Result<DMatrix<f64>, ProblemError> {
        from_rows(&self.features).ok_or_else(|| ProblemError::Dimension("ragged feature table".into()))
    }

    /// Validates shapes and the discount, and returns the state chain.
    pub fn validate(&self) -> Result<MarkovModel, ProblemError> {
        let s = self.states();
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(ProblemError::Invalid(format!(
                "discount must lie in (0, 1), got {}",
                self.discount
            )));
        }
        if self.features.len() != s {
            return Err(ProblemError::Dimension(format!(
                "{} feature rows for {} states",
                self.features.len(),
                s
            )));
        }
        let d = self.dim();
        if d == 0 || self.features.iter().any(|r| r.len() != d) {
            return Err(ProblemError::Dimension("feature rows must share a positive length".into()));
        }
        if self.agents() == 0 {
            return Err(ProblemError::Dimension("no agents".into()));
        }
        if self.local_rewards.iter().any(|r| r.len() != s) {
            return Err(ProblemError::Dimension(format!("reward rows must have length {s}")));
        }
        if self.features.iter().flatten().chain(self.local_rewards.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(ProblemError::Invalid("non-finite feature or reward".into()));
        }
        Ok(MarkovModel::from_rows(&self.transition)?)
    }

    /// Random MDP with a dense kernel, features scaled so that
    /// `max_x ‖Φ(x)‖ = 1`, and per-agent rewards that average to a common
    /// signal plus agent-specific perturbations.
    pub fn random(states: usize, dim: usize, agents: usize, discount: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0x7d0);
        let transition = (0..states)
            .map(|_| {
                let w: Vec<f64> = (0..states).map(|_| 0.05 + rng.random::<f64>()).collect();
                let t: f64 = w.iter().sum();
                w.into_iter().map(|v| v / t).collect()
            })
            .collect();
        let mut features: Vec<Vec<f64>> = (0..states)
            .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let top = features.iter().map(|r| crate::linalg::norm(r)).fold(0.0, f64::max).max(1e-12);
        features.iter_mut().flatten().for_each(|v| *v /= top);
        let common: Vec<f64> = (0..states).map(|_| rng.random::<f64>()).collect();
        let local_rewards = (0..agents)
            .map(|_| common.iter().map(|c| c + rng.random_range(-0.5..0.5)).collect())
            .collect();
        Self { transition, features, local_rewards, discount }
    }

    /// Indicator features `Φ(x) = e_x`.
    pub fn tabular(transition: Vec<Vec<f64>>, local_rewards: Vec<Vec<f64>>, discount: f64) -> Self {
        let s = transition.len();
        let features = (0..s).map(|x| (0..s).map(|k| if k == x { 1.0 } else { 0.0 }).collect()).collect();
        Self { transition, features, local_rewards, discount }
    }
}

/// `(Ā, b̄)` with `Ā = ΦᵀD(I − δP)Φ`, `b̄ = ΦᵀDR`, `D = diag(μ)`.
fn bellman_system(mdp: &MdpSpec, chain: &MarkovModel) -> Result<(DMatrix<f64>, DVector<f64>), ProblemError> {
    let phi = mdp.feature_matrix()?;
    let s = mdp.states();
    let d_mat = DMatrix::from_diagonal(&DVector::from_column_slice(chain.stationary()));
    let a_bar = phi.transpose() * &d_mat * (DMatrix::identity(s, s) - chain.transition() * mdp.discount) * &phi;
    let b_bar = phi.transpose() * &d_mat * DVector::from_vec(mdp.mean_reward());
    Ok((a_bar, b_bar))
}

/// `θ★` with `h̄(θ★) = 0`, i.e. `Āθ★ = b̄`.
pub fn bellman_solution(mdp: &MdpSpec) -> Result<Vec<f64>, ProblemError> {
    let chain = mdp.validate()?;
    let phi = mdp.feature_matrix()?;
    if rank(&phi, 1e-10) < mdp.dim() {
        return Err(ProblemError::Rank("feature matrix does not have full column rank".into()));
    }
    let (a_bar, b_bar) = bellman_system(mdp, &chain)?;
    solve_bellman(&a_bar, &b_bar)
}

fn solve_bellman(a_bar: &DMatrix<f64>, b_bar: &DVector<f64>) -> Result<Vec<f64>, ProblemError> {
    let smin = min_singular_value(a_bar);
    if smin <= 1e-12 * spectral_norm(a_bar).max(1e-300) {
        return Err(ProblemError::Rank("Bellman system is singular".into()));
    }
    let sol = a_bar
        .clone()
        .lu()
        .solve(b_bar)
        .ok_or_else(|| ProblemError::Rank("Bellman system is singular".into()))?;
    Ok(sol.iter().copied().collect())
}

/// Transition pairs with positive probability, in row-major order, and the
/// kernel of the pair chain `(x, x′) → (x′, x″)`.
fn pair_chain(chain: &MarkovModel) -> Result<(Vec<(usize, usize)>, MarkovModel), ProblemError> {
    let p = chain.transition();
    let s = chain.states();
    let pairs: Vec<(usize, usize)> =
        (0..s).flat_map(|x| (0..s).map(move |y| (x, y))).filter(|&(x, y)| p[(x, y)] > 0.0).collect();
    let m = pairs.len();
    let mut index = vec![vec![usize::MAX; s]; s];
    for (k, &(x, y)) in pairs.iter().enumerate() {
        index[x][y] = k;
    }
    let mut q = DMatrix::zeros(m, m);
    for (k, &(_, y)) in pairs.iter().enumerate() {
        for z in 0..s {
            if p[(y, z)] > 0.0 {
                q[(k, index[y][z])] = p[(y, z)];
            }
        }
    }
    Ok((pairs, MarkovModel::new(q)?))
}

/// TD(0) oracle for `n` agents. `n` must match the number of reward rows.
pub fn make_td0_problem(mdp: &MdpSpec, n: usize) -> Result<LinearProblem, ProblemError> {
    if n != mdp.agents() {
        return Err(ProblemError::Dimension(format!(
            "{} agents requested but {} reward rows given",
            n,
            mdp.agents()
        )));
    }
    let theta_star = bellman_solution(mdp)?;
    let chain = mdp.validate()?;
    let (pairs, pair_model) = pair_chain(&chain)?;
    let d = mdp.dim();
    let phi: Vec<DVector<f64>> = mdp.features.iter().map(|r| DVector::from_column_slice(r)).collect();
    let jac: Vec<DMatrix<f64>> = pairs
        .iter()
        .map(|&(x, y)| &phi[x] * (&phi[x] - &phi[y] * mdp.discount).transpose())
        .collect();
    let jacobians = vec![jac.clone(); n];
    let offsets = mdp
        .local_rewards
        .iter()
        .map(|r| pairs.iter().map(|&(x, _)| &phi[x] * r[x]).collect())
        .collect();
    let target = DVector::from_column_slice(&theta_star);
    let quad = Quadratic {
        q_mat: DMatrix::identity(d, d),
        q_vec: target.clone(),
        r: 0.5 * target.norm_squared(),
    };
    let reference = reference_from_system(mdp, &chain, &jac)?;
    let layout = SampleLayout::Shared { model: pair_model, agents: n };
    let problem = LinearProblem::new(layout, jacobians, offsets, vec![quad; n])?;
    let analytic = ConstantsBundle {
        agents: Some(Constant::analytic(n as f64)),
        c0: Some(Constant::exact(reference.c0_exact)),
        d0: Some(Constant::exact(reference.d0_exact)),
        l_h: Some(Constant::exact(jac.iter().map(spectral_norm).fold(0.0, f64::max))),
        l_v: Some(Constant::analytic(1.0)),
        v_star: Some(Constant::analytic(0.0)),
        ..ConstantsBundle::default()
    };
    Ok(problem.with_reference(theta_star, 0.0).with_analytic(analytic))
}

/// Bias constants of the TD(0) oracle, in closed form and as quoted for
/// bounded features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Td0Reference {
    /// `(1 − δ)/4`, valid when `max_x ‖Φ(x)‖ ≤ 1`.
    pub c0_quoted: f64,
    /// `(E_μ‖Φ(x)(δΦ(x′) − Φ(x))ᵀ‖₂)²`.
    pub d0_quoted: f64,
    /// `λ_min(sym(Ā⁻¹))`: the largest `c` with `⟨Āe, e⟩ ≥ c‖Āe‖²`.
    pub c0_exact: f64,
    /// `1/σ_min(Ā)²`: the smallest `d` with `d‖Āe‖² ≥ ‖e‖²`.
    pub d0_exact: f64,
    pub feature_bound: f64,
}

pub fn td0_reference_constants(mdp: &MdpSpec) -> Result<Td0Reference, ProblemError> {
    let chain = mdp.validate()?;
    let (pairs, _) = pair_chain(&chain)?;
    let phi: Vec<DVector<f64>> = mdp.features.iter().map(|r| DVector::from_column_slice(r)).collect();
    let jac: Vec<DMatrix<f64>> = pairs
        .iter()
        .map(|&(x, y)| &phi[x] * (&phi[x] - &phi[y] * mdp.discount).transpose())
        .collect();
    reference_from_system(mdp, &chain, &jac)
}

fn reference_from_system(
    mdp: &MdpSpec,
    chain: &MarkovModel,
    jac: &[DMatrix<f64>],
) -> Result<Td0Reference, ProblemError> {
    let (a_bar, _) = bellman_system(mdp, chain)?;
    let smin = min_singular_value(&a_bar);
    if smin <= 1e-12 * spectral_norm(&a_bar).max(1e-300) {
        return Err(ProblemError::Rank("Bellman system is singular".into()));
    }
    let inv = a_bar.clone().try_inverse().ok_or_else(|| ProblemError::Rank("Bellman system is singular".into()))?;
    let sym = (&inv + inv.transpose()) * 0.5;
    let c0_exact = sym.symmetric_eigen().eigenvalues.min();
    let p = chain.transition();
    let mu = chain.stationary();
    let s = chain.states();
    let mut k = 0;
    let mut mean_norm = 0.0;
    for x in 0..s {
        for y in 0..s {
            if p[(x, y)] > 0.0 {
                mean_norm += mu[x] * p[(x, y)] * spectral_norm(&jac[k]);
                k += 1;
            }
        }
    }
    Ok(Td0Reference {
        c0_quoted: (1.0 - mdp.discount) / 4.0,
        d0_quoted: mean_norm * mean_norm,
        c0_exact,
        d0_exact: 1.0 / (smin * smin),
        feature_bound: mdp.feature_bound(),
    })
}
