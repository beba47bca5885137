//! Problem oracles: local stochastic updates `H_i(θ; x)`, their mean fields,
//! the potential `V`, and estimators for the constants the convergence
//! analysis is stated in.
//!
//! Agents draw samples through a [`SampleLayout`]: either one chain observed
//! by everyone (TD(0), where the state is the transition pair) or one
//! independent chain per agent (SGD on ergodic data). A joint sample is a
//! vector of per-agent local states; with a shared chain all entries agree.

mod constants;
mod sgd;
mod td0;

pub use constants::{
    estimate_bias_constants, estimate_constants, estimate_lipschitz, estimate_noise_constants,
    BiasEstimate, Constant, ConstantsBundle, ConstantsReport, LipschitzEstimate, NoiseEstimate,
    Provenance, ThetaSampling, JOINT_ENUMERATION_CAP,
};
pub use sgd::{make_ergodic_sgd_problem, sgd_toy, Dataset};
pub use td0::{bellman_solution, make_td0_problem, td0_reference_constants, MdpSpec, Td0Reference};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::markov::{product_state, MarkovError, MarkovModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("rank deficiency: {0}")]
    Rank(String),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// How agents' samples are generated.
#[derive(Debug, Clone)]
pub enum SampleLayout {
    /// All agents observe the state of one chain.
    Shared { model: MarkovModel, agents: usize },
    /// Agent `i` observes its own chain; chains are independent.
    Independent(Vec<MarkovModel>),
}

impl SampleLayout {
    pub fn agents(&self) -> usize {
        match self {
            SampleLayout::Shared { agents, .. } => *agents,
            SampleLayout::Independent(models) => models.len(),
        }
    }

    pub fn model(&self, agent: usize) -> &MarkovModel {
        match self {
            SampleLayout::Shared { model, .. } => model,
            SampleLayout::Independent(models) => &models[agent],
        }
    }

    /// Number of distinct joint samples.
    pub fn joint_count(&self) -> usize {
        match self {
            SampleLayout::Shared { model, .. } => model.states(),
            SampleLayout::Independent(models) => models
                .iter()
                .try_fold(1usize, |acc, m| acc.checked_mul(m.states()))
                .unwrap_or(usize::MAX),
        }
    }

    /// Joint sample number `index` (`index < joint_count()`).
    pub fn joint_state(&self, index: usize) -> Vec<usize> {
        match self {
            SampleLayout::Shared { agents, .. } => vec![index; *agents],
            SampleLayout::Independent(models) => {
                let sizes: Vec<usize> = models.iter().map(MarkovModel::states).collect();
                product_state(index, &sizes)
            }
        }
    }

    /// Stationary probability of a joint sample.
    pub fn joint_probability(&self, joint: &[usize]) -> f64 {
        match self {
            SampleLayout::Shared { model, .. } => model.stationary()[joint[0]],
            SampleLayout::Independent(models) => models
                .iter()
                .zip(joint)
                .map(|(m, &x)| m.stationary()[x])
                .product(),
        }
    }
}

/// Everything the engine and the estimators need from a problem.
pub trait ProblemOracle: Send + Sync {
    fn agents(&self) -> usize;
    fn dim(&self) -> usize;
    fn layout(&self) -> &SampleLayout;

    /// `H_i(θ; x)` written into `out`, where `state` is agent `i`'s local state.
    fn local_update(&self, agent: usize, theta: &[f64], state: usize, out: &mut [f64]);

    /// `h_i(θ) = Σ_x μ(x) H_i(θ; x)`.
    fn mean_field(&self, agent: usize, theta: &[f64]) -> Vec<f64> {
        let model = self.layout().model(agent);
        let mut acc = vec![0.0; self.dim()];
        let mut buf = vec![0.0; self.dim()];
        for (x, &w) in model.stationary().iter().enumerate() {
            self.local_update(agent, theta, x, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += w * b;
            }
        }
        acc
    }

    /// `h̄(θ) = (1/n) Σ_i h_i(θ)`.
    fn averaged_mean_field(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.agents();
        let mut acc = vec![0.0; self.dim()];
        for i in 0..n {
            for (a, b) in acc.iter_mut().zip(self.mean_field(i, theta)) {
                *a += b / n as f64;
            }
        }
        acc
    }

    fn potential(&self, theta: &[f64]) -> f64;
    fn gradient(&self, theta: &[f64]) -> Vec<f64>;

    /// `V★ = inf V`.
    fn v_star(&self) -> f64;

    /// A distinguished point (minimizer or fixed point) included in every
    /// estimation grid.
    fn reference_point(&self) -> Option<Vec<f64>> {
        None
    }

    /// Jacobian of `H_i(·; x)` when it does not depend on `θ`.
    fn jacobian(&self, _agent: usize, _state: usize) -> Option<DMatrix<f64>> {
        None
    }

    /// Hessian of `V` when constant.
    fn hessian(&self) -> Option<DMatrix<f64>> {
        None
    }

    /// Constants known in closed form for this problem family.
    fn analytic_constants(&self) -> ConstantsBundle {
        ConstantsBundle::default()
    }
}

/// `V(θ) = ½ θᵀQθ − qᵀθ + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub q_mat: DMatrix<f64>,
    pub q_vec: DVector<f64>,
    pub r: f64,
}

impl Quadratic {
    pub fn value(&self, theta: &[f64]) -> f64 {
        let t = DVector::from_column_slice(theta);
        0.5 * t.dot(&(&self.q_mat * &t)) - self.q_vec.dot(&t) + self.r
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let t = DVector::from_column_slice(theta);
        (&self.q_mat * &t - &self.q_vec).iter().copied().collect()
    }

    /// Minimizer through the pseudo-inverse and the minimum value. `None` when
    /// `Q` has a negative eigenvalue (unbounded below).
    pub fn minimize(&self) -> Option<(Vec<f64>, f64)> {
        let sym = (&self.q_mat + self.q_mat.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let top = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
        if eig.eigenvalues.iter().any(|&l| l < -1e-12 * top.max(1.0)) {
            return None;
        }
        let pinv = sym.pseudo_inverse(1e-12 * top.max(1e-300)).ok()?;
        let x = &pinv * &self.q_vec;
        let xs: Vec<f64> = x.iter().copied().collect();
        let v = self.value(&xs);
        Some((xs, v))
    }

    pub fn average(parts: &[Quadratic]) -> Quadratic {
        let n = parts.len() as f64;
        let d = parts[0].q_vec.len();
        let mut q_mat = DMatrix::zeros(d, d);
        let mut q_vec = DVector::zeros(d);
        let mut r = 0.0;
        for p in parts {
            q_mat += &p.q_mat / n;
            q_vec += &p.q_vec / n;
            r += p.r / n;
        }
        Quadratic { q_mat, q_vec, r }
    }
}

/// Problems whose local updates are affine in `θ`,
/// `H_i(θ; x) = G_i(x) θ − g_i(x)`, with quadratic local potentials. Both
/// built-in families (least-squares SGD and linear TD(0)) are of this form.
#[derive(Debug, Clone)]
pub struct LinearProblem {
    n: usize,
    d: usize,
    layout: SampleLayout,
    /// Row-major `G_i(x)` per agent and local state.
    g_mat: Vec<Vec<Vec<f64>>>,
    g_vec: Vec<Vec<Vec<f64>>>,
    mean_mat: Vec<DMatrix<f64>>,
    mean_vec: Vec<DVector<f64>>,
    avg_mat: DMatrix<f64>,
    avg_vec: DVector<f64>,
    local_potentials: Vec<Quadratic>,
    potential: Quadratic,
    v_star: f64,
    reference: Option<Vec<f64>>,
    analytic: ConstantsBundle,
}

impl LinearProblem {
    pub fn new(
        layout: SampleLayout,
        jacobians: Vec<Vec<DMatrix<f64>>>,
        offsets: Vec<Vec<DVector<f64>>>,
        local_potentials: Vec<Quadratic>,
    ) -> Result<Self, ProblemError> {
        let n = layout.agents();
        if n == 0 {
            return Err(ProblemError::Dimension("no agents".into()));
        }
        if jacobians.len() != n || offsets.len() != n || local_potentials.len() != n {
            return Err(ProblemError::Dimension(format!(
                "expected tables for {n} agents"
            )));
        }
        let d = local_potentials[0].q_vec.len();
        let mut mean_mat = Vec::with_capacity(n);
        let mut mean_vec = Vec::with_capacity(n);
        for i in 0..n {
            let s = layout.model(i).states();
            if jacobians[i].len() != s || offsets[i].len() != s {
                return Err(ProblemError::Dimension(format!(
                    "agent {} has tables for {} states, chain has {}",
                    i + 1,
                    jacobians[i].len(),
                    s
                )));
            }
            if jacobians[i].iter().any(|m| m.nrows() != d || m.ncols() != d)
                || offsets[i].iter().any(|v| v.len() != d)
                || local_potentials[i].q_vec.len() != d
                || local_potentials[i].q_mat.shape() != (d, d)
            {
                return Err(ProblemError::Dimension(format!(
                    "agent {} tables are not all of dimension {d}",
                    i + 1
                )));
            }
            let mu = layout.model(i).stationary();
            let mut mm = DMatrix::zeros(d, d);
            let mut mv = DVector::zeros(d);
            for x in 0..s {
                mm += &jacobians[i][x] * mu[x];
                mv += &offsets[i][x] * mu[x];
            }
            mean_mat.push(mm);
            mean_vec.push(mv);
        }
        let potential = Quadratic::average(&local_potentials);
        let (reference, v_star) = match potential.minimize() {
            Some((x, v)) => (Some(x), v),
            None => (None, f64::NEG_INFINITY),
        };
        let g_mat = jacobians
            .iter()
            .map(|per| {
                per.iter()
                    .map(|m| (0..d * d).map(|k| m[(k / d, k % d)]).collect())
                    .collect()
            })
            .collect();
        let g_vec = offsets
            .iter()
            .map(|per| per.iter().map(|v| v.iter().copied().collect()).collect())
            .collect();
        let avg_mat = mean_mat.iter().fold(DMatrix::zeros(d, d), |a, m| a + m / n as f64);
        let avg_vec = mean_vec.iter().fold(DVector::zeros(d), |a, v| a + v / n as f64);
        Ok(Self {
            n,
            d,
            layout,
            g_mat,
            g_vec,
            mean_mat,
            mean_vec,
            avg_mat,
            avg_vec,
            local_potentials,
            potential,
            v_star,
            reference,
            analytic: ConstantsBundle::default(),
        })
    }

    pub(crate) fn with_analytic(mut self, analytic: ConstantsBundle) -> Self {
        self.analytic = analytic;
        self
    }

    pub(crate) fn with_reference(mut self, reference: Vec<f64>, v_star: f64) -> Self {
        self.reference = Some(reference);
        self.v_star = v_star;
        self
    }

    /// `V_i(θ)`.
    pub fn local_potential(&self, agent: usize, theta: &[f64]) -> f64 {
        self.local_potentials[agent].value(theta)
    }

    pub fn local_gradient(&self, agent: usize, theta: &[f64]) -> Vec<f64> {
        self.local_potentials[agent].gradient(theta)
    }

    /// `∇²V`.
    pub fn hessian_matrix(&self) -> DMatrix<f64> {
        self.potential.q_mat.clone()
    }

    /// `(Ḡ, ḡ)` with `h̄(θ) = Ḡθ − ḡ`.
    pub fn averaged_affine(&self) -> (DMatrix<f64>, DVector<f64>) {
        (self.avg_mat.clone(), self.avg_vec.clone())
    }
}

impl ProblemOracle for LinearProblem {
    fn agents(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn layout(&self) -> &SampleLayout {
        &self.layout
    }

    #[inline]
    fn local_update(&self, agent: usize, theta: &[f64], state: usize, out: &mut [f64]) {
        let d = self.d;
        let g = &self.g_mat[agent][state];
        let c = &self.g_vec[agent][state];
        for r in 0..d {
            let row = &g[r * d..(r + 1) * d];
            let mut acc = -c[r];
            for k in 0..d {
                acc += row[k] * theta[k];
            }
            out[r] = acc;
        }
    }

    fn mean_field(&self, agent: usize, theta: &[f64]) -> Vec<f64> {
        let t = DVector::from_column_slice(theta);
        (&self.mean_mat[agent] * t - &self.mean_vec[agent]).iter().copied().collect()
    }

    fn averaged_mean_field(&self, theta: &[f64]) -> Vec<f64> {
        let t = DVector::from_column_slice(theta);
        (&self.avg_mat * t - &self.avg_vec).iter().copied().collect()
    }

    fn potential(&self, theta: &[f64]) -> f64 {
        self.potential.value(theta)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.potential.gradient(theta)
    }

    fn v_star(&self) -> f64 {
        self.v_star
    }

    fn reference_point(&self) -> Option<Vec<f64>> {
        self.reference.clone()
    }

    fn jacobian(&self, agent: usize, state: usize) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(self.d, self.d, &self.g_mat[agent][state]))
    }

    fn hessian(&self) -> Option<DMatrix<f64>> {
        Some(self.potential.q_mat.clone())
    }

    fn analytic_constants(&self) -> ConstantsBundle {
        self.analytic.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_minimize_handles_singular() {
        let q = Quadratic {
            q_mat: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            q_vec: DVector::from_column_slice(&[2.0, 0.0]),
            r: 3.0,
        };
        let (x, v) = q.minimize().unwrap();
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        let neg = Quadratic { q_mat: -DMatrix::identity(2, 2), ..q };
        assert!(neg.minimize().is_none());
    }

    #[test]
    fn joint_enumeration_independent() {
        let a = MarkovModel::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let b = MarkovModel::from_rows(&vec![vec![0.2, 0.3, 0.5]; 3]).unwrap();
        let layout = SampleLayout::Independent(vec![a, b]);
        assert_eq!(layout.joint_count(), 6);
        assert_eq!(layout.joint_state(5), vec![1, 2]);
        let total: f64 = (0..6).map(|k| layout.joint_probability(&layout.joint_state(k))).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
    }
}
