//! Finite-state Markov kernels.
//!
//! Everything here is exact for finite chains: the stationary law comes from a
//! direct linear solve, total-variation profiles from matrix powers, and
//! Poisson-equation solutions from the fundamental matrix `(I − P + 𝟙μᵀ)⁻¹`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, LU, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{matrix_from_csv, matrix_to_csv};
use crate::rng::stream_rng;

/// Row sums must be within this of 1.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Explicit product kernels are only built up to this many states.
pub const DEFAULT_PRODUCT_CAP: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkovError {
    #[error("chain is not ergodic: {0}")]
    Ergodicity(String),
    #[error("invalid kernel: {0}")]
    Validation(String),
    #[error("state {state} out of range for a {states}-state chain")]
    State { state: usize, states: usize },
    #[error("product space has {states} states, above the cap of {cap}")]
    Capacity { states: usize, cap: usize },
    #[error("dimension error: {0}")]
    Dimension(String),
}

/// `sup_x ‖Pᵗ(x,·) − μ‖_TV ≤ K λᵗ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingFit {
    pub k: f64,
    pub lambda: f64,
}

/// Row-stochastic, irreducible, aperiodic kernel with its stationary law.
#[derive(Debug, Clone)]
pub struct MarkovModel {
    p: DMatrix<f64>,
    mu: Vec<f64>,
    cumulative: Vec<Vec<f64>>,
    mu_cumulative: Vec<f64>,
    mixing: Option<MixingFit>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn reach(adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[0] = Some(0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap();
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn check_row_stochastic(p: &DMatrix<f64>) -> Result<(), MarkovError> {
    if p.nrows() == 0 || p.nrows() != p.ncols() {
        return Err(MarkovError::Validation(format!(
            "kernel must be square and non-empty, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(MarkovError::Validation("entries must be finite and nonnegative".into()));
    }
    for i in 0..p.nrows() {
        let s: f64 = p.row(i).iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(MarkovError::Validation(format!("row {} sums to {}", i + 1, s)));
        }
    }
    Ok(())
}

/// Whether the transition digraph of `p` is strongly connected.
pub fn is_irreducible(p: &DMatrix<f64>) -> bool {
    let s = p.nrows();
    let fwd: Vec<Vec<usize>> = (0..s).map(|i| (0..s).filter(|&j| p[(i, j)] > 0.0).collect()).collect();
    let bwd: Vec<Vec<usize>> = (0..s).map(|j| (0..s).filter(|&i| p[(i, j)] > 0.0).collect()).collect();
    reach(&fwd).iter().all(Option::is_some) && reach(&bwd).iter().all(Option::is_some)
}

/// Period of an irreducible kernel: gcd over edges `u → v` of
/// `level(u) + 1 − level(v)` for BFS levels from state 0.
pub fn period(p: &DMatrix<f64>) -> usize {
    let s = p.nrows();
    let adj: Vec<Vec<usize>> = (0..s).map(|i| (0..s).filter(|&j| p[(i, j)] > 0.0).collect()).collect();
    let level = reach(&adj);
    let mut g = 0;
    for u in 0..s {
        let Some(lu) = level[u] else { continue };
        for &v in &adj[u] {
            let lv = level[v].unwrap();
            g = gcd(g, (lu + 1).abs_diff(lv));
        }
    }
    g
}

/// Unique `μ` with `μP = μ`, `Σμ = 1`: solves `(Pᵀ − I)μ = 0` with one
/// equation replaced by the normalization row.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>, MarkovError> {
    check_row_stochastic(p)?;
    if !is_irreducible(p) {
        return Err(MarkovError::Ergodicity("kernel is reducible".into()));
    }
    let per = period(p);
    if per != 1 {
        return Err(MarkovError::Ergodicity(format!("kernel is periodic with period {per}")));
    }
    let s = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(s, s);
    for j in 0..s {
        a[(s - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(s);
    rhs[s - 1] = 1.0;
    let mu = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| MarkovError::Ergodicity("stationary system is singular".into()))?;
    Ok(mu.iter().copied().collect())
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = f64::INFINITY;
    }
    out
}

fn draw(cum: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

impl MarkovModel {
    pub fn new(p: DMatrix<f64>) -> Result<Self, MarkovError> {
        let mu = stationary_distribution(&p)?;
        let cum = (0..p.nrows())
            .map(|i| cumulative(p.row(i).iter().copied()))
            .collect();
        let mu_cumulative = cumulative(mu.iter().copied());
        Ok(Self { p, mu, cumulative: cum, mu_cumulative, mixing: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MarkovError> {
        let p = crate::linalg::from_rows(rows)
            .ok_or_else(|| MarkovError::Validation("ragged or empty kernel rows".into()))?;
        Self::new(p)
    }

    /// Loads a row-stochastic matrix from CSV.
    pub fn from_csv(text: &str) -> Result<Self, MarkovError> {
        let p = matrix_from_csv(text).map_err(MarkovError::Validation)?;
        Self::new(p)
    }

    pub fn to_csv(&self) -> String {
        matrix_to_csv(&self.p)
    }

    /// Single-state chain.
    pub fn trivial() -> Self {
        Self::new(DMatrix::from_element(1, 1, 1.0)).expect("one-state chain is ergodic")
    }

    /// Chain with i.i.d. draws from `mu`: every row equals `mu`.
    pub fn iid(mu: &[f64]) -> Result<Self, MarkovError> {
        let s = mu.len();
        Self::new(DMatrix::from_fn(s, s, |_, j| mu[j]))
    }

    pub fn states(&self) -> usize {
        self.p.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn stationary(&self) -> &[f64] {
        &self.mu
    }

    pub fn mixing(&self) -> Option<MixingFit> {
        self.mixing
    }

    /// Attaches the `(K, λ)` fit computed over `t ≤ t_max`.
    pub fn with_mixing_fit(mut self, t_max: usize) -> Self {
        self.mixing = Some(tv_mixing_profile(&self, t_max).fit);
        self
    }

    /// `max_j |(μP − μ)_j|`.
    pub fn stationarity_residual(&self) -> f64 {
        let mu = DVector::from_column_slice(&self.mu);
        let diff = self.p.transpose() * &mu - &mu;
        diff.amax()
    }

    /// Draws from the current row of `P`.
    pub fn step(&self, x: usize, rng: &mut ChaCha8Rng) -> usize {
        draw(&self.cumulative[x], rng)
    }

    /// Draws from `μ`.
    pub fn draw_stationary(&self, rng: &mut ChaCha8Rng) -> usize {
        draw(&self.mu_cumulative, rng)
    }

    /// `(Pf)(x) = Σ_y P(x,y) f(y)` applied column-wise to an `S×d` table.
    pub fn apply(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        &self.p * f
    }
}

/// Exact TV profile `sup_x ‖Pᵗ(x,·) − μ‖_TV` (½·L1 convention) for
/// `t = 0..=t_max`, with a geometric envelope fitted to it.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingProfile {
    pub tv: Vec<f64>,
    pub fit: MixingFit,
}

impl MixingProfile {
    pub fn envelope(&self, t: usize) -> f64 {
        self.fit.k * self.fit.lambda.powi(t as i32)
    }

    /// CSV with columns `t,tv,envelope`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,tv,envelope\n");
        for (t, tv) in self.tv.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", t, tv, self.envelope(t)));
        }
        out
    }
}

/// Values below this are treated as exact zeros when fitting the envelope.
const TV_FLOOR: f64 = 1e-12;

pub fn tv_mixing_profile(model: &MarkovModel, t_max: usize) -> MixingProfile {
    let s = model.states();
    let mu = model.stationary();
    let mut power = DMatrix::<f64>::identity(s, s);
    let mut tv = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        if t > 0 {
            power = &power * model.transition();
        }
        let worst = (0..s)
            .map(|x| 0.5 * (0..s).map(|y| (power[(x, y)] - mu[y]).abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        tv.push(worst);
    }
    let fit = fit_envelope(&tv);
    MixingProfile { tv, fit }
}

/// `λ` from least squares of `ln tv(t)` on `t` over the positive part of
/// `t ≥ 1`, then `K = max_t tv(t)/λᵗ` so that the envelope dominates.
/// Values at or below `TV_FLOOR` count as zero in both steps.
fn fit_envelope(tv: &[f64]) -> MixingFit {
    let pts: Vec<(f64, f64)> = tv
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &v)| v > TV_FLOOR)
        .map(|(t, &v)| (t as f64, v.ln()))
        .collect();
    let max_lambda = 1.0 - 1e-12;
    let ratio_lambda = || {
        pts.iter()
            .map(|&(t, lv)| (lv - tv[0].max(TV_FLOOR).ln()).exp().powf(1.0 / t))
            .fold(0.0f64, f64::max)
            .min(max_lambda)
    };
    let lambda = match pts.len() {
        0 => 0.0,
        1 => ratio_lambda(),
        m => {
            let m = m as f64;
            let mt = pts.iter().map(|p| p.0).sum::<f64>() / m;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
            let slope = sxy / sxx;
            if slope < 0.0 {
                slope.exp().min(max_lambda)
            } else {
                ratio_lambda()
            }
        }
    };
    let k = if lambda == 0.0 {
        tv[0]
    } else {
        tv.iter()
            .enumerate()
            .filter(|&(t, &v)| t == 0 || v > TV_FLOOR)
            .map(|(t, &v)| v / lambda.powi(t as i32))
            .fold(0.0f64, f64::max)
    };
    MixingFit { k, lambda }
}

/// Solution `Ĥ` of `Ĥ − PĤ = H − 𝟙μᵀH`, centered so that `μᵀĤ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    pub h_hat: DMatrix<f64>,
    /// `max |(Ĥ − PĤ) − (H − 𝟙μᵀH)|`.
    pub residual: f64,
}

/// Factorized fundamental system `I − P + 𝟙μᵀ` for repeated Poisson solves.
#[derive(Debug, Clone)]
pub struct PoissonSolver {
    lu: LU<f64, Dyn, Dyn>,
    model: MarkovModel,
}

impl PoissonSolver {
    pub fn new(model: &MarkovModel) -> Result<Self, MarkovError> {
        let s = model.states();
        let mu = model.stationary();
        let fundamental =
            DMatrix::identity(s, s) - model.transition() + DMatrix::from_fn(s, s, |_, j| mu[j]);
        let lu = fundamental.lu();
        if !lu.is_invertible() {
            return Err(MarkovError::Ergodicity("fundamental matrix is singular".into()));
        }
        Ok(Self { lu, model: model.clone() })
    }

    pub fn solve(&self, h: &DMatrix<f64>) -> Result<PoissonSolution, MarkovError> {
        let s = self.model.states();
        if h.nrows() != s {
            return Err(MarkovError::Dimension(format!(
                "function table has {} rows, chain has {} states",
                h.nrows(),
                s
            )));
        }
        let mu = DVector::from_column_slice(self.model.stationary());
        let mean = h.transpose() * &mu;
        let centered = DMatrix::from_fn(s, h.ncols(), |x, k| h[(x, k)] - mean[k]);
        let mut h_hat = self
            .lu
            .solve(&centered)
            .ok_or_else(|| MarkovError::Ergodicity("fundamental matrix is singular".into()))?;
        let offset = h_hat.transpose() * &mu;
        for x in 0..s {
            for k in 0..h.ncols() {
                h_hat[(x, k)] -= offset[k];
            }
        }
        let defect = &h_hat - self.model.apply(&h_hat) - &centered;
        let residual = defect.amax();
        Ok(PoissonSolution { h_hat, residual })
    }
}

pub fn solve_poisson(model: &MarkovModel, h: &DMatrix<f64>) -> Result<PoissonSolution, MarkovError> {
    PoissonSolver::new(model)?.solve(h)
}

/// Seeded trajectory `X¹, X², …` of a chain started at `x0`.
#[derive(Debug, Clone)]
pub struct SampleStream<'a> {
    model: &'a MarkovModel,
    state: usize,
    rng: ChaCha8Rng,
}

impl<'a> SampleStream<'a> {
    pub fn with_rng(model: &'a MarkovModel, x0: usize, rng: ChaCha8Rng) -> Result<Self, MarkovError> {
        if x0 >= model.states() {
            return Err(MarkovError::State { state: x0, states: model.states() });
        }
        Ok(Self { model, state: x0, rng })
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn model(&self) -> &MarkovModel {
        self.model
    }
}

impl Iterator for SampleStream<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        self.state = self.model.step(self.state, &mut self.rng);
        Some(self.state)
    }
}

pub fn sample_stream(model: &MarkovModel, x0: usize, seed: u64) -> Result<SampleStream<'_>, MarkovError> {
    SampleStream::with_rng(model, x0, stream_rng(seed, 0))
}

/// Kernel of independent chains on the product space, states in mixed radix
/// with the first factor most significant.
pub fn product_kernel(models: &[MarkovModel], cap: usize) -> Result<MarkovModel, MarkovError> {
    if models.is_empty() {
        return Err(MarkovError::Dimension("no factors".into()));
    }
    let states = models
        .iter()
        .try_fold(1usize, |acc, m| acc.checked_mul(m.states()))
        .unwrap_or(usize::MAX);
    if states > cap {
        return Err(MarkovError::Capacity { states, cap });
    }
    let p = models[1..]
        .iter()
        .fold(models[0].transition().clone(), |acc, m| acc.kronecker(m.transition()));
    MarkovModel::new(p)
}

/// Splits a product-space index into per-factor states.
pub fn product_state(index: usize, sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0; sizes.len()];
    let mut rem = index;
    for (k, &s) in sizes.iter().enumerate().rev() {
        out[k] = rem % s;
        rem /= s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_state(p: f64, q: f64) -> MarkovModel {
        MarkovModel::from_rows(&[vec![1.0 - p, p], vec![q, 1.0 - q]]).unwrap()
    }

    #[test]
    fn two_state_closed_form() {
        let m = two_state(0.1, 0.2);
        assert_abs_diff_eq!(m.stationary()[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m.stationary()[1], 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn reducible_and_periodic_rejected() {
        let id = DMatrix::identity(2, 2);
        assert!(matches!(MarkovModel::new(id), Err(MarkovError::Ergodicity(_))));
        let flip = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(MarkovModel::new(flip), Err(MarkovError::Ergodicity(_))));
        let bad = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.5, 0.5]);
        assert!(matches!(MarkovModel::new(bad), Err(MarkovError::Validation(_))));
    }

    #[test]
    fn period_of_cycles() {
        let c3 = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., 1., 0., 0.]);
        assert_eq!(period(&c3), 3);
        let lazy = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 1.0, 0.0]);
        assert_eq!(period(&lazy), 1);
    }

    #[test]
    fn symmetric_two_state_profile_is_geometric() {
        let m = two_state(0.1, 0.1);
        let prof = tv_mixing_profile(&m, 40);
        for (t, v) in prof.tv.iter().enumerate() {
            assert_abs_diff_eq!(*v, 0.5 * 0.8f64.powi(t as i32), epsilon = 1e-14);
        }
        assert_abs_diff_eq!(prof.fit.lambda, 0.8, epsilon = 1e-6);
        for t in 0..=40 {
            assert!(prof.tv[t] <= prof.envelope(t) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn iid_chain_mixes_in_one_step() {
        let m = MarkovModel::iid(&[0.2, 0.3, 0.5]).unwrap();
        let prof = tv_mixing_profile(&m, 10);
        for v in &prof.tv[1..] {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-15);
        }
        assert_eq!(prof.fit.lambda, 0.0);
    }

    #[test]
    fn poisson_trivial_cases() {
        let one = MarkovModel::trivial();
        let sol = solve_poisson(&one, &DMatrix::from_element(1, 2, 3.5)).unwrap();
        assert_eq!(sol.h_hat, DMatrix::zeros(1, 2));

        let mu = [0.2, 0.3, 0.5];
        let iid = MarkovModel::iid(&mu).unwrap();
        let h = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 2.0, 0.5, -3.0, 4.0]);
        let sol = solve_poisson(&iid, &h).unwrap();
        for k in 0..2 {
            let mean: f64 = (0..3).map(|x| mu[x] * h[(x, k)]).sum();
            for x in 0..3 {
                assert_abs_diff_eq!(sol.h_hat[(x, k)], h[(x, k)] - mean, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn poisson_two_state_residual() {
        let m = two_state(0.3, 0.1);
        let h = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let sol = solve_poisson(&m, &h).unwrap();
        assert!(sol.residual <= 1e-12);
        let mu = m.stationary();
        assert_abs_diff_eq!(mu[0] * sol.h_hat[(0, 0)] + mu[1] * sol.h_hat[(1, 0)], 0.0, epsilon = 1e-14);
        // Ĥ(0) − Ĥ(1) = 1 / (p + q) for a two-state chain.
        assert_abs_diff_eq!(sol.h_hat[(0, 0)] - sol.h_hat[(1, 0)], 1.0 / 0.4, epsilon = 1e-12);
    }

    #[test]
    fn deterministic_chain_follows_orbit() {
        let p = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., 0.5, 0., 0.5]);
        let m = MarkovModel::new(p).unwrap();
        let stream = sample_stream(&m, 0, 9).unwrap();
        let first: Vec<usize> = stream.take(2).collect();
        assert_eq!(first, vec![1, 2]);
        assert!(matches!(sample_stream(&m, 3, 0), Err(MarkovError::State { .. })));
    }

    #[test]
    fn same_seed_same_stream() {
        let m = two_state(0.3, 0.4);
        let a: Vec<usize> = sample_stream(&m, 0, 11).unwrap().take(10_000).collect();
        let b: Vec<usize> = sample_stream(&m, 0, 11).unwrap().take(10_000).collect();
        let c: Vec<usize> = sample_stream(&m, 0, 12).unwrap().take(10_000).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn product_of_two_chains() {
        let a = two_state(0.1, 0.2);
        let b = two_state(0.4, 0.3);
        let prod = product_kernel(&[a.clone(), b.clone()], DEFAULT_PRODUCT_CAP).unwrap();
        assert_eq!(prod.states(), 4);
        for idx in 0..4 {
            let xs = product_state(idx, &[2, 2]);
            assert_abs_diff_eq!(
                prod.stationary()[idx],
                a.stationary()[xs[0]] * b.stationary()[xs[1]],
                epsilon = 1e-12
            );
        }
        let single = product_kernel(&[a.clone()], DEFAULT_PRODUCT_CAP).unwrap();
        assert_eq!(single.transition(), a.transition());
        assert!(matches!(
            product_kernel(&[a.clone(), b.clone(), a], 7),
            Err(MarkovError::Capacity { states: 8, cap: 7 })
        ));
    }
}
