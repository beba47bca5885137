//! The DSA recursion `θ⁽ᵗ⁺¹⁾ = (A⁽ᵗ⁾ ⊗ I)θ⁽ᵗ⁾ − γ_{t+1} H(θ⁽ᵗ⁾; X^{t+1})`,
//! the split of the stacked iterate into consensual part and consensus
//! error, the terminating time, and seeded ensembles.
//!
//! Stacked vectors are agent-major: agent `i` owns entries `i·d..(i+1)·d`.

mod ensemble;
mod record;
mod schedule;

pub use ensemble::{run_ensemble, Aggregate, Checkpoint, EnsembleOptions, EnsembleResult, Stat};
pub use record::{
    csv_header, rows_from_csv, rows_to_csv, Diagnostics, RecordRow, RunMeta, TauMetrics, TrajectoryRecord,
};
pub use schedule::{make_step_schedule, CapMode, StepRule, StepSchedule};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{norm, CompensatedSum};
use crate::problems::{ProblemOracle, SampleLayout};
use crate::rng::{derive_seed, stream_rng};
use crate::topology::{MixingSchedule, ProjectionBasis};

/// `‖θ‖∞` above which a run is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

const TAU_TAG: u64 = 0x7a0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("iterate diverged after step {t}")]
    Divergence { t: usize },
    #[error("malformed trajectory table: {0}")]
    Csv(String),
    #[error("trajectory table lacks columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),
}

/// `U` as an `n × (n−1)` matrix (empty for `n = 1`).
pub fn projection_matrix(n: usize) -> DMatrix<f64> {
    if n < 2 {
        return DMatrix::zeros(n, 0);
    }
    ProjectionBasis::new(n).expect("n >= 2").matrix().clone()
}

/// Returns `(((1/n)𝟙ᵀ ⊗ I)θ, (Uᵀ ⊗ I)θ)`.
pub fn decompose(theta: &[f64], d: usize, u: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>), EngineError> {
    let n = u.nrows();
    if theta.len() != n * d || u.ncols() + 1 != n.max(1) {
        return Err(EngineError::Dimension(format!(
            "stacked vector of length {} does not match n = {n}, d = {d}, U of width {}",
            theta.len(),
            u.ncols()
        )));
    }
    let mut c = vec![0.0; d];
    for i in 0..n {
        for k in 0..d {
            c[k] += theta[i * d + k] / n as f64;
        }
    }
    let mut e = vec![0.0; u.ncols() * d];
    for j in 0..u.ncols() {
        for i in 0..n {
            let w = u[(i, j)];
            for k in 0..d {
                e[j * d + k] += w * theta[i * d + k];
            }
        }
    }
    Ok((c, e))
}

/// Returns `(𝟙 ⊗ I)c + (U ⊗ I)e`.
pub fn recompose(c: &[f64], e: &[f64], u: &DMatrix<f64>) -> Result<Vec<f64>, EngineError> {
    let n = u.nrows();
    let d = c.len();
    if e.len() != u.ncols() * d {
        return Err(EngineError::Dimension(format!(
            "error part has length {}, expected {}",
            e.len(),
            u.ncols() * d
        )));
    }
    let mut theta = Vec::with_capacity(n * d);
    for i in 0..n {
        for k in 0..d {
            let mut v = c[k];
            for j in 0..u.ncols() {
                v += u[(i, j)] * e[j * d + k];
            }
            theta.push(v);
        }
    }
    Ok(theta)
}

/// Stacked parameters at iteration `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub t: usize,
    n: usize,
    d: usize,
    theta: Vec<f64>,
}

impl NetworkState {
    pub fn new(n: usize, d: usize, theta: Vec<f64>) -> Result<Self, EngineError> {
        if n == 0 || d == 0 || theta.len() != n * d {
            return Err(EngineError::Dimension(format!(
                "stacked vector of length {} for n = {n}, d = {d}",
                theta.len()
            )));
        }
        Ok(Self { t: 0, n, d, theta })
    }

    /// Every agent starts at `theta0`.
    pub fn uniform(n: usize, theta0: &[f64]) -> Result<Self, EngineError> {
        Self::new(n, theta0.len(), theta0.repeat(n))
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        &self.theta[i * self.d..(i + 1) * self.d]
    }

    /// `θ̄_c`.
    pub fn consensual(&self) -> Vec<f64> {
        mean_of(&self.theta, self.n, self.d)
    }

    /// `θ̃_o` for the given basis.
    pub fn error(&self, u: &DMatrix<f64>) -> Result<Vec<f64>, EngineError> {
        Ok(decompose(&self.theta, self.d, u)?.1)
    }

    /// `‖θ_i − θ̄_c‖` per agent.
    pub fn deviations(&self) -> Vec<f64> {
        deviations(&self.theta, &self.consensual(), self.n, self.d)
    }
}

fn mean_of(theta: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d];
    for i in 0..n {
        for k in 0..d {
            c[k] += theta[i * d + k];
        }
    }
    c.iter_mut().for_each(|v| *v /= n as f64);
    c
}

fn deviations(theta: &[f64], c: &[f64], n: usize, d: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let mut s = 0.0;
            for k in 0..d {
                let x = theta[i * d + k] - c[k];
                s += x * x;
            }
            s.sqrt()
        })
        .collect()
}

/// Draws `τ ∈ {0..=T}` with `Pr(τ = t) ∝ γ_{t+1}`.
pub fn sample_terminating_time(steps: &StepSchedule, seed: u64) -> usize {
    let mut rng = stream_rng(derive_seed(seed, TAU_TAG), 0);
    draw_terminating_time(steps, &mut rng)
}

fn draw_terminating_time(steps: &StepSchedule, rng: &mut ChaCha8Rng) -> usize {
    let t_max = steps.horizon();
    let masses = &steps.gammas()[1..=t_max + 1];
    let total: f64 = masses.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (t, m) in masses.iter().enumerate() {
        acc += m;
        if u < acc {
            return t;
        }
    }
    t_max
}

/// Initial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initial {
    /// Every agent starts at this `d`-vector.
    Uniform(Vec<f64>),
    /// Explicit stacked `n·d` vector; agents may disagree.
    Stacked(Vec<f64>),
}

/// Which iterations produce a row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Recording {
    #[default]
    EveryStep,
    /// `0`, then each next index at least `ratio` times the last, and `T`.
    Geometric { ratio: f64 },
}

impl Recording {
    /// Recorded iteration indices in `0..=horizon`.
    pub fn checkpoints(&self, horizon: usize) -> Vec<usize> {
        match *self {
            Recording::EveryStep => (0..=horizon).collect(),
            Recording::Geometric { ratio } => {
                let mut out = vec![0];
                let mut t = 0usize;
                while t < horizon {
                    let next = ((t as f64) * ratio).ceil() as usize;
                    t = next.max(t + 1).min(horizon);
                    out.push(t);
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub seed: u64,
    pub initial: Initial,
    #[serde(default)]
    pub recording: Recording,
    /// Evaluate `e₀`, `e₁` and the recursion residuals on recorded rows.
    #[serde(default)]
    pub diagnostics: bool,
}

struct Sampler {
    rngs: Vec<ChaCha8Rng>,
    local: Vec<usize>,
}

impl Sampler {
    /// Streams `1..` of `seed` drive the chains; `X⁰` is drawn from `μ`.
    fn new(layout: &SampleLayout, seed: u64) -> Self {
        match layout {
            SampleLayout::Shared { model, agents } => {
                let mut rng = stream_rng(seed, 1);
                let x = model.draw_stationary(&mut rng);
                Self { rngs: vec![rng], local: vec![x; *agents] }
            }
            SampleLayout::Independent(models) => {
                let mut rngs: Vec<ChaCha8Rng> =
                    (0..models.len()).map(|i| stream_rng(seed, i as u64 + 1)).collect();
                let local = models.iter().zip(rngs.iter_mut()).map(|(m, r)| m.draw_stationary(r)).collect();
                Self { rngs, local }
            }
        }
    }

    fn advance(&mut self, layout: &SampleLayout) {
        match layout {
            SampleLayout::Shared { model, .. } => {
                let x = model.step(self.local[0], &mut self.rngs[0]);
                self.local.iter_mut().for_each(|v| *v = x);
            }
            SampleLayout::Independent(models) => {
                for (i, m) in models.iter().enumerate() {
                    self.local[i] = m.step(self.local[i], &mut self.rngs[i]);
                }
            }
        }
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

struct TauAccumulator {
    weight: CompensatedSum,
    h_bar_sq: CompensatedSum,
    grad_sq: CompensatedSum,
    cons_err: CompensatedSum,
    max_dev: CompensatedSum,
    agent_dev: Vec<CompensatedSum>,
}

impl TauAccumulator {
    fn new(n: usize) -> Self {
        Self {
            weight: CompensatedSum::new(),
            h_bar_sq: CompensatedSum::new(),
            grad_sq: CompensatedSum::new(),
            cons_err: CompensatedSum::new(),
            max_dev: CompensatedSum::new(),
            agent_dev: vec![CompensatedSum::new(); n],
        }
    }

    fn finish(&self) -> TauMetrics {
        let w = self.weight.value();
        TauMetrics {
            h_bar_sq: self.h_bar_sq.value() / w,
            grad_sq: self.grad_sq.value() / w,
            cons_err: self.cons_err.value() / w,
            max_dev: self.max_dev.value() / w,
            agent_dev: self.agent_dev.iter().map(|s| s.value() / w).collect(),
        }
    }
}

/// Runs the recursion for `t = 0..=T`, recording metrics at `θ⁽ᵗ⁾` before
/// each transition.
pub fn run_dsa(
    oracle: &dyn ProblemOracle,
    mixing: &MixingSchedule,
    steps: &StepSchedule,
    opts: &RunOptions,
) -> Result<TrajectoryRecord, EngineError> {
    let n = oracle.agents();
    let d = oracle.dim();
    if mixing.n() != n {
        return Err(EngineError::Dimension(format!(
            "mixing matrices are {}x{} but the problem has {n} agents",
            mixing.n(),
            mixing.n()
        )));
    }
    let mut theta = match &opts.initial {
        Initial::Uniform(v) if v.len() == d => v.repeat(n),
        Initial::Stacked(v) if v.len() == n * d => v.clone(),
        Initial::Uniform(v) | Initial::Stacked(v) => {
            return Err(EngineError::Dimension(format!(
                "initial vector has length {}, expected {} or {}",
                v.len(),
                d,
                n * d
            )))
        }
    };
    let horizon = steps.horizon();
    let layout = oracle.layout();
    let mut sampler = Sampler::new(layout, opts.seed);
    let tau = sample_terminating_time(steps, opts.seed);
    let record_at = opts.recording.checkpoints(horizon);
    let mut next_record = 0usize;
    let u = if opts.diagnostics { projection_matrix(n) } else { DMatrix::zeros(n, 0) };

    let mut rows = Vec::with_capacity(record_at.len());
    let mut acc = TauAccumulator::new(n);
    let mut at_tau = None;
    let mut next = vec![0.0; n * d];
    let mut h = vec![0.0; n * d];
    let mut v0 = 0.0;
    let mut grad0 = 0.0;

    for t in 0..=horizon {
        let c = mean_of(&theta, n, d);
        let h_bar = oracle.averaged_mean_field(&c);
        let grad = oracle.gradient(&c);
        let h_bar_sq = h_bar.iter().map(|x| x * x).sum::<f64>();
        let grad_sq = grad.iter().map(|x| x * x).sum::<f64>();
        let v = oracle.potential(&c);
        if t == 0 {
            v0 = v;
            grad0 = grad_sq.sqrt();
        }
        let dev = deviations(&theta, &c, n, d);
        let cons_err = dev.iter().map(|x| x * x).sum::<f64>().sqrt();
        let max_dev = dev.iter().copied().fold(0.0, f64::max);
        let gamma = steps.gamma(t + 1);

        acc.weight.add(gamma);
        acc.h_bar_sq.add(gamma * h_bar_sq);
        acc.grad_sq.add(gamma * grad_sq);
        acc.cons_err.add(gamma * cons_err);
        acc.max_dev.add(gamma * max_dev);
        for (s, x) in acc.agent_dev.iter_mut().zip(&dev) {
            s.add(gamma * x);
        }
        if t == tau {
            at_tau = Some(TauMetrics { h_bar_sq, grad_sq, cons_err, max_dev, agent_dev: dev.clone() });
        }

        sampler.advance(layout);
        for i in 0..n {
            oracle.local_update(i, &theta[i * d..(i + 1) * d], sampler.local[i], &mut h[i * d..(i + 1) * d]);
        }
        let a = mixing.at(t).entries();
        for i in 0..n {
            for k in 0..d {
                let mut s = 0.0;
                for j in 0..n {
                    s += a[(i, j)] * theta[j * d + k];
                }
                next[i * d + k] = s - gamma * h[i * d + k];
            }
        }

        let recorded = next_record < record_at.len() && record_at[next_record] == t;
        if recorded {
            next_record += 1;
            let diag = opts.diagnostics.then(|| {
                diagnostics(oracle, &theta, &next, &h, &c, &h_bar, &sampler.local, a, &u, gamma)
            });
            rows.push(RecordRow { t, gamma, h_bar_sq, grad_sq, cons_err, v, max_dev, diag });
        }

        if next.iter().any(|x| !x.is_finite() || x.abs() > DIVERGENCE_THRESHOLD) {
            return Err(EngineError::Divergence { t });
        }
        std::mem::swap(&mut theta, &mut next);
    }

    Ok(TrajectoryRecord {
        meta: RunMeta {
            seed: opts.seed,
            horizon,
            agents: n,
            dim: d,
            tau,
            v0,
            grad0,
            static_mixing: mixing.is_static(),
        },
        rows,
        tau_mean: acc.finish(),
        at_tau: at_tau.expect("tau lies in 0..=T"),
        final_theta: theta,
    })
}

#[allow(clippy::too_many_arguments)]
fn diagnostics(
    oracle: &dyn ProblemOracle,
    theta: &[f64],
    next: &[f64],
    h: &[f64],
    c: &[f64],
    h_bar: &[f64],
    states: &[usize],
    a: &DMatrix<f64>,
    u: &DMatrix<f64>,
    gamma: f64,
) -> Diagnostics {
    let n = u.nrows();
    let d = c.len();
    let mut at_c = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let mut h_mean = vec![0.0; d];
    for i in 0..n {
        oracle.local_update(i, c, states[i], &mut buf);
        for k in 0..d {
            at_c[k] += buf[k] / n as f64;
            h_mean[k] += h[i * d + k] / n as f64;
        }
    }
    let e0: Vec<f64> = at_c.iter().zip(h_bar).map(|(x, y)| x - y).collect();
    let e1: Vec<f64> = h_mean.iter().zip(&at_c).map(|(x, y)| x - y).collect();
    let c_next = mean_of(next, n, d);

    let pred_11a: Vec<f64> = (0..d).map(|k| c[k] - gamma * h_mean[k]).collect();
    let pred_psa: Vec<f64> = (0..d).map(|k| c[k] - gamma * (h_bar[k] + e0[k] + e1[k])).collect();

    let (_, err) = decompose(theta, d, u).expect("dimensions checked");
    let (_, err_next) = decompose(next, d, u).expect("dimensions checked");
    let (_, proj_h) = decompose(h, d, u).expect("dimensions checked");
    let m = u.transpose() * a * u;
    let m_dim = u.ncols();
    let mut res_11b = 0.0f64;
    for j in 0..m_dim {
        for k in 0..d {
            let mut s = 0.0;
            for l in 0..m_dim {
                s += m[(j, l)] * err[l * d + k];
            }
            let pred = s - gamma * proj_h[j * d + k];
            res_11b = res_11b.max((err_next[j * d + k] - pred).abs());
        }
    }
    let (cc, ee) = decompose(theta, d, u).expect("dimensions checked");
    let back = recompose(&cc, &ee, u).expect("dimensions checked");

    Diagnostics {
        e0: norm(&e0),
        e1: norm(&e1),
        upd_err: sup_diff(&c_next, &pred_psa),
        res_11a: sup_diff(&c_next, &pred_11a),
        res_11b,
        res_12: sup_diff(theta, &back),
        proj_h: norm(&proj_h),
    }
}
