//! The constants the convergence bounds are written in, with a record of
//! how each value was obtained, and grid estimators for them.
//!
//! Sup-type constants are maximized over a seeded θ-grid (the origin, the
//! problem's reference point, and uniform draws from a ball). Such values
//! are lower bounds on the true supremum and are tagged
//! [`Provenance::Sampled`]. Each estimator is also rerun on the grid
//! dilated by two so that constants growing with `‖θ‖` can be flagged.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ProblemError, ProblemOracle, SampleLayout};
use crate::linalg::{dist, dot, norm, spectral_norm};
use crate::markov::{MarkovModel, PoissonSolver};
use crate::rng::stream_rng;

/// Joint states enumerated exhaustively up to this count, sampled beyond.
pub const JOINT_ENUMERATION_CAP: usize = 4096;

/// Relative increase between the base and dilated grids that counts as growth.
const GROWTH_FACTOR: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Closed form for the problem family.
    Analytic,
    /// Computed exactly from the problem data (operator norms, linear solves).
    Exact,
    /// Supremum over a finite grid; a lower bound on the true value.
    Sampled,
    /// Provided by the user.
    Supplied,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constant {
    pub value: f64,
    pub provenance: Provenance,
}

impl Constant {
    pub fn analytic(value: f64) -> Self {
        Self { value, provenance: Provenance::Analytic }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, provenance: Provenance::Exact }
    }

    pub fn sampled(value: f64) -> Self {
        Self { value, provenance: Provenance::Sampled }
    }

    pub fn supplied(value: f64) -> Self {
        Self { value, provenance: Provenance::Supplied }
    }
}

macro_rules! bundle {
    ($( $(#[$meta:meta])* $field:ident => $name:literal ),* $(,)?) => {
        /// Named constants, each optional until computed or supplied.
        #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct ConstantsBundle {
            $(
                $(#[$meta])*
                #[serde(rename = $name, default, skip_serializing_if = "Option::is_none")]
                pub $field: Option<Constant>,
            )*
        }

        impl ConstantsBundle {
            pub const NAMES: &'static [&'static str] = &[$($name),*];

            /// `(name, value)` for every field.
            pub fn entries(&self) -> Vec<(&'static str, Option<Constant>)> {
                vec![$(($name, self.$field)),*]
            }

            /// Fills every absent field from `other`.
            pub fn fill_from(&mut self, other: &ConstantsBundle) {
                $( if self.$field.is_none() { self.$field = other.$field; } )*
            }
        }
    };
}

bundle! {
    /// `n`.
    agents => "n",
    /// Consensus contraction factor.
    rho_bar => "rho_bar",
    /// Alignment of `h̄` with `∇V`.
    c0 => "c0",
    /// Magnitude of `∇V` relative to `h̄`.
    d0 => "d0",
    /// Heterogeneity bound.
    sigma_o => "sigma_o",
    /// Uniform noise bound on the averaged update.
    sigma_h => "sigma_h",
    l_h => "L_h",
    l_v => "L_V",
    /// Bound on the stacked `PĤ` at consensual points.
    k_p => "K_P",
    /// Lipschitz constant of `PĤ_i`.
    l_h_bar => "L_h_bar",
    /// `sup_t (γ_t − γ_{t+1})/γ_t²`.
    a_hat => "a_hat",
    /// `sup_t γ_t/γ_{t+1}`.
    a_ratio => "a",
    /// `V(θ̄_c⁽⁰⁾)`.
    v0 => "V0",
    /// `‖∇V(θ̄_c⁽⁰⁾)‖`.
    grad0 => "grad0",
    v_star => "V_star",
}

impl ConstantsBundle {
    /// Names of absent fields.
    pub fn missing(&self) -> Vec<&'static str> {
        self.entries().into_iter().filter(|(_, c)| c.is_none()).map(|(n, _)| n).collect()
    }

    /// Names of fields that must be nonnegative but are not (or are not finite).
    pub fn invalid(&self) -> Vec<&'static str> {
        self.entries()
            .into_iter()
            .filter(|(name, c)| match c {
                Some(c) if *name == "V0" || *name == "V_star" => !c.value.is_finite(),
                Some(c) => !(c.value.is_finite() && c.value >= 0.0),
                None => false,
            })
            .map(|(n, _)| n)
            .collect()
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.entries().into_iter().find(|(n, _)| *n == name).and_then(|(_, c)| c.map(|c| c.value))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("constants serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Grid over which sup/inf-type constants are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThetaSampling {
    pub radius: f64,
    pub points: usize,
    pub seed: u64,
}

impl Default for ThetaSampling {
    fn default() -> Self {
        Self { radius: 10.0, points: 1000, seed: 0 }
    }
}

impl ThetaSampling {
    /// Origin, `reference` if given, then `points` uniform draws from the
    /// ball of radius `radius` about the origin.
    pub fn grid(&self, dim: usize, reference: Option<&[f64]>) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(self.seed, 0x6a1d);
        let mut grid = vec![vec![0.0; dim]];
        if let Some(r) = reference {
            grid.push(r.to_vec());
        }
        for _ in 0..self.points {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let len = norm(&v).max(1e-300);
            let u: f64 = rng.random();
            let scale = self.radius * u.powf(1.0 / dim as f64) / len;
            v.iter_mut().for_each(|x| *x *= scale);
            grid.push(v);
        }
        grid
    }

    fn dilated(&self) -> Self {
        Self { radius: 2.0 * self.radius, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasEstimate {
    pub c0: f64,
    pub d0: f64,
    pub evaluated: usize,
    /// Points with `h̄(θ) = ∇V(θ) = 0`, excluded from both ratios.
    pub skipped: usize,
    /// Points with `⟨h̄, ∇V⟩ ≤ 0`, or `h̄ = 0` while `∇V ≠ 0`.
    pub violations: Vec<Vec<f64>>,
}

impl BiasEstimate {
    pub fn holds(&self) -> bool {
        self.violations.is_empty() && self.c0 > 0.0 && self.d0.is_finite()
    }
}

/// `c0 = min ⟨h̄,∇V⟩/‖h̄‖²` and `d0 = max ‖∇V‖²/‖h̄‖²` over the grid.
pub fn estimate_bias_constants(oracle: &dyn ProblemOracle, sampling: &ThetaSampling) -> BiasEstimate {
    let reference = oracle.reference_point();
    let grid = sampling.grid(oracle.dim(), reference.as_deref());
    let mut c0 = f64::INFINITY;
    let mut d0 = 0.0f64;
    let mut skipped = 0;
    let mut violations = Vec::new();
    for theta in &grid {
        let h = oracle.averaged_mean_field(theta);
        let g = oracle.gradient(theta);
        let tol = 1e-9 * (1.0 + norm(theta));
        let (hn, gn) = (norm(&h), norm(&g));
        if hn <= tol {
            if gn <= tol {
                skipped += 1;
            } else {
                d0 = f64::INFINITY;
                violations.push(theta.clone());
            }
            continue;
        }
        let ratio = dot(&h, &g) / (hn * hn);
        if ratio <= 0.0 {
            violations.push(theta.clone());
        }
        c0 = c0.min(ratio);
        d0 = d0.max(gn * gn / (hn * hn));
    }
    BiasEstimate { c0, d0, evaluated: grid.len(), skipped, violations }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseEstimate {
    pub sigma_o: f64,
    pub sigma_h: f64,
    /// The estimate increased markedly on the dilated grid.
    pub sigma_o_grows: bool,
    pub sigma_h_grows: bool,
    /// Joint states visited per grid point.
    pub joint_states: usize,
    /// Whether every joint state was visited.
    pub exhaustive: bool,
}

/// Joint states to visit: all of them when few enough, otherwise a seeded
/// uniform sample.
fn joint_states(layout: &SampleLayout, seed: u64) -> (Vec<Vec<usize>>, bool) {
    let count = layout.joint_count();
    if count <= JOINT_ENUMERATION_CAP {
        return ((0..count).map(|k| layout.joint_state(k)).collect(), true);
    }
    let mut rng = stream_rng(seed, 0x101);
    let n = layout.agents();
    let sample = (0..JOINT_ENUMERATION_CAP)
        .map(|_| match layout {
            SampleLayout::Shared { model, .. } => vec![rng.random_range(0..model.states()); n],
            SampleLayout::Independent(models) => {
                models.iter().map(|m| rng.random_range(0..m.states())).collect()
            }
        })
        .collect();
    (sample, false)
}

/// Centered per-agent deviations with largest norm one (all zero for `n = 1`).
fn deviations(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut dev: Vec<Vec<f64>> =
        (0..n).map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    for k in 0..dim {
        let m = dev.iter().map(|v| v[k]).sum::<f64>() / n as f64;
        dev.iter_mut().for_each(|v| v[k] -= m);
    }
    let top = dev.iter().map(|v| norm(v)).fold(0.0, f64::max);
    if top > 0.0 {
        dev.iter_mut().flatten().for_each(|x| *x /= top);
    }
    dev
}

fn noise_pass(
    oracle: &dyn ProblemOracle,
    sampling: &ThetaSampling,
    joint: &[Vec<usize>],
) -> (f64, f64) {
    let n = oracle.agents();
    let d = oracle.dim();
    let reference = oracle.reference_point();
    let grid = sampling.grid(d, reference.as_deref());
    let layout = oracle.layout();
    let states: Vec<usize> = (0..n).map(|i| layout.model(i).states()).collect();
    let mut rng = stream_rng(sampling.seed, 0xde7);
    let scales = [0.0, 1.0, sampling.radius];
    let mut sigma_o = 0.0f64;
    let mut sigma_h = 0.0f64;
    let mut buf = vec![0.0; d];
    let mut avg = vec![0.0; d];
    for center in &grid {
        let h_bar = oracle.averaged_mean_field(center);
        let h_bar_norm = norm(&h_bar);
        let dev = deviations(n, d, &mut rng);
        for (si, &s) in scales.iter().enumerate() {
            if n == 1 && si > 0 {
                break;
            }
            // table[i][x] = H_i(θ_i; x)
            let thetas: Vec<Vec<f64>> =
                dev.iter().map(|v| center.iter().zip(v).map(|(c, e)| c + s * e).collect()).collect();
            let table: Vec<Vec<Vec<f64>>> = (0..n)
                .map(|i| {
                    (0..states[i])
                        .map(|x| {
                            oracle.local_update(i, &thetas[i], x, &mut buf);
                            buf.clone()
                        })
                        .collect()
                })
                .collect();
            for xs in joint {
                avg.iter_mut().for_each(|a| *a = 0.0);
                for i in 0..n {
                    for (a, v) in avg.iter_mut().zip(&table[i][xs[i]]) {
                        *a += v / n as f64;
                    }
                }
                if si == 0 {
                    sigma_h = sigma_h.max(dist(&avg, &h_bar));
                }
                for i in 0..n {
                    let num = dist(&table[i][xs[i]], &avg);
                    let den = (1.0 + h_bar_norm) / n as f64 + s * norm(&dev[i]);
                    sigma_o = sigma_o.max(num / den);
                }
            }
        }
    }
    (sigma_o, sigma_h)
}

fn grows(base: f64, dilated: f64) -> bool {
    dilated > GROWTH_FACTOR * base + 1e-9
}

/// Heterogeneity and noise bounds maximized over stacked parameters built
/// from the grid (consensual points plus centered deviations of norm 0, 1
/// and the grid radius) and over joint states.
pub fn estimate_noise_constants(oracle: &dyn ProblemOracle, sampling: &ThetaSampling) -> NoiseEstimate {
    let (joint, exhaustive) = joint_states(oracle.layout(), sampling.seed);
    let (so, sh) = noise_pass(oracle, sampling, &joint);
    let (so2, sh2) = noise_pass(oracle, &sampling.dilated(), &joint);
    NoiseEstimate {
        sigma_o: so,
        sigma_h: sh,
        sigma_o_grows: grows(so, so2),
        sigma_h_grows: grows(sh, sh2),
        joint_states: joint.len(),
        exhaustive,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    pub l_h: f64,
    pub l_v: f64,
    pub l_h_bar: f64,
    pub k_p: f64,
    /// `L_h`, `L_V`, `L̄_h` are exact operator norms.
    pub lipschitz_exact: bool,
    /// `PĤ` does not depend on `θ`, so `K_P` is exact.
    pub k_p_exact: bool,
    pub k_p_grows: bool,
    /// Largest Poisson residual encountered.
    pub poisson_residual: f64,
}

struct PoissonTables {
    solvers: Vec<PoissonSolver>,
    /// Index into `solvers` for each agent.
    which: Vec<usize>,
    models: Vec<MarkovModel>,
}

impl PoissonTables {
    fn new(layout: &SampleLayout) -> Result<Self, ProblemError> {
        let (models, which) = match layout {
            SampleLayout::Shared { model, agents } => (vec![model.clone()], vec![0; *agents]),
            SampleLayout::Independent(ms) => (ms.clone(), (0..ms.len()).collect()),
        };
        let solvers = models.iter().map(PoissonSolver::new).collect::<Result<_, _>>()?;
        Ok(Self { solvers, which, models })
    }

    /// `PĤ` for an `S × k` table `H`, plus the Poisson residual.
    fn p_hat(&self, agent: usize, table: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64), ProblemError> {
        let w = self.which[agent];
        let sol = self.solvers[w].solve(table)?;
        Ok((self.models[w].apply(&sol.h_hat), sol.residual))
    }
}

fn update_table(oracle: &dyn ProblemOracle, agent: usize, theta: &[f64]) -> DMatrix<f64> {
    let s = oracle.layout().model(agent).states();
    let d = oracle.dim();
    let mut out = DMatrix::zeros(s, d);
    let mut buf = vec![0.0; d];
    for x in 0..s {
        oracle.local_update(agent, theta, x, &mut buf);
        for k in 0..d {
            out[(x, k)] = buf[k];
        }
    }
    out
}

fn row_norm_sq(m: &DMatrix<f64>, x: usize) -> f64 {
    m.row(x).iter().map(|v| v * v).sum()
}

/// `sup_x ‖PĤ(θ𝟙; x)‖` with the stacked norm over agents, maximized over
/// the grid.
fn k_p_pass(
    oracle: &dyn ProblemOracle,
    tables: &PoissonTables,
    sampling: &ThetaSampling,
) -> Result<(f64, f64), ProblemError> {
    let n = oracle.agents();
    let reference = oracle.reference_point();
    let grid = sampling.grid(oracle.dim(), reference.as_deref());
    let mut k_p = 0.0f64;
    let mut residual = 0.0f64;
    for theta in &grid {
        let mut per_agent = Vec::with_capacity(n);
        for i in 0..n {
            let (ph, r) = tables.p_hat(i, &update_table(oracle, i, theta))?;
            residual = residual.max(r);
            per_agent.push(ph);
        }
        let value = match oracle.layout() {
            SampleLayout::Shared { model, .. } => (0..model.states())
                .map(|x| per_agent.iter().map(|m| row_norm_sq(m, x)).sum::<f64>())
                .fold(0.0, f64::max),
            SampleLayout::Independent(_) => per_agent
                .iter()
                .map(|m| (0..m.nrows()).map(|x| row_norm_sq(m, x)).fold(0.0, f64::max))
                .sum::<f64>(),
        };
        k_p = k_p.max(value.sqrt());
    }
    Ok((k_p, residual))
}

/// `L_h`, `L_V`, `L̄_h` and `K_P`. Affine oracles get exact operator norms
/// (with `L̄_h` from Poisson-solved Jacobians); others are sampled over
/// consecutive grid pairs.
pub fn estimate_lipschitz(
    oracle: &dyn ProblemOracle,
    sampling: &ThetaSampling,
) -> Result<LipschitzEstimate, ProblemError> {
    let n = oracle.agents();
    let d = oracle.dim();
    let layout = oracle.layout();
    let tables = PoissonTables::new(layout)?;
    let jacobians: Option<Vec<Vec<DMatrix<f64>>>> = (0..n)
        .map(|i| (0..layout.model(i).states()).map(|x| oracle.jacobian(i, x)).collect())
        .collect();
    let hessian = oracle.hessian();
    let mut poisson_residual = 0.0f64;

    let (l_h, l_v, l_h_bar, lipschitz_exact, k_p_exact) = match (jacobians, hessian) {
        (Some(jac), Some(hess)) => {
            let l_h = jac.iter().flatten().map(spectral_norm).fold(0.0, f64::max);
            let l_v = spectral_norm(&hess);
            let mut l_h_bar = 0.0f64;
            for (i, per) in jac.iter().enumerate() {
                let flat = DMatrix::from_fn(per.len(), d * d, |x, k| per[x][(k / d, k % d)]);
                let (ph, r) = tables.p_hat(i, &flat)?;
                poisson_residual = poisson_residual.max(r);
                for x in 0..per.len() {
                    let m = DMatrix::from_fn(d, d, |r, c| ph[(x, r * d + c)]);
                    l_h_bar = l_h_bar.max(spectral_norm(&m));
                }
            }
            (l_h, l_v, l_h_bar, true, l_h_bar <= 1e-12)
        }
        _ => {
            let reference = oracle.reference_point();
            let grid = sampling.grid(d, reference.as_deref());
            let mut l_h = 0.0f64;
            let mut l_v = 0.0f64;
            let mut l_h_bar = 0.0f64;
            for pair in grid.windows(2) {
                let (a, b) = (&pair[0], &pair[1]);
                let gap = dist(a, b);
                if gap == 0.0 {
                    continue;
                }
                l_v = l_v.max(dist(&oracle.gradient(a), &oracle.gradient(b)) / gap);
                for i in 0..n {
                    let (ta, tb) = (update_table(oracle, i, a), update_table(oracle, i, b));
                    let diff = &ta - &tb;
                    let worst = (0..diff.nrows()).map(|x| row_norm_sq(&diff, x)).fold(0.0, f64::max);
                    l_h = l_h.max(worst.sqrt() / gap);
                    let (pa, ra) = tables.p_hat(i, &ta)?;
                    let (pb, rb) = tables.p_hat(i, &tb)?;
                    poisson_residual = poisson_residual.max(ra).max(rb);
                    let pd = pa - pb;
                    let worst = (0..pd.nrows()).map(|x| row_norm_sq(&pd, x)).fold(0.0, f64::max);
                    l_h_bar = l_h_bar.max(worst.sqrt() / gap);
                }
            }
            (l_h, l_v, l_h_bar, false, false)
        }
    };

    let (k_p, r1) = k_p_pass(oracle, &tables, sampling)?;
    let (k_p2, r2) = k_p_pass(oracle, &tables, &sampling.dilated())?;
    poisson_residual = poisson_residual.max(r1).max(r2);
    Ok(LipschitzEstimate {
        l_h,
        l_v,
        l_h_bar,
        k_p,
        lipschitz_exact,
        k_p_exact,
        k_p_grows: grows(k_p, k_p2),
        poisson_residual,
    })
}

/// All problem-level constants with their diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsReport {
    pub bundle: ConstantsBundle,
    pub bias: BiasEstimate,
    pub noise: NoiseEstimate,
    pub lipschitz: LipschitzEstimate,
    pub sampling: ThetaSampling,
}

impl ConstantsReport {
    /// Human-readable warnings about estimates that may not be valid bounds.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.bias.holds() {
            out.push(format!(
                "bias condition fails at {} grid point(s) (c0 = {:.4e})",
                self.bias.violations.len(),
                self.bias.c0
            ));
        }
        if self.noise.sigma_o_grows {
            out.push("sigma_o grows with the grid radius".into());
        }
        if self.noise.sigma_h_grows {
            out.push("sigma_h grows with the grid radius".into());
        }
        if self.lipschitz.k_p_grows {
            out.push("K_P grows with the grid radius".into());
        }
        if !self.noise.exhaustive {
            out.push(format!("joint states sampled ({} visited)", self.noise.joint_states));
        }
        out
    }
}

/// Closed-form constants from the oracle, completed by grid estimates.
pub fn estimate_constants(
    oracle: &dyn ProblemOracle,
    sampling: &ThetaSampling,
) -> Result<ConstantsReport, ProblemError> {
    let bias = estimate_bias_constants(oracle, sampling);
    let noise = estimate_noise_constants(oracle, sampling);
    let lipschitz = estimate_lipschitz(oracle, sampling)?;
    let mut bundle = oracle.analytic_constants();
    let lip = |v: f64| {
        if lipschitz.lipschitz_exact {
            Constant::exact(v)
        } else {
            Constant::sampled(v)
        }
    };
    let v_star = if oracle.hessian().is_some() {
        Constant::exact(oracle.v_star())
    } else {
        Constant::sampled(oracle.v_star())
    };
    let estimated = ConstantsBundle {
        agents: Some(Constant::analytic(oracle.agents() as f64)),
        c0: Some(Constant::sampled(bias.c0)),
        d0: Some(Constant::sampled(bias.d0)),
        sigma_o: Some(Constant::sampled(noise.sigma_o)),
        sigma_h: Some(Constant::sampled(noise.sigma_h)),
        l_h: Some(lip(lipschitz.l_h)),
        l_v: Some(lip(lipschitz.l_v)),
        l_h_bar: Some(lip(lipschitz.l_h_bar)),
        k_p: Some(if lipschitz.k_p_exact {
            Constant::exact(lipschitz.k_p)
        } else {
            Constant::sampled(lipschitz.k_p)
        }),
        v_star: Some(v_star),
        ..ConstantsBundle::default()
    };
    bundle.fill_from(&estimated);
    Ok(ConstantsReport { bundle, bias, noise, lipschitz, sampling: *sampling })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_ergodic_sgd_problem, make_td0_problem, sgd_toy, Dataset, MdpSpec};
    use approx::assert_abs_diff_eq;

    fn small() -> ThetaSampling {
        ThetaSampling { radius: 10.0, points: 100, seed: 1 }
    }

    #[test]
    fn bundle_json_round_trip_and_missing() {
        let mut b = ConstantsBundle { c0: Some(Constant::analytic(1.0)), ..Default::default() };
        b.l_h = Some(Constant::sampled(2.5));
        let text = b.to_json();
        assert!(text.contains("\"L_h\""));
        assert!(text.contains("\"sampled\""));
        assert_eq!(ConstantsBundle::from_json(&text).unwrap(), b);
        assert_eq!(b.missing().len(), ConstantsBundle::NAMES.len() - 2);
        assert!(ConstantsBundle::from_json("{\"bogus\": 1}").is_err());
        b.sigma_o = Some(Constant::supplied(-1.0));
        assert_eq!(b.invalid(), vec!["sigma_o"]);
    }

    #[test]
    fn grid_contains_origin_and_reference() {
        let s = small();
        let g = s.grid(3, Some(&[1.0, 2.0, 3.0]));
        assert_eq!(g.len(), 102);
        assert_eq!(g[0], vec![0.0; 3]);
        assert_eq!(g[1], vec![1.0, 2.0, 3.0]);
        assert!(g[2..].iter().all(|v| norm(v) <= 10.0));
        assert_eq!(g, s.grid(3, Some(&[1.0, 2.0, 3.0])));
    }

    #[test]
    fn sgd_bias_constants_are_one() {
        let (data, chains) = sgd_toy(3, 3, 2, 5);
        let p = make_ergodic_sgd_problem(&data, chains).unwrap();
        let b = estimate_bias_constants(&p, &small());
        assert_abs_diff_eq!(b.c0, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(b.d0, 1.0, epsilon = 1e-9);
        assert!(b.holds());
    }

    #[test]
    fn single_agent_noise() {
        let data = Dataset { features: vec![vec![1.0], vec![1.0]], targets: vec![1.0, -1.0] };
        let chain = MarkovModel::iid(&[0.5, 0.5]).unwrap();
        let p = make_ergodic_sgd_problem(&[data], vec![chain]).unwrap();
        let e = estimate_noise_constants(&p, &small());
        assert_eq!(e.sigma_o, 0.0);
        assert_abs_diff_eq!(e.sigma_h, 1.0, epsilon = 1e-12);
        assert!(!e.sigma_h_grows);
        assert!(e.exhaustive);
    }

    #[test]
    fn identical_agents_have_no_heterogeneity_at_consensus() {
        let data = Dataset { features: vec![vec![1.0, 0.0], vec![0.0, 1.0]], targets: vec![1.0, 2.0] };
        let chain = MarkovModel::iid(&[0.5, 0.5]).unwrap();
        let p = make_ergodic_sgd_problem(&[data.clone(), data], vec![chain.clone(), chain]).unwrap();
        // Along the diagonal of joint states every agent sees the same sample.
        let theta = [0.3, -0.7];
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        for x in 0..2 {
            p.local_update(0, &theta, x, &mut a);
            p.local_update(1, &theta, x, &mut b);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn td0_lipschitz_matches_operator_norms() {
        let mdp = MdpSpec::random(5, 3, 4, 0.9, 2);
        let p = make_td0_problem(&mdp, 4).unwrap();
        let l = estimate_lipschitz(&p, &small()).unwrap();
        let direct = p.analytic_constants().l_h.unwrap().value;
        assert_abs_diff_eq!(l.l_h, direct, epsilon = 1e-12);
        assert_abs_diff_eq!(l.l_v, 1.0, epsilon = 1e-12);
        assert!(l.lipschitz_exact);
        assert!(l.poisson_residual < 1e-10);
    }

    #[test]
    fn single_state_chain_has_zero_k_p() {
        let data = Dataset { features: vec![vec![1.0, 2.0]], targets: vec![3.0] };
        let p = make_ergodic_sgd_problem(&[data], vec![MarkovModel::trivial()]).unwrap();
        let l = estimate_lipschitz(&p, &small()).unwrap();
        assert_eq!(l.k_p, 0.0);
        assert_eq!(l.l_h_bar, 0.0);
        assert!(l.k_p_exact);
    }

    #[test]
    fn sign_flipped_oracle_is_flagged() {
        struct Flipped(crate::problems::LinearProblem);
        impl ProblemOracle for Flipped {
            fn agents(&self) -> usize {
                self.0.agents()
            }
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn layout(&self) -> &SampleLayout {
                self.0.layout()
            }
            fn local_update(&self, i: usize, t: &[f64], x: usize, out: &mut [f64]) {
                self.0.local_update(i, t, x, out);
                out.iter_mut().for_each(|v| *v = -*v);
            }
            fn potential(&self, t: &[f64]) -> f64 {
                self.0.potential(t)
            }
            fn gradient(&self, t: &[f64]) -> Vec<f64> {
                self.0.gradient(t)
            }
            fn v_star(&self) -> f64 {
                self.0.v_star()
            }
        }
        let (data, chains) = sgd_toy(2, 2, 2, 3);
        let p = Flipped(make_ergodic_sgd_problem(&data, chains).unwrap());
        let b = estimate_bias_constants(&p, &small());
        assert!(b.c0 < 0.0);
        assert!(!b.holds());
        assert!(!b.violations.is_empty());
    }

    #[test]
    fn full_report_prefers_closed_forms() {
        let (data, chains) = sgd_toy(3, 3, 2, 8);
        let p = make_ergodic_sgd_problem(&data, chains).unwrap();
        let r = estimate_constants(&p, &small()).unwrap();
        assert_eq!(r.bundle.c0.unwrap().provenance, Provenance::Analytic);
        assert_eq!(r.bundle.sigma_o.unwrap().provenance, Provenance::Sampled);
        assert!(r.warnings().is_empty(), "{:?}", r.warnings());
        assert!(r.bundle.k_p.unwrap().value > 0.0);
    }
}
