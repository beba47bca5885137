//! Theorem-level constants and the two right-hand sides of the rate bound.

use serde::Serialize;

use super::AnalysisError;
use crate::engine::StepSchedule;
use crate::linalg::CompensatedSum;
use crate::problems::ConstantsBundle;

/// The problem and network constants the bound is written in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MkInputs {
    pub n: f64,
    pub rho_bar: f64,
    pub c0: f64,
    pub d0: f64,
    pub sigma_o: f64,
    pub sigma_h: f64,
    pub l_h: f64,
    pub l_v: f64,
    pub k_p: f64,
    pub l_h_bar: f64,
    pub v_star: f64,
}

impl MkInputs {
    pub fn from_bundle(b: &ConstantsBundle) -> Result<Self, AnalysisError> {
        let fields = [
            ("n", b.agents),
            ("rho_bar", b.rho_bar),
            ("c0", b.c0),
            ("d0", b.d0),
            ("sigma_o", b.sigma_o),
            ("sigma_h", b.sigma_h),
            ("L_h", b.l_h),
            ("L_V", b.l_v),
            ("K_P", b.k_p),
            ("L_h_bar", b.l_h_bar),
            ("V_star", b.v_star),
        ];
        let missing: Vec<String> =
            fields.iter().filter(|(_, c)| c.is_none()).map(|(n, _)| n.to_string()).collect();
        if !missing.is_empty() {
            return Err(AnalysisError::IncompleteConstants(missing));
        }
        let v = |i: usize| fields[i].1.unwrap().value;
        Ok(Self {
            n: v(0),
            rho_bar: v(1),
            c0: v(2),
            d0: v(3),
            sigma_o: v(4),
            sigma_h: v(5),
            l_h: v(6),
            l_v: v(7),
            k_p: v(8),
            l_h_bar: v(9),
            v_star: v(10),
        })
    }
}

/// `E0`, `C0mk`, `C1mk`, `C2mk` and the two combinations `C̃`, `C̄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MkConstants {
    pub e0: f64,
    pub c0mk: f64,
    pub c1mk: f64,
    pub c2mk: f64,
    pub c_tilde: f64,
    pub c_bar: f64,
}

/// `C2mk`, `E0` and `C̃ = C2mk + E0 + d0/2 + L_V`, which do not depend on
/// the initial point.
fn c2_and_tilde(k: &MkInputs, a_hat: f64, a_ratio: f64) -> (f64, f64, f64) {
    let sd0 = k.d0.sqrt();
    let so2 = k.sigma_o * k.sigma_o;
    let rn = k.rho_bar * k.n;
    let e0 = 12.0 * so2 * k.l_h * k.l_h / (k.rho_bar * k.n * k.n);
    let c2mk = sd0 * k.l_h_bar * (2.0 + k.l_h / (2.0 * k.n) + 4.0 * so2 / k.rho_bar)
        + k.k_p * sd0 / 2.0
        + k.k_p * (a_hat * a_ratio * a_ratio * sd0 + k.l_v * (rn + 4.0 * k.l_h * so2) / (2.0 * rn));
    let c_tilde = c2mk + e0 + k.d0 / 2.0 + k.l_v;
    (e0, c2mk, c_tilde)
}

pub fn mk_constants(k: &MkInputs, a_hat: f64, a_ratio: f64, gamma1: f64, grad0: f64) -> MkConstants {
    let sd0 = k.d0.sqrt();
    let so2 = k.sigma_o * k.sigma_o;
    let rn = k.rho_bar * k.n;
    let (e0, c2mk, c_tilde) = c2_and_tilde(k, a_hat, a_ratio);
    let c0mk = k.k_p * (sd0 / 2.0 + gamma1 * grad0);
    let c1mk = k.k_p * k.l_v * (rn * (1.0 + 2.0 * k.sigma_h) + k.l_h * (1.0 + 4.0 * so2)) / (2.0 * rn)
        + sd0 * (k.l_h_bar * k.sigma_h * k.sigma_h + k.l_h_bar * 4.0 * so2 / k.rho_bar + k.k_p * a_hat);
    let c_bar = c1mk + e0 + k.sigma_h * k.sigma_h * k.l_v;
    MkConstants { e0, c0mk, c1mk, c2mk, c_tilde, c_bar }
}

/// The three terms of the step-size ceiling and their minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepCap {
    pub unit: f64,
    /// `ρ̄/(2σₒ)`, infinite when `σₒ = 0`.
    pub consensus: f64,
    /// `c0/(2C̃)`.
    pub bias: f64,
    pub value: f64,
}

pub fn step_cap(k: &MkInputs, a_hat: f64, a_ratio: f64) -> StepCap {
    let (_, _, c_tilde) = c2_and_tilde(k, a_hat, a_ratio);
    let consensus = if k.sigma_o > 0.0 { k.rho_bar / (2.0 * k.sigma_o) } else { f64::INFINITY };
    let bias = k.c0 / (2.0 * c_tilde);
    StepCap { unit: 1.0, consensus, bias, value: 1.0f64.min(consensus).min(bias) }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCertificate {
    pub horizon: usize,
    pub inputs: MkInputs,
    pub a_hat: f64,
    pub a_ratio: f64,
    pub v0: f64,
    pub grad0: f64,
    #[serde(flatten)]
    pub mk: MkConstants,
    pub c_tot: f64,
    /// `Σ_{t=0}^{T} γ_{t+1}`.
    pub sum_gamma: f64,
    /// `Σ_{t=0}^{T} γ_{t+1}²`.
    pub sum_gamma_sq: f64,
    pub rhs_meanfield: f64,
    pub rhs_consensus: f64,
    pub cap: StepCap,
    pub gamma_max: f64,
    /// The step ceiling and the decrement condition hold, so the bounds apply.
    pub binding: bool,
}

impl BoundCertificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

/// Evaluates every constant for the schedule's horizon.
pub fn compute_certificate(
    constants: &ConstantsBundle,
    steps: &StepSchedule,
    v0: f64,
    grad0: f64,
) -> Result<BoundCertificate, AnalysisError> {
    let k = MkInputs::from_bundle(constants)?;
    let horizon = steps.horizon();
    let (a_hat, a_ratio) = (steps.a_hat(), steps.a_ratio());
    let mk = mk_constants(&k, a_hat, a_ratio, steps.gamma(1), grad0);
    let used = &steps.gammas()[1..=horizon + 1];
    let sum_gamma = used.iter().copied().collect::<CompensatedSum>().value();
    let sum_gamma_sq = used.iter().map(|g| g * g).collect::<CompensatedSum>().value();
    let c_tot = v0 - k.v_star + mk.c0mk + mk.c_bar * sum_gamma_sq;
    let rhs_meanfield = c_tot / ((k.c0 / 2.0) * sum_gamma);
    let rhs_consensus =
        (c_tot / k.c0 + 3.0 * k.sigma_o / (2.0 * k.rho_bar) * sum_gamma_sq) / sum_gamma;
    let cap = step_cap(&k, a_hat, a_ratio);
    let gamma_max = steps.gamma_max();
    let binding = steps.decrement_holds() && gamma_max <= cap.value * (1.0 + 1e-12) && k.c0 > 0.0;
    Ok(BoundCertificate {
        horizon,
        inputs: k,
        a_hat,
        a_ratio,
        v0,
        grad0,
        mk,
        c_tot,
        sum_gamma,
        sum_gamma_sq,
        rhs_meanfield,
        rhs_consensus,
        cap,
        gamma_max,
        binding,
    })
}
