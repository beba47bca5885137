//! Checks recorded trajectories and ensemble means against the identities
//! and bounds they must satisfy.

use std::fmt::Write as _;

use serde::Serialize;

use super::{lemma1_bound, AnalysisError, BoundCertificate};
use crate::engine::{Aggregate, RecordRow};
use crate::problems::ConstantsBundle;

/// Tolerance for identities that hold exactly in exact arithmetic.
pub const IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The bound's preconditions do not hold; the outcome is informational.
    NonBinding,
    /// The data needed for the check is absent.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    /// `max(lhs − rhs)`; negative values are slack.
    pub margin: f64,
    pub detail: String,
}

impl Check {
    fn new(name: &str, status: CheckStatus, margin: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), status, margin, detail: detail.into() }
    }

    fn skipped(name: &str, why: &str) -> Self {
        Self::new(name, CheckStatus::Skipped, f64::NAN, why)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn extend(&mut self, other: VerificationReport) {
        self.checks.extend(other.checks);
    }

    /// One check per name across several reports: the most severe status
    /// (fail, non-binding, pass, skipped) and the largest margin.
    pub fn combine(reports: &[VerificationReport]) -> VerificationReport {
        let rank = |s: CheckStatus| match s {
            CheckStatus::Fail => 3,
            CheckStatus::NonBinding => 2,
            CheckStatus::Pass => 1,
            CheckStatus::Skipped => 0,
        };
        let mut checks: Vec<Check> = Vec::new();
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for report in reports {
            for c in &report.checks {
                let failed = usize::from(c.status == CheckStatus::Fail);
                match checks.iter().position(|k| k.name == c.name) {
                    Some(k) => {
                        let merged = &mut checks[k];
                        if rank(c.status) > rank(merged.status) {
                            merged.status = c.status;
                            merged.detail = c.detail.clone();
                        }
                        if !c.margin.is_nan() && !(c.margin <= merged.margin) {
                            merged.margin = c.margin;
                        }
                        counts[k].0 += 1;
                        counts[k].1 += failed;
                    }
                    None => {
                        checks.push(c.clone());
                        counts.push((1, failed));
                    }
                }
            }
        }
        for (c, (seen, failed)) in checks.iter_mut().zip(counts) {
            if seen > 1 {
                c.detail = format!("{failed}/{seen} failing; {}", c.detail);
            }
        }
        VerificationReport { checks }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = match c.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Fail => "FAIL",
                CheckStatus::NonBinding => "NON-BINDING",
                CheckStatus::Skipped => "SKIPPED",
            };
            writeln!(out, "{tag:<12} {:<26} margin {:>12.4e}  {}", c.name, c.margin, c.detail).unwrap();
        }
        out
    }
}

fn identity_check(name: &str, rows: &[RecordRow], pick: impl Fn(&RecordRow) -> Option<f64>) -> Check {
    let vals: Option<Vec<f64>> = rows.iter().map(&pick).collect();
    match vals {
        Some(v) if !v.is_empty() => {
            let worst = v.iter().copied().fold(0.0, f64::max);
            let status = if worst <= IDENTITY_TOL { CheckStatus::Pass } else { CheckStatus::Fail };
            Check::new(name, status, worst - IDENTITY_TOL, format!("largest residual {worst:.3e}"))
        }
        _ => Check::skipped(name, "diagnostic columns absent"),
    }
}

/// Runs every per-trajectory check the rows support.
///
/// The pathwise bounds need `rho_bar`, `sigma_o`, `sigma_h`, `L_h` and `n`
/// from `constants`; a check whose constants are absent is skipped.
pub fn verify_trajectory(
    rows: &[RecordRow],
    constants: &ConstantsBundle,
    static_mixing: bool,
) -> Result<VerificationReport, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::Report("trajectory has no rows".into()));
    }
    let mut checks = vec![
        identity_check("decomposition", rows, |r| r.diag.map(|d| d.res_12)),
        identity_check("consensual recursion", rows, |r| r.diag.map(|d| d.res_11a)),
        identity_check("error recursion", rows, |r| r.diag.map(|d| d.res_11b)),
        identity_check("perturbed SA split", rows, |r| r.diag.map(|d| d.upd_err)),
        error_bounds_check(rows, constants, static_mixing),
    ];

    let worst = rows.iter().map(|r| r.max_dev - r.cons_err).fold(f64::NEG_INFINITY, f64::max);
    let ok = rows.iter().all(|r| r.max_dev <= r.cons_err * (1.0 + 1e-12) + 1e-300);
    checks.push(Check::new(
        "max deviation <= error",
        if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        worst,
        "max_i |theta_i - mean| against the projected error norm",
    ));

    checks.push(consensus_check(rows, constants, static_mixing));

    match (constants.sigma_h, rows.iter().map(|r| r.diag.map(|d| d.e0)).collect::<Option<Vec<f64>>>()) {
        (Some(sh), Some(e0)) => {
            let worst = e0.iter().map(|e| e - sh.value).fold(f64::NEG_INFINITY, f64::max);
            let ok = e0.iter().all(|&e| e <= sh.value * (1.0 + 1e-9) + 1e-12);
            checks.push(Check::new(
                "e0 <= sigma_h",
                if ok { CheckStatus::Pass } else { CheckStatus::Fail },
                worst,
                format!("sigma_h = {:.4e}", sh.value),
            ));
        }
        _ => checks.push(Check::skipped("e0 <= sigma_h", "needs sigma_h and diagnostics")),
    }

    match (constants.l_h, constants.agents, rows.iter().map(|r| r.diag.map(|d| d.e1)).collect::<Option<Vec<f64>>>()) {
        (Some(lh), Some(n), Some(e1)) => {
            let k = lh.value / n.value;
            let worst = e1.iter().zip(rows).map(|(e, r)| e - k * r.cons_err).fold(f64::NEG_INFINITY, f64::max);
            let ok = e1.iter().zip(rows).all(|(&e, r)| e <= k * r.cons_err * (1.0 + 1e-9) + 1e-12);
            checks.push(Check::new(
                "e1 <= (L_h/n) error",
                if ok { CheckStatus::Pass } else { CheckStatus::Fail },
                worst,
                format!("L_h/n = {k:.4e}"),
            ));
        }
        _ => checks.push(Check::skipped("e1 <= (L_h/n) error", "needs L_h, n and diagnostics")),
    }
    Ok(VerificationReport { checks })
}

/// Triangle inequalities on the error recursion between consecutive rows:
/// `|‖θ̃⁽ᵗ⁺¹⁾‖ − γ‖(Uᵀ⊗I)H‖| ≤ q‖θ̃⁽ᵗ⁾‖`, with `q = 1 − ρ̄` for a fixed matrix
/// and `q = 1` otherwise. Uses only recorded columns.
fn error_bounds_check(rows: &[RecordRow], constants: &ConstantsBundle, static_mixing: bool) -> Check {
    const NAME: &str = "error recursion bounds";
    let q = match constants.rho_bar {
        Some(rho) if static_mixing => 1.0 - rho.value,
        _ => 1.0,
    };
    let mut pairs = 0;
    let mut worst = f64::NEG_INFINITY;
    for w in rows.windows(2) {
        let (now, next) = (&w[0], &w[1]);
        let Some(d) = now.diag else {
            return Check::skipped(NAME, "diagnostic columns absent");
        };
        if next.t != now.t + 1 {
            continue;
        }
        pairs += 1;
        let push = now.gamma * d.proj_h;
        let slack = 1e-9 * (now.cons_err + push) + 1e-12;
        let over = next.cons_err - (q * now.cons_err + push);
        let under = (push - q * now.cons_err) - next.cons_err;
        worst = worst.max(over.max(under) - slack);
    }
    if pairs == 0 {
        return Check::skipped(NAME, "needs consecutive rows");
    }
    let status = if worst <= 0.0 { CheckStatus::Pass } else { CheckStatus::Fail };
    Check::new(NAME, status, worst, format!("{pairs} transitions, contraction {q:.4e}"))
}

fn consensus_check(rows: &[RecordRow], constants: &ConstantsBundle, static_mixing: bool) -> Check {
    const NAME: &str = "consensus error bound";
    let (Some(rho), Some(so)) = (constants.rho_bar, constants.sigma_o) else {
        return Check::skipped(NAME, "needs rho_bar and sigma_o");
    };
    if rows.iter().enumerate().any(|(k, r)| r.t != k) {
        return Check::skipped(NAME, "needs every iteration recorded");
    }
    let gammas: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
    let h: Vec<f64> = rows.iter().map(|r| r.h_bar_sq.sqrt()).collect();
    let b = lemma1_bound(&gammas, rho.value, so.value, &h);
    let mut worst = f64::NEG_INFINITY;
    let mut ok = true;
    for (t, row) in rows.iter().enumerate().skip(1) {
        let bound = b.bound[t];
        worst = worst.max(row.cons_err - bound);
        if row.cons_err > bound * (1.0 + 1e-12) + 1e-14 {
            ok = false;
        }
    }
    let equal_start = rows[0].cons_err <= 1e-12;
    let mut reasons = Vec::new();
    if !b.binding {
        reasons.push("step exceeds rho_bar/(2 sigma_o)");
    }
    if !equal_start {
        reasons.push("agents start apart");
    }
    if !static_mixing {
        reasons.push("time-varying mixing");
    }
    let status = match (reasons.is_empty(), ok) {
        (true, true) => CheckStatus::Pass,
        (true, false) => CheckStatus::Fail,
        (false, _) => CheckStatus::NonBinding,
    };
    let detail = if reasons.is_empty() {
        format!("rho_bar = {:.4e}, sigma_o = {:.4e}", rho.value, so.value)
    } else {
        format!("{} (bound {})", reasons.join("; "), if ok { "held" } else { "exceeded" })
    };
    Check::new(NAME, status, worst, detail)
}

/// Ensemble means against the two right-hand sides. A mean counts as
/// within its bound when `mean − 2·se ≤ rhs`.
pub fn verify_ensemble(aggregate: &Aggregate, certificate: &BoundCertificate) -> VerificationReport {
    let binding = certificate.binding;
    let one = |name: &str, mean: f64, se: f64, rhs: f64| {
        let margin = mean - 2.0 * se - rhs;
        let ok = margin <= 0.0;
        let status = match (binding, ok) {
            (true, true) => CheckStatus::Pass,
            (true, false) => CheckStatus::Fail,
            (false, _) => CheckStatus::NonBinding,
        };
        let mut detail = format!("mean {mean:.4e} (se {se:.2e}) vs bound {rhs:.4e}");
        if !binding {
            detail.push_str("; step ceiling not met");
        }
        Check::new(name, status, margin, detail)
    };
    VerificationReport {
        checks: vec![
            one(
                "mean-field rate bound",
                aggregate.h_bar_sq.mean,
                aggregate.h_bar_sq.se,
                certificate.rhs_meanfield,
            ),
            one(
                "consensus rate bound",
                aggregate.max_agent_dev.mean,
                aggregate.max_agent_dev.se,
                certificate.rhs_consensus,
            ),
        ],
    }
}
