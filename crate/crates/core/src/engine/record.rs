//! Per-iteration trajectory rows and their CSV form.

use std::fmt::Write as _;

use serde::Serialize;

use super::EngineError;

/// Diagnostics of the transition `t → t+1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    /// `‖e₀⁽ᵗ⁾‖`.
    pub e0: f64,
    /// `‖e₁⁽ᵗ⁾‖`.
    pub e1: f64,
    /// `‖θ̄_c⁽ᵗ⁺¹⁾ − θ̄_c⁽ᵗ⁾ + γ_{t+1}(h̄ + e₀ + e₁)‖∞`.
    pub upd_err: f64,
    /// Residual of the consensual recursion, sup norm.
    pub res_11a: f64,
    /// Residual of the consensus-error recursion, sup norm.
    pub res_11b: f64,
    /// `‖θ⁽ᵗ⁾ − recompose(decompose(θ⁽ᵗ⁾))‖∞`.
    pub res_12: f64,
    /// `‖(Uᵀ⊗I)H(θ⁽ᵗ⁾; X⁽ᵗ⁺¹⁾)‖`, the update's component off consensus.
    pub proj_h: f64,
}

/// Metrics at iteration `t`, evaluated at `θ⁽ᵗ⁾`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecordRow {
    pub t: usize,
    /// `γ_{t+1}`: the step applied after this row, and the weight of `t`
    /// in the law of the terminating time.
    pub gamma: f64,
    pub h_bar_sq: f64,
    pub grad_sq: f64,
    /// `‖θ̃_o⁽ᵗ⁾‖`.
    pub cons_err: f64,
    /// `V(θ̄_c⁽ᵗ⁾)`.
    pub v: f64,
    /// `max_i ‖θ_i⁽ᵗ⁾ − θ̄_c⁽ᵗ⁾‖`.
    pub max_dev: f64,
    pub diag: Option<Diagnostics>,
}

pub const BASE_COLUMNS: [&str; 6] = ["t", "gamma", "h_bar_sq", "grad_sq", "cons_err", "V"];
pub const ERROR_COLUMNS: [&str; 2] = ["e0", "e1"];
pub const RESIDUAL_COLUMNS: [&str; 5] = ["upd_err", "res_11a", "res_11b", "res_12", "proj_h"];

/// Header for rows with or without diagnostics.
pub fn csv_header(diagnostics: bool) -> String {
    let mut cols: Vec<&str> = BASE_COLUMNS.to_vec();
    if diagnostics {
        cols.extend(ERROR_COLUMNS);
    }
    cols.push("max_dev");
    if diagnostics {
        cols.extend(RESIDUAL_COLUMNS);
    }
    cols.join(",")
}

/// Rows as CSV; diagnostic columns are written when the first row has them.
pub fn rows_to_csv(rows: &[RecordRow]) -> String {
    let diagnostics = rows.first().is_some_and(|r| r.diag.is_some());
    let mut out = csv_header(diagnostics);
    out.push('\n');
    for r in rows {
        write!(out, "{},{:e},{:e},{:e},{:e},{:e}", r.t, r.gamma, r.h_bar_sq, r.grad_sq, r.cons_err, r.v).unwrap();
        if diagnostics {
            let d = r.diag.expect("uniform diagnostics");
            write!(out, ",{:e},{:e}", d.e0, d.e1).unwrap();
        }
        write!(out, ",{:e}", r.max_dev).unwrap();
        if diagnostics {
            let d = r.diag.expect("uniform diagnostics");
            write!(out, ",{:e},{:e},{:e},{:e},{:e}", d.upd_err, d.res_11a, d.res_11b, d.res_12, d.proj_h).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses rows written by [`rows_to_csv`]. Columns are located by name;
/// a missing base column is an error, missing diagnostic columns leave
/// `diag` empty.
pub fn rows_from_csv(text: &str) -> Result<Vec<RecordRow>, EngineError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| EngineError::Csv("empty file".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let find = |name: &str| header.iter().position(|h| *h == name);
    let required: Vec<&str> = BASE_COLUMNS.iter().copied().chain(["max_dev"]).collect();
    let missing: Vec<&str> = required.iter().copied().filter(|c| find(c).is_none()).collect();
    if !missing.is_empty() {
        return Err(EngineError::MissingColumns(missing.iter().map(|s| s.to_string()).collect()));
    }
    let idx = |name: &str| find(name).unwrap();
    let diag_cols: Option<Vec<usize>> =
        ERROR_COLUMNS.iter().chain(RESIDUAL_COLUMNS.iter()).map(|c| find(c)).collect();
    let mut rows = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(EngineError::Csv(format!(
                "row {} has {} fields, header has {}",
                line_no + 2,
                fields.len(),
                header.len()
            )));
        }
        let num = |k: usize| -> Result<f64, EngineError> {
            fields[k]
                .parse::<f64>()
                .map_err(|_| EngineError::Csv(format!("row {}: bad number '{}'", line_no + 2, fields[k])))
        };
        let t = fields[idx("t")]
            .parse::<usize>()
            .map_err(|_| EngineError::Csv(format!("row {}: bad index '{}'", line_no + 2, fields[idx("t")])))?;
        let diag = match &diag_cols {
            Some(c) => Some(Diagnostics {
                e0: num(c[0])?,
                e1: num(c[1])?,
                upd_err: num(c[2])?,
                res_11a: num(c[3])?,
                res_11b: num(c[4])?,
                res_12: num(c[5])?,
                proj_h: num(c[6])?,
            }),
            None => None,
        };
        rows.push(RecordRow {
            t,
            gamma: num(idx("gamma"))?,
            h_bar_sq: num(idx("h_bar_sq"))?,
            grad_sq: num(idx("grad_sq"))?,
            cons_err: num(idx("cons_err"))?,
            v: num(idx("V"))?,
            max_dev: num(idx("max_dev"))?,
            diag,
        });
    }
    Ok(rows)
}

/// Expectations over the terminating time, or values at one draw of it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauMetrics {
    pub h_bar_sq: f64,
    pub grad_sq: f64,
    pub cons_err: f64,
    pub max_dev: f64,
    /// `‖θ_i − θ̄_c‖` per agent.
    pub agent_dev: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMeta {
    pub seed: u64,
    pub horizon: usize,
    pub agents: usize,
    pub dim: usize,
    /// The drawn terminating time.
    pub tau: usize,
    /// `V(θ̄_c⁽⁰⁾)`.
    pub v0: f64,
    /// `‖∇V(θ̄_c⁽⁰⁾)‖`.
    pub grad0: f64,
    pub static_mixing: bool,
}

/// Everything recorded for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub meta: RunMeta,
    #[serde(skip)]
    pub rows: Vec<RecordRow>,
    /// `Σ_t γ_{t+1} f_t / Σ_t γ_{t+1}`: the expectation over the
    /// terminating time given this trajectory.
    pub tau_mean: TauMetrics,
    /// Metrics at the drawn terminating time.
    pub at_tau: TauMetrics,
    pub final_theta: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }
}
