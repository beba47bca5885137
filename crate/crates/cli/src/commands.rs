//! The five commands: `validate`, `run`, `verify`, `bound` and `sweep`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dsa_core::analysis::{
    compute_certificate, rate_fit, verify_ensemble, verify_trajectory, AnalysisError, CheckStatus,
};
use dsa_core::engine::{
    make_step_schedule, rows_from_csv, run_ensemble, Aggregate, CapMode, EngineError, EnsembleOptions, RunOptions,
    StepRule, StepSchedule,
};
use dsa_core::linalg::norm;
use dsa_core::markov::tv_mixing_profile;
use dsa_core::problems::{
    estimate_constants, td0_reference_constants, Constant, ConstantsBundle, ConstantsReport, SampleLayout,
};
use dsa_core::{BoundCertificate, ProblemOracle, VerificationReport};
use serde::{Deserialize, Serialize};

use crate::config::{load_config, read, Experiment, LoadedConfig};
use crate::{CliError, Outcome, EXIT_DIVERGED, EXIT_FAILED, EXIT_OK};

/// Largest residual of the Poisson equation accepted as an exact solve.
const POISSON_TOL: f64 = 1e-10;
/// Horizon of the total-variation profile used to fit `(K, λ)`.
const MIXING_HORIZON: usize = 200;

/// Overrides applied on top of a configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunArgs {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Worker threads; `0` uses all cores. Results do not depend on it.
    pub jobs: usize,
    /// Turn on the per-step diagnostics regardless of the configuration.
    pub diagnostics: bool,
    /// Sweep horizons, replacing the configuration's.
    pub horizons: Option<Vec<usize>>,
}

/// A configuration with its problem built and its constants assembled.
struct Prepared {
    loaded: LoadedConfig,
    exp: Experiment,
    report: ConstantsReport,
    /// Supplied values first, then closed forms and estimates, then `ρ̄`.
    bundle: ConstantsBundle,
}

fn prepare(loaded: LoadedConfig) -> Result<Prepared, CliError> {
    let exp = loaded.build()?;
    let report = estimate_constants(&exp.problem, &loaded.config.sampling)
        .map_err(|e| CliError::Input(format!("constants: {e}")))?;
    let mut bundle = loaded.config.constants.clone().unwrap_or_default();
    bundle.fill_from(&report.bundle);
    if bundle.rho_bar.is_none() {
        bundle.rho_bar = Some(Constant::exact(exp.mixing.rho_bar()));
    }
    let invalid = bundle.invalid();
    if !invalid.is_empty() {
        return Err(CliError::Input(format!("constants: invalid values for {}", invalid.join(", "))));
    }
    Ok(Prepared { loaded, exp, report, bundle })
}

fn topology_assumption(loaded: &LoadedConfig) -> &'static str {
    if loaded.config.static_topology() {
        "H1-3"
    } else {
        "H8-3"
    }
}

fn require_contraction(p: &Prepared) -> Result<(), CliError> {
    let rho = p.exp.mixing.rho_bar();
    if rho > 0.0 {
        Ok(())
    } else {
        Err(CliError::Assumption {
            name: topology_assumption(&p.loaded).into(),
            detail: format!("mixing does not contract (rho_bar = {rho:.4e})"),
        })
    }
}

fn schedule_for(p: &Prepared, horizon: usize) -> Result<StepSchedule, CliError> {
    let s = &p.loaded.config.schedule;
    make_step_schedule(s.step, horizon, Some(&p.bundle), s.cap_mode)
        .map_err(|e| CliError::Assumption { name: "step ceiling".into(), detail: e.to_string() })
}

/// Completes the bundle with the schedule's decrement constants and the
/// initial values `V(θ̄_c⁽⁰⁾)`, `‖∇V(θ̄_c⁽⁰⁾)‖`.
fn completed_bundle(p: &Prepared, steps: &StepSchedule) -> ConstantsBundle {
    let theta0 = initial_point(p);
    let mut b = p.bundle.clone();
    b.a_hat = Some(Constant::exact(steps.a_hat()));
    b.a_ratio = Some(Constant::exact(steps.a_ratio()));
    b.v0 = Some(Constant::exact(p.exp.problem.potential(&theta0)));
    b.grad0 = Some(Constant::exact(norm(&p.exp.problem.gradient(&theta0))));
    b
}

fn initial_point(p: &Prepared) -> Vec<f64> {
    p.loaded.config.initial.clone().unwrap_or_else(|| vec![0.0; p.exp.problem.dim()])
}

fn certificate_for(bundle: &ConstantsBundle, steps: &StepSchedule) -> Result<BoundCertificate, CliError> {
    let v0 = bundle.v0.map(|c| c.value).unwrap_or(f64::NAN);
    let grad0 = bundle.grad0.map(|c| c.value).unwrap_or(f64::NAN);
    compute_certificate(bundle, steps, v0, grad0).map_err(analysis_input)
}

fn analysis_input(e: AnalysisError) -> CliError {
    CliError::Input(e.to_string())
}

fn constants_table(bundle: &ConstantsBundle) -> String {
    let mut out = String::new();
    for (name, c) in bundle.entries() {
        match c {
            Some(c) => {
                let prov = serde_json::to_value(c.provenance).unwrap();
                writeln!(out, "  {name:<8} {:>14.6e}  {}", c.value, prov.as_str().unwrap_or("")).unwrap();
            }
            None => writeln!(out, "  {name:<8} {:>14}", "-").unwrap(),
        }
    }
    out
}

struct Line {
    name: &'static str,
    ok: bool,
    detail: String,
}

/// Certifies every assumption on the configured problem and network.
pub fn cmd_validate(config: &Path) -> Result<Outcome, CliError> {
    let p = prepare(load_config(config)?)?;
    let mut lines = Vec::new();
    let rho = p.exp.mixing.rho_bar();
    let is_static = p.loaded.config.static_topology();

    let mats = p.exp.mixing.matrices();
    let sym = mats.iter().all(|m| (m.entries() - m.entries().transpose()).amax() <= 1e-12);
    lines.push(Line {
        name: "H1-1/2",
        ok: true,
        detail: format!(
            "{} doubly stochastic matrix(es) supported on their graphs{}",
            mats.len(),
            if sym { ", symmetric" } else { "" }
        ),
    });
    if is_static {
        lines.push(Line { name: "H1-3", ok: rho > 0.0, detail: format!("rho_bar = {rho:.6e}") });
    }

    let models: Vec<_> = match p.exp.problem.layout() {
        SampleLayout::Shared { model, .. } => vec![model],
        SampleLayout::Independent(models) => models.iter().collect(),
    };
    let mut worst_lambda = 0.0f64;
    let mut worst_k = 0.0f64;
    for m in &models {
        let fit = tv_mixing_profile(m, MIXING_HORIZON).fit;
        worst_lambda = worst_lambda.max(fit.lambda);
        worst_k = worst_k.max(fit.k);
    }
    lines.push(Line {
        name: "H2",
        ok: worst_lambda < 1.0,
        detail: format!("{} irreducible aperiodic chain(s); TV <= {worst_k:.3e} * {worst_lambda:.4}^t", models.len()),
    });

    let bias = &p.report.bias;
    let mut detail = format!("c0 = {:.6e}, d0 = {:.6e} over {} points", bias.c0, bias.d0, bias.evaluated);
    if !bias.violations.is_empty() {
        write!(detail, "; {} violating point(s)", bias.violations.len()).unwrap();
    }
    if let Some(mdp) = &p.exp.mdp {
        if let Ok(r) = td0_reference_constants(mdp) {
            write!(detail, "; (1 - discount)/4 = {:.4e}, exact c0 = {:.6e}", r.c0_quoted, r.c0_exact).unwrap();
        }
    }
    lines.push(Line { name: "H3", ok: bias.holds(), detail });

    let residual = p.report.lipschitz.poisson_residual;
    lines.push(Line {
        name: "H4",
        ok: residual <= POISSON_TOL,
        detail: format!("Poisson residual {residual:.3e}"),
    });

    let lip = &p.report.lipschitz;
    lines.push(Line {
        name: "H5",
        ok: lip.l_h.is_finite() && lip.l_v.is_finite(),
        detail: format!(
            "L_h = {:.6e}, L_V = {:.6e} ({})",
            lip.l_h,
            lip.l_v,
            if lip.lipschitz_exact { "exact" } else { "sampled" }
        ),
    });

    // Uniform bounds are certified over the sampling ball; growth on the
    // dilated ball is reported with the warnings below.
    let noise = &p.report.noise;
    let radius = p.report.sampling.radius;
    lines.push(Line {
        name: "H6",
        ok: noise.sigma_o.is_finite(),
        detail: format!("sigma_o = {:.6e} on |theta| <= {radius}", noise.sigma_o),
    });
    lines.push(Line {
        name: "H7",
        ok: noise.sigma_h.is_finite() && lip.k_p.is_finite() && lip.l_h_bar.is_finite(),
        detail: format!(
            "sigma_h = {:.6e}, K_P = {:.6e}, L_h_bar = {:.6e} on |theta| <= {radius}",
            noise.sigma_h, lip.k_p, lip.l_h_bar
        ),
    });

    if is_static {
        lines.push(Line { name: "H8", ok: rho > 0.0, detail: "fixed network (B = 1)".into() });
    } else {
        lines.push(Line {
            name: "H8-3",
            ok: rho > 0.0,
            detail: format!(
                "period {}, B = {}, joint contraction {rho:.6e}",
                p.exp.mixing.period(),
                p.exp.mixing.block()
            ),
        });
    }

    let mut text = String::new();
    for l in &lines {
        writeln!(text, "{:<10} {:<7} {}", if l.ok { "CERTIFIED" } else { "VIOLATED" }, l.name, l.detail).unwrap();
    }
    for w in p.report.warnings() {
        writeln!(text, "warning    {w}").unwrap();
    }
    if rho > 0.0 {
        match schedule_for(&p, p.loaded.config.schedule.horizon) {
            Ok(steps) => match steps.cap() {
                Some(cap) => writeln!(
                    text,
                    "info       step ceiling {:.6e} (consensus {:.4e}, bias {:.4e}); largest step {:.6e}: {}",
                    cap.value,
                    cap.consensus,
                    cap.bias,
                    steps.gamma_max(),
                    if steps.within_cap() { "within" } else { "exceeds, certificates non-binding" }
                )
                .unwrap(),
                None => writeln!(text, "info       step ceiling not evaluated (cap mode off)").unwrap(),
            },
            Err(e) => writeln!(text, "info       {}", e.message()).unwrap(),
        }
    }
    let ok = lines.iter().all(|l| l.ok);
    Ok(Outcome::new(if ok { EXIT_OK } else { EXIT_FAILED }, text))
}

/// Contents of `aggregate.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub horizon: usize,
    pub static_mixing: bool,
    pub gamma_max: f64,
    pub steps_clipped: bool,
    pub certificate: BoundCertificate,
    pub aggregate: Aggregate,
}

/// The part of `aggregate.json` that `verify` reads back.
#[derive(Debug, Clone, Deserialize)]
struct SummaryView {
    static_mixing: bool,
    aggregate: Aggregate,
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn run_file_name(k: usize) -> String {
    format!("run_{k}.csv")
}

/// Runs one horizon of a prepared experiment into `dir`.
fn execute(p: &Prepared, horizon: usize, dir: &Path, args: &RunArgs) -> Result<(Outcome, RunSummary), CliError> {
    require_contraction(p)?;
    let cfg = &p.loaded.config;
    let steps = schedule_for(p, horizon)?;
    let bundle = completed_bundle(p, &steps);
    let certificate = certificate_for(&bundle, &steps)?;
    let diagnostics = cfg.output.diagnostics || args.diagnostics;
    let opts = EnsembleOptions {
        runs: cfg.ensemble.runs,
        master_seed: cfg.ensemble.master_seed,
        jobs: args.jobs,
        run: RunOptions {
            seed: 0,
            initial: p.loaded.initial(p.exp.problem.dim()),
            recording: cfg.output.recording,
            diagnostics,
        },
    };
    let result = run_ensemble(&p.exp.problem, &p.exp.mixing, &steps, &opts)
        .map_err(|e| CliError::Input(format!("run: {e}")))?;

    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| io_error(&runs_dir, e))?;
    let mut snapshot = cfg.clone();
    snapshot.schedule.horizon = horizon;
    snapshot.output.diagnostics = diagnostics;
    snapshot.output.dir = Some(dir.to_path_buf());
    snapshot.sweep = None;
    write(&dir.join("config.json"), &snapshot.to_json())?;
    write(&dir.join("constants.json"), &bundle.to_json())?;

    let mut reports = Vec::new();
    let mut status = String::new();
    for (k, r) in result.records.iter().enumerate() {
        match r {
            Ok(rec) => {
                write(&runs_dir.join(run_file_name(k)), &rec.to_csv())?;
                reports.push(verify_trajectory(&rec.rows, &bundle, rec.meta.static_mixing).map_err(analysis_input)?);
                writeln!(status, "  run {k}: ok (seed {}, tau {})", rec.meta.seed, rec.meta.tau).unwrap();
            }
            Err(EngineError::Divergence { t }) => {
                writeln!(status, "  run {k}: diverged after step {t}").unwrap();
            }
            Err(e) => return Err(CliError::Input(format!("run {k}: {e}"))),
        }
    }
    let summary = RunSummary {
        horizon,
        static_mixing: p.exp.mixing.is_static(),
        gamma_max: steps.gamma_max(),
        steps_clipped: steps.clipped(),
        certificate,
        aggregate: result.aggregate,
    };
    write(&dir.join("aggregate.json"), &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;

    let mut verification = VerificationReport::combine(&reports);
    if summary.aggregate.completed > 0 {
        verification.extend(verify_ensemble(&summary.aggregate, &summary.certificate));
    }
    let text = run_report(p, &steps, &bundle, &summary, &verification, &status);
    write(&dir.join("report.txt"), &text)?;
    let code = if summary.aggregate.diverged.is_empty() { EXIT_OK } else { EXIT_DIVERGED };
    Ok((Outcome::new(code, text), summary))
}

fn run_report(
    p: &Prepared,
    steps: &StepSchedule,
    bundle: &ConstantsBundle,
    s: &RunSummary,
    verification: &VerificationReport,
    status: &str,
) -> String {
    let cfg = &p.loaded.config;
    let a = &s.aggregate;
    let c = &s.certificate;
    let mut t = String::new();
    writeln!(
        t,
        "agents {}, dimension {}, horizon {}, runs {}, master seed {}",
        p.exp.agents(),
        p.exp.problem.dim(),
        s.horizon,
        cfg.ensemble.runs,
        cfg.ensemble.master_seed
    )
    .unwrap();
    writeln!(t, "\nconstants").unwrap();
    t.push_str(&constants_table(bundle));
    for w in p.report.warnings() {
        writeln!(t, "  warning: {w}").unwrap();
    }
    writeln!(t, "\nsteps").unwrap();
    writeln!(t, "  largest step {:.6e}, ceiling {:.6e}", s.gamma_max, c.cap.value).unwrap();
    if let Some(w) = steps.warning() {
        writeln!(t, "  {w}").unwrap();
    }
    writeln!(t, "\ncertificate ({})", if c.binding { "binding" } else { "NON-BINDING" }).unwrap();
    writeln!(t, "  C_tot {:.6e}, mean-field bound {:.6e}, consensus bound {:.6e}", c.c_tot, c.rhs_meanfield, c.rhs_consensus)
        .unwrap();
    writeln!(t, "\nensemble ({} of {} runs completed)", a.completed, a.runs).unwrap();
    writeln!(t, "  E|h_bar|^2        {:.6e} (se {:.2e})", a.h_bar_sq.mean, a.h_bar_sq.se).unwrap();
    writeln!(t, "  E|grad V|^2       {:.6e} (se {:.2e})", a.grad_sq.mean, a.grad_sq.se).unwrap();
    writeln!(
        t,
        "  max_i E|dev_i|    {:.6e} (se {:.2e}, agent {})",
        a.max_agent_dev.mean,
        a.max_agent_dev.se,
        a.worst_agent + 1
    )
    .unwrap();
    writeln!(t, "\nchecks").unwrap();
    t.push_str(&verification.to_text());
    writeln!(t, "\nruns").unwrap();
    t.push_str(status);
    t
}

fn effective(loaded: &mut LoadedConfig, args: &RunArgs) -> Result<PathBuf, CliError> {
    if let Some(seed) = args.seed {
        loaded.config.ensemble.master_seed = seed;
    }
    if let Some(h) = &args.horizons {
        loaded.config.sweep = Some(crate::config::SweepSpec { horizons: h.clone() });
    }
    match (&args.out, &loaded.config.output.dir) {
        (Some(out), _) => Ok(out.clone()),
        (None, Some(dir)) => Ok(if dir.is_absolute() { dir.clone() } else { loaded.base.join(dir) }),
        (None, None) => Err(CliError::Input("no output directory: pass --out or set output.dir".into())),
    }
}

/// Runs the configured ensemble and writes `config.json`, `constants.json`,
/// `runs/run_<k>.csv`, `aggregate.json` and `report.txt` under the output
/// directory.
pub fn cmd_run(config: &Path, args: &RunArgs) -> Result<Outcome, CliError> {
    let mut loaded = load_config(config)?;
    let out = effective(&mut loaded, args)?;
    let p = prepare(loaded)?;
    let horizon = p.loaded.config.schedule.horizon;
    Ok(execute(&p, horizon, &out, args)?.0)
}

/// Recomputes the certificate from a run directory and checks every
/// recorded trajectory and the ensemble means against it.
pub fn cmd_verify(dir: &Path) -> Result<Outcome, CliError> {
    let config = crate::config::ExperimentConfig::from_json(&read(&dir.join("config.json"))?)?;
    let bundle = ConstantsBundle::from_json(&read(&dir.join("constants.json"))?)
        .map_err(|e| CliError::Input(format!("constants.json: {e}")))?;
    let view: SummaryView = serde_json::from_str(&read(&dir.join("aggregate.json"))?)
        .map_err(|e| CliError::Input(format!("aggregate.json: {e}")))?;
    let s = &config.schedule;
    let steps = make_step_schedule(s.step, s.horizon, Some(&bundle), s.cap_mode)
        .map_err(|e| CliError::Input(format!("schedule: {e}")))?;
    let certificate = certificate_for(&bundle, &steps)?;

    let diverged: Vec<usize> = view.aggregate.diverged.iter().map(|&(k, _)| k).collect();
    let mut reports = Vec::new();
    for k in (0..config.ensemble.runs).filter(|k| !diverged.contains(k)) {
        let path = dir.join("runs").join(run_file_name(k));
        let rows = rows_from_csv(&read(&path)?).map_err(|e| match e {
            EngineError::MissingColumns(cols) => {
                CliError::Input(format!("{}: missing columns {}", path.display(), cols.join(", ")))
            }
            other => CliError::Input(format!("{}: {other}", path.display())),
        })?;
        reports.push(verify_trajectory(&rows, &bundle, view.static_mixing).map_err(analysis_input)?);
    }
    let mut report = VerificationReport::combine(&reports);
    if view.aggregate.completed > 0 {
        report.extend(verify_ensemble(&view.aggregate, &certificate));
    }
    let mut text = format!(
        "certificate {}: mean-field bound {:.6e}, consensus bound {:.6e}\n",
        if certificate.binding { "binding" } else { "NON-BINDING" },
        certificate.rhs_meanfield,
        certificate.rhs_consensus
    );
    text.push_str(&report.to_text());
    let failed = report.checks.iter().filter(|c| c.status == CheckStatus::Fail).count();
    writeln!(text, "{}", if failed == 0 { "all binding checks pass".to_string() } else { format!("{failed} check(s) failed") })
        .unwrap();
    Ok(Outcome::new(if report.passed() { EXIT_OK } else { EXIT_FAILED }, text))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundArgs {
    pub constants: PathBuf,
    pub step: StepRule,
    pub horizon: usize,
    pub cap_mode: CapMode,
    /// Overrides the bundle's `V0`.
    pub v0: Option<f64>,
    /// Overrides the bundle's `grad0`.
    pub grad0: Option<f64>,
}

/// Evaluates the certificate for a constants file and a step schedule;
/// no simulation.
pub fn cmd_bound(args: &BoundArgs) -> Result<Outcome, CliError> {
    let mut bundle = ConstantsBundle::from_json(&read(&args.constants)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.constants.display())))?;
    if let Some(v) = args.v0 {
        bundle.v0 = Some(Constant::supplied(v));
    }
    if let Some(g) = args.grad0 {
        bundle.grad0 = Some(Constant::supplied(g));
    }
    let mut missing: Vec<&str> = bundle.missing().into_iter().filter(|n| !matches!(*n, "a_hat" | "a")).collect();
    if !missing.is_empty() {
        missing.sort_unstable();
        return Err(CliError::Input(format!("constants missing: {}", missing.join(", "))));
    }
    let steps = make_step_schedule(args.step, args.horizon, Some(&bundle), args.cap_mode)
        .map_err(|e| CliError::Input(format!("schedule: {e}")))?;
    let cert = certificate_for(&bundle, &steps)?;
    Ok(Outcome::new(EXIT_OK, cert.to_json()))
}

#[derive(Debug, Clone, Serialize)]
struct SweepSummary {
    horizons: Vec<usize>,
    h_bar_sq: Vec<f64>,
    grad_sq: Vec<f64>,
    max_agent_dev: Vec<f64>,
    fits: Vec<(String, Option<dsa_core::RateFit>, Option<String>)>,
}

/// One run per horizon into `<out>/T<horizon>/`, then log-log fits of the
/// ensemble means written to `<out>/sweep.json`.
pub fn cmd_sweep(config: &Path, args: &RunArgs) -> Result<Outcome, CliError> {
    let mut loaded = load_config(config)?;
    let out = effective(&mut loaded, args)?;
    let horizons = loaded
        .config
        .sweep
        .as_ref()
        .map(|s| s.horizons.clone())
        .ok_or_else(|| CliError::Input("no horizons: pass --horizons or set sweep.horizons".into()))?;
    if horizons.is_empty() || horizons.contains(&0) {
        return Err(CliError::Input("sweep horizons must be non-empty and positive".into()));
    }
    let p = prepare(loaded)?;
    let mut text = String::new();
    let mut summaries = Vec::new();
    let mut code = EXIT_OK;
    for &h in &horizons {
        let (outcome, summary) = execute(&p, h, &out.join(format!("T{h}")), args)?;
        code = code.max(outcome.code);
        let a = &summary.aggregate;
        writeln!(
            text,
            "T = {h:>9}: E|h_bar|^2 {:.6e}, E|grad V|^2 {:.6e}, max_i E|dev_i| {:.6e} ({} of {} runs)",
            a.h_bar_sq.mean, a.grad_sq.mean, a.max_agent_dev.mean, a.completed, a.runs
        )
        .unwrap();
        summaries.push(summary);
    }
    let grid: Vec<f64> = horizons.iter().map(|&h| h as f64).collect();
    let pick = |f: fn(&Aggregate) -> f64| summaries.iter().map(|s| f(&s.aggregate)).collect::<Vec<f64>>();
    let series = [
        ("h_bar_sq", pick(|a| a.h_bar_sq.mean)),
        ("grad_sq", pick(|a| a.grad_sq.mean)),
        ("max_agent_dev", pick(|a| a.max_agent_dev.mean)),
    ];
    let mut fits = Vec::new();
    for (name, values) in &series {
        match rate_fit(&grid, values) {
            Ok(fit) => {
                writeln!(text, "{name:<14} slope {:+.4} +/- {:.4}", fit.slope, fit.half_width).unwrap();
                fits.push((name.to_string(), Some(fit), None));
            }
            Err(e) => {
                writeln!(text, "{name:<14} no fit: {e}").unwrap();
                fits.push((name.to_string(), None, Some(e.to_string())));
            }
        }
    }
    let [(_, h_bar_sq), (_, grad_sq), (_, max_agent_dev)] = series;
    let summary = SweepSummary { horizons, h_bar_sq, grad_sq, max_agent_dev, fits };
    write(&out.join("sweep.json"), &serde_json::to_string_pretty(&summary).expect("sweep serializes"))?;
    Ok(Outcome::new(code, text))
}
