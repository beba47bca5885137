//! Ensemble experiments driven through the command layer: decay rates,
//! certificate soundness and determinism.

use std::cell::RefCell;
use std::fs;
use std::path::{Path, PathBuf};

use dsa_cli::{cmd_run, cmd_sweep, RunArgs};
use dsa_core::analysis::rate_fit;
use dsa_core::topology::{build_metropolis_weights, make_tv_schedule, validate_joint_connectivity, EdgePartitionPolicy, Graph};
use serde_json::{json, Value};
use tempfile::TempDir;

use crate::Verdict;

const HORIZONS: [usize; 3] = [1_000, 10_000, 100_000];
const BAND: (f64, f64) = (-0.8, -0.35);

/// One horizon of a sweep, read back from its `aggregate.json`.
#[derive(Debug, Clone)]
pub struct Point {
    horizon: usize,
    binding: bool,
    rhs_meanfield: f64,
    rhs_consensus: f64,
    h_bar_sq: (f64, f64),
    grad_sq: f64,
    max_agent_dev: (f64, f64),
}

pub type Sweep = RefCell<Option<Vec<Point>>>;

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../cli/configs").join(name)
}

fn stat(v: &Value) -> (f64, f64) {
    (v["mean"].as_f64().unwrap_or(f64::NAN), v["se"].as_f64().unwrap_or(f64::NAN))
}

/// Runs `cmd_sweep` over `HORIZONS` on an edited copy of a bundled config.
fn sweep(name: &str, edit: impl FnOnce(&mut Value)) -> Result<Vec<Point>, String> {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(bundled(name)).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    cfg["ensemble"]["runs"] = json!(20);
    cfg["output"]["recording"] = json!({ "kind": "geometric", "ratio": 2.0 });
    cfg["output"]["diagnostics"] = json!(false);
    edit(&mut cfg);
    let path = tmp.path().join(name);
    fs::write(&path, cfg.to_string()).map_err(|e| e.to_string())?;
    let out = tmp.path().join("out");
    let args = RunArgs { out: Some(out.clone()), horizons: Some(HORIZONS.to_vec()), ..Default::default() };
    let outcome = cmd_sweep(&path, &args).map_err(|e| e.message())?;
    if outcome.code != 0 {
        return Err(format!("{name}: sweep exited with {}", outcome.code));
    }
    HORIZONS
        .iter()
        .map(|&h| {
            let text = fs::read_to_string(out.join(format!("T{h}")).join("aggregate.json")).map_err(|e| e.to_string())?;
            let v: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            let (c, a) = (&v["certificate"], &v["aggregate"]);
            Ok(Point {
                horizon: h,
                binding: c["binding"].as_bool().unwrap_or(false),
                rhs_meanfield: c["rhs_meanfield"].as_f64().unwrap_or(f64::NAN),
                rhs_consensus: c["rhs_consensus"].as_f64().unwrap_or(f64::NAN),
                h_bar_sq: stat(&a["h_bar_sq"]),
                grad_sq: a["grad_sq"]["mean"].as_f64().unwrap_or(f64::NAN),
                max_agent_dev: stat(&a["max_agent_dev"]),
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` on `ln x`.
fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn rate_verdict(points: &[Point], prefix: String) -> Verdict {
    let t: Vec<f64> = points.iter().map(|p| p.horizon as f64).collect();
    let grad: Vec<f64> = points.iter().map(|p| p.grad_sq).collect();
    let dev: Vec<f64> = points.iter().map(|p| p.max_agent_dev.0).collect();
    let (s_grad, s_dev) = (log_slope(&t, &grad), log_slope(&t, &dev));
    let agree = [(&grad, s_grad), (&dev, s_dev)]
        .iter()
        .all(|(y, s)| rate_fit(&t, y).map(|f| (f.slope - s).abs() <= 1e-10).unwrap_or(false));
    let inside = |s: f64| (BAND.0..=BAND.1).contains(&s);
    Verdict::new(
        inside(s_grad) && inside(s_dev) && agree,
        format!(
            "{prefix}slope of E|grad V|^2 {s_grad:+.3}, of max_i E|theta_i - mean| {s_dev:+.3} (band [{}, {}]); library fit agrees: {agree}; means {:.3e} -> {:.3e} and {:.3e} -> {:.3e}",
            BAND.0, BAND.1, grad[0], grad[grad.len() - 1], dev[0], dev[dev.len() - 1]
        ),
    )
}

pub fn static_rates(store: &Sweep) -> Verdict {
    match sweep("sgd_toy.json", |_| {}) {
        Ok(points) => {
            let v = rate_verdict(&points, "3 agents on a path, a0=0.1, a1=1, 20 runs at T=1e3,1e4,1e5: ".into());
            *store.borrow_mut() = Some(points);
            v
        }
        Err(e) => Verdict::new(false, e),
    }
}

pub fn time_varying_rates(store: &Sweep) -> Verdict {
    let ring = Graph::ring(6);
    let schedule = match make_tv_schedule(&ring, 3, &EdgePartitionPolicy::RoundRobin, 0) {
        Ok(s) => s,
        Err(e) => return Verdict::new(false, e.to_string()),
    };
    let joint = validate_joint_connectivity(&schedule);
    let single: Vec<String> = schedule.matrices().iter().map(|m| format!("{:.2}", m.rho_bar())).collect();
    let static_ring = build_metropolis_weights(&ring).map(|m| m.rho_bar()).unwrap_or(f64::NAN);
    match sweep("sgd_time_varying.json", |_| {}) {
        Ok(points) => {
            let prefix = format!(
                "6-node ring, 3 alternating edge sets (per-step contraction [{}], joint {joint:.3}, static ring {static_ring:.3}): ",
                single.join(", ")
            );
            let v = rate_verdict(&points, prefix);
            *store.borrow_mut() = Some(points);
            Verdict::new(v.passed && joint > 0.0, v.detail)
        }
        Err(e) => Verdict::new(false, e),
    }
}

pub fn certificate_soundness(sgd_static: &Sweep, sgd_varying: &Sweep) -> Verdict {
    let mut sets: Vec<(String, Vec<Point>)> = Vec::new();
    for (label, store) in [("sgd_toy", sgd_static), ("sgd_time_varying", sgd_varying)] {
        if let Some(points) = store.borrow().clone() {
            sets.push((label.into(), points));
        }
    }
    let enforced = [
        ("sgd_certified", "sgd_certified.json"),
        ("td0_toy", "td0_toy.json"),
        ("sgd_time_varying enforced", "sgd_time_varying.json"),
    ];
    for (label, file) in enforced {
        match sweep(file, |v| v["schedule"]["cap_mode"] = json!("enforce")) {
            Ok(points) => sets.push((label.into(), points)),
            Err(e) => return Verdict::new(false, format!("{label}: {e}")),
        }
    }
    let mut binding = 0usize;
    let mut skipped = 0usize;
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for (label, points) in &sets {
        for p in points {
            if !p.binding {
                skipped += 1;
                continue;
            }
            binding += 1;
            let mf = p.h_bar_sq.0 - 2.0 * p.h_bar_sq.1;
            let cons = p.max_agent_dev.0 - 2.0 * p.max_agent_dev.1;
            worst = worst.max(p.h_bar_sq.0 / p.rhs_meanfield).max(p.max_agent_dev.0 / p.rhs_consensus);
            if mf > p.rhs_meanfield || cons > p.rhs_consensus {
                failures.push(format!("{label} T={}", p.horizon));
            }
        }
    }
    Verdict::new(
        binding > 0 && failures.is_empty(),
        format!(
            "{binding} binding (config, T) pairs across {} configs, {} exceed the bound by more than 2 SE{}; largest mean/bound {worst:.2e}; {skipped} non-binding pairs not applicable",
            sets.len(),
            failures.len(),
            if failures.is_empty() { String::new() } else { format!(" ({})", failures.join(", ")) }
        ),
    )
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    files.push(dir.join("aggregate.json"));
    files.sort();
    files.into_iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())).collect()
}

pub fn determinism() -> Verdict {
    let tmp = TempDir::new().unwrap();
    let mut compared = 0usize;
    let mut mismatched = Vec::new();
    for (name, horizon) in [("sgd_toy.json", 2_000), ("td0_toy.json", 2_000)] {
        let mut cfg: Value = serde_json::from_str(&fs::read_to_string(bundled(name)).unwrap()).unwrap();
        cfg["schedule"]["horizon"] = json!(horizon);
        cfg["output"]["recording"] = json!({ "kind": "every-step" });
        let path = tmp.path().join(name);
        fs::write(&path, cfg.to_string()).unwrap();
        let mut outputs = Vec::new();
        for (k, jobs) in [1usize, 4, 1, 8].into_iter().enumerate() {
            let out = tmp.path().join(format!("{name}-{k}"));
            let args = RunArgs { out: Some(out.clone()), jobs, ..Default::default() };
            match cmd_run(&path, &args) {
                Ok(o) if o.code == 0 => outputs.push(snapshot(&out)),
                Ok(o) => return Verdict::new(false, format!("{name}: run exited with {}", o.code)),
                Err(e) => return Verdict::new(false, format!("{name}: {}", e.message())),
            }
        }
        for other in &outputs[1..] {
            compared += other.len();
            if other != &outputs[0] {
                mismatched.push(name);
            }
        }
    }
    Verdict::new(
        mismatched.is_empty(),
        format!(
            "repeated runs of sgd_toy and td0_toy with jobs 1, 4, 1, 8: {compared} files compared byte for byte, {} mismatching configs",
            mismatched.len()
        ),
    )
}
