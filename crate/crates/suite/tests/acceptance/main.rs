//! Acceptance criteria. Each criterion prints one PASS/FAIL line with its
//! runtime against its budget; the process fails if any criterion fails.

mod exactness;
mod experiments;
mod inequalities;
mod problems;

use std::process::ExitCode;
use std::time::{Duration, Instant};

/// What a criterion observed and whether that meets its threshold.
pub struct Verdict {
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

type Criterion<'a> = (u32, &'static str, u64, Box<dyn FnOnce() -> Verdict + 'a>);

fn main() -> ExitCode {
    let sgd_static = std::cell::RefCell::new(None);
    let sgd_varying = std::cell::RefCell::new(None);

    let criteria: Vec<Criterion> = vec![
        (1, "decomposition and recursion exactness", 60, Box::new(exactness::recursion_exactness)),
        (2, "pathwise consensus-error convolution bound", 120, Box::new(exactness::pathwise_convolution_bound)),
        (3, "squared-convolution summation inequality", 10, Box::new(inequalities::summation_inequality)),
        (4, "mean-field consistency", 300, Box::new(problems::mean_field_consistency)),
        (5, "rate verification on a static network", 900, Box::new(|| experiments::static_rates(&sgd_static))),
        (
            6,
            "certificate soundness",
            900,
            Box::new(|| experiments::certificate_soundness(&sgd_static, &sgd_varying)),
        ),
        (7, "TD(0) correctness", 60, Box::new(problems::td0_correctness)),
        (8, "time-varying network rates", 900, Box::new(|| experiments::time_varying_rates(&sgd_varying))),
        (9, "Poisson solver", 30, Box::new(inequalities::poisson_solver)),
        (10, "determinism", 300, Box::new(experiments::determinism)),
    ];

    // Criterion 6 reuses the sweeps of criteria 5 and 8, so it runs last.
    let (mut deferred, mut rest): (Vec<_>, Vec<_>) = criteria.into_iter().partition(|c| c.0 == 6);
    rest.append(&mut deferred);

    let mut results = Vec::new();
    for (id, title, budget, run) in rest {
        let start = Instant::now();
        let verdict = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_budget = elapsed <= Duration::from_secs(budget);
        let passed = verdict.passed && in_budget;
        results.push((id, title, budget, elapsed, passed, verdict.detail));
    }
    results.sort_by_key(|r| r.0);

    println!();
    for (id, title, budget, elapsed, passed, detail) in &results {
        println!(
            "criterion {id:>2} {}  {:>7.1}s / {budget}s  {title}: {detail}",
            if *passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.4).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("\nall {} criteria pass", results.len());
        ExitCode::SUCCESS
    } else {
        println!("\n{} of {} criteria fail: {:?}", failed.len(), results.len(), failed);
        ExitCode::FAILURE
    }
}
