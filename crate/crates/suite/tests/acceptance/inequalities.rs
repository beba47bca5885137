//! The squared-convolution summation inequality and the Poisson solver.

use dsa_core::analysis::lemma5_check;
use dsa_core::markov::{solve_poisson, MarkovModel};
use dsa_core::rng::stream_rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::Verdict;

/// Independent evaluation of `Σ_t (Σ_{s≤t} a_s (1 − ρ)^{t−s})²`.
fn convolution_lhs(a: &[f64], rho: f64) -> f64 {
    (0..a.len())
        .map(|t| {
            let inner: f64 = (0..=t).map(|s| a[s] * (1.0 - rho).powi((t - s) as i32)).sum();
            inner * inner
        })
        .sum()
}

/// Sequences from several families: uniform, decaying, constant and spiky.
fn random_sequence(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    match rng.random_range(0..4) {
        0 => (0..len).map(|_| rng.random::<f64>()).collect(),
        1 => {
            let c = rng.random_range(0.1..2.0);
            (0..len).map(|t| c / ((t + 1) as f64).sqrt()).collect()
        }
        2 => vec![rng.random_range(0.1..2.0); len],
        _ => (0..len).map(|_| if rng.random::<f64>() < 0.2 { rng.random_range(1.0..5.0) } else { 0.0 }).collect(),
    }
}

pub fn summation_inequality() -> Verdict {
    let mut rng = stream_rng(5, 0);
    let mut stated_failures = 0usize;
    let mut corrected_failures = 0usize;
    let mut worst_ratio = 0.0f64;
    let mut oracle_gap = 0.0f64;
    let instances = 1000;
    for _ in 0..instances {
        let t_max = rng.random_range(0..=60usize);
        let rho = rng.random_range(0.01..0.99);
        let a = random_sequence(t_max + 1, &mut rng);
        let check = lemma5_check(&a, rho, t_max);
        let lhs = convolution_lhs(&a, rho);
        let sq: f64 = a.iter().map(|x| x * x).sum();
        oracle_gap = oracle_gap.max((lhs - check.lhs).abs() / lhs.max(1e-300));
        if lhs > 2.0 / rho * sq * (1.0 + 1e-12) {
            stated_failures += 1;
            worst_ratio = worst_ratio.max(lhs / (2.0 / rho * sq));
        }
        if lhs > sq / (rho * rho) * (1.0 + 1e-12) {
            corrected_failures += 1;
        }
    }
    let anchor = lemma5_check(&[1.0, 1.0, 1.0], 0.5, 2);
    let anchor_ok = anchor.lhs == 6.3125 && anchor.rhs == 12.0;
    Verdict::new(
        stated_failures == 0 && anchor_ok && oracle_gap <= 1e-12,
        format!(
            "lhs <= (2/rho) sum a^2 fails on {stated_failures} of {instances} instances (worst lhs/rhs {worst_ratio:.3}); \
             lhs <= sum a^2 / rho^2 fails on {corrected_failures}; a=1, rho=0.5, T=2 gives ({}, {}); oracle gap {oracle_gap:.1e}",
            anchor.lhs, anchor.rhs
        ),
    )
}

fn random_kernel(s: usize, sparse: bool, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..s)
        .map(|x| {
            let mut w: Vec<f64> = (0..s)
                .map(|y| {
                    let keep = !sparse || y == x || y == (x + 1) % s || rng.random::<f64>() < 0.15;
                    if keep {
                        0.01 + rng.random::<f64>()
                    } else {
                        0.0
                    }
                })
                .collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            w
        })
        .collect()
}

pub fn poisson_solver() -> Verdict {
    let mut rng = stream_rng(9, 0);
    let mut worst_defect = 0.0f64;
    let mut worst_center = 0.0f64;
    for k in 0..100 {
        let s = rng.random_range(2..=20usize);
        let rows = random_kernel(s, k % 2 == 1, &mut rng);
        let model = MarkovModel::from_rows(&rows).unwrap();
        let cols = rng.random_range(1..=4usize);
        let h = DMatrix::from_fn(s, cols, |_, _| rng.random_range(-3.0..3.0));
        let sol = solve_poisson(&model, &h).unwrap();
        let mu = DVector::from_column_slice(model.stationary());
        let mean = h.transpose() * &mu;
        let centered = DMatrix::from_fn(s, cols, |x, j| h[(x, j)] - mean[j]);
        let defect = (&sol.h_hat - model.transition() * &sol.h_hat - centered).amax();
        worst_defect = worst_defect.max(defect).max(sol.residual);
        worst_center = worst_center.max((sol.h_hat.transpose() * &mu).amax());
    }

    let single = solve_poisson(&MarkovModel::trivial(), &DMatrix::from_row_slice(1, 2, &[3.5, -1.0])).unwrap();
    let single_ok = single.h_hat.iter().all(|v| *v == 0.0);

    let mu = [0.05, 0.15, 0.3, 0.5];
    let iid = MarkovModel::iid(&mu).unwrap();
    let h = DMatrix::from_fn(4, 3, |x, j| (x as f64 + 1.0) * (j as f64 - 1.0) + 0.25);
    let sol = solve_poisson(&iid, &h).unwrap();
    let iid_gap = (0..3)
        .flat_map(|j| (0..4).map(move |x| (x, j)))
        .map(|(x, j)| {
            let m: f64 = (0..4).map(|y| mu[y] * h[(y, j)]).sum();
            (sol.h_hat[(x, j)] - (h[(x, j)] - m)).abs()
        })
        .fold(0.0, f64::max);

    Verdict::new(
        worst_defect <= 1e-10 && worst_center <= 1e-10 && single_ok && iid_gap <= 1e-14,
        format!(
            "100 chains (S <= 20): defect max {worst_defect:.2e}, centering max {worst_center:.2e}; single state zero: {single_ok}; i.i.d. gap {iid_gap:.1e}"
        ),
    )
}
