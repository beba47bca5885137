//! Mean fields of the two problem families and the TD(0) fixed point.

use dsa_core::problems::{
    bellman_solution, estimate_bias_constants, make_ergodic_sgd_problem, make_td0_problem, sgd_toy, MdpSpec,
    ProblemOracle, SampleLayout, ThetaSampling,
};
use dsa_core::rng::stream_rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::Verdict;

/// Largest `|MC − h̄|/SE` over coordinates at 10 random `θ`, and how many
/// coordinates exceed 3, with `samples` i.i.d. draws of the joint stationary
/// state per `θ`.
fn monte_carlo_z(oracle: &dyn ProblemOracle, samples: usize, seed: u64) -> (f64, usize, usize) {
    let (n, d) = (oracle.agents(), oracle.dim());
    let layout = oracle.layout();
    let mut rng = stream_rng(seed, 0);
    let mut worst = 0.0f64;
    let mut over = 0usize;
    let mut buf = vec![0.0; d];
    for _ in 0..10 {
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let exact = oracle.averaged_mean_field(&theta);
        let mut sum = vec![0.0; d];
        let mut sum_sq = vec![0.0; d];
        let mut draw = vec![0.0; d];
        for _ in 0..samples {
            draw.iter_mut().for_each(|v| *v = 0.0);
            let shared = match layout {
                SampleLayout::Shared { model, .. } => Some(model.draw_stationary(&mut rng)),
                SampleLayout::Independent(_) => None,
            };
            for i in 0..n {
                let x = shared.unwrap_or_else(|| layout.model(i).draw_stationary(&mut rng));
                oracle.local_update(i, &theta, x, &mut buf);
                for k in 0..d {
                    draw[k] += buf[k] / n as f64;
                }
            }
            for k in 0..d {
                sum[k] += draw[k];
                sum_sq[k] += draw[k] * draw[k];
            }
        }
        let m = samples as f64;
        for k in 0..d {
            let mean = sum[k] / m;
            let var = (sum_sq[k] / m - mean * mean).max(0.0) * m / (m - 1.0);
            let se = (var / m).sqrt();
            let gap = (mean - exact[k]).abs();
            let z = if se > 0.0 { gap / se } else if gap <= 1e-12 { 0.0 } else { f64::INFINITY };
            worst = worst.max(z);
            over += usize::from(z > 3.0);
        }
    }
    (worst, over, 10 * d)
}

pub fn mean_field_consistency() -> Verdict {
    const SAMPLES: usize = 1_000_000;
    let (data, chains) = sgd_toy(3, 4, 2, 1);
    let sgd = make_ergodic_sgd_problem(&data, chains).unwrap();
    let mdp = MdpSpec::random(5, 3, 4, 0.9, 3);
    let td = make_td0_problem(&mdp, 4).unwrap();
    let z_sgd = monte_carlo_z(&sgd, SAMPLES, 1);
    let z_td = monte_carlo_z(&td, SAMPLES, 2);

    let mut rng = stream_rng(43, 0);
    let mut worst_fd = 0.0f64;
    for _ in 0..10 {
        let theta: Vec<f64> = (0..2).map(|_| rng.random_range(-5.0..5.0)).collect();
        for i in 0..3 {
            let h_i = sgd.mean_field(i, &theta);
            let fd: Vec<f64> = (0..2)
                .map(|k| {
                    let step = 1e-4 * (1.0 + theta[k].abs());
                    let (mut up, mut down) = (theta.clone(), theta.clone());
                    up[k] += step;
                    down[k] -= step;
                    (sgd.local_potential(i, &up) - sgd.local_potential(i, &down)) / (2.0 * step)
                })
                .collect();
            let num = h_i.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let den = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            worst_fd = worst_fd.max(num / den);
        }
    }
    Verdict::new(
        z_sgd.0 <= 3.0 && z_td.0 <= 3.0 && worst_fd <= 1e-5,
        format!(
            "10^6 stationary samples at 10 points: max |MC - h_bar|/SE {:.2} with {}/{} coordinates beyond 3 (SGD), {:.2} with {}/{} (TD); h_i vs finite differences rel. err {worst_fd:.1e}",
            z_sgd.0, z_sgd.1, z_sgd.2, z_td.0, z_td.1, z_td.2
        ),
    )
}

pub fn td0_correctness() -> Verdict {
    let mdp = MdpSpec::random(5, 3, 4, 0.9, 3);
    let td = make_td0_problem(&mdp, 4).unwrap();
    let star = bellman_solution(&mdp).unwrap();
    let residual = td.averaged_mean_field(&star).iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut rng = stream_rng(44, 0);
    let s = 6;
    let rows: Vec<Vec<f64>> = (0..s)
        .map(|_| {
            let w: Vec<f64> = (0..s).map(|_| 0.05 + rng.random::<f64>()).collect();
            let t: f64 = w.iter().sum();
            w.into_iter().map(|v| v / t).collect()
        })
        .collect();
    let rewards: Vec<Vec<f64>> = (0..3).map(|_| (0..s).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let discount = 0.85;
    let tabular = MdpSpec::tabular(rows.clone(), rewards.clone(), discount);
    let theta = bellman_solution(&tabular).unwrap();
    let p = DMatrix::from_fn(s, s, |i, j| rows[i][j]);
    let r = DVector::from_fn(s, |x, _| rewards.iter().map(|row| row[x]).sum::<f64>() / 3.0);
    let v = (DMatrix::identity(s, s) - p * discount).lu().solve(&r).unwrap();
    let tabular_gap = (0..s).map(|x| (theta[x] - v[x]).abs() / (1.0 + v[x].abs())).fold(0.0, f64::max);

    let bias = estimate_bias_constants(&td, &ThetaSampling::default());
    let floor = (1.0 - mdp.discount) / 4.0;
    Verdict::new(
        residual <= 1e-10 && tabular_gap <= 1e-12 && bias.holds() && bias.c0 >= floor,
        format!(
            "|h_bar(theta*)| {residual:.1e}; tabular vs (I - discount P)^-1 R gap {tabular_gap:.1e}; sampled c0 {:.4} >= {floor:.4} over {} points",
            bias.c0, bias.evaluated
        ),
    )
}
