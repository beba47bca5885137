//! Criteria on single trajectories: algebraic identities of the recursion
//! and the pathwise consensus-error bound.

use dsa_core::analysis::lemma1_bound;
use dsa_core::engine::{make_step_schedule, run_dsa, CapMode, Initial, Recording, RunOptions, StepRule};
use dsa_core::markov::MarkovModel;
use dsa_core::problems::{
    estimate_noise_constants, make_ergodic_sgd_problem, make_td0_problem, sgd_toy, LinearProblem, MdpSpec,
    ProblemOracle, SampleLayout, ThetaSampling,
};
use dsa_core::rng::stream_rng;
use dsa_core::topology::{build_metropolis_weights, make_tv_schedule, EdgePartitionPolicy, Graph, MixingSchedule};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::Verdict;

/// Orthonormal basis of `𝟙⊥` from a QR factorization of `[𝟙 | e₁ … eₙ₋₁]`.
fn orthonormal_complement(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, 0)] = 1.0;
        if i + 1 < n {
            m[(i, i + 1)] = 1.0;
        }
    }
    m.qr().q().columns(1, n - 1).into_owned()
}

fn kron_identity(a: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    a.kronecker(&DMatrix::identity(d, d))
}

/// Dense replay of the recursion with the engine's documented sampling:
/// stream `k + 1` of the run seed drives chain `k` from a stationary draw.
/// Returns `θ⁽⁰⁾, …, θ⁽ᵀ⁺¹⁾` and the stacked updates `H(θ⁽ᵗ⁾; Xᵗ⁺¹)`.
fn replay(
    oracle: &dyn ProblemOracle,
    mixing: &MixingSchedule,
    gammas: &[f64],
    seed: u64,
    theta0: &[f64],
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let (n, d) = (oracle.agents(), oracle.dim());
    let (models, shared): (Vec<&MarkovModel>, bool) = match oracle.layout() {
        SampleLayout::Shared { model, .. } => (vec![model], true),
        SampleLayout::Independent(ms) => (ms.iter().collect(), false),
    };
    let mut rngs: Vec<_> = (0..models.len()).map(|k| stream_rng(seed, k as u64 + 1)).collect();
    let mut states: Vec<usize> = models.iter().zip(rngs.iter_mut()).map(|(m, r)| m.draw_stationary(r)).collect();
    let mut theta = DVector::from_column_slice(theta0);
    let mut thetas = vec![theta.clone()];
    let mut updates = Vec::new();
    let mut buf = vec![0.0; d];
    for t in 0..gammas.len() - 1 {
        for (k, m) in models.iter().enumerate() {
            states[k] = m.step(states[k], &mut rngs[k]);
        }
        let mut h = DVector::zeros(n * d);
        for i in 0..n {
            oracle.local_update(i, theta.rows(i * d, d).as_slice(), states[if shared { 0 } else { i }], &mut buf);
            h.rows_mut(i * d, d).copy_from_slice(&buf);
        }
        theta = kron_identity(mixing.at(t).entries(), d) * &theta - gammas[t + 1] * &h;
        thetas.push(theta.clone());
        updates.push(h);
    }
    (thetas, updates)
}

fn random_config(k: u64) -> (LinearProblem, MixingSchedule, String) {
    let mut rng = stream_rng(2024, k);
    let n = rng.random_range(2..=10usize);
    let d = rng.random_range(1..=5usize);
    let (problem, kind) = if k % 2 == 0 {
        let states = rng.random_range(2..=6);
        let (data, chains) = sgd_toy(n, states, d, k);
        (make_ergodic_sgd_problem(&data, chains).unwrap(), "sgd")
    } else {
        let states = d + rng.random_range(1..=4);
        let discount = rng.random_range(0.5..0.95);
        (make_td0_problem(&MdpSpec::random(states, d, n, discount, k), n).unwrap(), "td0")
    };
    let (mixing, topo) = if k % 3 == 2 && n >= 3 {
        let block = rng.random_range(2..=3);
        (make_tv_schedule(&Graph::ring(n), block, &EdgePartitionPolicy::RoundRobin, k).unwrap(), format!("ring B={block}"))
    } else {
        let g = Graph::random_connected(n, rng.random_range(0.0..0.5), k);
        (MixingSchedule::fixed(build_metropolis_weights(&g).unwrap()), "static".to_string())
    };
    (problem, mixing, format!("{kind} n={n} d={d} {topo}"))
}

/// Largest deviation of the engine's rows and of the dense replay from the
/// reconstruction and the two recursions, over every step of 100 configs.
pub fn recursion_exactness() -> Verdict {
    const HORIZON: usize = 100;
    const TOL: f64 = 1e-10;
    let mut worst_engine = 0.0f64;
    let mut worst_replay = 0.0f64;
    let mut worst_where = String::new();
    for k in 0..100u64 {
        let (problem, mixing, label) = random_config(k);
        let (n, d) = (problem.agents(), problem.dim());
        let mut rng = stream_rng(77, k);
        let theta0: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let steps = make_step_schedule(StepRule::Decaying { a0: 0.05, a1: 1.0 }, HORIZON, None, CapMode::Off).unwrap();
        let opts = RunOptions {
            seed: k,
            initial: Initial::Stacked(theta0.clone()),
            recording: Recording::EveryStep,
            diagnostics: true,
        };
        let record = run_dsa(&problem, &mixing, &steps, &opts).unwrap();
        let (thetas, updates) = replay(&problem, &mixing, steps.gammas(), k, &theta0);

        let u = orthonormal_complement(n);
        let mean_op = kron_identity(&DMatrix::from_element(1, n, 1.0 / n as f64), d);
        let err_op = kron_identity(&u.transpose(), d);
        let lift = kron_identity(&DMatrix::from_element(n, 1, 1.0), d);
        let lift_e = kron_identity(&u, d);
        for t in 0..=HORIZON {
            let diag = record.rows[t].diag.expect("diagnostics requested");
            let engine = diag.res_12.max(diag.res_11a).max(diag.res_11b);

            let (theta, next, h) = (&thetas[t], &thetas[t + 1], &updates[t]);
            let gamma = steps.gamma(t + 1);
            let c = &mean_op * theta;
            let e = &err_op * theta;
            let rebuild = (&lift * &c + &lift_e * &e - theta).amax();
            let consensual = (&mean_op * next - (&c - gamma * (&mean_op * h))).amax();
            let a_tilde = u.transpose() * mixing.at(t).entries() * &u;
            let error = (&err_op * next - (kron_identity(&a_tilde, d) * &e - gamma * (&err_op * h))).amax();
            let cons_gap = (record.rows[t].cons_err - e.norm()).abs() / (1.0 + e.norm());
            let independent = rebuild.max(consensual).max(error).max(cons_gap);

            if engine > worst_engine || independent > worst_replay {
                worst_where = format!("{label}, t={t}");
            }
            worst_engine = worst_engine.max(engine);
            worst_replay = worst_replay.max(independent);
        }
        let last = thetas.last().unwrap();
        let gap = last.iter().zip(&record.final_theta).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst_replay = worst_replay.max(gap / (1.0 + last.amax()));
    }
    Verdict::new(
        worst_engine <= TOL && worst_replay <= TOL,
        format!(
            "100 configs, T=100: engine residual max {worst_engine:.2e}, dense replay max {worst_replay:.2e} (tol {TOL:.0e}; worst at {worst_where})"
        ),
    )
}

fn brute_force(gammas: &[f64], rho_bar: f64, sigma_o: f64, h_norms: &[f64], t: usize) -> f64 {
    let q = 1.0 - rho_bar / 2.0;
    (0..t).map(|s| sigma_o * gammas[s] * q.powi((t - 1 - s) as i32) * (1.0 + h_norms[s])).sum()
}

/// 10 networks × 10 seeds with steps at the ceiling `ρ̄/(2σₒ)` and agents
/// starting together.
pub fn pathwise_convolution_bound() -> Verdict {
    const HORIZON: usize = 500;
    let mut violations = 0usize;
    let mut worst_ratio = 0.0f64;
    let mut worst_gap = 0.0f64;
    let mut non_binding = 0usize;
    let mut trajectories = 0usize;
    for net in 0..10u64 {
        let n = 3 + (net as usize % 6);
        let (data, chains) = sgd_toy(n, 4, 2, 100 + net);
        let problem = make_ergodic_sgd_problem(&data, chains).unwrap();
        let graph = Graph::random_connected(n, 0.3, net);
        let mixing = MixingSchedule::fixed(build_metropolis_weights(&graph).unwrap());
        let rho_bar = mixing.rho_bar();
        let sigma_o = estimate_noise_constants(&problem, &ThetaSampling::default()).sigma_o;
        let a0 = rho_bar / (2.0 * sigma_o);
        let steps = make_step_schedule(StepRule::Decaying { a0, a1: 1.0 }, HORIZON, None, CapMode::Off).unwrap();
        for seed in 0..10u64 {
            let opts = RunOptions {
                seed: 1000 * net + seed,
                initial: Initial::Uniform(vec![2.0, -1.0]),
                recording: Recording::EveryStep,
                diagnostics: false,
            };
            let rec = run_dsa(&problem, &mixing, &steps, &opts).unwrap();
            let gammas: Vec<f64> = rec.rows.iter().map(|r| r.gamma).collect();
            let h_norms: Vec<f64> = rec.rows.iter().map(|r| r.h_bar_sq.sqrt()).collect();
            let bound = lemma1_bound(&gammas, rho_bar, sigma_o, &h_norms);
            trajectories += 1;
            if !bound.binding {
                non_binding += 1;
            }
            for (t, row) in rec.rows.iter().enumerate() {
                if row.cons_err > bound.bound[t] * (1.0 + 1e-12) {
                    violations += 1;
                }
                if bound.bound[t] > 0.0 {
                    worst_ratio = worst_ratio.max(row.cons_err / bound.bound[t]);
                }
                let direct = brute_force(&gammas, rho_bar, sigma_o, &h_norms, t);
                worst_gap = worst_gap.max((direct - bound.bound[t]).abs() / direct.abs().max(1.0));
            }
        }
    }
    Verdict::new(
        violations == 0 && non_binding == 0 && worst_gap <= 1e-12,
        format!(
            "{trajectories} trajectories, T={HORIZON}: {violations} violations, largest error/bound {worst_ratio:.3}, running vs brute-force gap {worst_gap:.2e}, {non_binding} above the step ceiling"
        ),
    )
}
