//! The consensus-error convolution bound and the squared-convolution
//! summation inequality.

use serde::Serialize;

/// Running evaluation of
/// `b(t+1) = σₒ Σ_{s≤t} γ_{s+1}(1 − ρ̄/2)^{t−s}(1 + ‖h̄⁽ˢ⁾‖)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusBound {
    /// `b(0) = 0, b(1), …, b(len)`.
    pub bound: Vec<f64>,
    /// Every step satisfies `γ ≤ ρ̄/(2σₒ)`.
    pub binding: bool,
}

/// `gammas[s] = γ_{s+1}` and `h_bar_norms[s] = ‖h̄(θ̄_c⁽ˢ⁾)‖`.
pub fn lemma1_bound(gammas: &[f64], rho_bar: f64, sigma_o: f64, h_bar_norms: &[f64]) -> ConsensusBound {
    let len = gammas.len().min(h_bar_norms.len());
    let q = 1.0 - rho_bar / 2.0;
    let mut bound = Vec::with_capacity(len + 1);
    bound.push(0.0);
    let mut b = 0.0;
    for s in 0..len {
        b = q * b + sigma_o * gammas[s] * (1.0 + h_bar_norms[s]);
        bound.push(b);
    }
    let binding = sigma_o == 0.0 || gammas[..len].iter().all(|&g| g <= rho_bar / (2.0 * sigma_o));
    ConsensusBound { bound, binding }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvolutionCheck {
    /// `Σ_{t≤T} (Σ_{s≤t} a_s(1 − ρ)^{t−s})²`.
    pub lhs: f64,
    /// `(2/ρ) Σ_{t≤T} a_t²`.
    pub rhs: f64,
    pub holds: bool,
    /// `Σ a_t²/ρ²`, which bounds `lhs` by Young's convolution inequality
    /// since `Σ_j (1 − ρ)^j ≤ 1/ρ`.
    pub corrected_rhs: f64,
    pub corrected_holds: bool,
}

/// Evaluates the inequality on `a[0..=T]`.
///
/// # Panics
/// If `a` has fewer than `T + 1` entries.
pub fn lemma5_check(a: &[f64], rho: f64, t_max: usize) -> ConvolutionCheck {
    let a = &a[..=t_max];
    let q = 1.0 - rho;
    let mut inner = 0.0;
    let mut lhs = 0.0;
    for &x in a {
        inner = q * inner + x;
        lhs += inner * inner;
    }
    let sq: f64 = a.iter().map(|x| x * x).sum();
    let rhs = 2.0 / rho * sq;
    let corrected_rhs = sq / (rho * rho);
    ConvolutionCheck {
        lhs,
        rhs,
        holds: lhs <= rhs,
        corrected_rhs,
        corrected_holds: lhs <= corrected_rhs * (1.0 + 1e-12),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn convolution(gammas: &[f64], rho_bar: f64, sigma_o: f64, h: &[f64]) -> Vec<f64> {
        let q = 1.0 - rho_bar / 2.0;
        let mut out = vec![0.0];
        for t in 0..gammas.len() {
            let mut acc = 0.0;
            for s in 0..=t {
                acc += gammas[s] * q.powi((t - s) as i32) * (1.0 + h[s]);
            }
            out.push(sigma_o * acc);
        }
        out
    }

    #[test]
    fn lemma1_geometric_limit() {
        let g = vec![0.01; 4000];
        let h = vec![0.0; 4000];
        let b = lemma1_bound(&g, 0.3, 2.0, &h);
        assert_abs_diff_eq!(*b.bound.last().unwrap(), 2.0 * 2.0 * 0.01 / 0.3, epsilon = 1e-12);
        assert!(b.binding);
    }

    #[test]
    fn lemma1_zero_sigma() {
        let b = lemma1_bound(&[0.5, 0.5], 0.1, 0.0, &[3.0, 4.0]);
        assert!(b.bound.iter().all(|&x| x == 0.0));
        assert!(b.binding);
    }

    #[test]
    fn lemma1_flags_large_steps() {
        assert!(!lemma1_bound(&[0.5], 0.2, 1.0, &[0.0]).binding);
    }

    proptest! {
        #[test]
        fn lemma1_matches_direct_sum(
            data in prop::collection::vec((0.0f64..0.2, 0.0f64..5.0), 1..50),
            rho in 0.01f64..1.0,
            sigma in 0.0f64..3.0,
        ) {
            let (g, h): (Vec<f64>, Vec<f64>) = data.into_iter().unzip();
            let fast = lemma1_bound(&g, rho, sigma, &h).bound;
            let slow = convolution(&g, rho, sigma, &h);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn corrected_bound_always_holds(
            a in prop::collection::vec(0.0f64..1.0, 1..100),
            rho in 0.01f64..0.99,
        ) {
            let t = a.len() - 1;
            prop_assert!(lemma5_check(&a, rho, t).corrected_holds);
        }
    }

    #[test]
    fn lemma5_small_case() {
        let c = lemma5_check(&[1.0, 1.0, 1.0], 0.5, 2);
        assert_abs_diff_eq!(c.lhs, 6.3125, epsilon = 1e-15);
        assert_abs_diff_eq!(c.rhs, 12.0, epsilon = 1e-15);
        assert!(c.holds);
        let z = lemma5_check(&[0.0; 5], 0.3, 4);
        assert_eq!((z.lhs, z.rhs, z.holds), (0.0, 0.0, true));
    }

    #[test]
    fn lemma5_stated_constant_fails_for_slow_decay() {
        let a = vec![1.0; 101];
        let c = lemma5_check(&a, 0.1, 100);
        assert!(!c.holds);
        assert!(c.corrected_holds);
    }
}
