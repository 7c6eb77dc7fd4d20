//! Equilibrium and diagnostics checked against direct, unoptimized formulas.

use std::f64::consts::PI;

use approx::assert_relative_eq;
use bdg_core::diagnostics::{energy_condition, entropy, free_energy};
use bdg_core::dynamics::{evolve, StepperConfig, SystemKind};
use bdg_core::equilibrium::{normal_state, solve_critical_temperature, solve_gap, standard_setup};
use bdg_core::model::{GridSpec, PhysicalParams, Semiclassical};

fn grid(n: usize, m: usize, exponent: u32) -> GridSpec {
    GridSpec::new(n, m, Semiclassical::from_exponent(exponent).unwrap()).unwrap()
}

/// `eps(k) = (h k / N)^2 - mu` for `k` in `[-K/2, K/2)`.
fn energies(n: usize, m: usize, h: f64, mu: f64) -> Vec<f64> {
    let k_modes = (m as f64 * n as f64 / h).round() as i64;
    (-k_modes / 2..k_modes / 2).map(|k| (h * k as f64 / n as f64).powi(2) - mu).collect()
}

/// `(h/N) sum tanh(E/2T)/E - 2 pi / a`, summed naively.
fn gap_residual(eps: &[f64], step: f64, a: f64, t: f64, delta: f64) -> f64 {
    let s: f64 = eps
        .iter()
        .map(|e| {
            let en = (e * e + delta * delta).sqrt();
            if en == 0.0 { 1.0 / (2.0 * t) } else { (en / (2.0 * t)).tanh() / en }
        })
        .sum();
    step * s - 2.0 * PI / a
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn critical_temperature_matches_direct_bisection() {
    for (a, mu, n, m, e) in [(1.0, 1.0, 8, 256, 2), (1.0, 1.0, 4, 64, 3), (2.0, 0.5, 8, 32, 2)] {
        let g = grid(n, m, e);
        let h = g.h().value();
        let eps = energies(n, m, h, mu);
        let expected = bisect(|t| gap_residual(&eps, h / n as f64, a, t, 0.0), 1e-4, 10.0);
        let tc = solve_critical_temperature(&PhysicalParams::new(a, mu).unwrap(), &g).unwrap();
        assert_relative_eq!(tc.value, expected, max_relative = 1e-8);
    }
}

#[test]
fn gap_matches_direct_bisection() {
    let params = PhysicalParams::new(1.0, 1.0).unwrap();
    for e in [2, 3] {
        let g = grid(8, 64, e);
        let h = g.h().value();
        let eps = energies(8, 64, h, 1.0);
        let t = solve_critical_temperature(&params, &g).unwrap().value - h * h;
        let expected = bisect(|d| gap_residual(&eps, h / 8.0, 1.0, t, d), 0.0, 5.0);
        let gap = solve_gap(t, &params, &g).unwrap();
        assert_relative_eq!(gap.delta, expected, max_relative = 1e-7);
    }
}

#[test]
fn normal_state_free_energy_is_grand_potential() {
    let params = PhysicalParams::new(1.0, 1.0).unwrap();
    let g = grid(4, 16, 2);
    for t in [0.05, 0.2, 1.0] {
        let state = normal_state(t, &params, &g).unwrap();
        let expected: f64 = energies(4, 16, 0.25, 1.0).iter().map(|e| -t * (-e / t).exp().ln_1p()).sum();
        assert_relative_eq!(free_energy(&state, &params, &g, t), expected, max_relative = 1e-12);
    }
}

#[test]
fn normal_state_minimizes_free_energy_above_tc() {
    let params = PhysicalParams::new(1.0, 1.0).unwrap();
    for e in [2, 3] {
        let eq = standard_setup(&params, &grid(8, 64, e)).unwrap();
        assert!(energy_condition(&eq).unwrap() > 0.0);
    }
}

#[test]
fn entropy_is_conserved_along_nonlinear_trajectories() {
    let params = PhysicalParams::new(1.0, 1.0).unwrap();
    let eq = standard_setup(&params, &grid(4, 32, 2)).unwrap();
    let s0 = entropy(&eq.initial_state());
    let config = StepperConfig::with_samples(0.1 / eq.grid.k_modes() as f64, 2.0, 20).unwrap();
    for kind in [SystemKind::FullCoupled, SystemKind::ReducedAlpha] {
        let mut worst: f64 = 0.0;
        evolve(&eq, kind, &config, |s| worst = worst.max(((entropy(s) - s0) / s0).abs())).unwrap();
        assert!(worst <= 1e-8, "{kind}: relative entropy drift {worst:e}");
    }
}
