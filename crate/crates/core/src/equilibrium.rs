//! Critical temperature, gap and initial data on the discrete momentum grid.
//!
//! The gap equation `2 pi / a = integral tanh(E / 2T) / E dp` is discretized
//! with the momentum spacing `h / N` as quadrature weight, so the solution
//! depends on the momentum cutoff `M / 2` but not on `N` or `h` separately.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{BdgError, Result};
use crate::model::{
    dispersion, BdGState, GridSpec, PhysicalParams, Semiclassical, SpectralScalars,
};
use crate::summation::Neumaier;

/// Bracket for the critical-temperature search.
pub const TEMPERATURE_BRACKET: (f64, f64) = (1e-4, 10.0);
/// Absolute tolerance of both bisection solvers.
pub const BISECTION_TOLERANCE: f64 = 1e-10;

/// `tanh(E / 2T) / E`, with its limit `1 / 2T` at `E = 0`.
fn pair_kernel(energy: f64, temperature: f64) -> f64 {
    if energy == 0.0 {
        1.0 / (2.0 * temperature)
    } else {
        (energy / (2.0 * temperature)).tanh() / energy
    }
}

/// Unweighted `sum_k tanh(E_k / 2T) / E_k` with `E_k = sqrt(eps_k^2 + delta^2)`.
pub fn gap_sum_terms(eps: &[f64], temperature: f64, delta: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(BdgError::InvalidParameter(format!(
            "temperature {temperature} must be positive"
        )));
    }
    if !(delta >= 0.0) {
        return Err(BdgError::InvalidParameter(format!(
            "gap {delta} must be non-negative"
        )));
    }
    let acc: Neumaier = eps
        .iter()
        .map(|&e| pair_kernel((e * e + delta * delta).sqrt(), temperature))
        .collect();
    Ok(acc.value())
}

/// Discretized right-hand side of the gap equation, `S(T, delta)`.
pub fn gap_lhs_sum(
    temperature: f64,
    delta: f64,
    params: &PhysicalParams,
    grid: &GridSpec,
) -> Result<f64> {
    let eps = dispersion(grid, params);
    Ok(grid.momentum_step() * gap_sum_terms(&eps, temperature, delta)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub value: f64,
    /// `f(value)` at the returned point.
    pub residual: f64,
    pub iterations: u32,
}

/// Bisection for a root of `f` on `[lo, hi]`, stopping once the bracket is
/// narrower than `tol`.
pub fn bisect<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<Root>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut lo, mut hi) = (lo, hi);
    let mut f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo == 0.0 {
        return Ok(Root {
            value: lo,
            residual: 0.0,
            iterations: 0,
        });
    }
    if f_hi == 0.0 {
        return Ok(Root {
            value: hi,
            residual: 0.0,
            iterations: 0,
        });
    }
    if f_lo.signum() == f_hi.signum() || !f_lo.is_finite() || !f_hi.is_finite() {
        return Err(BdgError::NoSignChange { lo, hi, f_lo, f_hi });
    }
    let mut iterations = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid)?;
        iterations += 1;
        if f_mid == 0.0 {
            return Ok(Root {
                value: mid,
                residual: 0.0,
                iterations,
            });
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let value = 0.5 * (lo + hi);
    Ok(Root {
        value,
        residual: f(value)?,
        iterations,
    })
}

/// `T_c` from `S(T_c, 0) = 2 pi / a`. `S(., 0)` decreases in `T`, so the
/// root in the bracket is unique.
pub fn solve_critical_temperature(params: &PhysicalParams, grid: &GridSpec) -> Result<Root> {
    let eps = dispersion(grid, params);
    let target = 2.0 * PI / params.coupling;
    let step = grid.momentum_step();
    let (lo, hi) = TEMPERATURE_BRACKET;
    bisect(
        |t| Ok(step * gap_sum_terms(&eps, t, 0.0)? - target),
        lo,
        hi,
        BISECTION_TOLERANCE,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Superconducting,
    /// `T >= T_c`: only `delta = 0` solves the gap equation.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSolution {
    pub delta: f64,
    pub phase: Phase,
    pub residual: f64,
}

/// Gap `delta > 0` with `S(T, delta) = 2 pi / a`.
pub fn solve_gap(
    temperature: f64,
    params: &PhysicalParams,
    grid: &GridSpec,
) -> Result<GapSolution> {
    let eps = dispersion(grid, params);
    let target = 2.0 * PI / params.coupling;
    let step = grid.momentum_step();
    let f = |d: f64| Ok(step * gap_sum_terms(&eps, temperature, d)? - target);

    let at_zero = f(0.0)?;
    if at_zero <= 0.0 {
        return Ok(GapSolution {
            delta: 0.0,
            phase: Phase::Normal,
            residual: at_zero,
        });
    }
    let mut hi = 1.0;
    while f(hi)? > 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(BdgError::NoSignChange {
                lo: 0.0,
                hi,
                f_lo: at_zero,
                f_hi: f(hi)?,
            });
        }
    }
    let root = bisect(f, 0.0, hi, BISECTION_TOLERANCE)?;
    Ok(GapSolution {
        delta: root.value,
        phase: Phase::Superconducting,
        residual: root.residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapRow {
    pub h: f64,
    pub k_modes: usize,
    pub t_c: f64,
    pub delta0: f64,
}

/// `delta_0(h)` at `T = T_c - h^2`, recomputing the grid for every `h`.
pub fn gap_table(
    h_values: &[Semiclassical],
    params: &PhysicalParams,
    n_period: usize,
    m_density: usize,
) -> Result<Vec<GapRow>> {
    h_values
        .iter()
        .map(|&h| {
            let grid = GridSpec::new(n_period, m_density, h)?;
            let t_c = solve_critical_temperature(params, &grid)?.value;
            let hv = h.value();
            let delta0 = solve_gap(t_c - hv * hv, params, &grid)?.delta;
            Ok(GapRow {
                h: hv,
                k_modes: grid.k_modes(),
                t_c,
                delta0,
            })
        })
        .collect()
}

/// `(gamma_0, alpha_0)` of the thermal state of the BdG Hamiltonian with gap
/// `delta0`, together with the per-mode spectral data.
pub fn build_initial_state(
    delta0: f64,
    temperature: f64,
    params: &PhysicalParams,
    grid: &GridSpec,
) -> Result<(BdGState, SpectralScalars)> {
    check_inputs(delta0, temperature)?;
    let eps = dispersion(grid, params);
    let mut gamma = Vec::with_capacity(eps.len());
    let mut alpha = Vec::with_capacity(eps.len());
    for &e in &eps {
        let energy = (e * e + delta0 * delta0).sqrt();
        if energy == 0.0 {
            gamma.push(0.5);
            alpha.push(Complex64::new(0.0, 0.0));
        } else {
            let w = pair_kernel(energy, temperature);
            gamma.push(0.5 - 0.5 * e * w);
            alpha.push(Complex64::new(0.5 * delta0 * w, 0.0));
        }
    }
    let scalars = SpectralScalars::from_initial(eps, &gamma, &alpha);
    Ok((BdGState::new(gamma, alpha)?, scalars))
}

/// Pair density of the translation-invariant equilibrium with gap `delta` at
/// `temperature`; the fixed reference of the order parameter.
pub fn build_reference_pair_state(
    delta: f64,
    temperature: f64,
    params: &PhysicalParams,
    grid: &GridSpec,
) -> Result<Vec<Complex64>> {
    check_inputs(delta, temperature)?;
    Ok(dispersion(grid, params)
        .into_iter()
        .map(|e| {
            let energy = (e * e + delta * delta).sqrt();
            if energy == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.5 * delta * pair_kernel(energy, temperature), 0.0)
            }
        })
        .collect())
}

/// Fermi-Dirac occupation `1 / (1 + exp(x))` without overflow.
fn fermi(x: f64) -> f64 {
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// Normal state: no pairing, Fermi-Dirac occupation.
pub fn normal_state(
    temperature: f64,
    params: &PhysicalParams,
    grid: &GridSpec,
) -> Result<BdGState> {
    check_inputs(0.0, temperature)?;
    let eps = dispersion(grid, params);
    let gamma = eps.iter().map(|&e| fermi(e / temperature)).collect();
    BdGState::new(gamma, vec![Complex64::new(0.0, 0.0); eps.len()])
}

fn check_inputs(delta: f64, temperature: f64) -> Result<()> {
    if !(temperature > 0.0) {
        return Err(BdgError::InvalidParameter(format!(
            "temperature {temperature} must be positive"
        )));
    }
    if !(delta >= 0.0) {
        return Err(BdgError::InvalidParameter(format!(
            "gap {delta} must be non-negative"
        )));
    }
    Ok(())
}

/// Everything a run needs from the equilibrium protocol.
#[derive(Debug, Clone)]
pub struct EquilibriumData {
    pub params: PhysicalParams,
    pub grid: GridSpec,
    pub t_c: f64,
    /// `S(T_c, 0) - 2 pi / a` at the returned `T_c`.
    pub t_c_residual: f64,
    pub delta0: f64,
    /// Simulation temperature `T_c + h^2`.
    pub t_sim: f64,
    pub gamma0: Vec<f64>,
    pub alpha0: Vec<Complex64>,
    pub alpha_star: Vec<Complex64>,
    pub scalars: SpectralScalars,
}

impl EquilibriumData {
    pub fn h(&self) -> f64 {
        self.grid.h().value()
    }

    pub fn initial_state(&self) -> BdGState {
        BdGState {
            gamma: self.gamma0.clone(),
            alpha: self.alpha0.clone(),
            t: 0.0,
        }
    }

    pub fn h_aux(&self) -> &[f64] {
        &self.scalars.h_aux
    }
}

/// Critical temperature, then the gap at `T_c - h^2`, then the thermal state
/// with that gap at `T_c + h^2`. The reference pair state uses the same
/// `(delta_0, T_c + h^2)` as the initial data.
pub fn standard_setup(params: &PhysicalParams, grid: &GridSpec) -> Result<EquilibriumData> {
    let tc = solve_critical_temperature(params, grid)?;
    let h = grid.h().value();
    let below = tc.value - h * h;
    if below <= 0.0 {
        return Err(BdgError::InvalidParameter(format!(
            "T_c - h^2 = {below} is not positive; h is too large for this grid"
        )));
    }
    let gap = solve_gap(below, params, grid)?;
    let t_sim = tc.value + h * h;
    let (state, scalars) = build_initial_state(gap.delta, t_sim, params, grid)?;
    let alpha_star = build_reference_pair_state(gap.delta, t_sim, params, grid)?;
    Ok(EquilibriumData {
        params: *params,
        grid: *grid,
        t_c: tc.value,
        t_c_residual: tc.residual,
        delta0: gap.delta,
        t_sim,
        gamma0: state.gamma,
        alpha0: state.alpha,
        alpha_star,
        scalars,
    })
}

/// Equilibrium data with a prescribed gap and temperature, bypassing the
/// solvers. `t_c` is still computed for reporting.
pub fn setup_with_gap(
    params: &PhysicalParams,
    grid: &GridSpec,
    delta0: f64,
    temperature: f64,
) -> Result<EquilibriumData> {
    let tc = solve_critical_temperature(params, grid)?;
    let (state, scalars) = build_initial_state(delta0, temperature, params, grid)?;
    let alpha_star = build_reference_pair_state(delta0, temperature, params, grid)?;
    Ok(EquilibriumData {
        params: *params,
        grid: *grid,
        t_c: tc.value,
        t_c_residual: tc.residual,
        delta0,
        t_sim: temperature,
        gamma0: state.gamma,
        alpha0: state.alpha,
        alpha_star,
        scalars,
    })
}
