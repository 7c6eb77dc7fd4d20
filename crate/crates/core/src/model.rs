//! Parameters, momentum grid, state representation and the per-mode
//! quantities shared by the equilibrium solvers and the integrators.
//!
//! Modes are stored in physical order: slot `i` holds momentum index
//! `k = i - K/2`, so `k` runs over `-K/2 ..= K/2 - 1`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{BdgError, Result};
use crate::summation::{pairwise_sum_complex, NeumaierComplex};

/// Semiclassical parameter `h = 2^-m`, `m >= 1`.
///
/// Restricting to powers of one half keeps `K = M N / h` an exact integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Semiclassical {
    exponent: u32,
}

impl Semiclassical {
    pub fn from_exponent(exponent: u32) -> Result<Self> {
        if exponent == 0 || exponent > 30 {
            return Err(BdgError::InvalidParameter(format!(
                "h = 2^-{exponent} is outside the admissible range 2^-1 ..= 2^-30"
            )));
        }
        Ok(Self { exponent })
    }

    /// Accepts only exact powers of one half.
    pub fn from_value(h: f64) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(BdgError::InvalidParameter(format!(
                "h = {h} must satisfy 0 < h < 1"
            )));
        }
        let m = (-h.log2()).round();
        if m < 1.0 || m > 30.0 || 2f64.powi(-(m as i32)) != h {
            return Err(BdgError::InvalidParameter(format!(
                "h = {h} is not of the form 1/2^m"
            )));
        }
        Self::from_exponent(m as u32)
    }

    pub fn exponent(self) -> u32 {
        self.exponent
    }

    pub fn value(self) -> f64 {
        2f64.powi(-(self.exponent as i32))
    }

    /// `1/h` as an integer.
    pub fn inverse(self) -> usize {
        1usize << self.exponent
    }
}

/// Coupling `a` of the contact potential `V(x) = -a delta(x)` and chemical
/// potential `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub coupling: f64,
    pub chemical_potential: f64,
}

impl PhysicalParams {
    pub fn new(coupling: f64, chemical_potential: f64) -> Result<Self> {
        if !(coupling > 0.0 && coupling.is_finite()) {
            return Err(BdgError::InvalidParameter(format!(
                "coupling a = {coupling} must be positive (attractive interaction)"
            )));
        }
        if !chemical_potential.is_finite() {
            return Err(BdgError::InvalidParameter(
                "chemical potential must be finite".into(),
            ));
        }
        Ok(Self {
            coupling,
            chemical_potential,
        })
    }
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            coupling: 1.0,
            chemical_potential: 1.0,
        }
    }
}

/// Momentum grid of a system with period `2 pi N / h`, resolved with `M`
/// modes per unit momentum: `K = M N / h` modes with spacing `h / N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    n_period: usize,
    m_density: usize,
    h: Semiclassical,
    k_modes: usize,
}

impl GridSpec {
    pub fn new(n_period: usize, m_density: usize, h: Semiclassical) -> Result<Self> {
        if n_period < 2 {
            return Err(BdgError::InvalidParameter(format!(
                "period multiplier N = {n_period} must exceed 1"
            )));
        }
        if m_density == 0 {
            return Err(BdgError::InvalidParameter("M must be positive".into()));
        }
        let k_modes = m_density
            .checked_mul(n_period)
            .and_then(|v| v.checked_mul(h.inverse()))
            .ok_or_else(|| BdgError::InvalidParameter("K = M N / h overflows".into()))?;
        if !k_modes.is_power_of_two() {
            return Err(BdgError::NotPowerOfTwo(k_modes));
        }
        Ok(Self {
            n_period,
            m_density,
            h,
            k_modes,
        })
    }

    pub fn n_period(&self) -> usize {
        self.n_period
    }

    pub fn m_density(&self) -> usize {
        self.m_density
    }

    pub fn h(&self) -> Semiclassical {
        self.h
    }

    pub fn k_modes(&self) -> usize {
        self.k_modes
    }

    /// Same `M` and `h` with a different period multiplier.
    pub fn with_period(&self, n_period: usize) -> Result<Self> {
        Self::new(n_period, self.m_density, self.h)
    }

    /// Momentum spacing `h / N`; the weight that turns a sum over modes
    /// into a momentum integral.
    pub fn momentum_step(&self) -> f64 {
        self.h.value() / self.n_period as f64
    }

    /// Integer momentum index of storage slot `i`.
    pub fn mode_index(&self, i: usize) -> i64 {
        i as i64 - (self.k_modes / 2) as i64
    }

    /// Storage slot of momentum index `k`, if it is on the grid.
    pub fn slot(&self, k: i64) -> Option<usize> {
        let i = k + (self.k_modes / 2) as i64;
        (0..self.k_modes as i64).contains(&i).then_some(i as usize)
    }

    pub fn momentum(&self, i: usize) -> f64 {
        self.momentum_step() * self.mode_index(i) as f64
    }
}

/// Strength `g` of the mode-independent pair field, so that
/// `(V * alpha)(k) = -g sum_j alpha(j)`.
///
/// The rescaled potential `V(N x / h) = -a (h/N) delta(x)` has Fourier
/// coefficient `-a h / (2 pi N)` on the `2 pi`-periodic macroscopic torus.
pub fn effective_coupling(params: &PhysicalParams, grid: &GridSpec) -> f64 {
    params.coupling * grid.momentum_step() / (2.0 * PI)
}

/// `eps(k) = (h/N)^2 k^2 - mu` in storage order.
pub fn dispersion(grid: &GridSpec, params: &PhysicalParams) -> Vec<f64> {
    let step = grid.momentum_step();
    (0..grid.k_modes())
        .map(|i| {
            let k = grid.mode_index(i) as f64;
            step * step * k * k - params.chemical_potential
        })
        .collect()
}

/// Value of `V * alpha`, identical at every mode for a contact potential.
pub fn contact_convolution(
    alpha: &[Complex64],
    params: &PhysicalParams,
    grid: &GridSpec,
) -> Complex64 {
    -effective_coupling(params, grid) * pairwise_sum_complex(alpha)
}

/// `<f|g> = sum_k conj(f(k)) g(k)` over the retained modes.
pub fn inner_product(f: &[Complex64], g: &[Complex64]) -> Result<Complex64> {
    if f.len() != g.len() {
        return Err(BdgError::LengthMismatch {
            expected: f.len(),
            found: g.len(),
        });
    }
    let acc: NeumaierComplex = f.iter().zip(g).map(|(a, b)| a.conj() * b).collect();
    Ok(acc.value())
}

/// Occupation `gamma(k)` and pair density `alpha(k)` of the 2x2 density
/// matrix at every mode, at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BdGState {
    pub gamma: Vec<f64>,
    pub alpha: Vec<Complex64>,
    pub t: f64,
}

impl BdGState {
    pub fn new(gamma: Vec<f64>, alpha: Vec<Complex64>) -> Result<Self> {
        if gamma.len() != alpha.len() {
            return Err(BdgError::LengthMismatch {
                expected: gamma.len(),
                found: alpha.len(),
            });
        }
        Ok(Self {
            gamma,
            alpha,
            t: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Largest violation of `(gamma - 1/2)^2 + |alpha|^2 <= 1/4` (zero when
    /// every mode has eigenvalues in `[0, 1]`).
    pub fn max_eigenvalue_violation(&self) -> f64 {
        self.gamma
            .iter()
            .zip(&self.alpha)
            .map(|(g, a)| ((g - 0.5).powi(2) + a.norm_sqr() - 0.25).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Eigenvalues `1/2 +- sqrt((gamma - 1/2)^2 + |alpha|^2)` of the mode-`i`
/// density matrix, larger first.
pub fn mode_eigenvalues(state: &BdGState, i: usize) -> (f64, f64) {
    let r = ((state.gamma[i] - 0.5).powi(2) + state.alpha[i].norm_sqr()).sqrt();
    (0.5 + r, 0.5 - r)
}

/// Which root of `(gamma - 1/2)^2 = h_aux - |alpha|^2` a mode follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `gamma > 1/2`: inside the Fermi sea, `eps(k) < 0`.
    Upper,
    /// `gamma <= 1/2`: `eps(k) >= 0`.
    Lower,
}

impl Branch {
    pub fn for_energy(eps: f64) -> Self {
        if eps < 0.0 {
            Branch::Upper
        } else {
            Branch::Lower
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Branch::Upper => 1.0,
            Branch::Lower => -1.0,
        }
    }
}

/// Per-mode spectral data fixed by the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralScalars {
    pub eps: Vec<f64>,
    /// Conserved radicand `(gamma_0 - 1/2)^2 + |alpha_0|^2`.
    pub h_aux: Vec<f64>,
    pub branch: Vec<Branch>,
}

impl SpectralScalars {
    pub fn from_initial(eps: Vec<f64>, gamma0: &[f64], alpha0: &[Complex64]) -> Self {
        let h_aux = gamma0
            .iter()
            .zip(alpha0)
            .map(|(g, a)| (g - 0.5).powi(2) + a.norm_sqr())
            .collect();
        let branch = eps.iter().map(|&e| Branch::for_energy(e)).collect();
        Self { eps, h_aux, branch }
    }
}
