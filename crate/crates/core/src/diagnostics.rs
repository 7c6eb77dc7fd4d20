//! Observables of a trajectory: order parameter, scaled pair norm, free
//! energy and its relative drift, and the post-processing checks applied to
//! whole time series.

use num_complex::Complex64;

use crate::dynamics::{StepperConfig, SystemKind};
use crate::equilibrium::{normal_state, EquilibriumData};
use crate::error::{BdgError, Result};
use crate::model::{
    dispersion, effective_coupling, inner_product, BdGState, GridSpec, PhysicalParams,
};
use crate::summation::{pairwise_sum_complex, Neumaier};

/// Relative deviation of the normalized order parameters beyond which two
/// runs with different periods are considered to disagree.
pub const INTERFERENCE_THRESHOLD: f64 = 0.05;

/// `psi = (1/h) <alpha*|alpha>`.
pub fn order_parameter(alpha: &[Complex64], alpha_star: &[Complex64], h: f64) -> Result<Complex64> {
    Ok(inner_product(alpha_star, alpha)? / h)
}

/// `(1/h^2) sum_k |alpha(k)|^2`.
pub fn scaled_pair_norm(alpha: &[Complex64], h: f64) -> f64 {
    let acc: Neumaier = alpha.iter().map(|a| a.norm_sqr()).collect();
    acc.value() / (h * h)
}

/// `x ln x`, zero at the endpoints and clamped to `[eps, 1 - eps]` inside.
fn xlogx(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    let x = x.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
    x * x.ln()
}

/// von Neumann entropy `-sum_k tr(Gamma ln Gamma)`.
pub fn entropy(state: &BdGState) -> f64 {
    let acc: Neumaier = state
        .gamma
        .iter()
        .zip(&state.alpha)
        .map(|(g, a)| {
            let r = ((g - 0.5).powi(2) + a.norm_sqr()).sqrt();
            -(xlogx(0.5 + r) + xlogx(0.5 - r))
        })
        .collect();
    acc.value()
}

fn free_energy_with(state: &BdGState, eps: &[f64], coupling: f64, temperature: f64) -> f64 {
    let kinetic: Neumaier = eps.iter().zip(&state.gamma).map(|(e, g)| e * g).collect();
    let pair = pairwise_sum_complex(&state.alpha).norm_sqr();
    kinetic.value() - coupling * pair - temperature * entropy(state)
}

/// Discrete free energy `sum eps gamma - g |sum alpha|^2 - T S`.
///
/// The interaction term is the contact-potential energy with the same
/// coupling `g` as the pair field, which makes this a constant of motion of
/// the nonlinear systems.
pub fn free_energy(
    state: &BdGState,
    params: &PhysicalParams,
    grid: &GridSpec,
    temperature: f64,
) -> f64 {
    free_energy_with(
        state,
        &dispersion(grid, params),
        effective_coupling(params, grid),
        temperature,
    )
}

/// `|(F - F0) / F0|`.
pub fn relative_energy_error(f0: f64, f: f64) -> Result<f64> {
    if f0 == 0.0 {
        return Err(BdgError::ZeroReference);
    }
    Ok(((f - f0) / f0).abs())
}

/// Relative free-energy drift of `state` against the reference value `f0`.
pub fn energy_error(
    f0: f64,
    state: &BdGState,
    params: &PhysicalParams,
    grid: &GridSpec,
    temperature: f64,
) -> Result<f64> {
    relative_energy_error(f0, free_energy(state, params, grid, temperature))
}

/// `(F(Gamma_0) - F(Gamma_N)) / h^4` at the simulation temperature.
pub fn energy_condition(initial: &EquilibriumData) -> Result<f64> {
    let normal = normal_state(initial.t_sim, &initial.params, &initial.grid)?;
    let f0 = free_energy(
        &initial.initial_state(),
        &initial.params,
        &initial.grid,
        initial.t_sim,
    );
    let f_normal = free_energy(&normal, &initial.params, &initial.grid, initial.t_sim);
    Ok((f0 - f_normal) / initial.h().powi(4))
}

/// `max_k |(gamma_k - 1/2)^2 + |alpha_k|^2 - h_aux_k|`: the drift of the
/// per-mode invariant, zero along the exact nonlinear flow.
pub fn invariant_drift(state: &BdGState, h_aux: &[f64]) -> Result<f64> {
    if h_aux.len() != state.len() {
        return Err(BdgError::LengthMismatch { expected: state.len(), found: h_aux.len() });
    }
    Ok(state
        .gamma
        .iter()
        .zip(&state.alpha)
        .zip(h_aux)
        .map(|((g, a), r)| ((g - 0.5).powi(2) + a.norm_sqr() - r).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRow {
    pub t: f64,
    pub norm_scaled: f64,
    pub psi: Complex64,
    pub delta_f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMeta {
    pub kind: SystemKind,
    pub h: f64,
    pub n_period: usize,
    pub m_density: usize,
    pub k_modes: usize,
    pub a: f64,
    pub mu: f64,
    pub tau: f64,
    pub t_end: f64,
    pub t_c: f64,
    pub delta0: f64,
    pub t_sim: f64,
    pub f0: f64,
}

impl Default for SeriesMeta {
    fn default() -> Self {
        Self {
            kind: SystemKind::ReducedAlpha,
            h: f64::NAN,
            n_period: 0,
            m_density: 0,
            k_modes: 0,
            a: f64::NAN,
            mu: f64::NAN,
            tau: f64::NAN,
            t_end: f64::NAN,
            t_c: f64::NAN,
            delta0: f64::NAN,
            t_sim: f64::NAN,
            f0: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub meta: SeriesMeta,
    pub rows: Vec<SeriesRow>,
}

impl TimeSeries {
    pub fn abs_psi(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.rows.iter().map(|r| (r.t, r.psi.norm()))
    }

    pub fn max_delta_f(&self) -> f64 {
        self.rows.iter().map(|r| r.delta_f).fold(0.0, f64::max)
    }

    /// `|psi_t|` linearly interpolated at `t`, if `t` is inside the series.
    pub fn abs_psi_at(&self, t: f64) -> Option<f64> {
        let idx = self.rows.partition_point(|r| r.t < t);
        let hi = self.rows.get(idx)?;
        if hi.t == t || idx == 0 {
            return (hi.t == t).then(|| hi.psi.norm());
        }
        let lo = &self.rows[idx - 1];
        let w = (t - lo.t) / (hi.t - lo.t);
        Some((1.0 - w) * lo.psi.norm() + w * hi.psi.norm())
    }
}

/// Accumulates one row per sampled state.
pub struct SeriesRecorder {
    eps: Vec<f64>,
    coupling: f64,
    alpha_star: Vec<Complex64>,
    temperature: f64,
    h: f64,
    series: TimeSeries,
}

impl SeriesRecorder {
    pub fn new(
        initial: &EquilibriumData,
        kind: SystemKind,
        config: &StepperConfig,
    ) -> Result<Self> {
        let eps = initial.scalars.eps.clone();
        let coupling = effective_coupling(&initial.params, &initial.grid);
        let f0 = free_energy_with(&initial.initial_state(), &eps, coupling, initial.t_sim);
        if f0 == 0.0 {
            return Err(BdgError::ZeroReference);
        }
        let grid = &initial.grid;
        let meta = SeriesMeta {
            kind,
            h: initial.h(),
            n_period: grid.n_period(),
            m_density: grid.m_density(),
            k_modes: grid.k_modes(),
            a: initial.params.coupling,
            mu: initial.params.chemical_potential,
            tau: config.tau,
            t_end: config.t_end,
            t_c: initial.t_c,
            delta0: initial.delta0,
            t_sim: initial.t_sim,
            f0,
        };
        Ok(Self {
            eps,
            coupling,
            alpha_star: initial.alpha_star.clone(),
            temperature: initial.t_sim,
            h: initial.h(),
            series: TimeSeries {
                meta,
                rows: Vec::new(),
            },
        })
    }

    pub fn record(&mut self, state: &BdGState) {
        let f = free_energy_with(state, &self.eps, self.coupling, self.temperature);
        let f0 = self.series.meta.f0;
        let row = SeriesRow {
            t: state.t,
            norm_scaled: scaled_pair_norm(&state.alpha, self.h),
            psi: inner_product(&self.alpha_star, &state.alpha)
                .expect("state length matches the grid")
                / self.h,
            delta_f: ((f - f0) / f0).abs(),
        };
        self.series.rows.push(row);
    }

    pub fn finish(self) -> TimeSeries {
        self.series
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Slope of `ln |psi_t|` against `t`.
    pub rate: f64,
    /// Coefficient of determination of the fit.
    pub r_squared: f64,
}

/// Least-squares fit of `ln |psi_t|` on the rows with `t` in `window`.
pub fn decay_fit(series: &TimeSeries, window: (f64, f64)) -> Result<DecayFit> {
    let (t0, t1) = window;
    let mut pts = Vec::new();
    for r in series.rows.iter().filter(|r| r.t >= t0 && r.t <= t1) {
        let v = r.psi.norm();
        if !(v > 0.0) {
            return Err(BdgError::NonPositiveInWindow { t: r.t, value: v });
        }
        pts.push((r.t, v.ln()));
    }
    if pts.len() < 3 {
        return Err(BdgError::InvalidParameter(format!(
            "fit window [{t0}, {t1}] holds {} samples; need at least 3",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let rate = sxy / sxx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - mean_y - rate * (p.0 - mean_t)).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(DecayFit { rate, r_squared })
}

/// Default fit window `[0.1 t_end, t_end]`, skipping the initial transient.
pub fn default_fit_window(series: &TimeSeries) -> (f64, f64) {
    let t_end = series.rows.last().map_or(0.0, |r| r.t);
    (0.1 * t_end, t_end)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonDecay {
    /// `max_t | |psi_t| - |psi_0| | / h^(1/2)`.
    pub max_dev: f64,
    /// `min_t |psi_t| / |psi_0|`.
    pub min_ratio: f64,
}

pub fn nondecay_check(series: &TimeSeries, h: f64) -> Result<NonDecay> {
    let psi0 = series
        .rows
        .first()
        .ok_or_else(|| BdgError::IncompatibleSeries("empty series".into()))?
        .psi
        .norm();
    if !(psi0 > 0.0) {
        return Err(BdgError::ZeroReference);
    }
    let mut max_dev: f64 = 0.0;
    let mut min_ratio = f64::INFINITY;
    for (_, v) in series.abs_psi() {
        max_dev = max_dev.max((v - psi0).abs());
        min_ratio = min_ratio.min(v / psi0);
    }
    Ok(NonDecay {
        max_dev: max_dev / h.sqrt(),
        min_ratio,
    })
}

/// Earliest time at which the normalized order parameters `|psi_t| / |psi_0|`
/// of two runs differ by more than `threshold`, or infinity if they never do.
pub fn divergence_time(a: &TimeSeries, b: &TimeSeries, threshold: f64) -> Result<f64> {
    let (ra, rb) = match (a.rows.first(), b.rows.first()) {
        (Some(x), Some(y)) => (x.psi.norm(), y.psi.norm()),
        _ => return Err(BdgError::IncompatibleSeries("empty series".into())),
    };
    if !(ra > 0.0 && rb > 0.0) {
        return Err(BdgError::ZeroReference);
    }
    for row in &a.rows {
        if let Some(vb) = b.abs_psi_at(row.t) {
            if (row.psi.norm() / ra - vb / rb).abs() > threshold {
                return Ok(row.t);
            }
        }
    }
    Ok(f64::INFINITY)
}

/// Detects periodicity artifacts: compares a run against one with twice the
/// period and otherwise identical discretization.
pub fn interference_check(small_n: &TimeSeries, big_n: &TimeSeries) -> Result<f64> {
    let (s, b) = (&small_n.meta, &big_n.meta);
    let same_tau_k = (s.tau * s.k_modes as f64 - b.tau * b.k_modes as f64).abs()
        <= 1e-12 * s.tau * s.k_modes as f64;
    let compatible = s.h == b.h
        && s.m_density == b.m_density
        && s.a == b.a
        && s.mu == b.mu
        && s.kind == b.kind
        && same_tau_k
        && b.n_period == 2 * s.n_period;
    if !compatible {
        return Err(BdgError::IncompatibleSeries(format!(
            "(h={}, N={}, M={}, tau*K={}) vs (h={}, N={}, M={}, tau*K={})",
            s.h,
            s.n_period,
            s.m_density,
            s.tau * s.k_modes as f64,
            b.h,
            b.n_period,
            b.m_density,
            b.tau * b.k_modes as f64
        )));
    }
    divergence_time(small_n, big_n, INTERFERENCE_THRESHOLD)
}
