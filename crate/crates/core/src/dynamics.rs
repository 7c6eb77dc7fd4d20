//! Time evolution of the pair density.
//!
//! Three systems share the kinetic term `i d(alpha)/dt = 2 eps alpha + ...`:
//!
//! * [`SystemKind::FullCoupled`] evolves `gamma` and `alpha` together;
//! * [`SystemKind::ReducedAlpha`] eliminates `gamma` through the conserved
//!   per-mode radicand `(gamma - 1/2)^2 + |alpha|^2 = h_aux`;
//! * [`SystemKind::Linearized`] freezes `gamma` at its initial value.
//!
//! The production stepper is a Strang splitting: exact kinetic half steps
//! around one classical RK4 step of the interaction part. [`reference_evolve`]
//! integrates the unsplit system with plain RK4 and serves as an oracle.

use num_complex::Complex64;

use crate::diagnostics::{SeriesRecorder, TimeSeries};
use crate::equilibrium::EquilibriumData;
use crate::error::{BdgError, Result};
use crate::model::{
    dispersion, effective_coupling, BdGState, GridSpec, PhysicalParams, SpectralScalars,
};
use crate::summation::{pairwise_sum, pairwise_sum_complex, PairwiseStack, PAIRWISE_BLOCK};

/// Negative radicands down to `-CLAMP_TOLERANCE` are treated as round-off and
/// clamped to zero.
pub const CLAMP_TOLERANCE: f64 = 1e-10;

/// Modes whose initial occupation is this close to 1/2 sit on the Fermi
/// point, where the reduced equation is not Lipschitz. The reduced stepper
/// carries `gamma` explicitly for them.
pub const DEGENERATE_RADIUS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemKind {
    FullCoupled,
    ReducedAlpha,
    Linearized,
}

impl SystemKind {
    pub fn name(self) -> &'static str {
        match self {
            SystemKind::FullCoupled => "full",
            SystemKind::ReducedAlpha => "reduced",
            SystemKind::Linearized => "linear",
        }
    }

    pub fn is_nonlinear(self) -> bool {
        !matches!(self, SystemKind::Linearized)
    }
}

impl std::fmt::Display for SystemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SystemKind {
    type Err = BdgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SystemKind::FullCoupled),
            "reduced" => Ok(SystemKind::ReducedAlpha),
            "linear" => Ok(SystemKind::Linearized),
            other => Err(BdgError::InvalidParameter(format!(
                "unknown system kind '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub tau: f64,
    pub t_end: f64,
    /// Steps between diagnostic samples.
    pub sample_stride: u64,
}

impl StepperConfig {
    pub fn new(tau: f64, t_end: f64, sample_stride: u64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(BdgError::InvalidParameter(format!(
                "time step {tau} must be positive"
            )));
        }
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err(BdgError::InvalidParameter(format!(
                "t_end {t_end} must be non-negative"
            )));
        }
        if t_end / tau >= u64::MAX as f64 / 2.0 {
            return Err(BdgError::InvalidParameter("step count overflows".into()));
        }
        if sample_stride == 0 {
            return Err(BdgError::InvalidParameter(
                "sample stride must be positive".into(),
            ));
        }
        Ok(Self {
            tau,
            t_end,
            sample_stride,
        })
    }

    /// Stride chosen so that roughly `samples` evenly spaced rows are taken.
    pub fn with_samples(tau: f64, t_end: f64, samples: u64) -> Result<Self> {
        let probe = Self::new(tau, t_end, 1)?;
        let stride = probe.steps().div_ceil(samples.max(1)).max(1);
        Self::new(tau, t_end, stride)
    }

    /// `tau = tau_factor / K`, `t_end = t_end_factor / h^2`.
    pub fn production(
        grid: &GridSpec,
        tau_factor: f64,
        t_end_factor: f64,
        samples: u64,
    ) -> Result<Self> {
        let h = grid.h().value();
        Self::with_samples(
            tau_factor / grid.k_modes() as f64,
            t_end_factor / (h * h),
            samples,
        )
    }

    pub fn steps(&self) -> u64 {
        (self.t_end / self.tau).round() as u64
    }
}

/// Time derivative of a state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub gamma: Vec<f64>,
    pub alpha: Vec<Complex64>,
}

const MINUS_I: Complex64 = Complex64 { re: 0.0, im: -1.0 };

fn rhs_full_with(
    eps: &[f64],
    coupling: f64,
    gamma: &[f64],
    alpha: &[Complex64],
) -> StateDerivative {
    let c = pairwise_sum_complex(alpha);
    // i dgamma/dt = 2g (conj(c) alpha - c conj(alpha)) = 2g * 2i Im(conj(c) alpha)
    let dgamma = alpha
        .iter()
        .map(|a| 4.0 * coupling * (c.conj() * a).im)
        .collect();
    let dalpha = eps
        .iter()
        .zip(gamma)
        .zip(alpha)
        .map(|((e, g), a)| MINUS_I * (2.0 * e * a + 2.0 * coupling * c * (2.0 * g - 1.0)))
        .collect();
    StateDerivative {
        gamma: dgamma,
        alpha: dalpha,
    }
}

/// Right-hand side of the coupled `(gamma, alpha)` system.
pub fn rhs_full(state: &BdGState, params: &PhysicalParams, grid: &GridSpec) -> StateDerivative {
    rhs_full_with(
        &dispersion(grid, params),
        effective_coupling(params, grid),
        &state.gamma,
        &state.alpha,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedGamma {
    pub gamma: Vec<f64>,
    /// Largest clamped radicand deficit, `max(0, |alpha|^2 - h_aux)`.
    pub worst_excess: f64,
}

fn radicand_root(h_aux: f64, alpha: Complex64, mode: usize) -> Result<(f64, f64)> {
    let rad = h_aux - alpha.norm_sqr();
    if rad < -CLAMP_TOLERANCE {
        return Err(BdgError::RadicandExceeded {
            mode,
            radicand: rad,
        });
    }
    Ok((rad.max(0.0).sqrt(), (-rad).max(0.0)))
}

/// `gamma(k) = 1/2 +- sqrt(h_aux(k) - |alpha(k)|^2)` on each mode's branch.
pub fn gamma_from_alpha(
    alpha: &[Complex64],
    scalars: &SpectralScalars,
) -> Result<ReconstructedGamma> {
    if alpha.len() != scalars.h_aux.len() {
        return Err(BdgError::LengthMismatch {
            expected: scalars.h_aux.len(),
            found: alpha.len(),
        });
    }
    let mut worst_excess: f64 = 0.0;
    let mut gamma = Vec::with_capacity(alpha.len());
    for (i, a) in alpha.iter().enumerate() {
        let (root, excess) = radicand_root(scalars.h_aux[i], *a, i)?;
        worst_excess = worst_excess.max(excess);
        gamma.push(0.5 + scalars.branch[i].sign() * root);
    }
    Ok(ReconstructedGamma {
        gamma,
        worst_excess,
    })
}

fn rhs_reduced_with(
    eps: &[f64],
    coupling: f64,
    alpha: &[Complex64],
    scalars: &SpectralScalars,
) -> Result<Vec<Complex64>> {
    if alpha.len() != eps.len() {
        return Err(BdgError::LengthMismatch {
            expected: eps.len(),
            found: alpha.len(),
        });
    }
    let c = pairwise_sum_complex(alpha);
    alpha
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let (root, _) = radicand_root(scalars.h_aux[i], *a, i)?;
            let interaction = 4.0 * coupling * c * scalars.branch[i].sign() * root;
            Ok(MINUS_I * (2.0 * eps[i] * a + interaction))
        })
        .collect()
}

/// Right-hand side of the reduced equation for `alpha` alone.
pub fn rhs_reduced(
    alpha: &[Complex64],
    scalars: &SpectralScalars,
    params: &PhysicalParams,
    grid: &GridSpec,
) -> Result<Vec<Complex64>> {
    rhs_reduced_with(
        &scalars.eps,
        effective_coupling(params, grid),
        alpha,
        scalars,
    )
}

fn rhs_linear_with(
    eps: &[f64],
    coupling: f64,
    alpha: &[Complex64],
    gamma0: &[f64],
) -> Vec<Complex64> {
    let c = pairwise_sum_complex(alpha);
    eps.iter()
        .zip(gamma0)
        .zip(alpha)
        .map(|((e, g), a)| MINUS_I * (2.0 * e * a + 2.0 * coupling * c * (2.0 * g - 1.0)))
        .collect()
}

/// Right-hand side of the linearization around the frozen occupation `gamma0`.
pub fn rhs_linear(
    alpha: &[Complex64],
    gamma0: &[f64],
    params: &PhysicalParams,
    grid: &GridSpec,
) -> Vec<Complex64> {
    rhs_linear_with(
        &dispersion(grid, params),
        effective_coupling(params, grid),
        alpha,
        gamma0,
    )
}

fn phases(eps: &[f64], tau: f64) -> Vec<Complex64> {
    eps.iter()
        .map(|e| Complex64::from_polar(1.0, -2.0 * e * tau))
        .collect()
}

/// Exact flow of the kinetic term over time `tau`.
pub fn kinetic_flow(
    alpha: &[Complex64],
    tau: f64,
    grid: &GridSpec,
    params: &PhysicalParams,
) -> Vec<Complex64> {
    alpha
        .iter()
        .zip(phases(&dispersion(grid, params), tau))
        .map(|(a, p)| a * p)
        .collect()
}

fn degenerate_modes(gamma0: &[f64]) -> Vec<usize> {
    gamma0
        .iter()
        .enumerate()
        .filter(|(_, g)| (**g - 0.5).abs() <= DEGENERATE_RADIUS)
        .map(|(i, _)| i)
        .collect()
}

enum Interaction {
    Full,
    Reduced {
        /// `h_aux`, or 1 on degenerate modes so the radicand stays positive.
        base: Vec<f64>,
        /// Branch sign, or 0 on degenerate modes.
        sign: Vec<f64>,
        degenerate: Vec<usize>,
        scalars: SpectralScalars,
    },
    Linear {
        /// `2 gamma_0 - 1`.
        weight: Vec<f64>,
    },
}

/// Complex vector with split real and imaginary parts; the stage kernels
/// vectorize much better on this layout.
#[derive(Default, Clone)]
struct Split {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Split {
    fn zeros(n: usize) -> Self {
        Self {
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    fn from_complex(v: &[Complex64]) -> Self {
        Self {
            re: v.iter().map(|z| z.re).collect(),
            im: v.iter().map(|z| z.im).collect(),
        }
    }

    fn load(&mut self, v: &[Complex64]) {
        for ((r, i), z) in self.re.iter_mut().zip(self.im.iter_mut()).zip(v) {
            *r = z.re;
            *i = z.im;
        }
    }

    fn store(&self, v: &mut [Complex64]) {
        for ((r, i), z) in self.re.iter().zip(&self.im).zip(v) {
            *z = Complex64::new(*r, *i);
        }
    }

    fn rotate(&mut self, phase: &Split) {
        let n = self.re.len();
        let (re, im) = (&mut self.re[..n], &mut self.im[..n]);
        let (pr, pi) = (&phase.re[..n], &phase.im[..n]);
        for j in 0..n {
            let (a, b) = (re[j], im[j]);
            re[j] = a * pr[j] - b * pi[j];
            im[j] = a * pi[j] + b * pr[j];
        }
    }
}

struct Workspace {
    alpha: Split,
    acc: Split,
    ping: Split,
    pong: Split,
    gamma_acc: Vec<f64>,
    gamma_ping: Vec<f64>,
    gamma_pong: Vec<f64>,
    sums: [PairwiseStack; 3],
}

const RK_NEXT: [f64; 3] = [0.5, 0.5, 1.0];
const RK_WEIGHT: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];

/// Pairing of each momentum `k` with `-k`. The flow commutes with `k -> -k`,
/// so a state even in `k` stays even and only `k = 0, 1, ..., K/2 - 1` and the
/// unpaired `-K/2` need to be integrated. The folded layout stores them in
/// that order.
#[derive(Debug, Clone, Copy)]
struct Mirror {
    half: usize,
}

impl Mirror {
    fn new(k_modes: usize) -> Option<Self> {
        (k_modes >= 4 && k_modes.is_multiple_of(2)).then_some(Self { half: k_modes / 2 })
    }

    /// Grid slot of folded index `j`.
    fn slot(self, j: usize) -> usize {
        if j < self.half {
            self.half + j
        } else {
            0
        }
    }

    fn is_even<T: PartialEq>(self, v: &[T]) -> bool {
        (1..self.half).all(|j| v[self.half - j] == v[self.half + j])
    }

    fn fold<T: Copy>(self, v: &[T]) -> Vec<T> {
        (0..=self.half).map(|j| v[self.slot(j)]).collect()
    }

    fn fold_into<T: Copy>(self, v: &[T], out: &mut [T]) {
        out[..self.half].copy_from_slice(&v[self.half..]);
        out[self.half] = v[0];
    }

    fn unfold<T: Copy>(self, folded: &[T], v: &mut [T]) {
        v[self.half..].copy_from_slice(&folded[..self.half]);
        for j in 1..self.half {
            v[self.half - j] = folded[j];
        }
        v[0] = folded[self.half];
    }

    /// Sum over the whole grid, given the plain sum `s` of the folded values.
    fn total(self, s: f64, folded: &[f64]) -> f64 {
        2.0 * s - folded[0] - folded[self.half]
    }

    fn relabel(self, e: BdgError) -> BdgError {
        match e {
            BdgError::RadicandExceeded { mode, radicand } => BdgError::RadicandExceeded { mode: self.slot(mode), radicand },
            BdgError::Blowup { t, mode, radicand } => BdgError::Blowup { t, mode: self.slot(mode), radicand },
            other => other,
        }
    }
}

fn grid_total(mirror: Option<Mirror>, x: &[f64]) -> f64 {
    let s = pairwise_sum(x);
    mirror.map_or(s, |m| m.total(s, x))
}

/// Stepper for one mode layout: the whole grid, or its folded even half.
struct Engine {
    tau: f64,
    coupling: f64,
    /// Mode count of the whole grid.
    modes: f64,
    mirror: Option<Mirror>,
    half_phase: Split,
    full_phase: Split,
    interaction: Interaction,
    ws: Workspace,
    worst_clamp: f64,
}

impl Engine {
    fn new(
        kind: SystemKind,
        tau: f64,
        coupling: f64,
        gamma0: &[f64],
        scalars: SpectralScalars,
        mirror: Option<Mirror>,
        modes: usize,
    ) -> Self {
        let eps = &scalars.eps;
        let k = eps.len();
        let half_phase = Split::from_complex(&phases(eps, 0.5 * tau));
        let full_phase = Split::from_complex(&phases(eps, tau));
        let interaction = match kind {
            SystemKind::FullCoupled => Interaction::Full,
            SystemKind::ReducedAlpha => {
                let degenerate = degenerate_modes(gamma0);
                let mut base = scalars.h_aux.clone();
                let mut sign: Vec<f64> = scalars.branch.iter().map(|b| b.sign()).collect();
                for &d in &degenerate {
                    base[d] = 1.0;
                    sign[d] = 0.0;
                }
                Interaction::Reduced {
                    base,
                    sign,
                    degenerate,
                    scalars,
                }
            }
            SystemKind::Linearized => Interaction::Linear {
                weight: gamma0.iter().map(|g| 2.0 * g - 1.0).collect(),
            },
        };
        let ws = Workspace {
            alpha: Split::zeros(k),
            acc: Split::zeros(k),
            ping: Split::zeros(k),
            pong: Split::zeros(k),
            gamma_acc: vec![0.0; k],
            gamma_ping: vec![0.0; k],
            gamma_pong: vec![0.0; k],
            sums: Default::default(),
        };
        Self {
            tau,
            coupling,
            modes: modes as f64,
            mirror,
            half_phase,
            full_phase,
            interaction,
            ws,
            worst_clamp: 0.0,
        }
    }

    fn len(&self) -> usize {
        self.ws.alpha.re.len()
    }

    /// `n >= 1` Strang steps on arrays in this engine's layout. Adjacent
    /// kinetic half steps are merged into a single full rotation.
    fn advance(&mut self, alpha: &mut [Complex64], gamma: &mut [f64], n: u64, t0: f64) -> Result<()> {
        self.ws.alpha.load(alpha);
        self.ws.alpha.rotate(&self.half_phase);
        if matches!(self.interaction, Interaction::Reduced { .. }) {
            for j in 0..n {
                self.reduced_rk4(gamma, j + 1 == n).map_err(|e| match e {
                    BdgError::RadicandExceeded { mode, radicand } => BdgError::Blowup {
                        t: t0 + j as f64 * self.tau,
                        mode,
                        radicand,
                    },
                    other => other,
                })?;
            }
        } else {
            let mut sums = self.mode_sums(gamma);
            for j in 0..n {
                sums = self.affine_rk4(gamma, sums, j + 1 == n);
            }
        }
        self.ws.alpha.store(alpha);
        Ok(())
    }
}

/// The folded engine with its scratch copies of the state.
struct EvenHalf {
    mirror: Mirror,
    engine: Engine,
    alpha: Vec<Complex64>,
    gamma: Vec<f64>,
}

/// Strang-splitting stepper for one system at a fixed time step.
///
/// States even in `k` (the standard initial data and everything the flow
/// produces from them) are integrated on half the grid.
pub struct Propagator {
    kind: SystemKind,
    tau: f64,
    plain: Engine,
    even: Option<EvenHalf>,
}

impl Propagator {
    pub fn new(initial: &EquilibriumData, kind: SystemKind, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau != 0.0) {
            return Err(BdgError::InvalidParameter(format!(
                "time step {tau} must be finite and nonzero"
            )));
        }
        let coupling = effective_coupling(&initial.params, &initial.grid);
        let sc = &initial.scalars;
        let k = sc.eps.len();
        let even = Mirror::new(k)
            .filter(|m| m.is_even(&sc.eps) && m.is_even(&sc.h_aux) && m.is_even(&sc.branch) && m.is_even(&initial.gamma0))
            .map(|mirror| {
                let scalars = SpectralScalars {
                    eps: mirror.fold(&sc.eps),
                    h_aux: mirror.fold(&sc.h_aux),
                    branch: mirror.fold(&sc.branch),
                };
                let gamma0 = mirror.fold(&initial.gamma0);
                EvenHalf {
                    mirror,
                    engine: Engine::new(kind, tau, coupling, &gamma0, scalars, Some(mirror), k),
                    alpha: vec![Complex64::new(0.0, 0.0); mirror.half + 1],
                    gamma: vec![0.0; mirror.half + 1],
                }
            });
        Ok(Self {
            kind,
            tau,
            plain: Engine::new(kind, tau, coupling, &initial.gamma0, sc.clone(), None, k),
            even,
        })
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Largest radicand deficit clamped so far (reduced system only).
    pub fn worst_clamp(&self) -> f64 {
        let even = self.even.as_ref().map_or(0.0, |e| e.engine.worst_clamp);
        self.plain.worst_clamp.max(even)
    }

    /// Modes carried with an explicit occupation in the reduced system.
    pub fn degenerate_modes(&self) -> &[usize] {
        match &self.plain.interaction {
            Interaction::Reduced { degenerate, .. } => degenerate,
            _ => &[],
        }
    }

    /// One Strang step: half kinetic, full interaction, half kinetic.
    pub fn step(&mut self, state: &mut BdGState) -> Result<()> {
        self.advance(state, 1)
    }

    /// `n` consecutive Strang steps.
    pub fn advance(&mut self, state: &mut BdGState, n: u64) -> Result<()> {
        if n == 0 {
            return Ok(());
        }
        if state.len() != self.plain.len() {
            return Err(BdgError::LengthMismatch {
                expected: self.plain.len(),
                found: state.len(),
            });
        }
        let t0 = state.t;
        match &mut self.even {
            Some(e) if e.mirror.is_even(&state.alpha) && e.mirror.is_even(&state.gamma) => {
                e.mirror.fold_into(&state.alpha, &mut e.alpha);
                e.mirror.fold_into(&state.gamma, &mut e.gamma);
                let mirror = e.mirror;
                e.engine.advance(&mut e.alpha, &mut e.gamma, n, t0).map_err(|err| mirror.relabel(err))?;
                e.mirror.unfold(&e.alpha, &mut state.alpha);
                e.mirror.unfold(&e.gamma, &mut state.gamma);
            }
            _ => self.plain.advance(&mut state.alpha, &mut state.gamma, n, t0)?,
        }
        state.t = t0 + n as f64 * self.tau;
        Ok(())
    }

    /// Refresh the occupation of the reduced system from `alpha`. Degenerate
    /// modes keep their explicitly evolved value; other kinds are untouched.
    pub fn sync_gamma(&self, state: &mut BdGState) -> Result<()> {
        if let Interaction::Reduced { sign, scalars, .. } = &self.plain.interaction {
            for (i, a) in state.alpha.iter().enumerate() {
                if sign[i] != 0.0 {
                    let (root, _) = radicand_root(scalars.h_aux[i], *a, i)?;
                    state.gamma[i] = 0.5 + sign[i] * root;
                }
            }
        }
        Ok(())
    }
}

impl Engine {
    /// The per-mode variable paired with alpha in [`Self::affine_rk4`]:
    /// `gamma` for the full system, the frozen weight `2 gamma_0 - 1` for the
    /// linearized one.
    fn affine_companion<'a>(interaction: &'a Interaction, gamma: &'a [f64]) -> &'a [f64] {
        match interaction {
            Interaction::Linear { weight } => weight,
            _ => gamma,
        }
    }

    fn mode_sums(&self, gamma: &[f64]) -> [f64; 4] {
        let v = Self::affine_companion(&self.interaction, gamma);
        [
            grid_total(self.mirror, &self.ws.alpha.re),
            grid_total(self.mirror, &self.ws.alpha.im),
            grid_total(self.mirror, v),
            self.modes,
        ]
    }

    /// One classical RK4 step of the interaction flow of the full or the
    /// linearized system, followed by the kinetic rotation that closes this
    /// step (a half step if `last`, else a full one).
    ///
    /// With the pair sum `c` held fixed both systems are linear in the mode
    /// variables `(Re alpha, Im alpha, v)` (`v` as in `affine_companion`).
    /// Every RK4 stage is therefore an affine function of the step-initial
    /// values with mode-independent coefficients, and each stage sum follows
    /// from the mode sums `sums` alone. The stages reduce to algebra on 3x4
    /// coefficient matrices; a single pass then applies the combined update,
    /// the rotation, and gathers the sums for the next step.
    fn affine_rk4(&mut self, gamma_state: &mut [f64], sums: [f64; 4], last: bool) -> [f64; 4] {
        type Row = [f64; 4];
        fn dot(a: &Row, b: &Row) -> f64 {
            (a[0] * b[0] + a[1] * b[1]) + (a[2] * b[2] + a[3] * b[3])
        }
        fn scaled(a: &Row, s: f64) -> Row {
            [a[0] * s, a[1] * s, a[2] * s, a[3] * s]
        }
        const UNIT: [Row; 3] = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];

        let full = matches!(self.interaction, Interaction::Full);
        let (tau, g) = (self.tau, self.coupling);
        // Stage offsets from the step-initial values and the RK4 combination,
        // rows (Re alpha, Im alpha, v) over the basis (Re alpha, Im alpha, v, 1).
        let mut offset = [[0.0; 4]; 3];
        let mut total = [[0.0; 4]; 3];
        for s in 0..4 {
            let rows: [Row; 3] = std::array::from_fn(|r| {
                std::array::from_fn(|j| UNIT[r][j] + offset[r][j])
            });
            let c = Complex64::new(sums[0] + dot(&offset[0], &sums), sums[1] + dot(&offset[1], &sums));
            // d(alpha)/dt = -2ig c (2 gamma - 1), resp. -2ig c w
            let u: Row = if full {
                let mut u = scaled(&rows[2], 2.0);
                u[3] -= 1.0;
                u
            } else {
                rows[2]
            };
            let (fr, fi) = (2.0 * g * c.im, -2.0 * g * c.re);
            let dv: Row = if full {
                // d(gamma)/dt = 4g Im(conj(c) alpha)
                std::array::from_fn(|j| 4.0 * g * (c.re * rows[1][j] - c.im * rows[0][j]))
            } else {
                [0.0; 4]
            };
            let slope = [scaled(&u, fr), scaled(&u, fi), dv];
            for r in 0..3 {
                for j in 0..4 {
                    total[r][j] += RK_WEIGHT[s] * tau * slope[r][j];
                    if s < 3 {
                        offset[r][j] = RK_NEXT[s] * tau * slope[r][j];
                    }
                }
            }
        }

        let phase = if last { &self.half_phase } else { &self.full_phase };
        let ws = &mut self.ws;
        let n = ws.alpha.re.len();
        let [sum_re, sum_im, sum_v] = &mut ws.sums;
        sum_re.clear();
        sum_im.clear();
        sum_v.clear();
        let mut start = 0;
        while start < n {
            let end = (start + PAIRWISE_BLOCK).min(n);
            let (ar, ai) = (&mut ws.alpha.re[start..end], &mut ws.alpha.im[start..end]);
            let (pr, pi) = (&phase.re[start..end], &phase.im[start..end]);
            let len = ar.len();
            if full {
                let v = &mut gamma_state[start..end];
                for i in 0..len {
                    let b = [ar[i], ai[i], v[i], 1.0];
                    let x = ar[i] + dot(&total[0], &b);
                    let y = ai[i] + dot(&total[1], &b);
                    v[i] += dot(&total[2], &b);
                    ar[i] = x * pr[i] - y * pi[i];
                    ai[i] = x * pi[i] + y * pr[i];
                }
                sum_v.push_block(v);
            } else {
                let Interaction::Linear { weight } = &self.interaction else { unreachable!() };
                let v = &weight[start..end];
                for i in 0..len {
                    let b = [ar[i], ai[i], v[i], 1.0];
                    let x = ar[i] + dot(&total[0], &b);
                    let y = ai[i] + dot(&total[1], &b);
                    ar[i] = x * pr[i] - y * pi[i];
                    ai[i] = x * pi[i] + y * pr[i];
                }
            }
            sum_re.push_block(ar);
            sum_im.push_block(ai);
            start = end;
        }
        let total = |s: f64, x: &[f64]| self.mirror.map_or(s, |m| m.total(s, x));
        let v_sum = if full { total(sum_v.value(), gamma_state) } else { sums[2] };
        [total(sum_re.value(), &ws.alpha.re), total(sum_im.value(), &ws.alpha.im), v_sum, sums[3]]
    }

    /// One classical RK4 step of the reduced interaction flow on the
    /// workspace copy of `alpha`, followed by the closing kinetic rotation.
    fn reduced_rk4(&mut self, gamma_state: &mut [f64], last: bool) -> Result<()> {
        let mirror = self.mirror;
        let Self {
            tau,
            coupling,
            half_phase,
            full_phase,
            interaction,
            ws,
            worst_clamp,
            ..
        } = self;
        let Interaction::Reduced {
            base,
            sign,
            degenerate,
            ..
        } = interaction
        else {
            unreachable!("reduced_rk4 on a non-reduced propagator")
        };
        let (tau, g) = (*tau, *coupling);
        let phase = if last { &*half_phase } else { &*full_phase };
        let Workspace {
            alpha,
            acc,
            ping,
            pong,
            gamma_acc,
            gamma_ping,
            gamma_pong,
            ..
        } = ws;
        let gamma = &gamma_state[..];
        let gc = 4.0 * g;
        let n = gamma.len();

        for s in 0..4 {
            // Stage input/output buffers alternate; stage 0 reads the state.
            let (y, out, gy, gout): (&Split, &mut Split, &[f64], &mut [f64]) = match s {
                0 => (&*alpha, &mut *ping, gamma, &mut gamma_ping[..]),
                1 => (&*ping, &mut *pong, &gamma_ping[..], &mut gamma_pong[..]),
                2 => (&*pong, &mut *ping, &gamma_pong[..], &mut gamma_ping[..]),
                _ => (&*ping, &mut *pong, &gamma_ping[..], &mut gamma_pong[..]),
            };
            let c = Complex64::new(grid_total(mirror, &y.re), grid_total(mirror, &y.im));
            // d(alpha)/dt = factor * w(k) with a real per-mode weight w
            let factor = Complex64::new(0.0, -2.0 * g) * c;
            let st = Stage {
                fr: factor.re,
                fi: factor.im,
                wa: RK_WEIGHT[s] * tau,
                na: if s < 3 { RK_NEXT[s] * tau } else { 0.0 },
            };

            let io = StageIo {
                x: &*alpha,
                acc: &mut *acc,
                out: &mut *out,
                phase,
            };
            let worst = match s {
                0 => reduced_stage::<0>(&st, io, y, base, sign),
                1 => reduced_stage::<1>(&st, io, y, base, sign),
                2 => reduced_stage::<2>(&st, io, y, base, sign),
                _ => reduced_stage::<3>(&st, io, y, base, sign),
            };
            if worst < 0.0 {
                if worst < -CLAMP_TOLERANCE {
                    let mode = (0..n)
                        .find(|&i| base[i] - y.re[i].powi(2) - y.im[i].powi(2) < -CLAMP_TOLERANCE)
                        .unwrap_or(0);
                    return Err(BdgError::RadicandExceeded {
                        mode,
                        radicand: base[mode] - (y.re[mode] * y.re[mode] + y.im[mode] * y.im[mode]),
                    });
                }
                *worst_clamp = worst_clamp.max(-worst);
            }

            // Degenerate modes got w = 0 above; add their explicit terms.
            for &d in degenerate.iter() {
                let (yr, yi) = (y.re[d], y.im[d]);
                let w = 2.0 * gy[d] - 1.0;
                let (kr, ki) = (st.fr * w, st.fi * w);
                let kg = gc * (c.re * yi - c.im * yr);
                if s == 3 {
                    let (pr, pi) = (phase.re[d], phase.im[d]);
                    acc.re[d] += st.wa * (kr * pr - ki * pi);
                    acc.im[d] += st.wa * (kr * pi + ki * pr);
                } else {
                    acc.re[d] += st.wa * kr;
                    acc.im[d] += st.wa * ki;
                    out.re[d] += st.na * kr;
                    out.im[d] += st.na * ki;
                    gout[d] = gamma[d] + st.na * kg;
                }
                gamma_acc[d] = if s == 0 { gamma[d] } else { gamma_acc[d] } + st.wa * kg;
            }
        }

        std::mem::swap(alpha, acc);
        for &d in degenerate.iter() {
            gamma_state[d] = gamma_acc[d];
        }
        Ok(())
    }
}

/// Per-stage RK4 coefficients: the stage slope is `factor * w(k)`, its
/// weight in the final combination is `wa`, and the next stage is evaluated
/// at `x + na * slope`.
struct Stage {
    fr: f64,
    fi: f64,
    wa: f64,
    na: f64,
}

struct StageIo<'a> {
    /// State at the start of the step.
    x: &'a Split,
    acc: &'a mut Split,
    out: &'a mut Split,
    phase: &'a Split,
}

/// One RK4 stage of the reduced system, slope `factor * 2 sign sqrt(base - |y|^2)`.
/// Monomorphized over the stage index, so the first-stage initialization and
/// the last-stage rotation cost no branches. Returns the smallest radicand.
#[inline(always)]
fn reduced_stage<const S: usize>(st: &Stage, io: StageIo<'_>, y: &Split, base: &[f64], sign: &[f64]) -> f64 {
    let n = io.x.re.len();
    let (xr, xi) = (&io.x.re[..n], &io.x.im[..n]);
    let (yr, yi) = (&y.re[..n], &y.im[..n]);
    let (base, sign) = (&base[..n], &sign[..n]);
    let (ar, ai) = (&mut io.acc.re[..n], &mut io.acc.im[..n]);
    let (or, oi) = (&mut io.out.re[..n], &mut io.out.im[..n]);
    let (pr, pi) = (&io.phase.re[..n], &io.phase.im[..n]);
    let mut worst = f64::INFINITY;
    for i in 0..n {
        let rad = base[i] - (yr[i] * yr[i] + yi[i] * yi[i]);
        worst = if rad < worst { rad } else { worst };
        let w = 2.0 * sign[i] * rad.max(0.0).sqrt();
        let (kr, ki) = (st.fr * w, st.fi * w);
        let a = if S == 0 { xr[i] } else { ar[i] } + kr * st.wa;
        let b = if S == 0 { xi[i] } else { ai[i] } + ki * st.wa;
        if S == 3 {
            ar[i] = a * pr[i] - b * pi[i];
            ai[i] = a * pi[i] + b * pr[i];
        } else {
            ar[i] = a;
            ai[i] = b;
            or[i] = xr[i] + kr * st.na;
            oi[i] = xi[i] + ki * st.na;
        }
    }
    worst
}

/// Single Strang step from `state`.
pub fn strang_step(
    state: &BdGState,
    tau: f64,
    kind: SystemKind,
    initial: &EquilibriumData,
) -> Result<BdGState> {
    let mut prop = Propagator::new(initial, kind, tau)?;
    let mut next = state.clone();
    prop.step(&mut next)?;
    prop.sync_gamma(&mut next)?;
    Ok(next)
}

/// A blown-up run: the rows sampled before the failure and the cause.
#[derive(Debug)]
pub struct EvolveFailure {
    pub partial: TimeSeries,
    pub error: BdgError,
}

impl std::fmt::Display for EvolveFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} samples)",
            self.error,
            self.partial.rows.len()
        )
    }
}

impl std::error::Error for EvolveFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<BdgError> for EvolveFailure {
    fn from(error: BdgError) -> Self {
        Self {
            partial: TimeSeries::default(),
            error,
        }
    }
}

/// Integrates from `t = 0` to `config.t_end`, sampling diagnostics every
/// `config.sample_stride` steps and at the final step. `observer` sees each
/// sampled state.
pub fn evolve(
    initial: &EquilibriumData,
    kind: SystemKind,
    config: &StepperConfig,
    mut observer: impl FnMut(&BdGState),
) -> std::result::Result<TimeSeries, EvolveFailure> {
    let mut prop = Propagator::new(initial, kind, config.tau)?;
    let mut recorder = SeriesRecorder::new(initial, kind, config)?;
    let mut state = initial.initial_state();
    recorder.record(&state);
    observer(&state);

    let steps = config.steps();
    let mut done = 0u64;
    while done < steps {
        let block = config.sample_stride.min(steps - done);
        let outcome = prop
            .advance(&mut state, block)
            .and_then(|_| prop.sync_gamma(&mut state));
        if let Err(error) = outcome {
            return Err(EvolveFailure {
                partial: recorder.finish(),
                error,
            });
        }
        done += block;
        state.t = done as f64 * config.tau;
        recorder.record(&state);
        observer(&state);
    }
    Ok(recorder.finish())
}

/// Same as [`evolve`] but also returns the final state.
pub fn evolve_with_state(
    initial: &EquilibriumData,
    kind: SystemKind,
    config: &StepperConfig,
) -> std::result::Result<(TimeSeries, BdGState), EvolveFailure> {
    let mut last = None;
    let series = evolve(initial, kind, config, |s| last = Some(s.clone()))?;
    Ok((
        series,
        last.expect("at least the initial sample is recorded"),
    ))
}

/// Unsplit right-hand side used by the reference integrator.
struct ReferenceSystem<'a> {
    kind: SystemKind,
    eps: &'a [f64],
    coupling: f64,
    gamma0: &'a [f64],
    scalars: &'a SpectralScalars,
    degenerate: Vec<usize>,
}

impl ReferenceSystem<'_> {
    fn derivative(&self, gamma: &[f64], alpha: &[Complex64]) -> Result<StateDerivative> {
        match self.kind {
            SystemKind::FullCoupled => Ok(rhs_full_with(self.eps, self.coupling, gamma, alpha)),
            SystemKind::Linearized => Ok(StateDerivative {
                gamma: vec![0.0; alpha.len()],
                alpha: rhs_linear_with(self.eps, self.coupling, alpha, self.gamma0),
            }),
            SystemKind::ReducedAlpha => {
                // Degenerate modes follow the coupled form.
                let c = pairwise_sum_complex(alpha);
                let full = rhs_full_with(self.eps, self.coupling, gamma, alpha);
                let mut dalpha = Vec::with_capacity(alpha.len());
                for (i, a) in alpha.iter().enumerate() {
                    if self.degenerate.contains(&i) {
                        dalpha.push(full.alpha[i]);
                    } else {
                        let (root, _) = radicand_root(self.scalars.h_aux[i], *a, i)?;
                        let interaction =
                            4.0 * self.coupling * c * self.scalars.branch[i].sign() * root;
                        dalpha.push(MINUS_I * (2.0 * self.eps[i] * a + interaction));
                    }
                }
                let mut dgamma = vec![0.0; alpha.len()];
                for &d in &self.degenerate {
                    dgamma[d] = full.gamma[d];
                }
                Ok(StateDerivative {
                    gamma: dgamma,
                    alpha: dalpha,
                })
            }
        }
    }
}

fn axpy_state(
    gamma: &[f64],
    alpha: &[Complex64],
    h: f64,
    d: &StateDerivative,
) -> (Vec<f64>, Vec<Complex64>) {
    (
        gamma
            .iter()
            .zip(&d.gamma)
            .map(|(g, dg)| g + h * dg)
            .collect(),
        alpha
            .iter()
            .zip(&d.alpha)
            .map(|(a, da)| a + h * da)
            .collect(),
    )
}

/// Classical RK4 on the complete (unsplit) system with step `tau_ref`.
/// Slow; intended as ground truth on small grids and short times.
pub fn reference_evolve(
    initial: &EquilibriumData,
    kind: SystemKind,
    tau_ref: f64,
    t_end: f64,
) -> Result<BdGState> {
    let config = StepperConfig::new(tau_ref, t_end, 1)?;
    let system = ReferenceSystem {
        kind,
        eps: &initial.scalars.eps,
        coupling: effective_coupling(&initial.params, &initial.grid),
        gamma0: &initial.gamma0,
        scalars: &initial.scalars,
        degenerate: if kind == SystemKind::ReducedAlpha {
            degenerate_modes(&initial.gamma0)
        } else {
            Vec::new()
        },
    };
    let mut gamma = initial.gamma0.clone();
    let mut alpha = initial.alpha0.clone();
    let steps = config.steps();
    for n in 0..steps {
        let wrap = |e: BdgError| match e {
            BdgError::RadicandExceeded { mode, radicand } => BdgError::Blowup {
                t: n as f64 * tau_ref,
                mode,
                radicand,
            },
            other => other,
        };
        let k1 = system.derivative(&gamma, &alpha).map_err(wrap)?;
        let (g2, a2) = axpy_state(&gamma, &alpha, 0.5 * tau_ref, &k1);
        let k2 = system.derivative(&g2, &a2).map_err(wrap)?;
        let (g3, a3) = axpy_state(&gamma, &alpha, 0.5 * tau_ref, &k2);
        let k3 = system.derivative(&g3, &a3).map_err(wrap)?;
        let (g4, a4) = axpy_state(&gamma, &alpha, tau_ref, &k3);
        let k4 = system.derivative(&g4, &a4).map_err(wrap)?;
        for i in 0..alpha.len() {
            alpha[i] +=
                tau_ref / 6.0 * (k1.alpha[i] + 2.0 * k2.alpha[i] + 2.0 * k3.alpha[i] + k4.alpha[i]);
            gamma[i] +=
                tau_ref / 6.0 * (k1.gamma[i] + 2.0 * k2.gamma[i] + 2.0 * k3.gamma[i] + k4.gamma[i]);
        }
    }
    let mut state = BdGState {
        gamma,
        alpha,
        t: steps as f64 * tau_ref,
    };
    if kind == SystemKind::ReducedAlpha {
        for i in 0..state.gamma.len() {
            if !system.degenerate.contains(&i) {
                let (root, _) = radicand_root(initial.scalars.h_aux[i], state.alpha[i], i)?;
                state.gamma[i] = 0.5 + initial.scalars.branch[i].sign() * root;
            }
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{normal_state, setup_with_gap, solve_gap, standard_setup};
    use crate::model::{Branch, Semiclassical};
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn small() -> EquilibriumData {
        let grid = GridSpec::new(4, 16, Semiclassical::from_exponent(2).unwrap()).unwrap();
        standard_setup(&PhysicalParams::default(), &grid).unwrap()
    }

    fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn kind_round_trips_through_names() {
        for kind in [
            SystemKind::FullCoupled,
            SystemKind::ReducedAlpha,
            SystemKind::Linearized,
        ] {
            assert_eq!(kind.name().parse::<SystemKind>().unwrap(), kind);
        }
        assert!("quadratic".parse::<SystemKind>().is_err());
        assert!(!SystemKind::Linearized.is_nonlinear());
    }

    #[test]
    fn stepper_config_validation() {
        assert!(StepperConfig::new(0.0, 1.0, 1).is_err());
        assert!(StepperConfig::new(0.1, -1.0, 1).is_err());
        assert!(StepperConfig::new(0.1, 1.0, 0).is_err());
        let cfg = StepperConfig::with_samples(0.01, 1.0, 7).unwrap();
        assert_eq!(cfg.steps(), 100);
        assert_eq!(cfg.sample_stride, 15);
    }

    #[test]
    fn kinetic_flow_preserves_modulus_and_reverses() {
        let eq = small();
        let back = kinetic_flow(
            &kinetic_flow(&eq.alpha0, 0.73, &eq.grid, &eq.params),
            -0.73,
            &eq.grid,
            &eq.params,
        );
        assert!(max_diff(&back, &eq.alpha0) < 1e-14);
        let fwd = kinetic_flow(&eq.alpha0, 0.73, &eq.grid, &eq.params);
        for (a, b) in fwd.iter().zip(&eq.alpha0) {
            assert_relative_eq!(a.norm(), b.norm(), max_relative = 1e-14);
        }
    }

    #[test]
    fn full_rhs_structure() {
        let eq = small();
        let k = eq.grid.k_modes();
        let zero = BdGState::new(eq.gamma0.clone(), vec![c(0.0, 0.0); k]).unwrap();
        let d = rhs_full(&zero, &eq.params, &eq.grid);
        assert!(d.gamma.iter().all(|g| *g == 0.0));
        assert!(d.alpha.iter().all(|a| *a == c(0.0, 0.0)));

        // sum of dgamma is 4g Im(conj(c) c) = 0
        let mut s = eq.initial_state();
        s.alpha[3] += c(0.01, -0.02);
        let d = rhs_full(&s, &eq.params, &eq.grid);
        let total: f64 = d.gamma.iter().sum();
        assert!(total.abs() < 1e-14, "{total}");

        // dgamma equals the commutator form (conj(c) alpha - c conj(alpha)) / i
        let g = effective_coupling(&eq.params, &eq.grid);
        let cs = pairwise_sum_complex(&s.alpha);
        for (dg, a) in d.gamma.iter().zip(&s.alpha) {
            let bracket = 2.0 * g * (cs.conj() * a - cs * a.conj()) / c(0.0, 1.0);
            assert!(bracket.im.abs() < 1e-15);
            assert!((bracket.re - dg).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_coupling_reduces_to_kinetic_flow() {
        let mut eq = small();
        eq.params.coupling = 1e-300;
        let mut prop = Propagator::new(&eq, SystemKind::FullCoupled, 0.01).unwrap();
        let mut s = eq.initial_state();
        prop.advance(&mut s, 10).unwrap();
        let expected = kinetic_flow(&eq.alpha0, 0.1, &eq.grid, &eq.params);
        assert!(max_diff(&s.alpha, &expected) < 1e-13);
        assert_eq!(s.gamma, eq.gamma0);
    }

    #[test]
    fn self_consistent_state_is_stationary() {
        // A thermal state whose gap solves the gap equation at its own
        // temperature is a fixed point of all three systems.
        let base = small();
        let gap = solve_gap(0.1, &base.params, &base.grid).unwrap();
        assert!(gap.delta > 0.0);
        let eq = setup_with_gap(&base.params, &base.grid, gap.delta, 0.1).unwrap();
        let scale = eq.alpha0.iter().map(|a| a.norm()).fold(0.0, f64::max);
        let d = rhs_full(&eq.initial_state(), &eq.params, &eq.grid);
        assert!(d.alpha.iter().all(|a| a.norm() < 1e-8 * scale));
        assert!(d.gamma.iter().all(|g| g.abs() < 1e-14));
        // The splitting itself moves a fixed point of the unsplit flow by
        // O(tau^2); halving tau must cut the drift by about four.
        for kind in [
            SystemKind::FullCoupled,
            SystemKind::ReducedAlpha,
            SystemKind::Linearized,
        ] {
            let drift = |factor: f64| {
                let cfg =
                    StepperConfig::new(factor / eq.grid.k_modes() as f64, 0.5, 1_000_000).unwrap();
                let (_, last) = evolve_with_state(&eq, kind, &cfg).unwrap();
                max_diff(&last.alpha, &eq.alpha0)
            };
            let (coarse, fine) = (drift(0.1), drift(0.05));
            assert!(coarse < 1e-6 * scale, "{kind}: {coarse}");
            assert!(
                (3.5..4.5).contains(&(coarse / fine)),
                "{kind}: {coarse} / {fine}"
            );
        }
    }

    #[test]
    fn normal_state_is_fixed_point() {
        let eq = small();
        let n = normal_state(eq.t_sim, &eq.params, &eq.grid).unwrap();
        let d = rhs_full(&n, &eq.params, &eq.grid);
        assert!(d.alpha.iter().all(|a| *a == c(0.0, 0.0)));
        assert!(rhs_linear(&n.alpha, &eq.gamma0, &eq.params, &eq.grid)
            .iter()
            .all(|a| *a == c(0.0, 0.0)));
    }

    #[test]
    fn reduced_rhs_matches_full_on_the_constraint_surface() {
        let eq = small();
        let mut alpha = eq.alpha0.clone();
        let degenerate = degenerate_modes(&eq.gamma0);
        for (i, a) in alpha.iter_mut().enumerate() {
            if !degenerate.contains(&i) {
                *a *= c(0.6, 0.8);
            }
        }
        let rebuilt = gamma_from_alpha(&alpha, &eq.scalars).unwrap();
        let mut gamma = rebuilt.gamma.clone();
        for &d in &degenerate {
            gamma[d] = eq.gamma0[d];
        }
        let state = BdGState::new(gamma, alpha.clone()).unwrap();
        let full = rhs_full(&state, &eq.params, &eq.grid);
        let reduced = rhs_reduced(&alpha, &eq.scalars, &eq.params, &eq.grid).unwrap();
        for i in (0..alpha.len()).filter(|i| !degenerate.contains(i)) {
            assert!((full.alpha[i] - reduced[i]).norm() < 1e-13 * (1.0 + full.alpha[i].norm()));
        }
    }

    #[test]
    fn linear_rhs_is_linear() {
        let eq = small();
        let x: Vec<_> = (0..eq.grid.k_modes())
            .map(|i| c((i as f64).sin(), 0.1 * i as f64))
            .collect();
        let y: Vec<_> = (0..eq.grid.k_modes())
            .map(|i| c(0.3, (i as f64).cos()))
            .collect();
        let z = c(0.7, -1.3);
        let comb: Vec<_> = x.iter().zip(&y).map(|(a, b)| a + z * b).collect();
        let lx = rhs_linear(&x, &eq.gamma0, &eq.params, &eq.grid);
        let ly = rhs_linear(&y, &eq.gamma0, &eq.params, &eq.grid);
        let lc = rhs_linear(&comb, &eq.gamma0, &eq.params, &eq.grid);
        for i in 0..x.len() {
            assert!((lc[i] - (lx[i] + z * ly[i])).norm() < 1e-12 * (1.0 + lc[i].norm()));
        }
    }

    #[test]
    fn gamma_from_alpha_examples() {
        let scalars = SpectralScalars {
            eps: vec![-1.0, 1.0, 0.5],
            h_aux: vec![0.25, 0.25, 0.04],
            branch: vec![Branch::Upper, Branch::Lower, Branch::Lower],
        };
        let alpha = vec![c(0.0, 0.0), c(0.3, 0.0), c(0.0, 0.2)];
        let r = gamma_from_alpha(&alpha, &scalars).unwrap();
        assert_relative_eq!(r.gamma[0], 1.0);
        assert_relative_eq!(r.gamma[1], 0.5 - 0.4, epsilon = 1e-15);
        assert_relative_eq!(r.gamma[2], 0.5, epsilon = 1e-15);

        let over = vec![c(0.0, 0.0), c(0.6, 0.0), c(0.0, 0.0)];
        assert!(matches!(
            gamma_from_alpha(&over, &scalars),
            Err(BdgError::RadicandExceeded { mode: 1, .. })
        ));
        let tiny = vec![c(0.0, 0.0), c(0.0, 0.0), c(0.2 + 1e-13, 0.0)];
        assert_relative_eq!(gamma_from_alpha(&tiny, &scalars).unwrap().gamma[2], 0.5);
    }

    /// Textbook Strang splitting with a plain RK4 on the unsplit interaction
    /// right-hand side, one allocation per stage.
    fn naive_strang(eq: &EquilibriumData, kind: SystemKind, tau: f64, steps: usize) -> BdGState {
        let system = ReferenceSystem {
            kind,
            eps: &eq.scalars.eps,
            coupling: effective_coupling(&eq.params, &eq.grid),
            gamma0: &eq.gamma0,
            scalars: &eq.scalars,
            degenerate: if kind == SystemKind::ReducedAlpha { degenerate_modes(&eq.gamma0) } else { Vec::new() },
        };
        let zero_eps = vec![0.0; eq.scalars.eps.len()];
        let interaction = ReferenceSystem { eps: &zero_eps, ..system };
        let mut s = eq.initial_state();
        for _ in 0..steps {
            s.alpha = kinetic_flow(&s.alpha, 0.5 * tau, &eq.grid, &eq.params);
            let k1 = interaction.derivative(&s.gamma, &s.alpha).unwrap();
            let (g2, a2) = axpy_state(&s.gamma, &s.alpha, 0.5 * tau, &k1);
            let k2 = interaction.derivative(&g2, &a2).unwrap();
            let (g3, a3) = axpy_state(&s.gamma, &s.alpha, 0.5 * tau, &k2);
            let k3 = interaction.derivative(&g3, &a3).unwrap();
            let (g4, a4) = axpy_state(&s.gamma, &s.alpha, tau, &k3);
            let k4 = interaction.derivative(&g4, &a4).unwrap();
            for i in 0..s.len() {
                s.alpha[i] += tau / 6.0 * (k1.alpha[i] + 2.0 * k2.alpha[i] + 2.0 * k3.alpha[i] + k4.alpha[i]);
                s.gamma[i] += tau / 6.0 * (k1.gamma[i] + 2.0 * k2.gamma[i] + 2.0 * k3.gamma[i] + k4.gamma[i]);
            }
            s.alpha = kinetic_flow(&s.alpha, 0.5 * tau, &eq.grid, &eq.params);
            s.t += tau;
        }
        if kind == SystemKind::ReducedAlpha {
            for i in 0..s.len() {
                if !interaction.degenerate.contains(&i) {
                    let (root, _) = radicand_root(eq.scalars.h_aux[i], s.alpha[i], i).unwrap();
                    s.gamma[i] = 0.5 + eq.scalars.branch[i].sign() * root;
                }
            }
        }
        s
    }

    #[test]
    fn propagator_matches_textbook_strang_rk4() {
        let base = small();
        let eq = setup_with_gap(&base.params, &base.grid, 0.5, 0.1).unwrap();
        let tau = 0.1 / eq.grid.k_modes() as f64;
        for kind in [SystemKind::FullCoupled, SystemKind::ReducedAlpha, SystemKind::Linearized] {
            let expected = naive_strang(&eq, kind, tau, 300);
            let mut s = eq.initial_state();
            let mut p = Propagator::new(&eq, kind, tau).unwrap();
            p.advance(&mut s, 300).unwrap();
            p.sync_gamma(&mut s).unwrap();
            assert!(max_diff(&s.alpha, &eq.alpha0) > 1e-4, "{kind}: trajectory barely moved");
            assert!(max_diff(&s.alpha, &expected.alpha) < 1e-12, "{kind}: {}", max_diff(&s.alpha, &expected.alpha));
            let dg = s.gamma.iter().zip(&expected.gamma).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dg < 1e-12, "{kind}: gamma {dg}");
        }
    }

    #[test]
    fn fused_advance_matches_repeated_steps() {
        let eq = setup_with_gap(&small().params, &small().grid, 0.5, 0.1).unwrap();
        for kind in [
            SystemKind::FullCoupled,
            SystemKind::ReducedAlpha,
            SystemKind::Linearized,
        ] {
            let tau = 0.2 / eq.grid.k_modes() as f64;
            let mut a = eq.initial_state();
            let mut b = eq.initial_state();
            let mut p = Propagator::new(&eq, kind, tau).unwrap();
            p.advance(&mut a, 25).unwrap();
            for _ in 0..25 {
                b = strang_step(&b, tau, kind, &eq).unwrap();
            }
            assert!(max_diff(&a.alpha, &b.alpha) < 1e-13, "{kind}");
            assert_relative_eq!(a.t, b.t, max_relative = 1e-14);
        }
    }

    #[test]
    fn state_without_mirror_symmetry_uses_the_whole_grid() {
        let eq = setup_with_gap(&small().params, &small().grid, 0.5, 0.1).unwrap();
        let mut odd = eq.clone();
        let k = odd.alpha0.len();
        odd.alpha0[k / 2 + 3] *= c(1.01, 0.02);
        odd.scalars = SpectralScalars::from_initial(odd.scalars.eps.clone(), &odd.gamma0, &odd.alpha0);
        let tau = 0.1 / k as f64;
        let expected = naive_strang(&odd, SystemKind::FullCoupled, tau, 200);
        // Built from even data, but handed an odd state.
        let mut s = odd.initial_state();
        Propagator::new(&eq, SystemKind::FullCoupled, tau).unwrap().advance(&mut s, 200).unwrap();
        assert!(max_diff(&s.alpha, &expected.alpha) < 1e-12);
        assert!(s.alpha[k / 2 - 3] != s.alpha[k / 2 + 3]);
        // Built from odd data.
        let mut t = odd.initial_state();
        Propagator::new(&odd, SystemKind::FullCoupled, tau).unwrap().advance(&mut t, 200).unwrap();
        assert_eq!(s.alpha, t.alpha);
    }

    #[test]
    fn even_states_stay_even() {
        let eq = small();
        let tau = 0.1 / eq.grid.k_modes() as f64;
        for kind in [SystemKind::FullCoupled, SystemKind::ReducedAlpha, SystemKind::Linearized] {
            let mut s = eq.initial_state();
            let mut p = Propagator::new(&eq, kind, tau).unwrap();
            p.advance(&mut s, 50).unwrap();
            p.sync_gamma(&mut s).unwrap();
            let k = s.len();
            for j in 1..k / 2 {
                assert_eq!(s.alpha[k / 2 - j], s.alpha[k / 2 + j], "{kind}");
                assert_eq!(s.gamma[k / 2 - j], s.gamma[k / 2 + j], "{kind}");
            }
        }
    }

    #[test]
    fn perturbed_state_keeps_invariants() {
        // Off equilibrium (gap 0.5 at T = 0.1) the full flow still conserves
        // the per-mode radicand and the total occupation.
        let base = small();
        let eq = setup_with_gap(&base.params, &base.grid, 0.5, 0.1).unwrap();
        let cfg = StepperConfig::new(0.1 / eq.grid.k_modes() as f64, 2.0, 100_000).unwrap();
        let (_, last) = evolve_with_state(&eq, SystemKind::FullCoupled, &cfg).unwrap();
        assert!(max_diff(&last.alpha, &eq.alpha0) > 1e-3);
        for i in 0..last.len() {
            let r = (last.gamma[i] - 0.5).powi(2) + last.alpha[i].norm_sqr();
            assert!((r - eq.scalars.h_aux[i]).abs() < 1e-10, "mode {i}");
        }
        let n0: f64 = eq.gamma0.iter().sum();
        let n1: f64 = last.gamma.iter().sum();
        assert!((n1 - n0).abs() < 1e-10);
    }

    #[test]
    fn evolve_samples_and_stamps_time() {
        let eq = small();
        let tau = 0.1 / eq.grid.k_modes() as f64;
        let cfg = StepperConfig::with_samples(tau, 0.3, 10).unwrap();
        let mut count = 0;
        let series = evolve(&eq, SystemKind::ReducedAlpha, &cfg, |_| count += 1).unwrap();
        assert_eq!(series.rows.len(), count);
        assert_eq!(series.rows[0].t, 0.0);
        assert_relative_eq!(series.rows.last().unwrap().t, cfg.steps() as f64 * tau);
        assert!(series.rows.windows(2).all(|w| w[1].t > w[0].t));
    }
}
