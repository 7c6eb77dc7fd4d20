use thiserror::Error;

pub type Result<T> = std::result::Result<T, BdgError>;

#[derive(Debug, Error)]
pub enum BdgError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("mode count {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error(
        "no sign change on [{lo}, {hi}]: residual {f_lo:e} at lower end, {f_hi:e} at upper end"
    )]
    NoSignChange {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("mode {mode}: radicand h_aux - |alpha|^2 = {radicand:e} is below the clamp tolerance")]
    RadicandExceeded { mode: usize, radicand: f64 },

    /// The reduced system left its admissible set: `|alpha(k)|^2` exceeded
    /// the conserved radicand by more than the clamp tolerance.
    #[error("integration blowup at t = {t}: mode {mode} has radicand {radicand:e}")]
    Blowup { t: f64, mode: usize, radicand: f64 },

    #[error("reference free energy is zero; relative error undefined")]
    ZeroReference,

    #[error("non-positive value {value:e} at t = {t} inside fit window")]
    NonPositiveInWindow { t: f64, value: f64 },

    #[error("incompatible series: {0}")]
    IncompatibleSeries(String),

    #[error("runs still disagree at period N = {cap}; no adequate N up to the cap")]
    PeriodCap { cap: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
