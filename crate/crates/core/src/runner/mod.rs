//! Experiment commands. Each one wires setup, evolution and diagnostics
//! together and writes CSV tables and SVG charts into the output directory.
//!
//! Output is deterministic: repeated invocations with the same configuration
//! produce byte-identical files.

pub mod csv;
pub mod svg;

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::diagnostics::{interference_check, invariant_drift, TimeSeries};
use crate::dynamics::{evolve, StepperConfig, SystemKind};
use crate::equilibrium::{gap_table, solve_critical_temperature, standard_setup, EquilibriumData, GapRow};
use crate::error::{BdgError, Result};
use crate::model::{GridSpec, PhysicalParams, Semiclassical};

use self::csv::{series_table, Table};
use self::svg::{Chart, Scale};

/// Largest period tried by [`cmd_check_n`].
pub const PERIOD_CAP: usize = 64;

/// Which systems a run integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KindSelection {
    Single(SystemKind),
    /// The full nonlinear system and its linearization from one shared setup.
    Both,
}

impl KindSelection {
    pub fn kinds(self) -> Vec<SystemKind> {
        match self {
            KindSelection::Single(k) => vec![k],
            KindSelection::Both => vec![SystemKind::FullCoupled, SystemKind::Linearized],
        }
    }

    /// The nonlinear system to use where only one makes sense.
    pub fn nonlinear(self) -> SystemKind {
        match self {
            KindSelection::Single(k) if k.is_nonlinear() => k,
            _ => SystemKind::FullCoupled,
        }
    }
}

impl std::fmt::Display for KindSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KindSelection::Single(k) => write!(f, "{k}"),
            KindSelection::Both => f.write_str("both"),
        }
    }
}

impl FromStr for KindSelection {
    type Err = BdgError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "both" {
            Ok(KindSelection::Both)
        } else {
            s.parse().map(KindSelection::Single)
        }
    }
}

/// Parses `1/4`, `0.25` or `2^-2` style values of the semiclassical parameter.
pub fn parse_h(s: &str) -> Result<Semiclassical> {
    let s = s.trim();
    let value = if let Some((num, den)) = s.split_once('/') {
        let num: f64 = num.trim().parse().map_err(|_| bad_h(s))?;
        let den: f64 = den.trim().parse().map_err(|_| bad_h(s))?;
        num / den
    } else if let Some(exp) = s.strip_prefix("2^") {
        let e: i32 = exp.parse().map_err(|_| bad_h(s))?;
        2f64.powi(e)
    } else {
        s.parse().map_err(|_| bad_h(s))?
    };
    Semiclassical::from_value(value)
}

fn bad_h(s: &str) -> BdgError {
    BdgError::InvalidParameter(format!("cannot read h from '{s}'; expected e.g. 1/8 or 0.125"))
}

/// Comma-separated list of `h` values; an empty string is an empty list.
pub fn parse_h_list(s: &str) -> Result<Vec<Semiclassical>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(parse_h).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub h: Semiclassical,
    pub n_period: usize,
    pub m_density: usize,
    pub a: f64,
    pub mu: f64,
    pub kind: KindSelection,
    /// `t_end = t_end_factor / h^2`.
    pub t_end_factor: f64,
    /// `tau = tau_factor / K`.
    pub tau_factor: f64,
    pub samples: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            h: Semiclassical::from_exponent(2).expect("1/4 is a valid h"),
            n_period: 8,
            m_density: 256,
            a: 1.0,
            mu: 1.0,
            kind: KindSelection::Both,
            t_end_factor: 1.0,
            tau_factor: 0.1,
            samples: 2000,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn params(&self) -> Result<PhysicalParams> {
        PhysicalParams::new(self.a, self.mu)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.n_period, self.m_density, self.h)
    }

    pub fn stepper(&self, grid: &GridSpec) -> Result<StepperConfig> {
        if !(self.t_end_factor > 0.0 && self.t_end_factor.is_finite()) {
            return Err(BdgError::InvalidParameter(format!(
                "t_end factor {} must be positive",
                self.t_end_factor
            )));
        }
        if self.samples == 0 {
            return Err(BdgError::InvalidParameter("sample count must be positive".into()));
        }
        StepperConfig::production(grid, self.tau_factor, self.t_end_factor, self.samples)
    }

    fn with_out(&self, dir: PathBuf) -> Self {
        Self { out_dir: dir, ..self.clone() }
    }

    fn describe(&self, table: &mut Table) {
        table
            .meta("h", self.h.value())
            .meta("n_period", self.n_period)
            .meta("m_density", self.m_density)
            .meta("a", self.a)
            .meta("mu", self.mu)
            .meta("t_end_factor", self.t_end_factor)
            .meta("tau_factor", self.tau_factor)
            .meta("samples", self.samples);
    }

    fn prepare_out(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out_dir)?;
        Ok(&self.out_dir)
    }
}

/// Parallel width: `BDG_THREADS` if set to a positive integer, otherwise the
/// available hardware parallelism.
pub fn thread_count() -> usize {
    std::env::var("BDG_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// `items.map(f)` on up to [`thread_count`] threads; results keep input order.
pub fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let width = thread_count().min(items.len());
    if width <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..width {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers have finished")
        .into_iter()
        .map(|r| r.expect("every slot is filled"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcReport {
    pub t_c: f64,
    pub residual: f64,
    pub iterations: u32,
    pub k_modes: usize,
}

pub fn cmd_tc(config: &RunConfig) -> Result<TcReport> {
    let grid = config.grid()?;
    let root = solve_critical_temperature(&config.params()?, &grid)?;
    Ok(TcReport {
        t_c: root.value,
        residual: root.residual,
        iterations: root.iterations,
        k_modes: grid.k_modes(),
    })
}

/// `T_c` and `delta_0` for each `h`; writes `gap_table.csv` and `gap_table.svg`.
pub fn cmd_gap_table(config: &RunConfig, h_list: &[Semiclassical]) -> Result<Vec<GapRow>> {
    let params = config.params()?;
    let rows: Vec<GapRow> = parallel_map(h_list, |h| gap_table(&[*h], &params, config.n_period, config.m_density))
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let out = config.prepare_out()?;
    let mut table = Table::new(&["h", "k_modes", "t_c", "delta0"]);
    table
        .meta("n_period", config.n_period)
        .meta("m_density", config.m_density)
        .meta("a", config.a)
        .meta("mu", config.mu);
    table.rows = rows.iter().map(|r| vec![r.h, r.k_modes as f64, r.t_c, r.delta0]).collect();
    table.write(&out.join("gap_table.csv"))?;
    Chart::new("Gap at T_c - h^2", "h", "delta_0", Scale::Log)
        .line("delta_0", rows.iter().map(|r| (r.h, r.delta0)).collect())
        .write(&out.join("gap_table.svg"))?;
    Ok(rows)
}

/// `T_c` for each density `M`; writes `tc_vs_m.csv` and `tc_vs_m.svg`.
pub fn cmd_convergence_m(config: &RunConfig, m_list: &[usize]) -> Result<Vec<(usize, f64)>> {
    let params = config.params()?;
    let rows = parallel_map(m_list, |&m| {
        let grid = GridSpec::new(config.n_period, m, config.h)?;
        Ok((m, solve_critical_temperature(&params, &grid)?.value))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let out = config.prepare_out()?;
    let mut table = Table::new(&["m_density", "t_c"]);
    table
        .meta("h", config.h.value())
        .meta("n_period", config.n_period)
        .meta("a", config.a)
        .meta("mu", config.mu);
    table.rows = rows.iter().map(|&(m, t)| vec![m as f64, t]).collect();
    table.write(&out.join("tc_vs_m.csv"))?;
    Chart::new("Critical temperature vs density", "M", "T_c", Scale::Linear)
        .line("T_c", rows.iter().map(|&(m, t)| (m as f64, t)).collect())
        .write(&out.join("tc_vs_m.svg"))?;
    Ok(rows)
}

/// One finished (or aborted) trajectory.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub kind: SystemKind,
    pub csv: PathBuf,
    pub series: TimeSeries,
    pub max_delta_f: f64,
    /// Largest per-mode invariant drift over the samples; `None` for the
    /// linearized system, which does not conserve it.
    pub max_invariant_drift: Option<f64>,
}

impl RunSummary {
    pub fn abs_psi0(&self) -> f64 {
        self.series.rows.first().map_or(f64::NAN, |r| r.psi.norm())
    }

    pub fn min_ratio(&self) -> f64 {
        let p0 = self.abs_psi0();
        self.series.abs_psi().map(|(_, v)| v / p0).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct EvolveReport {
    pub t_c: f64,
    pub delta0: f64,
    pub t_sim: f64,
    pub k_modes: usize,
    pub tau: f64,
    pub steps: u64,
    pub runs: Vec<RunSummary>,
}

fn series_csv(config: &RunConfig, series: &TimeSeries, error: Option<&BdgError>) -> Table {
    let mut table = series_table(series);
    let m = &series.meta;
    table.meta("kind", m.kind);
    config.describe(&mut table);
    table
        .meta("k_modes", m.k_modes)
        .meta("tau", m.tau)
        .meta("t_end", m.t_end)
        .meta("t_c", m.t_c)
        .meta("delta0", m.delta0)
        .meta("t_sim", m.t_sim)
        .meta("f0", m.f0);
    if let Some(e) = error {
        table.meta("error", e);
    }
    table
}

/// Integrates one system and writes `series_<kind>.csv`. On a blowup the rows
/// sampled so far are still written, together with `error_<kind>.txt`.
fn run_kind(config: &RunConfig, eq: &EquilibriumData, kind: SystemKind, stepper: &StepperConfig) -> Result<RunSummary> {
    let out = config.prepare_out()?;
    let csv = out.join(format!("series_{kind}.csv"));
    let mut drift = 0.0f64;
    let tracked = kind.is_nonlinear();
    let outcome = evolve(eq, kind, stepper, |s| {
        if tracked {
            let d = invariant_drift(s, eq.h_aux()).expect("state matches the grid");
            drift = drift.max(d);
        }
    });
    match outcome {
        Ok(series) => {
            series_csv(config, &series, None).write(&csv)?;
            Ok(RunSummary {
                kind,
                csv,
                max_delta_f: series.max_delta_f(),
                series,
                max_invariant_drift: tracked.then_some(drift),
            })
        }
        Err(failure) => {
            series_csv(config, &failure.partial, Some(&failure.error)).write(&csv)?;
            std::fs::write(out.join(format!("error_{kind}.txt")), format!("{}\n", failure))?;
            Err(failure.error)
        }
    }
}

/// Standard setup, then one trajectory per selected system, all from the
/// same initial state. Writes `series_<kind>.csv` for each and overlay charts
/// `norm.svg`, `psi.svg` and `delta_f.svg`.
pub fn cmd_evolve(config: &RunConfig) -> Result<EvolveReport> {
    let params = config.params()?;
    let grid = config.grid()?;
    let stepper = config.stepper(&grid)?;
    let eq = standard_setup(&params, &grid)?;
    let kinds = config.kind.kinds();
    let results = parallel_map(&kinds, |&k| run_kind(config, &eq, k, &stepper));
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_overlays(config.prepare_out()?, config.h, &runs)?;
    Ok(EvolveReport {
        t_c: eq.t_c,
        delta0: eq.delta0,
        t_sim: eq.t_sim,
        k_modes: grid.k_modes(),
        tau: stepper.tau,
        steps: stepper.steps(),
        runs,
    })
}

fn write_overlays(out: &Path, h: Semiclassical, runs: &[RunSummary]) -> Result<()> {
    let label = format!("h = 1/{}", h.inverse());
    let mut norm = Chart::new(&format!("|alpha_t|^2 / h^2, {label}"), "t", "|alpha_t|^2 / h^2", Scale::Linear);
    let mut psi = Chart::new(&format!("|psi_t|, {label}"), "t", "|psi_t|", Scale::Linear);
    let mut df = Chart::new(&format!("Relative free-energy error, {label}"), "t", "delta F", Scale::Log);
    for run in runs {
        let name = run.kind.name();
        norm = norm.line(name, run.series.rows.iter().map(|r| (r.t, r.norm_scaled)).collect());
        psi = psi.line(name, run.series.abs_psi().collect());
        if run.kind.is_nonlinear() {
            df = df.line(name, run.series.rows.iter().map(|r| (r.t, r.delta_f)).collect());
        }
    }
    norm.write(&out.join("norm.svg"))?;
    psi.write(&out.join("psi.svg"))?;
    df.write(&out.join("delta_f.svg"))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodComparison {
    pub n_small: usize,
    pub n_big: usize,
    /// First time the normalized order parameters differ by more than the
    /// threshold; infinite if they never do.
    pub divergence_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckNReport {
    pub comparisons: Vec<PeriodComparison>,
    pub adequate_n: usize,
}

/// Runs the nonlinear system at `N, 2N, 4N, ...` from the configured `N`
/// until two consecutive periods agree; the smaller of that pair is adequate.
/// Writes `check_n.csv`. Fails once `2N` would exceed [`PERIOD_CAP`].
pub fn cmd_check_n(config: &RunConfig) -> Result<CheckNReport> {
    let params = config.params()?;
    let kind = config.kind.nonlinear();
    let run = |n: &usize| -> Result<TimeSeries> {
        let grid = GridSpec::new(*n, config.m_density, config.h)?;
        let stepper = config.stepper(&grid)?;
        let eq = standard_setup(&params, &grid)?;
        evolve(&eq, kind, &stepper, |_| {}).map_err(|f| f.error)
    };

    let mut comparisons = Vec::new();
    let mut n = config.n_period;
    if 2 * n > PERIOD_CAP {
        return Err(BdgError::PeriodCap { cap: PERIOD_CAP });
    }
    let mut pair = parallel_map(&[n, 2 * n], run).into_iter();
    let mut small = pair.next().expect("two runs")?;
    let mut big = pair.next().expect("two runs")?;
    let adequate = loop {
        let t = interference_check(&small, &big)?;
        comparisons.push(PeriodComparison { n_small: n, n_big: 2 * n, divergence_time: t });
        if t.is_infinite() {
            break Some(n);
        }
        n *= 2;
        if 2 * n > PERIOD_CAP {
            break None;
        }
        small = big;
        big = run(&(2 * n))?;
    };

    let out = config.prepare_out()?;
    let mut table = Table::new(&["n_small", "n_big", "divergence_time"]);
    config.describe(&mut table);
    table.meta("kind", kind);
    table.rows = comparisons.iter().map(|c| vec![c.n_small as f64, c.n_big as f64, c.divergence_time]).collect();
    table.write(&out.join("check_n.csv"))?;
    match adequate {
        Some(adequate_n) => Ok(CheckNReport { comparisons, adequate_n }),
        None => Err(BdgError::PeriodCap { cap: PERIOD_CAP }),
    }
}

/// Named configurations reproducing the figures of the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigurePreset {
    /// Gap versus `h`.
    Fig1,
    /// Pair norm, `h = 1/4`.
    Fig2,
    /// Order parameter, `h = 1/4`.
    Fig3,
    /// Pair norm, `h = 1/8`.
    Fig4,
    /// Order parameter, `h = 1/8`.
    Fig5,
    /// Pair norm, `h = 1/16`.
    Fig6,
    /// Order parameter, `h = 1/16`.
    Fig7,
    /// Free-energy error, `h = 1/8`.
    Fig8,
    /// Order parameter at the too-short period `N = 4`, `h = 1/8`.
    Fig9,
}

impl FigurePreset {
    pub const ALL: [FigurePreset; 9] = [
        FigurePreset::Fig1,
        FigurePreset::Fig2,
        FigurePreset::Fig3,
        FigurePreset::Fig4,
        FigurePreset::Fig5,
        FigurePreset::Fig6,
        FigurePreset::Fig7,
        FigurePreset::Fig8,
        FigurePreset::Fig9,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FigurePreset::Fig1 => "fig1",
            FigurePreset::Fig2 => "fig2",
            FigurePreset::Fig3 => "fig3",
            FigurePreset::Fig4 => "fig4",
            FigurePreset::Fig5 => "fig5",
            FigurePreset::Fig6 => "fig6",
            FigurePreset::Fig7 => "fig7",
            FigurePreset::Fig8 => "fig8",
            FigurePreset::Fig9 => "fig9",
        }
    }

    /// The run configuration of this preset. Grid density, step factor,
    /// sampling and physical constants come from `base`; `h`, `N`, the
    /// systems and the horizon are fixed by the preset.
    pub fn config(self, base: &RunConfig) -> RunConfig {
        let h = |e| Semiclassical::from_exponent(e).expect("preset exponents are valid");
        let mut c = base.with_out(base.out_dir.join(self.name()));
        c.n_period = 8;
        let (exp, kind, factor) = match self {
            FigurePreset::Fig1 | FigurePreset::Fig2 | FigurePreset::Fig3 => (2, KindSelection::Both, 1.0),
            FigurePreset::Fig4 | FigurePreset::Fig5 => (3, KindSelection::Both, 2.0),
            FigurePreset::Fig6 | FigurePreset::Fig7 => (4, KindSelection::Both, 1.0),
            FigurePreset::Fig8 => (3, KindSelection::Single(SystemKind::FullCoupled), 2.0),
            FigurePreset::Fig9 => {
                c.n_period = 4;
                (3, KindSelection::Single(SystemKind::FullCoupled), 2.0)
            }
        };
        c.h = h(exp);
        c.kind = kind;
        c.t_end_factor = factor;
        c
    }
}

impl FromStr for FigurePreset {
    type Err = BdgError;

    fn from_str(s: &str) -> Result<Self> {
        FigurePreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| BdgError::InvalidParameter(format!("unknown figure preset '{s}' (expected fig1 to fig9)")))
    }
}

#[derive(Debug, Clone)]
pub enum FigureOutput {
    GapTable(Vec<GapRow>),
    Evolution(EvolveReport),
}

/// Runs a preset; artifacts go to `<out>/<preset>/`.
pub fn cmd_figure(preset: FigurePreset, base: &RunConfig) -> Result<FigureOutput> {
    let config = preset.config(base);
    match preset {
        FigurePreset::Fig1 => {
            let hs: Vec<_> = (2..=4).map(|e| Semiclassical::from_exponent(e).expect("valid")).collect();
            cmd_gap_table(&config, &hs).map(FigureOutput::GapTable)
        }
        _ => cmd_evolve(&config).map(FigureOutput::Evolution),
    }
}
