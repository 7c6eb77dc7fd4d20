use std::path::PathBuf;
use std::process::ExitCode;

use bdg_core::runner::{
    cmd_check_n, cmd_convergence_m, cmd_evolve, cmd_figure, cmd_gap_table, cmd_tc, parse_h, parse_h_list,
    EvolveReport, FigureOutput, FigurePreset, KindSelection, RunConfig,
};
use bdg_core::model::Semiclassical;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bdg", version, about = "Time-dependent BCS dynamics of a 1-D Fermi gas near T_c")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Semiclassical parameter, a power of 1/2 (e.g. 1/8 or 0.125).
    #[arg(long, global = true, default_value = "1/4", value_parser = h_arg)]
    h: Semiclassical,
    /// Period N of the system in units of 2 pi / h.
    #[arg(long, global = true, default_value_t = 8)]
    n_period: usize,
    /// Momenta per unit volume M.
    #[arg(long, global = true, default_value_t = 256)]
    m_density: usize,
    /// Strength a of the contact interaction.
    #[arg(long, global = true, default_value_t = 1.0)]
    a: f64,
    /// Chemical potential.
    #[arg(long, global = true, default_value_t = 1.0)]
    mu: f64,
    /// full, reduced, linear or both (full and linear).
    #[arg(long, global = true, default_value = "both", value_parser = kind_arg)]
    kind: KindSelection,
    /// Integrate up to t_end = factor / h^2.
    #[arg(long, global = true, default_value_t = 1.0)]
    t_end_factor: f64,
    /// Time step tau = factor / K.
    #[arg(long, global = true, default_value_t = 0.1)]
    tau_factor: f64,
    /// Approximate number of sampled rows per series.
    #[arg(long, global = true, default_value_t = 2000)]
    samples: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Critical temperature of the configured grid.
    Tc,
    /// Gap and critical temperature for several h.
    GapTable {
        #[arg(long, default_value = "1/4,1/8,1/16")]
        h_list: String,
    },
    /// Evolve the standard initial state.
    Evolve,
    /// Critical temperature as a function of M.
    ConvergenceM {
        #[arg(long, default_value = "16,32,64,128,256,512", value_delimiter = ',')]
        m_list: Vec<usize>,
    },
    /// Find the smallest period free of interference artifacts.
    CheckN,
    /// Reproduce a figure preset (fig1 to fig9).
    Figure {
        #[arg(value_parser = preset_arg)]
        preset: FigurePreset,
    },
}

fn h_arg(s: &str) -> Result<Semiclassical, String> {
    parse_h(s).map_err(|e| e.to_string())
}

fn kind_arg(s: &str) -> Result<KindSelection, String> {
    s.parse().map_err(|e: bdg_core::BdgError| e.to_string())
}

fn preset_arg(s: &str) -> Result<FigurePreset, String> {
    s.parse().map_err(|e: bdg_core::BdgError| e.to_string())
}

impl Common {
    fn config(&self) -> RunConfig {
        RunConfig {
            h: self.h,
            n_period: self.n_period,
            m_density: self.m_density,
            a: self.a,
            mu: self.mu,
            kind: self.kind,
            t_end_factor: self.t_end_factor,
            tau_factor: self.tau_factor,
            samples: self.samples,
            out_dir: self.out.clone(),
        }
    }
}

fn print_evolution(r: &EvolveReport) {
    println!(
        "T_c = {:.6}  delta_0 = {:.6}  T = {:.6}  K = {}  tau = {:.3e}  steps = {}",
        r.t_c, r.delta0, r.t_sim, r.k_modes, r.tau, r.steps
    );
    for run in &r.runs {
        let drift = run.max_invariant_drift.map_or("-".to_string(), |d| format!("{d:.2e}"));
        println!(
            "{:8} |psi_0| = {:.6}  min |psi_t|/|psi_0| = {:.4}  max dF = {:.3e}  invariant drift = {}  -> {}",
            run.kind.name(),
            run.abs_psi0(),
            run.min_ratio(),
            run.max_delta_f,
            drift,
            run.csv.display()
        );
    }
}

fn run(cli: &Cli) -> bdg_core::Result<()> {
    let config = cli.common.config();
    match &cli.command {
        Command::Tc => {
            let r = cmd_tc(&config)?;
            println!("T_c = {:.10}  residual = {:.3e}  iterations = {}  K = {}", r.t_c, r.residual, r.iterations, r.k_modes);
        }
        Command::GapTable { h_list } => {
            let hs = parse_h_list(h_list)?;
            for row in cmd_gap_table(&config, &hs)? {
                println!("h = {:<8} K = {:<6} T_c = {:.6}  delta_0 = {:.6}", row.h, row.k_modes, row.t_c, row.delta0);
            }
        }
        Command::Evolve => print_evolution(&cmd_evolve(&config)?),
        Command::ConvergenceM { m_list } => {
            for (m, t) in cmd_convergence_m(&config, m_list)? {
                println!("M = {m:<5} T_c = {t:.8}");
            }
        }
        Command::CheckN => {
            let r = cmd_check_n(&config)?;
            for c in &r.comparisons {
                println!("N = {:>2} vs {:>2}: divergence time {}", c.n_small, c.n_big, c.divergence_time);
            }
            println!("adequate N = {}", r.adequate_n);
        }
        Command::Figure { preset } => match cmd_figure(*preset, &config)? {
            FigureOutput::GapTable(rows) => {
                for row in rows {
                    println!("h = {:<8} T_c = {:.6}  delta_0 = {:.6}", row.h, row.t_c, row.delta0);
                }
            }
            FigureOutput::Evolution(r) => print_evolution(&r),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
