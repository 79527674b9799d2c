//! `entbench` — command-line front end for channel entanglement benchmarking.
//!
//! Subcommands cover the full pipeline: `simulate` writes heterodyne sample
//! batches, `quantify` turns a batch into a worst-case entanglement verdict,
//! `sweep` and `sweep-phase` locate optimal working points, and `report`
//! summarizes previously written artifacts.
//!
//! Exit codes: 0 = ran to a verdict (including "no entanglement" and
//! "infeasible"), 2 = usage or validation error, 3 = malformed data file,
//! 4 = internal numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use entbench::error::{EntError, EntResult};

use config::{Resolved, RunConfig, Tagged, Unit};

#[derive(Parser)]
#[command(
    name = "entbench",
    version,
    about = "Benchmark continuous-variable channels by the entanglement that survives them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a heterodyne batch and write samples.csv plus its metadata
    /// sidecar
    Simulate {
        #[command(flatten)]
        args: CommonArgs,
    },
    /// Estimate moments from a sample CSV and minimize the negativity over
    /// all states consistent with them
    Quantify {
        /// Sample CSV (as written by `simulate`, or external data in the
        /// same format)
        samples: PathBuf,
        #[command(flatten)]
        args: CommonArgs,
    },
    /// Sweep the modulation amplitude and report the optimal working point
    Sweep {
        #[command(flatten)]
        args: CommonArgs,
    },
    /// Sweep the phase-noise tuning 6 − |α_cal| at a fixed probe amplitude
    SweepPhase {
        #[command(flatten)]
        args: CommonArgs,
    },
    /// Print a human-readable summary of a written report
    Report {
        /// Path to report.json, sweep.json, or sweep_phase.json
        path: PathBuf,
    },
}

/// Flags shared by every pipeline command. Flags override config-file values;
/// presets fill whatever remains.
#[derive(Args)]
struct CommonArgs {
    /// JSON config file; explicit flags override its values
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Channel preset: 20km (T=0.24, ε=0.02 snl) or 40km (T=0.09, ε=0.04 snl)
    #[arg(long)]
    preset: Option<String>,
    /// Total power transmission T in (0, 1], receiver efficiency included
    #[arg(long, value_name = "T")]
    transmission: Option<f64>,
    /// Excess quadrature variance in shot-noise units
    #[arg(long, value_name = "SNL")]
    excess_noise: Option<f64>,
    /// Probe amplitude α; also fixes the sender overlap s = e^(−2α²)
    #[arg(long, value_name = "ALPHA")]
    alpha: Option<f64>,
    /// Calibration amplitude of the phase reference (smaller = more phase
    /// diffusion)
    #[arg(long, value_name = "ACAL")]
    alpha_cal: Option<f64>,
    /// Pulses per batch, or per grid point for sweeps
    #[arg(long, value_name = "N")]
    pulses: Option<u64>,
    /// RNG seed; identical (config, seed) runs reproduce artifacts
    /// byte-identically
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Starting Fock dimension of the truncation ladder
    #[arg(long, value_name = "D")]
    dim: Option<usize>,
    /// Objective tolerance τ_obj; the feasibility tolerance follows as
    /// τ_obj/10
    #[arg(long, value_name = "TOL")]
    tol: Option<f64>,
    /// Output directory (default: $ENTBENCH_OUT_DIR, else the working
    /// directory)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn resolve(&self) -> EntResult<Resolved> {
        let file = match &self.config {
            Some(path) => Some(RunConfig::load(path)?),
            None => None,
        };
        let flags = RunConfig {
            preset: self.preset.clone(),
            transmission: self.transmission,
            excess_noise: self.excess_noise.map(|v| Tagged::new(v, Unit::Snl)),
            calibration_amplitude: self.alpha_cal,
            alpha: self.alpha,
            pulse_rate: None,
            pulses: self.pulses,
            seed: self.seed,
            grid: None,
            solver: None,
            out_dir: self.out.clone(),
        };
        config::resolve(file, flags, self.tol, self.dim)
    }
}

fn run(cli: Cli) -> EntResult<()> {
    match cli.command {
        Command::Simulate { args } => commands::cmd_simulate(&args.resolve()?),
        Command::Quantify { samples, args } => commands::cmd_quantify(&samples, &args.resolve()?),
        Command::Sweep { args } => commands::cmd_sweep(&args.resolve()?),
        Command::SweepPhase { args } => commands::cmd_sweep_phase(&args.resolve()?),
        Command::Report { path } => commands::cmd_report(&path),
    }
}

/// Maps error kinds onto the documented exit-code policy. Usage errors from
/// argument parsing exit with 2 through clap itself.
fn exit_code(e: &EntError) -> u8 {
    match e {
        EntError::Format { .. } | EntError::Json(_) => 3,
        EntError::Numerical(_) => 4,
        EntError::InvalidInput(_) | EntError::InsufficientData(_) | EntError::Io(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
