//! The subcommand implementations and their on-disk artifacts.
//!
//! Every report artifact is deterministic in (config, seed): wall-clock data
//! is quarantined in a `.times.json` sidecar so that reruns of the same
//! configuration produce byte-identical reports.

use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use entbench::bench::{
    amplitude_sweep, default_amplitude_grid, default_calibration_grid, entanglement_rate,
    phase_noise_sweep, NegativitySummary, SweepAxis, SweepSpec, WorkingPointReport,
};
use entbench::channel::{sample_heterodyne, BatchMetadata, ChannelModel, ProbeAlphabet, SampleBatch};
use entbench::error::{EntError, EntResult};
use entbench::io;
use entbench::moments::{estimate_moments, extract_beta, infer_overlap, MomentRecord};
use entbench::quant::quantify_with_error_bars;

use crate::config::{Resolved, RunConfig};

/// Confidence multiples quantified beyond the point estimate.
const BAND_KS: [f64; 4] = [0.0, 1.0, 2.0, 3.0];

/// Where the sender overlap used by a quantification came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapSource {
    /// A configured probe amplitude fixed s = e^(−2α²).
    PreparedAlphabet,
    /// Estimated from the record's mean amplitudes and the transmission.
    Inferred,
}

/// Deterministic quantification artifact: depends only on (config, seed, data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    /// Byte-exact copy of the input configuration.
    pub config_text: String,
    /// The merged configuration the run executed with.
    pub config: RunConfig,
    pub transmission: f64,
    pub overlap_s: f64,
    pub overlap_source: OverlapSource,
    pub record: MomentRecord,
    /// Error-bar multiples, parallel to `results` and `rates`.
    pub k_sigmas: Vec<f64>,
    pub results: Vec<NegativitySummary>,
    /// Distribution rates in log-neg units per second, parallel to `results`.
    pub rates: Vec<f64>,
}

/// Wall-clock sidecar — the only nondeterministic artifact of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub started_unix_s: f64,
    pub duration_s: f64,
}

struct Stopwatch {
    started_unix_s: f64,
    clock: Instant,
}

impl Stopwatch {
    fn start() -> Self {
        let started_unix_s = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Stopwatch {
            started_unix_s,
            clock: Instant::now(),
        }
    }

    fn stop(&self) -> RunTiming {
        RunTiming {
            started_unix_s: self.started_unix_s,
            duration_s: self.clock.elapsed().as_secs_f64(),
        }
    }
}

/// Simulates one heterodyne batch and writes `samples.csv` plus its metadata
/// sidecar into the output directory.
pub fn cmd_simulate(r: &Resolved) -> EntResult<()> {
    let channel = r.channel()?;
    let alphabet = ProbeAlphabet::new(r.probe_alpha()?, r.pulse_rate)?;
    let batch = sample_heterodyne(&alphabet, &channel, r.pulses, r.seed)?;
    fs::create_dir_all(&r.out_dir)?;
    let csv = r.out_dir.join("samples.csv");
    io::write_batch(&csv, &batch)?;
    println!("wrote {} pulses to {}", r.pulses, csv.display());
    Ok(())
}

/// Estimates moments from a sample CSV and minimizes the negativity over all
/// consistent states, at the point estimate and at 1σ/2σ/3σ adversarially
/// widened error bars. Writes `report.json` (+ timing sidecar) and prints a
/// one-line summary. Solver verdicts — including "infeasible" — are results,
/// not failures.
pub fn cmd_quantify(samples: &Path, r: &Resolved) -> EntResult<()> {
    let watch = Stopwatch::start();
    let records = io::read_samples(samples)?;
    let meta = io::read_metadata(samples)?;
    // Explicit settings win; the sidecar fills in for bare CSVs.
    let transmission = r
        .transmission
        .or(meta.as_ref().map(|m| m.channel.transmission))
        .ok_or_else(|| {
            EntError::invalid(
                "transmission unknown: give --preset/--transmission or provide the metadata sidecar",
            )
        })?;
    let meta = match meta {
        Some(m) => m,
        None => BatchMetadata {
            seed: r.seed,
            channel: ChannelModel::new(transmission, r.excess_noise, r.calibration_amplitude)?,
            alphabet: ProbeAlphabet::new(r.alpha.unwrap_or(0.0), r.pulse_rate)?,
            model: "ingested".into(),
        },
    };
    let batch = SampleBatch { records, meta };
    let (record, uncertainty) = estimate_moments(&batch, transmission)?;

    // A configured probe amplitude fixes the prepared overlap; otherwise the
    // overlap is inferred from the data.
    let (overlap_s, overlap_source, known) = match r.alpha {
        Some(a) => (
            (-2.0 * a * a).exp(),
            OverlapSource::PreparedAlphabet,
            Some((-2.0 * a * a).exp()),
        ),
        None => (
            infer_overlap(&extract_beta(&record), transmission)?.overlap_s,
            OverlapSource::Inferred,
            None,
        ),
    };
    let results = quantify_with_error_bars(&record, &uncertainty, known, &BAND_KS, &r.solver)?;
    let rates: Vec<f64> = results
        .iter()
        .map(|res| entanglement_rate(res.log_negativity.max(0.0), r.pulse_rate))
        .collect();

    let report = RunReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_text: r.echo.clone(),
        config: r.merged.clone(),
        transmission,
        overlap_s,
        overlap_source,
        record,
        k_sigmas: BAND_KS.to_vec(),
        results: results.iter().map(Into::into).collect(),
        rates,
    };
    fs::create_dir_all(&r.out_dir)?;
    io::write_json(&r.out_dir.join("report.json"), &report)?;
    io::write_json(&r.out_dir.join("report.times.json"), &watch.stop())?;

    let head = &report.results[0];
    println!(
        "N={:.6e} E_N={:.6e} rate={:.6e} status={}",
        head.negativity, head.log_negativity, report.rates[0], head.status
    );
    Ok(())
}

/// Sweeps the modulation amplitude and writes `sweep.json`,
/// `sweep_amplitude.csv`, and the timing sidecar.
pub fn cmd_sweep(r: &Resolved) -> EntResult<()> {
    let watch = Stopwatch::start();
    let spec = SweepSpec {
        channel: r.channel()?,
        grid: r.grid.clone().unwrap_or_else(default_amplitude_grid),
        pulses: r.pulses,
        pulse_rate: r.pulse_rate,
        seed: r.seed,
        solver: r.solver.clone(),
        probe_alpha: 0.0,
    };
    let report = amplitude_sweep(&spec)?;
    fs::create_dir_all(&r.out_dir)?;
    io::write_json(&r.out_dir.join("sweep.json"), &report)?;
    io::write_amplitude_csv(&r.out_dir.join("sweep_amplitude.csv"), &report)?;
    io::write_json(&r.out_dir.join("sweep.times.json"), &watch.stop())?;
    print_optimal(&report);
    Ok(())
}

/// Sweeps the phase-noise tuning parameter at fixed probe amplitude and
/// writes `sweep_phase.json`, `sweep_phase.csv`, and the timing sidecar.
pub fn cmd_sweep_phase(r: &Resolved) -> EntResult<()> {
    let watch = Stopwatch::start();
    let spec = SweepSpec {
        channel: r.channel()?,
        grid: r.grid.clone().unwrap_or_else(default_calibration_grid),
        pulses: r.pulses,
        pulse_rate: r.pulse_rate,
        seed: r.seed,
        solver: r.solver.clone(),
        probe_alpha: r.probe_alpha()?,
    };
    let report = phase_noise_sweep(&spec)?;
    fs::create_dir_all(&r.out_dir)?;
    io::write_json(&r.out_dir.join("sweep_phase.json"), &report)?;
    io::write_phase_csv(&r.out_dir.join("sweep_phase.csv"), &report)?;
    io::write_json(&r.out_dir.join("sweep_phase.times.json"), &watch.stop())?;
    print_optimal(&report);
    match report.threshold_tuning {
        Some(t) => println!("threshold_tuning={t:.4}"),
        None => println!("threshold_tuning=none"),
    }
    Ok(())
}

fn parameter_label(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Amplitude => "alpha",
        SweepAxis::PhaseTuning => "tuning",
    }
}

fn print_optimal(report: &WorkingPointReport) {
    let label = parameter_label(report.axis);
    match report.optimal_row() {
        Some(row) => println!(
            "optimal {label}={:.4} N={:.6e} rate={:.6e}",
            row.parameter, row.quant.negativity, row.rate
        ),
        None => println!("no quantum working point"),
    }
}

/// Prints a human-readable summary of a previously written report, either a
/// sweep report or a quantification report.
pub fn cmd_report(path: &Path) -> EntResult<()> {
    let value: serde_json::Value = io::read_json(path)?;
    if value.get("axis").is_some() {
        let report: WorkingPointReport = serde_json::from_value(value)?;
        let label = parameter_label(report.axis);
        println!(
            "axis={label} rows={} pulse_rate={:.6e}",
            report.rows.len(),
            report.pulse_rate
        );
        for row in &report.rows {
            println!(
                "{label}={:.4} N={:.6e} E_N={:.6e} rate={:.6e} status={}",
                row.parameter,
                row.quant.negativity,
                row.quant.log_negativity,
                row.rate,
                row.quant.status
            );
        }
        print_optimal(&report);
        if report.axis == SweepAxis::PhaseTuning {
            match report.threshold_tuning {
                Some(t) => println!("threshold_tuning={t:.4}"),
                None => println!("threshold_tuning=none"),
            }
        }
    } else if value.get("results").is_some() {
        let report: RunReport = serde_json::from_value(value)?;
        println!(
            "tool_version={} transmission={:.6e} overlap_s={:.6e} overlap={}",
            report.tool_version,
            report.transmission,
            report.overlap_s,
            match report.overlap_source {
                OverlapSource::PreparedAlphabet => "prepared_alphabet",
                OverlapSource::Inferred => "inferred",
            }
        );
        for ((k, res), rate) in report
            .k_sigmas
            .iter()
            .zip(&report.results)
            .zip(&report.rates)
        {
            println!(
                "k={k} N={:.6e} E_N={:.6e} rate={:.6e} status={}",
                res.negativity, res.log_negativity, rate, res.status
            );
        }
    } else {
        return Err(EntError::invalid(format!(
            "{} is not a recognized report document",
            path.display()
        )));
    }
    Ok(())
}
