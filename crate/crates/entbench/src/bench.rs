//! Parameter sweeps, entanglement-distribution rates, and optimal-working-point
//! identification — the experiment-reproduction layer.
//!
//! An amplitude sweep simulates one heterodyne batch per grid amplitude,
//! estimates moments, quantifies the worst-case negativity (with 1σ/2σ/3σ
//! error bands), and converts log-negativity into a distribution rate. A
//! phase-noise sweep instead walks the calibration-amplitude axis at a fixed
//! probe amplitude and evaluates the exact dephased moment model, so its
//! monotone trends are not blurred by sampling noise. Sweep points are
//! independent jobs; the report is an ordered reduction by grid index, and
//! rows carry no wall-clock data, so a report is reproducible byte-for-byte
//! from (spec, seed) regardless of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    diffused_mean_amplitude, effective_variance, phase_distribution, propagate_coherent,
    sample_heterodyne, ChannelModel, ProbeAlphabet, DEFAULT_PHASE_GRID,
};
use crate::error::{EntError, EntResult};
use crate::moments::{estimate_moments, MomentRecord};
use crate::quant::{
    quantify_with_error_bars, truncation_converge, NegativityResult, SolverConfig, SolverStatus,
};
use num_complex::Complex64;

/// Pulse repetition rate of the reference source, in hertz.
pub const DEFAULT_PULSE_RATE: f64 = 0.875e6;

/// The phase-noise tuning parameter is 6 − |α_cal|: 0 is the clean limit of
/// the calibration grid, 6 is full dephasing.
pub const TUNING_OFFSET: f64 = 6.0;

/// Amplitude grid α ∈ {0.05, 0.10, …, 1.0}.
pub fn default_amplitude_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 * 0.05).collect()
}

/// Calibration-amplitude grid from 6 down to 0 in steps of 0.25 (tuning
/// ascending from 0 to 6).
pub fn default_calibration_grid() -> Vec<f64> {
    (0..=24).map(|i| TUNING_OFFSET - i as f64 * 0.25).collect()
}

/// Which axis a sweep walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Amplitude,
    PhaseTuning,
}

/// Full description of one sweep: the channel, the grid, the sampling budget,
/// and the solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub channel: ChannelModel,
    /// Modulation amplitudes, or calibration amplitudes for phase sweeps.
    pub grid: Vec<f64>,
    /// Heterodyne pulses per grid point.
    pub pulses: u64,
    /// Pulse repetition rate in hertz.
    pub pulse_rate: f64,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Fixed modulation amplitude for phase sweeps; unused by amplitude
    /// sweeps.
    pub probe_alpha: f64,
}

impl SweepSpec {
    /// An amplitude sweep over the default grid.
    pub fn amplitude(channel: ChannelModel, pulses: u64, seed: u64) -> Self {
        SweepSpec {
            channel,
            grid: default_amplitude_grid(),
            pulses,
            pulse_rate: DEFAULT_PULSE_RATE,
            seed,
            solver: SolverConfig::default(),
            probe_alpha: 0.0,
        }
    }

    /// A phase-noise sweep over the default calibration grid at probe
    /// amplitude `probe_alpha`.
    pub fn phase(channel: ChannelModel, probe_alpha: f64, pulses: u64, seed: u64) -> Self {
        SweepSpec {
            channel,
            grid: default_calibration_grid(),
            pulses,
            pulse_rate: DEFAULT_PULSE_RATE,
            seed,
            solver: SolverConfig::default(),
            probe_alpha,
        }
    }

    pub fn validate(&self) -> EntResult<()> {
        ChannelModel::new(
            self.channel.transmission,
            self.channel.excess_noise,
            self.channel.calibration_amplitude,
        )?;
        if self.grid.is_empty() {
            return Err(EntError::invalid("sweep grid must be non-empty"));
        }
        if self.grid.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(EntError::invalid("grid values must be finite and nonnegative"));
        }
        if self.pulses < 10_000 {
            return Err(EntError::invalid(format!(
                "need at least 10^4 pulses per point, got {}",
                self.pulses
            )));
        }
        if !(self.pulse_rate > 0.0 && self.pulse_rate.is_finite()) {
            return Err(EntError::invalid("pulse rate must be positive"));
        }
        if !(self.probe_alpha >= 0.0 && self.probe_alpha.is_finite()) {
            return Err(EntError::invalid("probe amplitude must be nonnegative"));
        }
        self.solver.validate()
    }
}

/// The deterministic slice of a [`NegativityResult`]: everything except wall
/// time, so that sweep reports depend only on (spec, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativitySummary {
    pub negativity: f64,
    pub log_negativity: f64,
    pub status: SolverStatus,
    pub residual: f64,
    pub lower_bound_gap: Option<f64>,
    pub d_used: usize,
    pub iterations: usize,
}

impl From<&NegativityResult> for NegativitySummary {
    fn from(r: &NegativityResult) -> Self {
        NegativitySummary {
            negativity: r.negativity,
            log_negativity: r.log_negativity,
            status: r.status,
            residual: r.residual,
            lower_bound_gap: r.lower_bound_gap,
            d_used: r.d_used,
            iterations: r.iterations,
        }
    }
}

/// One grid point of a sweep report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Modulation amplitude α, or the tuning parameter 6 − |α_cal|.
    pub parameter: f64,
    pub record: MomentRecord,
    pub quant: NegativitySummary,
    /// Distribution rate E_N × pulse_rate, in log-neg units per second.
    pub rate: f64,
    /// Rates at the widened confidence levels, parallel to the report's
    /// `k_sigmas`.
    pub band_rates: Vec<f64>,
}

/// Assembled sweep output: all rows in grid order plus the deduced optimal
/// point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingPointReport {
    pub axis: SweepAxis,
    /// Rate units are log-neg units per second at this repetition rate.
    pub pulse_rate: f64,
    /// Error-band multiples beyond the point estimate (amplitude sweeps:
    /// 1σ, 2σ, 3σ).
    pub k_sigmas: Vec<f64>,
    pub rows: Vec<SweepRow>,
    /// Index of the rate-maximizing row, if any row shows entanglement.
    pub optimal: Option<usize>,
    /// Phase sweeps: smallest tuning value from which the negativity stays
    /// at zero through the end of the grid.
    pub threshold_tuning: Option<f64>,
}

impl WorkingPointReport {
    /// The optimal row itself, when one exists.
    pub fn optimal_row(&self) -> Option<&SweepRow> {
        self.optimal.map(|i| &self.rows[i])
    }
}

/// Rate of distributed entanglement: E_N × pulse_rate, in log-neg units per
/// second. Additivity of the log-negativity is what justifies accumulating it
/// per pulse.
///
/// # Panics
/// If `e_n` is negative or `pulse_rate` is not positive.
pub fn entanglement_rate(e_n: f64, pulse_rate: f64) -> f64 {
    assert!(e_n >= 0.0, "log-negativity must be nonnegative");
    assert!(pulse_rate > 0.0, "pulse rate must be positive");
    e_n * pulse_rate
}

/// Mixes a per-point stream index into the sweep seed (SplitMix64-style), so
/// grid points get independent, order-insensitive substreams.
fn point_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Error-band multiples used by amplitude sweeps: the point estimate plus
/// 1σ, 2σ, 3σ widenings.
const BAND_KS: [f64; 4] = [0.0, 1.0, 2.0, 3.0];

/// Sweeps the modulation amplitude: per grid point, simulate a batch, estimate
/// moments, minimize the negativity at nominal and widened error bars, and
/// convert to rates. Solver verdicts (infeasible, iteration cap) land in the
/// row status rather than aborting the sweep. Deterministic given the seed.
pub fn amplitude_sweep(spec: &SweepSpec) -> EntResult<WorkingPointReport> {
    spec.validate()?;
    let rows: Vec<SweepRow> = spec
        .grid
        .par_iter()
        .enumerate()
        .map(|(idx, &alpha)| -> EntResult<SweepRow> {
            let alphabet = ProbeAlphabet::new(alpha, spec.pulse_rate)?;
            let batch = sample_heterodyne(
                &alphabet,
                &spec.channel,
                spec.pulses,
                point_seed(spec.seed, idx as u64),
            )?;
            let (record, unc) = estimate_moments(&batch, spec.channel.transmission)?;
            let results =
                quantify_with_error_bars(&record, &unc, None, &BAND_KS, &spec.solver)?;
            Ok(assemble_row(alpha, record, &results, spec.pulse_rate))
        })
        .collect::<EntResult<Vec<_>>>()?;
    let optimal = argmax_rate(&rows);
    Ok(WorkingPointReport {
        axis: SweepAxis::Amplitude,
        pulse_rate: spec.pulse_rate,
        k_sigmas: BAND_KS[1..].to_vec(),
        rows,
        optimal,
        threshold_tuning: None,
    })
}

fn assemble_row(
    parameter: f64,
    record: MomentRecord,
    results: &[NegativityResult],
    pulse_rate: f64,
) -> SweepRow {
    let base = &results[0];
    let rate = entanglement_rate(base.log_negativity.max(0.0), pulse_rate);
    let band_rates = results[1..]
        .iter()
        .map(|r| entanglement_rate(r.log_negativity.max(0.0), pulse_rate))
        .collect();
    SweepRow {
        parameter,
        record,
        quant: base.into(),
        rate,
        band_rates,
    }
}

/// Sweeps the phase-noise tuning parameter 6 − |α_cal| at a fixed probe
/// amplitude, using the exact dephased moment model (mixture means and
/// effective variances) rather than sampled batches: the monotone contracts
/// on the variance and rate columns are properties of the model, not of any
/// finite sample. The sender-side overlap is that of the *prepared* alphabet
/// — dephasing acts on the transmitted mode and cannot alter ρ_A.
pub fn phase_noise_sweep(spec: &SweepSpec) -> EntResult<WorkingPointReport> {
    spec.validate()?;
    let s_prepared = (-2.0 * spec.probe_alpha * spec.probe_alpha).exp();
    let rows: Vec<SweepRow> = spec
        .grid
        .par_iter()
        .map(|&cal| -> EntResult<SweepRow> {
            let channel = ChannelModel::new(
                spec.channel.transmission,
                spec.channel.excess_noise,
                Some(cal),
            )?;
            let beta = propagate_coherent(Complex64::new(spec.probe_alpha, 0.0), &channel);
            let f = phase_distribution(cal, DEFAULT_PHASE_GRID)?;
            let mean = diffused_mean_amplitude(beta, &f)?;
            let (var_x, var_p) = effective_variance(beta, &channel)?;
            let sqrt2 = std::f64::consts::SQRT_2;
            let record = MomentRecord::symmetric(
                sqrt2 * mean.re,
                sqrt2 * mean.im,
                var_x,
                var_p,
                spec.pulses,
                channel.transmission,
            );
            let result = truncation_converge(&record, s_prepared, &spec.solver)?;
            let rate = entanglement_rate(result.log_negativity.max(0.0), spec.pulse_rate);
            Ok(SweepRow {
                parameter: TUNING_OFFSET - cal.abs(),
                record,
                quant: (&result).into(),
                rate,
                band_rates: Vec::new(),
            })
        })
        .collect::<EntResult<Vec<_>>>()?;
    let optimal = argmax_rate(&rows);
    let threshold_tuning = threshold_from(&rows, spec.solver.tol_obj);
    Ok(WorkingPointReport {
        axis: SweepAxis::PhaseTuning,
        pulse_rate: spec.pulse_rate,
        k_sigmas: Vec::new(),
        rows,
        optimal,
        threshold_tuning,
    })
}

/// Index of the rate-maximizing row; ties break toward the smaller parameter
/// (cheaper probe states). All-zero rates mean no quantum working point.
fn argmax_rate(rows: &[SweepRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, row) in rows.iter().enumerate() {
        if row.rate <= 0.0 {
            continue;
        }
        let better = match best {
            None => true,
            Some(j) => {
                row.rate > rows[j].rate
                    || (row.rate == rows[j].rate && row.parameter < rows[j].parameter)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Smallest tuning value from which N stays ≤ `tol` for every larger tuning
/// in the grid.
fn threshold_from(rows: &[SweepRow], tol: f64) -> Option<f64> {
    let mut order: Vec<&SweepRow> = rows.iter().collect();
    order.sort_by(|a, b| {
        a.parameter
            .partial_cmp(&b.parameter)
            .expect("tuning values are finite")
    });
    let mut threshold = None;
    for row in order.iter().rev() {
        if row.quant.negativity <= tol {
            threshold = Some(row.parameter);
        } else {
            break;
        }
    }
    threshold
}

/// The deduced optimal point of operation: the row maximizing the rate of
/// distributed entanglement, or `None` when no grid point certifies any
/// entanglement (no quantum working point).
pub fn working_point(report: &WorkingPointReport) -> Option<&SweepRow> {
    argmax_rate(&report.rows).map(|i| &report.rows[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rate_fixtures_match_quoted_values() {
        let r = entanglement_rate(0.19, 0.875e6);
        assert_abs_diff_eq!(r, 166_250.0, epsilon = 1e-9);
        assert!((r - 166_000.0).abs() / 166_000.0 < 0.01);
        let r = entanglement_rate(0.017, 0.875e6);
        assert_abs_diff_eq!(r, 14_875.0, epsilon = 1e-9);
        assert!((r - 15_000.0).abs() / 15_000.0 < 0.01);
        assert_eq!(entanglement_rate(0.0, 0.875e6), 0.0);
    }

    #[test]
    #[should_panic(expected = "nonnegative")]
    fn negative_log_negativity_panics() {
        entanglement_rate(-0.1, 1.0);
    }

    #[test]
    fn default_grids_match_documented_shape() {
        let a = default_amplitude_grid();
        assert_eq!(a.len(), 20);
        assert_abs_diff_eq!(a[0], 0.05);
        assert_abs_diff_eq!(a[19], 1.0);
        let c = default_calibration_grid();
        assert_eq!(c.len(), 25);
        assert_abs_diff_eq!(c[0], 6.0);
        assert_abs_diff_eq!(c[24], 0.0);
    }

    #[test]
    fn spec_validation_rejects_bad_inputs() {
        let channel = ChannelModel::new(0.24, 0.02, None).unwrap();
        let good = SweepSpec::amplitude(channel, 10_000, 1);
        assert!(good.validate().is_ok());
        let mut s = good.clone();
        s.grid.clear();
        assert!(s.validate().is_err());
        let mut s = good.clone();
        s.pulses = 9_999;
        assert!(s.validate().is_err());
        let mut s = good.clone();
        s.pulse_rate = 0.0;
        assert!(s.validate().is_err());
        let mut s = good;
        s.channel.transmission = 1.5;
        assert!(s.validate().is_err());
    }

    fn synthetic_row(parameter: f64, negativity: f64, pulse_rate: f64) -> SweepRow {
        let e_n = (2.0 * negativity + 1.0).log2();
        SweepRow {
            parameter,
            record: MomentRecord::symmetric(0.1, 0.0, 1.0, 1.0, 10_000, 0.5),
            quant: NegativitySummary {
                negativity,
                log_negativity: e_n,
                status: SolverStatus::Optimal,
                residual: 0.0,
                lower_bound_gap: None,
                d_used: 12,
                iterations: 1,
            },
            rate: entanglement_rate(e_n, pulse_rate),
            band_rates: Vec::new(),
        }
    }

    #[test]
    fn working_point_picks_max_and_breaks_ties_small() {
        let rows: Vec<SweepRow> = [(0.1, 0.02), (0.3, 0.07), (0.5, 0.07), (0.8, 0.01)]
            .iter()
            .map(|&(a, n)| synthetic_row(a, n, DEFAULT_PULSE_RATE))
            .collect();
        let report = WorkingPointReport {
            axis: SweepAxis::Amplitude,
            pulse_rate: DEFAULT_PULSE_RATE,
            k_sigmas: vec![],
            rows,
            optimal: None,
            threshold_tuning: None,
        };
        let best = working_point(&report).unwrap();
        assert_abs_diff_eq!(best.parameter, 0.3);
    }

    #[test]
    fn working_point_single_row_and_all_zero() {
        let one = WorkingPointReport {
            axis: SweepAxis::Amplitude,
            pulse_rate: DEFAULT_PULSE_RATE,
            k_sigmas: vec![],
            rows: vec![synthetic_row(0.2, 0.05, DEFAULT_PULSE_RATE)],
            optimal: None,
            threshold_tuning: None,
        };
        assert_abs_diff_eq!(working_point(&one).unwrap().parameter, 0.2);
        let zero = WorkingPointReport {
            rows: vec![
                synthetic_row(0.1, 0.0, DEFAULT_PULSE_RATE),
                synthetic_row(0.2, 0.0, DEFAULT_PULSE_RATE),
            ],
            ..one
        };
        assert!(working_point(&zero).is_none());
    }

    #[test]
    fn threshold_scan_finds_suffix_start() {
        let rows: Vec<SweepRow> = [(0.0, 0.06), (1.0, 0.03), (2.0, 0.0), (3.0, 0.0)]
            .iter()
            .map(|&(t, n)| synthetic_row(t, n, DEFAULT_PULSE_RATE))
            .collect();
        assert_eq!(threshold_from(&rows, 1e-6), Some(2.0));
        let none: Vec<SweepRow> = [(0.0, 0.06), (1.0, 0.03)]
            .iter()
            .map(|&(t, n)| synthetic_row(t, n, DEFAULT_PULSE_RATE))
            .collect();
        assert_eq!(threshold_from(&none, 1e-6), None);
    }

    #[test]
    fn point_seeds_are_distinct() {
        let seeds: Vec<u64> = (0..100).map(|i| point_seed(7, i)).collect();
        let mut uniq = seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), seeds.len());
    }
}
