//! Channel models and synthetic heterodyne records.
//!
//! The system under test is a bosonic channel with total transmission `T`
//! (receiver efficiency included), symmetric excess noise `ε` on top of the
//! vacuum variance, and optionally a dephased phase reference summarized by
//! the calibration amplitude `|α_cal|`. Probing uses the binary alphabet
//! `{|α⟩, |−α⟩}` with symbol 0 ↦ +α and symbol 1 ↦ −α, modulated along x̂.
//!
//! Double-homodyne outcomes are reported in shot-noise units: a coherent
//! output of mean amplitude β produces records with means `(√2·Re β, √2·Im β)`
//! and per-axis variance `state variance + 1` (one vacuum unit added by the
//! measurement), so the vacuum record has variance 2 and reported *state*
//! variances are record variances minus 1.

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EntError, EntResult};

/// Heterodyne records are generated in fixed-size shards, each with its own
/// generator keyed by `(seed, shard index)`, so batches are reproducible
/// bit-for-bit regardless of how shards are scheduled across threads.
const SHARD_SIZE: u64 = 1 << 16;

/// Default angular grid size for phase distributions.
pub const DEFAULT_PHASE_GRID: usize = 512;

/// Radial Simpson intervals used when integrating Q-functions.
const RADIAL_INTERVALS: usize = 2048;

/// A lossy, noisy, possibly phase-diffused bosonic channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Total power transmission in (0, 1], receiver efficiency included.
    pub transmission: f64,
    /// Excess quadrature variance ε ≥ 0 in shot-noise units (vacuum = 1).
    pub excess_noise: f64,
    /// Calibration amplitude |α_cal| of the phase reference; `None` means a
    /// perfect reference (no phase diffusion).
    pub calibration_amplitude: Option<f64>,
}

impl ChannelModel {
    pub fn new(
        transmission: f64,
        excess_noise: f64,
        calibration_amplitude: Option<f64>,
    ) -> EntResult<Self> {
        if !(transmission > 0.0 && transmission <= 1.0) {
            return Err(EntError::invalid(format!(
                "transmission must lie in (0, 1], got {transmission}"
            )));
        }
        if !(excess_noise >= 0.0 && excess_noise.is_finite()) {
            return Err(EntError::invalid(format!(
                "excess noise must be a finite nonnegative value, got {excess_noise}"
            )));
        }
        if let Some(cal) = calibration_amplitude {
            if !(cal >= 0.0 && cal.is_finite()) {
                return Err(EntError::invalid(format!(
                    "calibration amplitude must be finite and nonnegative, got {cal}"
                )));
            }
        }
        Ok(ChannelModel {
            transmission,
            excess_noise,
            calibration_amplitude,
        })
    }
}

/// The binary probe alphabet `{|α⟩, |−α⟩}` and its repetition rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeAlphabet {
    /// Sender amplitude α ≥ 0 (α = 0 degenerates to repeated vacuum probes).
    pub alpha: f64,
    /// Pulses per second.
    pub pulse_rate: f64,
}

impl ProbeAlphabet {
    pub fn new(alpha: f64, pulse_rate: f64) -> EntResult<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(EntError::invalid(format!(
                "probe amplitude must be finite and nonnegative, got {alpha}"
            )));
        }
        if !(pulse_rate > 0.0 && pulse_rate.is_finite()) {
            return Err(EntError::invalid(format!(
                "pulse rate must be positive, got {pulse_rate}"
            )));
        }
        Ok(ProbeAlphabet { alpha, pulse_rate })
    }
}

/// A discretized phase probability distribution f(φ) on [0, 2π).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDistribution {
    /// Angular nodes in [0, 2π).
    pub nodes: Vec<f64>,
    /// Nonnegative weights summing to 1 under the grid quadrature rule.
    pub weights: Vec<f64>,
}

impl PhaseDistribution {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> EntResult<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(EntError::invalid(
                "phase distribution needs matching nonempty node and weight lists",
            ));
        }
        if nodes.iter().any(|phi| !phi.is_finite()) {
            return Err(EntError::invalid("phase nodes must be finite"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(EntError::invalid("phase weights must be finite and nonnegative"));
        }
        let dist = PhaseDistribution { nodes, weights };
        dist.check_normalized()?;
        Ok(dist)
    }

    /// All mass on a single phase.
    pub fn point_mass(phi: f64) -> Self {
        PhaseDistribution {
            nodes: vec![phi],
            weights: vec![1.0],
        }
    }

    pub fn check_normalized(&self) -> EntResult<()> {
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(EntError::invalid(format!(
                "phase weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    /// Cumulative weights for inverse-CDF sampling.
    fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect()
    }
}

/// One heterodyne outcome, in shot-noise units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub pulse_index: u64,
    /// 0 ↦ +α, 1 ↦ −α.
    pub symbol: u8,
    pub x: f64,
    pub p: f64,
}

/// Provenance carried alongside every batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetadata {
    pub seed: u64,
    pub channel: ChannelModel,
    pub alphabet: ProbeAlphabet,
    /// "gaussian" for the loss/noise/diffusion model, "measure_prepare" for
    /// the entanglement-breaking null model.
    pub model: String,
}

/// A full simulated (or ingested) heterodyne record.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub records: Vec<SampleRecord>,
    pub meta: BatchMetadata,
}

/// Mean amplitude after the loss stage: √T·α. Excess noise and symmetric
/// phase diffusion do not shift the mean of the loss stage itself.
pub fn propagate_coherent(alpha: Complex64, channel: &ChannelModel) -> Complex64 {
    alpha * channel.transmission.sqrt()
}

/// Phase distribution of a coherent state of amplitude `alpha_cal` (phase 0),
/// obtained by radially integrating its Q-function on a uniform angular grid:
/// f(φ) = ∫₀^∞ (1/π)·e^{−|r e^{iφ} − α_cal|²} r dr, then normalized on the
/// grid.
pub fn phase_distribution(alpha_cal: f64, grid_size: usize) -> EntResult<PhaseDistribution> {
    if !(alpha_cal >= 0.0 && alpha_cal.is_finite()) {
        return Err(EntError::invalid(format!(
            "calibration amplitude must be finite and nonnegative, got {alpha_cal}"
        )));
    }
    if grid_size < 64 {
        return Err(EntError::invalid(format!(
            "phase grid needs at least 64 nodes, got {grid_size}"
        )));
    }
    let step = 2.0 * std::f64::consts::PI / grid_size as f64;
    let nodes: Vec<f64> = (0..grid_size).map(|j| j as f64 * step).collect();
    let r_max = alpha_cal + 10.0;
    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&phi| {
            let cos_phi = phi.cos();
            let density = simpson(0.0, r_max, RADIAL_INTERVALS, |r| {
                let dist_sq = r * r - 2.0 * alpha_cal * r * cos_phi + alpha_cal * alpha_cal;
                r * (-dist_sq).exp() / std::f64::consts::PI
            });
            density * step
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(EntError::Numerical(
            "phase distribution integrated to zero mass".into(),
        ));
    }
    weights.iter_mut().for_each(|w| *w /= total);
    PhaseDistribution::new(nodes, weights)
}

/// Composite Simpson rule on [a, b] with `n` (even) intervals.
fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    debug_assert!(n % 2 == 0 && n >= 2);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// First and second marginal moments, in shot-noise units, of the
/// phase-diffused Q-function: the f-weighted mixture of coherent states of
/// amplitude |β| rotated by φ around the phase of β. Returns
/// `(mean_x, mean_p, qvar_x, qvar_p)` where the variances are *record*
/// (Q-marginal) variances: state variance + 1, vacuum ↦ 2.
pub fn phase_diffused_moments(
    beta: Complex64,
    f: &PhaseDistribution,
) -> EntResult<(f64, f64, f64, f64)> {
    f.check_normalized()?;
    let r = beta.norm();
    let base = beta.arg();
    let sqrt2 = std::f64::consts::SQRT_2;
    let (mut mx, mut mp, mut sx, mut sp) = (0.0, 0.0, 0.0, 0.0);
    for (&phi, &w) in f.nodes.iter().zip(f.weights.iter()) {
        let cx = sqrt2 * r * (base + phi).cos();
        let cp = sqrt2 * r * (base + phi).sin();
        mx += w * cx;
        mp += w * cp;
        // Per-component Q-marginal second moment: variance 2 + mean².
        sx += w * (2.0 + cx * cx);
        sp += w * (2.0 + cp * cp);
    }
    Ok((mx, mp, sx - mx * mx, sp - mp * mp))
}

/// Per-quadrature *state* variances (shot-noise units, vacuum = 1) of the
/// channel output at mean amplitude `beta`, combining excess noise with the
/// variance inflation from phase diffusion when a calibration amplitude is
/// present.
pub fn effective_variance(beta: Complex64, channel: &ChannelModel) -> EntResult<(f64, f64)> {
    let eps = channel.excess_noise;
    match channel.calibration_amplitude {
        None => Ok((1.0 + eps, 1.0 + eps)),
        Some(cal) => {
            let f = phase_distribution(cal, DEFAULT_PHASE_GRID)?;
            let (_, _, qx, qp) = phase_diffused_moments(beta, &f)?;
            Ok((qx - 1.0 + eps, qp - 1.0 + eps))
        }
    }
}

/// Post-diffusion mean amplitude: the f-averaged rotation contracts the mean
/// toward the origin (and would tilt it for asymmetric f).
pub fn diffused_mean_amplitude(beta: Complex64, f: &PhaseDistribution) -> EntResult<Complex64> {
    f.check_normalized()?;
    let mut mean = Complex64::new(0.0, 0.0);
    for (&phi, &w) in f.nodes.iter().zip(f.weights.iter()) {
        mean += Complex64::from_polar(beta.norm(), beta.arg() + phi) * w;
    }
    Ok(mean)
}

struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    fn new(state: u64) -> Self {
        SplitMix64 { state }
    }

    fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Generator key for one shard: the batch seed and shard index are mixed
/// through SplitMix64 into a 256-bit ChaCha key, so shards are mutually
/// independent and depend only on (seed, shard index).
fn shard_rng(seed: u64, shard: u64) -> ChaCha12Rng {
    let mut outer = SplitMix64::new(shard.wrapping_add(1));
    let mut sm = SplitMix64::new(seed ^ outer.next());
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&sm.next().to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Per-pulse sampling plan shared by the channel models.
enum PulseModel {
    /// Gaussian channel: fixed per-symbol means, fixed standard deviation,
    /// optionally with a per-pulse phase drawn from f(φ).
    Gaussian {
        mean_amp: f64,
        std: f64,
        phase_cdf: Option<(Vec<f64>, Vec<f64>)>,
    },
    /// Measure-and-prepare: heterodyne, rescale, re-prepare, heterodyne.
    MeasurePrepare { alpha: f64, sqrt_t: f64 },
}

fn generate_batch(
    n_pulses: u64,
    seed: u64,
    model: &PulseModel,
) -> Vec<SampleRecord> {
    let n_shards = n_pulses.div_ceil(SHARD_SIZE);
    (0..n_shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = shard_rng(seed, shard);
            let start = shard * SHARD_SIZE;
            let end = (start + SHARD_SIZE).min(n_pulses);
            let mut records = Vec::with_capacity((end - start) as usize);
            for pulse_index in start..end {
                let symbol = (rng.next_u64() & 1) as u8;
                let sign = if symbol == 0 { 1.0 } else { -1.0 };
                let (x, p) = match model {
                    PulseModel::Gaussian {
                        mean_amp,
                        std,
                        phase_cdf,
                    } => {
                        let (cos_phi, sin_phi) = match phase_cdf {
                            None => (1.0, 0.0),
                            Some((nodes, cum)) => {
                                let u: f64 = rng.gen();
                                let j = cum.partition_point(|&c| c <= u).min(nodes.len() - 1);
                                (nodes[j].cos(), nodes[j].sin())
                            }
                        };
                        let gx: f64 = rng.sample(StandardNormal);
                        let gp: f64 = rng.sample(StandardNormal);
                        let sqrt2 = std::f64::consts::SQRT_2;
                        (
                            sign * sqrt2 * mean_amp * cos_phi + std * gx,
                            sign * sqrt2 * mean_amp * sin_phi + std * gp,
                        )
                    }
                    PulseModel::MeasurePrepare { alpha, sqrt_t } => {
                        // Relay heterodyne of the probe state (record
                        // variance 2), then re-preparation at the measured
                        // amplitude scaled by √T, then receiver heterodyne.
                        let sqrt2 = std::f64::consts::SQRT_2;
                        let g1x: f64 = rng.sample(StandardNormal);
                        let g1p: f64 = rng.sample(StandardNormal);
                        let relay_x = sign * sqrt2 * alpha + sqrt2 * g1x;
                        let relay_p = sqrt2 * g1p;
                        let g2x: f64 = rng.sample(StandardNormal);
                        let g2p: f64 = rng.sample(StandardNormal);
                        (
                            sqrt_t * relay_x + sqrt2 * g2x,
                            sqrt_t * relay_p + sqrt2 * g2p,
                        )
                    }
                };
                records.push(SampleRecord {
                    pulse_index,
                    symbol,
                    x,
                    p,
                });
            }
            records
        })
        .flatten_iter()
        .collect()
}

/// Simulates `n_pulses` heterodyne outcomes of the channel output for a
/// uniformly random symbol stream. Deterministic given `seed`, independent of
/// thread scheduling.
pub fn sample_heterodyne(
    alphabet: &ProbeAlphabet,
    channel: &ChannelModel,
    n_pulses: u64,
    seed: u64,
) -> EntResult<SampleBatch> {
    if n_pulses == 0 {
        return Err(EntError::invalid("pulse count must be at least 1"));
    }
    let mean_amp = alphabet.alpha * channel.transmission.sqrt();
    let std = (2.0 + channel.excess_noise).sqrt();
    let phase_cdf = match channel.calibration_amplitude {
        None => None,
        Some(cal) => {
            let f = phase_distribution(cal, DEFAULT_PHASE_GRID)?;
            let cum = f.cumulative();
            Some((f.nodes, cum))
        }
    };
    let model = PulseModel::Gaussian {
        mean_amp,
        std,
        phase_cdf,
    };
    let records = generate_batch(n_pulses, seed, &model);
    Ok(SampleBatch {
        records,
        meta: BatchMetadata {
            seed,
            channel: *channel,
            alphabet: *alphabet,
            model: "gaussian".into(),
        },
    })
}

/// Simulates a measure-and-prepare relay: heterodyne the probe, transmit the
/// outcome classically, re-prepare a coherent state at the measured amplitude
/// scaled by √T, and heterodyne at the receiver. Entanglement-breaking by
/// construction — the null model every benchmark must refuse to certify.
pub fn simulate_mp_channel(
    alphabet: &ProbeAlphabet,
    transmission: f64,
    n_pulses: u64,
    seed: u64,
) -> EntResult<SampleBatch> {
    if n_pulses == 0 {
        return Err(EntError::invalid("pulse count must be at least 1"));
    }
    if !(transmission > 0.0 && transmission <= 1.0) {
        return Err(EntError::invalid(format!(
            "transmission must lie in (0, 1], got {transmission}"
        )));
    }
    let model = PulseModel::MeasurePrepare {
        alpha: alphabet.alpha,
        sqrt_t: transmission.sqrt(),
    };
    let records = generate_batch(n_pulses, seed, &model);
    Ok(SampleBatch {
        records,
        meta: BatchMetadata {
            seed,
            channel: ChannelModel {
                transmission,
                excess_noise: 0.0,
                calibration_amplitude: None,
            },
            alphabet: *alphabet,
            model: "measure_prepare".into(),
        },
    })
}
