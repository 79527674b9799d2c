//! Moment estimation: turns heterodyne records into calibrated per-symbol
//! moment records and sender-side overlap estimates — the only interface
//! between measured data and the quantifier.
//!
//! All reported quantities are in shot-noise units. Per-symbol sample
//! variances have the heterodyne constant 1 subtracted, so they are *state*
//! variances (vacuum ↦ 1). Before reporting, the measured phase-space frame
//! is rotated so the symbol-0 mean lies on the +x axis, emulating the
//! calibration-pulse alignment of a real receiver.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::SampleBatch;
use crate::error::{EntError, EntResult};

/// Heterodyne detection adds one vacuum unit of variance per quadrature.
pub const HETERODYNE_CONSTANT: f64 = 1.0;

/// Per-symbol calibrated moments (shot-noise units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolMoments {
    pub mean_x: f64,
    pub mean_p: f64,
    /// State variance: sample variance minus the heterodyne constant. May be
    /// negative from finite statistics, in which case it is flagged, not
    /// rewritten.
    pub var_x: f64,
    pub var_p: f64,
    pub n: u64,
    pub flagged_x: bool,
    pub flagged_p: bool,
}

/// The full calibrated record the quantifier is allowed to see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    /// Index = symbol (0 ↦ +α, 1 ↦ −α).
    pub symbols: [SymbolMoments; 2],
    /// Total channel transmission used for overlap inference.
    pub transmission_t: f64,
    /// Unit tag for serialized documents; always "snl".
    pub units: String,
}

impl MomentRecord {
    /// Convenience constructor for synthetic records with symmetric error-free
    /// moments (means ±(mean_x, mean_p), equal variances, notional count n).
    pub fn symmetric(
        mean_x: f64,
        mean_p: f64,
        var_x: f64,
        var_p: f64,
        n: u64,
        transmission_t: f64,
    ) -> Self {
        let sym = |sign: f64| SymbolMoments {
            mean_x: sign * mean_x,
            mean_p: sign * mean_p,
            var_x,
            var_p,
            n,
            flagged_x: var_x <= 0.0,
            flagged_p: var_p <= 0.0,
        };
        MomentRecord {
            symbols: [sym(1.0), sym(-1.0)],
            transmission_t,
            units: "snl".into(),
        }
    }

    pub fn validate(&self) -> EntResult<()> {
        if !(self.transmission_t > 0.0 && self.transmission_t <= 1.0) {
            return Err(EntError::invalid(format!(
                "transmission must lie in (0, 1], got {}",
                self.transmission_t
            )));
        }
        for (k, s) in self.symbols.iter().enumerate() {
            if s.n < 2 {
                return Err(EntError::InsufficientData(format!(
                    "symbol {k} has {} samples, need at least 2",
                    s.n
                )));
            }
            for v in [s.mean_x, s.mean_p, s.var_x, s.var_p] {
                if !v.is_finite() {
                    return Err(EntError::invalid(format!(
                        "symbol {k} carries a non-finite moment"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Standard errors for one symbol's moment entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolUncertainty {
    pub se_mean_x: f64,
    pub se_mean_p: f64,
    pub se_var_x: f64,
    pub se_var_p: f64,
}

/// Standard errors accompanying a [`MomentRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentUncertainty {
    pub symbols: [SymbolUncertainty; 2],
}

impl MomentUncertainty {
    /// All-zero uncertainties, for records that are exact by construction.
    pub fn exact() -> Self {
        let z = SymbolUncertainty {
            se_mean_x: 0.0,
            se_mean_p: 0.0,
            se_var_x: 0.0,
            se_var_p: 0.0,
        };
        MomentUncertainty { symbols: [z, z] }
    }
}

/// Inferred sender-side alphabet parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphabetEstimate {
    /// Per-symbol mean amplitude β_k = (⟨x̂⟩_k + i⟨p̂⟩_k)/√2.
    pub beta: [Complex64; 2],
    /// Inferred sender amplitude, averaged over symbols.
    pub alpha_hat: f64,
    /// Sender-side overlap s = ⟨α|−α⟩ = e^{−2·alpha_hat²}.
    pub overlap_s: f64,
}

/// Numerically stable one-pass accumulator for joint (x, p) sample moments,
/// mergeable so sharded and sequential accumulation agree.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadratureAccumulator {
    n: u64,
    mean_x: f64,
    mean_p: f64,
    m2x: f64,
    m2p: f64,
    mxp: f64,
}

impl QuadratureAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64, p: f64) {
        self.n += 1;
        let nf = self.n as f64;
        let dx = x - self.mean_x;
        let dp = p - self.mean_p;
        self.mean_x += dx / nf;
        self.mean_p += dp / nf;
        let dx2 = x - self.mean_x;
        let dp2 = p - self.mean_p;
        self.m2x += dx * dx2;
        self.m2p += dp * dp2;
        self.mxp += dx * dp2;
    }

    /// Chan-style pairwise merge.
    pub fn merge(&self, other: &QuadratureAccumulator) -> QuadratureAccumulator {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let dx = other.mean_x - self.mean_x;
        let dp = other.mean_p - self.mean_p;
        QuadratureAccumulator {
            n: self.n + other.n,
            mean_x: self.mean_x + dx * nb / n,
            mean_p: self.mean_p + dp * nb / n,
            m2x: self.m2x + other.m2x + dx * dx * na * nb / n,
            m2p: self.m2p + other.m2p + dp * dp * na * nb / n,
            mxp: self.mxp + other.mxp + dx * dp * na * nb / n,
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> (f64, f64) {
        (self.mean_x, self.mean_p)
    }

    /// Unbiased sample (co)variances (var_x, var_p, cov_xp).
    pub fn covariance(&self) -> (f64, f64, f64) {
        let denom = (self.n as f64 - 1.0).max(1.0);
        (self.m2x / denom, self.m2p / denom, self.mxp / denom)
    }
}

/// Per-symbol sample moments of a batch, rotated so the symbol-0 mean lies on
/// the +x axis, with the heterodyne constant subtracted from the variances.
/// Standard errors follow `se(mean) = s/√n` and `se(var) = s²·√(2/(n−1))`
/// with `s²` the raw (pre-subtraction) sample variance along the rotated
/// axis.
pub fn estimate_moments(
    batch: &SampleBatch,
    transmission_t: f64,
) -> EntResult<(MomentRecord, MomentUncertainty)> {
    if !(transmission_t > 0.0 && transmission_t <= 1.0) {
        return Err(EntError::invalid(format!(
            "transmission must lie in (0, 1], got {transmission_t}"
        )));
    }
    let mut acc = [QuadratureAccumulator::new(), QuadratureAccumulator::new()];
    for r in &batch.records {
        if !(r.x.is_finite() && r.p.is_finite()) {
            return Err(EntError::invalid(format!(
                "non-finite outcome at pulse {}",
                r.pulse_index
            )));
        }
        match r.symbol {
            0 | 1 => acc[r.symbol as usize].push(r.x, r.p),
            other => {
                return Err(EntError::invalid(format!(
                    "symbol {other} at pulse {} is outside {{0, 1}}",
                    r.pulse_index
                )))
            }
        }
    }
    for (k, a) in acc.iter().enumerate() {
        if a.count() < 2 {
            return Err(EntError::InsufficientData(format!(
                "symbol {k} has {} samples, need at least 2",
                a.count()
            )));
        }
    }

    // Align the symbol-0 mean with the +x axis.
    let (m0x, m0p) = acc[0].mean();
    let theta = m0p.atan2(m0x);
    let (ct, st) = (theta.cos(), theta.sin());

    let mut symbols = [SymbolMoments {
        mean_x: 0.0,
        mean_p: 0.0,
        var_x: 0.0,
        var_p: 0.0,
        n: 0,
        flagged_x: false,
        flagged_p: false,
    }; 2];
    let mut ses = [SymbolUncertainty {
        se_mean_x: 0.0,
        se_mean_p: 0.0,
        se_var_x: 0.0,
        se_var_p: 0.0,
    }; 2];

    for k in 0..2 {
        let (mx, mp) = acc[k].mean();
        let (vx, vp, vxp) = acc[k].covariance();
        let mean_x = ct * mx + st * mp;
        let mean_p = -st * mx + ct * mp;
        let raw_x = ct * ct * vx + 2.0 * ct * st * vxp + st * st * vp;
        let raw_p = st * st * vx - 2.0 * ct * st * vxp + ct * ct * vp;
        let n = acc[k].count();
        let nf = n as f64;
        symbols[k] = SymbolMoments {
            mean_x,
            mean_p,
            var_x: raw_x - HETERODYNE_CONSTANT,
            var_p: raw_p - HETERODYNE_CONSTANT,
            n,
            flagged_x: raw_x - HETERODYNE_CONSTANT <= 0.0,
            flagged_p: raw_p - HETERODYNE_CONSTANT <= 0.0,
        };
        ses[k] = SymbolUncertainty {
            se_mean_x: (raw_x / nf).sqrt(),
            se_mean_p: (raw_p / nf).sqrt(),
            se_var_x: raw_x * (2.0 / (nf - 1.0)).sqrt(),
            se_var_p: raw_p * (2.0 / (nf - 1.0)).sqrt(),
        };
    }

    Ok((
        MomentRecord {
            symbols,
            transmission_t,
            units: "snl".into(),
        },
        MomentUncertainty { symbols: ses },
    ))
}

/// Per-symbol mean amplitudes β_k = (⟨x̂⟩_k + i·⟨p̂⟩_k)/√2.
pub fn extract_beta(record: &MomentRecord) -> [Complex64; 2] {
    let sqrt2 = std::f64::consts::SQRT_2;
    [0, 1].map(|k| {
        Complex64::new(
            record.symbols[k].mean_x / sqrt2,
            record.symbols[k].mean_p / sqrt2,
        )
    })
}

/// Sender-side alphabet inference: α̂ is the symbol-averaged |β_k|/√T and the
/// overlap follows the real-alphabet closed form s = e^{−2α̂²}.
pub fn infer_overlap(betas: &[Complex64; 2], transmission_t: f64) -> EntResult<AlphabetEstimate> {
    if !(transmission_t > 0.0 && transmission_t <= 1.0) {
        return Err(EntError::invalid(format!(
            "transmission must lie in (0, 1], got {transmission_t}"
        )));
    }
    let sqrt_t = transmission_t.sqrt();
    let alpha_hat = (betas[0].norm() + betas[1].norm()) / (2.0 * sqrt_t);
    if !alpha_hat.is_finite() {
        return Err(EntError::invalid("mean amplitudes are non-finite"));
    }
    Ok(AlphabetEstimate {
        beta: *betas,
        alpha_hat,
        overlap_s: (-2.0 * alpha_hat * alpha_hat).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_heterodyne, ChannelModel, ProbeAlphabet, SampleRecord};
    use approx::assert_abs_diff_eq;

    fn batch_20km(n: u64, seed: u64) -> SampleBatch {
        let alphabet = ProbeAlphabet::new(0.3, 0.875e6).unwrap();
        let channel = ChannelModel::new(0.24, 0.02, None).unwrap();
        sample_heterodyne(&alphabet, &channel, n, seed).unwrap()
    }

    #[test]
    fn vacuum_batch_state_variance_near_one() {
        let alphabet = ProbeAlphabet::new(0.0, 0.875e6).unwrap();
        let channel = ChannelModel::new(1.0, 0.0, None).unwrap();
        let batch = sample_heterodyne(&alphabet, &channel, 1_000_000, 77).unwrap();
        let (rec, _) = estimate_moments(&batch, 1.0).unwrap();
        for s in &rec.symbols {
            assert!((s.var_x - 1.0).abs() < 0.01, "var_x {}", s.var_x);
            assert!((s.var_p - 1.0).abs() < 0.01, "var_p {}", s.var_p);
        }
    }

    #[test]
    fn table_regime_batch_recovers_channel_moments() {
        let batch = batch_20km(1_000_000, 4);
        let (rec, unc) = estimate_moments(&batch, 0.24).unwrap();
        let expected_mean = std::f64::consts::SQRT_2 * 0.3 * 0.24_f64.sqrt();
        for k in 0..2 {
            let s = &rec.symbols[k];
            let sign = if k == 0 { 1.0 } else { -1.0 };
            assert!(
                (s.mean_x - sign * expected_mean).abs() < 5.0 * unc.symbols[k].se_mean_x,
                "mean {}",
                s.mean_x
            );
            assert!((s.var_x - 1.02).abs() < 5.0 * unc.symbols[k].se_var_x);
            assert!((s.var_p - 1.02).abs() < 5.0 * unc.symbols[k].se_var_p);
        }
        // Alignment: symbol-0 p-mean is exactly zero.
        assert_abs_diff_eq!(rec.symbols[0].mean_p, 0.0, epsilon = 1e-12);
        assert!(rec.symbols[0].mean_x > 0.0);
    }

    #[test]
    fn disjoint_halves_agree_within_combined_errors() {
        let full = batch_20km(400_000, 9);
        let half = full.records.len() / 2;
        let mut a = full.clone();
        a.records.truncate(half);
        let mut b = full.clone();
        b.records.drain(0..half);
        let (ra, ua) = estimate_moments(&a, 0.24).unwrap();
        let (rb, ub) = estimate_moments(&b, 0.24).unwrap();
        for k in 0..2 {
            let se = (ua.symbols[k].se_mean_x.powi(2) + ub.symbols[k].se_mean_x.powi(2)).sqrt();
            assert!((ra.symbols[k].mean_x - rb.symbols[k].mean_x).abs() < 3.0 * se);
            let sev = (ua.symbols[k].se_var_x.powi(2) + ub.symbols[k].se_var_x.powi(2)).sqrt();
            assert!((ra.symbols[k].var_x - rb.symbols[k].var_x).abs() < 3.0 * sev);
        }
    }

    #[test]
    fn extract_beta_matches_attenuated_amplitude() {
        let rec = MomentRecord::symmetric(0.2079, 0.0, 1.02, 1.02, 1000, 0.24);
        let betas = extract_beta(&rec);
        assert_abs_diff_eq!(betas[0].re, 0.1470, epsilon = 5e-5);
        assert_abs_diff_eq!(betas[1].re, -0.1470, epsilon = 5e-5);
        let zero = MomentRecord::symmetric(0.0, 0.0, 1.0, 1.0, 1000, 1.0);
        assert_eq!(extract_beta(&zero)[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn infer_overlap_closed_forms() {
        let b = 0.24_f64.sqrt() * 0.3;
        let betas = [Complex64::new(b, 0.0), Complex64::new(-b, 0.0)];
        let est = infer_overlap(&betas, 0.24).unwrap();
        assert_abs_diff_eq!(est.alpha_hat, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(est.overlap_s, (-0.18_f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(est.overlap_s, 0.8353, epsilon = 5e-5);

        let zero = [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)];
        let est0 = infer_overlap(&zero, 0.5).unwrap();
        assert_eq!(est0.alpha_hat, 0.0);
        assert_eq!(est0.overlap_s, 1.0);

        let b40 = 0.09_f64.sqrt() * 0.17;
        let betas40 = [Complex64::new(b40, 0.0), Complex64::new(-b40, 0.0)];
        let est40 = infer_overlap(&betas40, 0.09).unwrap();
        assert_abs_diff_eq!(est40.alpha_hat, 0.17, epsilon = 1e-12);
        assert_abs_diff_eq!(est40.overlap_s, 0.9438, epsilon = 5e-5);

        assert!(infer_overlap(&betas, 0.0).is_err());
        assert!(infer_overlap(&betas, 1.5).is_err());
    }

    #[test]
    fn inference_is_rotation_invariant() {
        let batch = batch_20km(100_000, 21);
        let theta: f64 = 0.83;
        let (ct, st) = (theta.cos(), theta.sin());
        let mut rotated = batch.clone();
        for r in &mut rotated.records {
            let (x, p) = (r.x, r.p);
            *r = SampleRecord {
                x: ct * x - st * p,
                p: st * x + ct * p,
                ..*r
            };
        }
        let (rec_a, _) = estimate_moments(&batch, 0.24).unwrap();
        let (rec_b, _) = estimate_moments(&rotated, 0.24).unwrap();
        let est_a = infer_overlap(&extract_beta(&rec_a), 0.24).unwrap();
        let est_b = infer_overlap(&extract_beta(&rec_b), 0.24).unwrap();
        assert_abs_diff_eq!(est_a.alpha_hat, est_b.alpha_hat, epsilon = 1e-9);
        // Variances are frame-independent too (symmetric noise).
        for k in 0..2 {
            assert_abs_diff_eq!(
                rec_a.symbols[k].var_x,
                rec_b.symbols[k].var_x,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn overlap_strictly_decreasing_in_amplitude() {
        let mut last = f64::INFINITY;
        for i in 1..=10 {
            let a = 0.1 * i as f64;
            let b = [Complex64::new(a, 0.0), Complex64::new(-a, 0.0)];
            let est = infer_overlap(&b, 1.0).unwrap();
            assert!(est.overlap_s < last);
            last = est.overlap_s;
        }
    }

    #[test]
    fn sharded_accumulation_matches_sequential() {
        let batch = batch_20km(100_000, 14);
        let mut seq = QuadratureAccumulator::new();
        for r in &batch.records {
            seq.push(r.x, r.p);
        }
        let merged = batch
            .records
            .chunks(1024)
            .map(|chunk| {
                let mut a = QuadratureAccumulator::new();
                for r in chunk {
                    a.push(r.x, r.p);
                }
                a
            })
            .fold(QuadratureAccumulator::new(), |a, b| a.merge(&b));
        assert_eq!(seq.count(), merged.count());
        let (sx, sp) = seq.mean();
        let (mx, mp) = merged.mean();
        assert_abs_diff_eq!(sx, mx, epsilon = 1e-10 * sx.abs().max(1.0));
        assert_abs_diff_eq!(sp, mp, epsilon = 1e-10 * sp.abs().max(1.0));
        let (svx, svp, svxp) = seq.covariance();
        let (mvx, mvp, mvxp) = merged.covariance();
        assert_abs_diff_eq!(svx, mvx, epsilon = 1e-10 * svx);
        assert_abs_diff_eq!(svp, mvp, epsilon = 1e-10 * svp);
        assert_abs_diff_eq!(svxp, mvxp, epsilon = 1e-10 * svx);
    }

    #[test]
    fn missing_symbol_is_insufficient_data() {
        let mut batch = batch_20km(1000, 3);
        batch.records.retain(|r| r.symbol == 0);
        assert!(matches!(
            estimate_moments(&batch, 0.24),
            Err(EntError::InsufficientData(_))
        ));
    }

    #[test]
    fn sub_shot_variances_are_flagged_not_rejected() {
        let mut batch = batch_20km(100, 5);
        for (i, r) in batch.records.iter_mut().enumerate() {
            r.symbol = (i % 2) as u8;
            r.x = if r.symbol == 0 { 0.5 } else { -0.5 };
            r.p = 0.0;
        }
        let (rec, _) = estimate_moments(&batch, 0.24).unwrap();
        assert!(rec.symbols[0].flagged_x);
        assert!(rec.symbols[0].var_x <= 0.0);
        assert!(rec.validate().is_ok());
    }
}
