//! Truncated Fock-space linear algebra: coherent states, quadrature
//! operators, partial transposition and entanglement measures.
//!
//! Conventions. The ladder operator acts as `â|n⟩ = √n|n−1⟩` on photon
//! numbers `0..d−1`; quadratures are `x̂ = (â+â†)/√2` and `p̂ = −i(â−â†)/√2`,
//! so the vacuum has variance 1/2 per quadrature *internally*. Reported
//! variances use shot-noise units (SNL, vacuum = 1), i.e. SNL variance =
//! 2 × internal variance, while first moments coincide in both conventions
//! through the symmetric mean-amplitude definition ⟨â⟩ = (⟨x̂⟩+i⟨p̂⟩)/√2.
//! Coherent states are truncated *without* renormalization so truncation
//! loss stays visible to callers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{EntError, EntResult};

/// Tolerance on Hermiticity checks, relative to the largest entry.
const HERMITICITY_TOL: f64 = 1e-12;

/// Fock-space truncation dimension: photon numbers `0..d−1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockDim {
    d: usize,
}

impl FockDim {
    /// A truncation with `d` levels. Fails for `d < 2`: a single level
    /// cannot carry quadrature information.
    pub fn new(d: usize) -> EntResult<Self> {
        if d < 2 {
            return Err(EntError::invalid(format!(
                "Fock dimension must be at least 2, got {d}"
            )));
        }
        Ok(FockDim { d })
    }

    pub fn d(&self) -> usize {
        self.d
    }
}

/// A (possibly sub-normalized) pure state on the truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub amplitudes: DVector<Complex64>,
}

impl StateVector {
    /// Wraps an amplitude vector, enforcing the sub-normalization invariant
    /// `‖ψ‖² ≤ 1 + 1e−12` expected of truncated physical states.
    pub fn new(amplitudes: DVector<Complex64>) -> EntResult<Self> {
        if amplitudes.len() < 2 {
            return Err(EntError::invalid("state vector needs at least 2 amplitudes"));
        }
        let norm_sq: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
        if !norm_sq.is_finite() || norm_sq > 1.0 + 1e-12 {
            return Err(EntError::invalid(format!(
                "state vector norm² = {norm_sq} exceeds 1"
            )));
        }
        Ok(StateVector { amplitudes })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// Squared norm; 1 minus this is the truncation loss.
    pub fn norm_sq(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Inner product ⟨self|other⟩ (conjugate-linear in `self`).
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Rank-one projector |ψ⟩⟨ψ| (unnormalized if the state is).
    pub fn projector(&self) -> DMatrix<Complex64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| {
            self.amplitudes[i] * self.amplitudes[j].conj()
        })
    }

    /// Outer product |self⟩⟨other|.
    pub fn outer(&self, other: &StateVector) -> DMatrix<Complex64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| {
            self.amplitudes[i] * other.amplitudes[j].conj()
        })
    }
}

/// A Hermitian matrix on the truncated Fock space (or a tensor factor of it).
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    pub entries: DMatrix<Complex64>,
}

impl HermitianOperator {
    /// Wraps a matrix after verifying Hermiticity to within `1e−12` relative
    /// to its largest entry.
    pub fn new(entries: DMatrix<Complex64>) -> EntResult<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(EntError::invalid("operator matrix must be square"));
        }
        let dev = hermiticity_deviation(&entries);
        let scale = entries.iter().map(|c| c.norm()).fold(1.0_f64, f64::max);
        if !(dev <= HERMITICITY_TOL * scale) {
            return Err(EntError::invalid(format!(
                "matrix is not Hermitian: max |H − H†| = {dev:.3e}"
            )));
        }
        Ok(HermitianOperator { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Expectation value ⟨ψ|H|ψ⟩ (real for Hermitian H).
    pub fn expectation(&self, psi: &StateVector) -> f64 {
        let hpsi = &self.entries * &psi.amplitudes;
        psi.amplitudes
            .iter()
            .zip(hpsi.iter())
            .map(|(a, b)| (a.conj() * b).re)
            .sum()
    }

    /// Real-valued trace inner product Tr[H ρ].
    pub fn trace_with(&self, rho: &DMatrix<Complex64>) -> f64 {
        self.entries
            .iter()
            .zip(rho.transpose().iter())
            .map(|(h, r)| (h * r).re)
            .sum()
    }
}

/// A bipartite qubit ⊗ Fock-mode density operator, stored as a (2d)×(2d)
/// matrix of 2×2 blocks indexed by the qubit basis labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteState {
    pub entries: DMatrix<Complex64>,
    mode_dim: usize,
}

impl BipartiteState {
    /// Wraps a (2d)×(2d) Hermitian matrix. Positivity and unit trace are
    /// solver-tolerance properties checked where they matter, not here.
    pub fn new(entries: DMatrix<Complex64>) -> EntResult<Self> {
        let n = entries.nrows();
        if n != entries.ncols() || n % 2 != 0 || n < 4 {
            return Err(EntError::invalid(
                "bipartite state must be a (2d)×(2d) matrix with d ≥ 2",
            ));
        }
        let dev = hermiticity_deviation(&entries);
        let scale = entries.iter().map(|c| c.norm()).fold(1.0_f64, f64::max);
        if !(dev <= HERMITICITY_TOL * scale) {
            return Err(EntError::invalid(format!(
                "bipartite state is not Hermitian: max |ρ − ρ†| = {dev:.3e}"
            )));
        }
        Ok(BipartiteState {
            entries,
            mode_dim: n / 2,
        })
    }

    /// Assembles a state from its four d×d blocks `R_ab = ⟨a|·|b⟩_A`,
    /// with `r10 = r01†` implied.
    pub fn from_blocks(
        r00: &DMatrix<Complex64>,
        r01: &DMatrix<Complex64>,
        r11: &DMatrix<Complex64>,
    ) -> EntResult<Self> {
        let d = r00.nrows();
        if r01.nrows() != d || r11.nrows() != d || r00.ncols() != d || r01.ncols() != d || r11.ncols() != d {
            return Err(EntError::invalid("blocks must be square with matching dimension"));
        }
        let mut m = DMatrix::zeros(2 * d, 2 * d);
        m.view_mut((0, 0), (d, d)).copy_from(r00);
        m.view_mut((0, d), (d, d)).copy_from(r01);
        m.view_mut((d, 0), (d, d)).copy_from(&r01.adjoint());
        m.view_mut((d, d), (d, d)).copy_from(r11);
        BipartiteState::new(m)
    }

    /// Fock-space dimension d of the mode factor.
    pub fn mode_dim(&self) -> usize {
        self.mode_dim
    }

    pub fn trace(&self) -> f64 {
        (0..self.entries.nrows()).map(|i| self.entries[(i, i)].re).sum()
    }

    /// Reduced qubit state Tr_B ρ as a 2×2 matrix.
    pub fn trace_out_mode(&self) -> DMatrix<Complex64> {
        let d = self.mode_dim;
        DMatrix::from_fn(2, 2, |a, b| {
            (0..d).map(|n| self.entries[(a * d + n, b * d + n)]).sum()
        })
    }
}

fn hermiticity_deviation(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0_f64;
    for j in 0..n {
        for i in 0..=j {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Truncated coherent state |α⟩ with components e^{−|α|²/2} αⁿ/√(n!),
/// n < d. Not renormalized: the missing tail is the truncation loss.
pub fn coherent_state(alpha: Complex64, dim: FockDim) -> EntResult<StateVector> {
    if !alpha.re.is_finite() || !alpha.im.is_finite() {
        return Err(EntError::invalid("coherent amplitude must be finite"));
    }
    let d = dim.d();
    let mut amps = DVector::zeros(d);
    let mut c = Complex64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    amps[0] = c;
    for n in 1..d {
        c *= alpha / (n as f64).sqrt();
        amps[n] = c;
    }
    StateVector::new(amps)
}

/// Truncated ladder operator â with â|n⟩ = √n|n−1⟩.
pub fn lowering_op(dim: FockDim) -> DMatrix<Complex64> {
    let d = dim.d();
    let mut a = DMatrix::zeros(d, d);
    for n in 1..d {
        a[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Quadrature pair (x̂, p̂) in the internal convention x̂ = (â+â†)/√2,
/// p̂ = −i(â−â†)/√2 (vacuum variance 1/2 each).
pub fn quadrature_ops(dim: FockDim) -> (HermitianOperator, HermitianOperator) {
    let a = lowering_op(dim);
    let adag = a.adjoint();
    let inv_sqrt2 = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let x = (&a + &adag) * inv_sqrt2;
    let p = (&a - &adag) * Complex64::new(0.0, -1.0) * inv_sqrt2;
    // Construction is Hermitian by symmetry; bypassing the checked
    // constructor would hide a future bug, so keep it.
    let x = HermitianOperator::new(x).expect("x quadrature is Hermitian");
    let p = HermitianOperator::new(p).expect("p quadrature is Hermitian");
    (x, p)
}

/// Partial transpose on the qubit subsystem A: the off-diagonal d×d blocks
/// are swapped, which transposes the 2×2 qubit index structure and leaves
/// the mode untouched. Involutive, Hermiticity- and trace-preserving.
pub fn partial_transpose_a(rho: &BipartiteState) -> HermitianOperator {
    let d = rho.mode_dim();
    let n = 2 * d;
    let mut out = DMatrix::zeros(n, n);
    for a in 0..2 {
        for b in 0..2 {
            // (a,b) block of the output is the (b,a) block of the input.
            out.view_mut((a * d, b * d), (d, d))
                .copy_from(&rho.entries.view((b * d, a * d), (d, d)));
        }
    }
    HermitianOperator { entries: out }
}

/// Real eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let mut evs: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    evs.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
    evs
}

/// Negativity N(ρ) = (‖ρ^{T_A}‖₁ − 1)/2 = |Σ_{λ<0} λ| over the spectrum of
/// the partial transpose. Requires a Hermitian, unit-trace input.
pub fn negativity(rho: &BipartiteState) -> EntResult<f64> {
    let tr = rho.trace();
    if (tr - 1.0).abs() > 1e-8 {
        return Err(EntError::invalid(format!(
            "negativity needs a unit-trace state, got trace {tr}"
        )));
    }
    let pt = partial_transpose_a(rho);
    Ok(negative_part_sum(&pt.entries))
}

/// Sum of |negative eigenvalues| of a Hermitian matrix.
pub(crate) fn negative_part_sum(m: &DMatrix<Complex64>) -> f64 {
    hermitian_eigenvalues(m)
        .iter()
        .filter(|&&ev| ev < 0.0)
        .map(|ev| -ev)
        .sum()
}

/// Log-negativity E_N = log₂(2N + 1); a Bell pair (N = 1/2) carries exactly
/// one unit.
pub fn log_negativity(n: f64) -> EntResult<f64> {
    if !(n >= 0.0) {
        return Err(EntError::invalid(format!(
            "negativity must be nonnegative, got {n}"
        )));
    }
    Ok((2.0 * n + 1.0).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn dim(d: usize) -> FockDim {
        FockDim::new(d).unwrap()
    }

    #[test]
    fn fock_dim_rejects_degenerate_spaces() {
        assert!(FockDim::new(0).is_err());
        assert!(FockDim::new(1).is_err());
        assert!(FockDim::new(2).is_ok());
    }

    #[test]
    fn vacuum_is_the_zero_amplitude_coherent_state() {
        let v = coherent_state(c(0.0, 0.0), dim(4)).unwrap();
        assert_eq!(v.amplitudes[0], c(1.0, 0.0));
        for n in 1..4 {
            assert_eq!(v.amplitudes[n], c(0.0, 0.0));
        }
    }

    #[test]
    fn coherent_norm_matches_closed_form_partial_sum() {
        // Closed form: ‖|α⟩_d‖² = e^{−|α|²} Σ_{n<d} |α|^{2n}/n!.
        let alpha = 0.5;
        let d = 15;
        let v = coherent_state(c(alpha, 0.0), dim(d)).unwrap();
        let mut sum = 0.0;
        let mut term = 1.0;
        for n in 0..d {
            if n > 0 {
                term *= alpha * alpha / n as f64;
            }
            sum += term;
        }
        let expected = (-alpha * alpha).exp() * sum;
        assert_relative_eq!(v.norm_sq(), expected, max_relative = 1e-12);
        assert!(v.norm_sq() >= 1.0 - 1e-10);
    }

    #[test]
    fn coherent_overlap_matches_closed_form() {
        let d = dim(15);
        let plus = coherent_state(c(0.5, 0.0), d).unwrap();
        let minus = coherent_state(c(-0.5, 0.0), d).unwrap();
        let overlap = plus.inner(&minus);
        assert_abs_diff_eq!(overlap.re, (-2.0 * 0.25_f64).exp(), epsilon = 1e-8);
        assert_abs_diff_eq!(overlap.im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn coherent_rejects_non_finite_amplitude() {
        assert!(coherent_state(c(f64::NAN, 0.0), dim(4)).is_err());
        assert!(coherent_state(c(0.0, f64::INFINITY), dim(4)).is_err());
    }

    #[test]
    fn coherent_norm_monotone_in_dimension() {
        let alpha = c(0.8, 0.3);
        let mut prev = 0.0;
        for d in 2..30 {
            let n = coherent_state(alpha, dim(d)).unwrap().norm_sq();
            assert!(n >= prev - 1e-15);
            prev = n;
        }
        assert_abs_diff_eq!(prev, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn vacuum_quadrature_variance_is_one_half() {
        let d = dim(8);
        let (x, p) = quadrature_ops(d);
        let vac = coherent_state(c(0.0, 0.0), d).unwrap();
        let x2 = &x.entries * &x.entries;
        let p2 = &p.entries * &p.entries;
        assert_abs_diff_eq!(x.expectation(&vac), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            (vac.amplitudes.adjoint() * &x2 * &vac.amplitudes)[(0, 0)].re,
            0.5,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            (vac.amplitudes.adjoint() * &p2 * &vac.amplitudes)[(0, 0)].re,
            0.5,
            epsilon = 1e-14
        );
    }

    #[test]
    fn coherent_mean_quadrature_is_sqrt2_alpha() {
        let d = dim(12);
        let (x, p) = quadrature_ops(d);
        let psi = coherent_state(c(0.3, 0.0), d).unwrap();
        assert_abs_diff_eq!(x.expectation(&psi), std::f64::consts::SQRT_2 * 0.3, epsilon = 1e-9);
        assert_abs_diff_eq!(p.expectation(&psi), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn quadrature_commutator_is_i_identity_below_truncation_corner() {
        let d = dim(10);
        let (x, p) = quadrature_ops(d);
        let comm = &x.entries * &p.entries - &p.entries * &x.entries;
        for i in 0..9 {
            for j in 0..9 {
                let expected = if i == j { c(0.0, 1.0) } else { c(0.0, 0.0) };
                assert_abs_diff_eq!((comm[(i, j)] - expected).norm(), 0.0, epsilon = 1e-12);
            }
        }
        // The top corner is corrupted by truncation, by design.
        assert_abs_diff_eq!(comm[(9, 9)].re, 0.0, epsilon = 1e-12);
        assert!((comm[(9, 9)].im - (1.0 - 10.0)).abs() < 1e-12);
    }

    #[test]
    fn quadrature_truncation_error_small_at_recommended_dimension() {
        // Relative truncation error of first and second moments < 1e−6
        // once d ≥ 10 + 10|α|².
        for &alpha in &[0.3f64, 0.7, 1.0] {
            let d_rec = (10.0 + 10.0 * alpha * alpha).ceil() as usize;
            let d_big = dim(2 * d_rec);
            let d_use = dim(d_rec);
            let (x, _) = quadrature_ops(d_use);
            let (xb, _) = quadrature_ops(d_big);
            let psi = coherent_state(c(alpha, 0.0), d_use).unwrap();
            let psib = coherent_state(c(alpha, 0.0), d_big).unwrap();
            let m1 = x.expectation(&psi);
            let m1b = xb.expectation(&psib);
            assert!((m1 - m1b).abs() / m1b.abs() < 1e-6);
            let x2 = &x.entries * &x.entries;
            let x2b = &xb.entries * &xb.entries;
            let m2 = (psi.amplitudes.adjoint() * &x2 * &psi.amplitudes)[(0, 0)].re;
            let m2b = (psib.amplitudes.adjoint() * &x2b * &psib.amplitudes)[(0, 0)].re;
            assert!((m2 - m2b).abs() / m2b.abs() < 1e-6);
        }
    }

    #[test]
    fn partial_transpose_fixes_product_states() {
        let d = dim(3);
        let psi = coherent_state(c(0.4, 0.1), d).unwrap();
        let sigma = psi.projector();
        let zero = DMatrix::zeros(3, 3);
        let rho = BipartiteState::from_blocks(&sigma, &zero, &zero.clone()).unwrap();
        let pt = partial_transpose_a(&rho);
        assert_abs_diff_eq!((&pt.entries - &rho.entries).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bell_state_partial_transpose_has_minus_half_eigenvalue() {
        // |Φ⟩ = (|00⟩ + |11⟩)/√2 embedded at mode dimension 2.
        let mut m = DMatrix::<Complex64>::zeros(4, 4);
        for (i, j) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            m[(i, j)] = c(0.5, 0.0);
        }
        let rho = BipartiteState::new(m).unwrap();
        let pt = partial_transpose_a(&rho);
        let evs = hermitian_eigenvalues(&pt.entries);
        assert_abs_diff_eq!(evs[0], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(negativity(&rho).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(log_negativity(negativity(&rho).unwrap()).unwrap(), 1.0, epsilon = 0.0);
    }

    #[test]
    fn partial_transpose_preserves_trace_and_hermiticity_and_involutes() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let d = 3;
            let raw = DMatrix::from_fn(2 * d, 2 * d, |_, _| {
                c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            let herm = (&raw + raw.adjoint()) * c(0.5, 0.0);
            let tr: Complex64 = (0..2 * d).map(|i| herm[(i, i)]).sum();
            let rho = BipartiteState::new(herm.clone()).unwrap();
            let pt = partial_transpose_a(&rho);
            let tr_pt: Complex64 = (0..2 * d).map(|i| pt.entries[(i, i)]).sum();
            assert_abs_diff_eq!((tr - tr_pt).norm(), 0.0, epsilon = 1e-13);
            let back = partial_transpose_a(&BipartiteState::new(pt.entries.clone()).unwrap());
            assert_abs_diff_eq!((&back.entries - &herm).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn separable_mixtures_have_zero_negativity() {
        // 100 random convex mixtures of product states at d ≤ 4.
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..100 {
            let d = rng.gen_range(2..=4);
            let terms = rng.gen_range(1..=4);
            let mut r00 = DMatrix::<Complex64>::zeros(d, d);
            let mut r01 = DMatrix::<Complex64>::zeros(d, d);
            let mut r11 = DMatrix::<Complex64>::zeros(d, d);
            let mut weights: Vec<f64> = (0..terms).map(|_| rng.gen_range(0.1..1.0)).collect();
            let wsum: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= wsum);
            for &w in &weights {
                // Random pure qubit state ⊗ random pure mode state.
                let (qa, qb) = (
                    c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                    c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                );
                let qn = (qa.norm_sqr() + qb.norm_sqr()).sqrt();
                let (qa, qb) = (qa / qn, qb / qn);
                let mut psi = DVector::<Complex64>::from_fn(d, |_, _| {
                    c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                });
                let pn = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                psi /= c(pn, 0.0);
                let proj = DMatrix::from_fn(d, d, |i, j| psi[i] * psi[j].conj());
                let wc = c(w, 0.0);
                r00 += &proj * (qa * qa.conj()) * wc;
                r01 += &proj * (qa * qb.conj()) * wc;
                r11 += &proj * (qb * qb.conj()) * wc;
            }
            let rho = BipartiteState::from_blocks(&r00, &r01, &r11).unwrap();
            assert!(negativity(&rho).unwrap() < 1e-10);
        }
    }

    #[test]
    fn schmidt_pair_negativity_matches_closed_form() {
        // |ψ⟩ = √p|0⟩|0⟩ + √(1−p)|1⟩|1⟩ has N = √(p(1−p)).
        let p: f64 = 0.9;
        let d = 2;
        let (sp, sq) = (p.sqrt(), (1.0 - p).sqrt());
        let mut m = DMatrix::<Complex64>::zeros(2 * d, 2 * d);
        // Basis index = qubit · d + mode.
        m[(0, 0)] = c(p, 0.0);
        m[(0, 3)] = c(sp * sq, 0.0);
        m[(3, 0)] = c(sp * sq, 0.0);
        m[(3, 3)] = c(1.0 - p, 0.0);
        let rho = BipartiteState::new(m).unwrap();
        assert_abs_diff_eq!(negativity(&rho).unwrap(), (p * (1.0 - p)).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn log_negativity_fixtures() {
        assert_eq!(log_negativity(0.5).unwrap(), 1.0);
        assert_eq!(log_negativity(0.0).unwrap(), 0.0);
        // log₂(1.14) to ten places.
        assert_abs_diff_eq!(log_negativity(0.07).unwrap(), 0.1890338244, epsilon = 1e-9);
        assert!(log_negativity(-1e-9).is_err());
    }

    #[test]
    fn log_negativity_additive_under_tensor_products() {
        // E_N(ρ⊗ρ) = 2·E_N(ρ) using a generic-dimension partial transpose.
        let p: f64 = 0.8;
        let d = 2;
        let (sp, sq) = (p.sqrt(), (1.0 - p).sqrt());
        let mut m = DMatrix::<Complex64>::zeros(2 * d, 2 * d);
        m[(0, 0)] = c(p, 0.0);
        m[(0, 3)] = c(sp * sq, 0.0);
        m[(3, 0)] = c(sp * sq, 0.0);
        m[(3, 3)] = c(1.0 - p, 0.0);
        let rho = BipartiteState::new(m.clone()).unwrap();
        let n1 = negativity(&rho).unwrap();
        let e1 = log_negativity(n1).unwrap();

        // ρ⊗ρ on (A⊗A)(B⊗B): reorder ρ⊗ρ from (A B A B) to (A A B B).
        let big = m.kronecker(&m);
        let da = 4;
        let db = 4;
        let mut reordered = DMatrix::<Complex64>::zeros(da * db, da * db);
        let idx = |a1: usize, b1: usize, a2: usize, b2: usize| ((a1 * d + b1) * 2 * d) + a2 * d + b2;
        for a1 in 0..2 {
            for b1 in 0..d {
                for a2 in 0..2 {
                    for b2 in 0..d {
                        for a1p in 0..2 {
                            for b1p in 0..d {
                                for a2p in 0..2 {
                                    for b2p in 0..d {
                                        let row = (a1 * 2 + a2) * db + b1 * d + b2;
                                        let col = (a1p * 2 + a2p) * db + b1p * d + b2p;
                                        reordered[(row, col)] =
                                            big[(idx(a1, b1, a2, b2), idx(a1p, b1p, a2p, b2p))];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let n2 = crate::oracle::negativity_general(&reordered, da, db);
        let e2 = log_negativity(n2).unwrap();
        assert_abs_diff_eq!(e2, 2.0 * e1, epsilon = 1e-8);
    }

    #[test]
    fn negativity_rejects_bad_inputs() {
        let mut m = DMatrix::<Complex64>::zeros(4, 4);
        m[(0, 0)] = c(0.5, 0.0);
        m[(3, 3)] = c(0.6, 0.0);
        let rho = BipartiteState::new(m).unwrap();
        // Trace 1.1 is outside the 1e−8 gate.
        assert!(negativity(&rho).is_err());
        // Non-Hermitian matrices never make it into a BipartiteState.
        let mut bad = DMatrix::<Complex64>::zeros(4, 4);
        bad[(0, 1)] = c(1.0, 0.0);
        assert!(BipartiteState::new(bad).is_err());
    }
}
