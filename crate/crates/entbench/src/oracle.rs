//! Slow, independent reference constructions used to validate the fast paths.
//!
//! Nothing here is needed in production flows; the routines exist so tests can
//! compare optimized implementations against literal, first-principles
//! computations that share as little code as possible with what they check.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::phase_distribution;
use crate::fock::{coherent_state, hermitian_eigenvalues, BipartiteState, FockDim};

/// Partial transpose on subsystem A for an arbitrary `da ⊗ db` split, by
/// direct index shuffling.
pub fn pt_general(m: &DMatrix<Complex64>, da: usize, db: usize) -> DMatrix<Complex64> {
    assert_eq!(m.nrows(), da * db);
    assert_eq!(m.ncols(), da * db);
    DMatrix::from_fn(da * db, da * db, |row, col| {
        let (a, i) = (row / db, row % db);
        let (b, j) = (col / db, col % db);
        m[(b * db + i, a * db + j)]
    })
}

/// Negativity via |Σ negative eigenvalues| of the general partial transpose.
pub fn negativity_general(m: &DMatrix<Complex64>, da: usize, db: usize) -> f64 {
    let pt = pt_general(m, da, db);
    let herm = (&pt + pt.adjoint()) * Complex64::new(0.5, 0.0);
    hermitian_eigenvalues(&herm)
        .iter()
        .filter(|&&ev| ev < 0.0)
        .map(|ev| -ev)
        .sum()
}

/// The unique bipartite state consistent with exact coherent-state moments
/// after a pure-loss channel: conditional states |±β⟩ with β = √T·α, qubit
/// coherence fixed by the sender-side overlap. Explicitly,
///
/// ρ = ½|0⟩⟨0|⊗|β⟩⟨β| + ½|1⟩⟨1|⊗|−β⟩⟨−β|
///   + c|0⟩⟨1|⊗|β⟩⟨−β| + c|1⟩⟨0|⊗|−β⟩⟨β|,   c = s_A/(2·s_B),
///
/// with s_A = e^{−2α²} and s_B = ⟨β|−β⟩ = e^{−2β²}. For T ≤ 1 the coherence
/// obeys c ≤ 1/2, so ρ is a valid (generally mixed) state; at T = 1 it is the
/// pure source-replacement state.
pub fn two_block_state(alpha: f64, transmission: f64, dim: FockDim) -> BipartiteState {
    assert!(alpha >= 0.0 && transmission > 0.0 && transmission <= 1.0);
    let beta = transmission.sqrt() * alpha;
    let s_a = (-2.0 * alpha * alpha).exp();
    let s_b = (-2.0 * beta * beta).exp();
    let c = s_a / (2.0 * s_b);
    let plus = coherent_state(Complex64::new(beta, 0.0), dim).expect("finite amplitude");
    let minus = coherent_state(Complex64::new(-beta, 0.0), dim).expect("finite amplitude");
    let half = Complex64::new(0.5, 0.0);
    let r00 = plus.projector() * half;
    let r11 = minus.projector() * half;
    let r01 = plus.outer(&minus) * Complex64::new(c, 0.0);
    BipartiteState::from_blocks(&r00, &r01, &r11).expect("construction is Hermitian")
}

/// Closed-form negativity of the pure (T = 1) two-block state:
/// N = √(1 − s²)/2 with s = e^{−2α²}, from the Schmidt weights (1 ± s)/2.
pub fn pure_state_negativity(alpha: f64) -> f64 {
    let s = (-2.0 * alpha * alpha).exp();
    (1.0 - s * s).sqrt() / 2.0
}

/// Brute-force marginal moments of the phase-diffused Q-function, in
/// shot-noise record units: `(mean_x, mean_p, qvar_x, qvar_p)`.
///
/// The phase distribution is rebuilt at the requested (typically 10× default)
/// grid resolution, and every mixture component's plane moments are then
/// integrated numerically by Simpson quadrature of its Q-marginal — no use of
/// the analytic Gaussian moment identities the fast path relies on. Record
/// units follow the project convention: means scale as √2·(plane mean) and
/// each component contributes a record variance of 4×(plane variance).
pub fn q_moments_bruteforce(
    beta: Complex64,
    alpha_cal: f64,
    phase_grid: usize,
) -> (f64, f64, f64, f64) {
    let f = phase_distribution(alpha_cal, phase_grid).expect("valid phase distribution");
    let r = beta.norm();
    let base = beta.arg();
    let sqrt2 = std::f64::consts::SQRT_2;

    // Plane moments ∫ uᵏ q(u) du of one Gaussian Q-marginal centred at c0.
    let marginal_moments = |c0: f64| -> (f64, f64, f64) {
        let lo = c0 - 8.0;
        let hi = c0 + 8.0;
        let n = 2000;
        let h = (hi - lo) / n as f64;
        let density = |u: f64| (-(u - c0) * (u - c0)).exp() / std::f64::consts::PI.sqrt();
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..=n {
            let u = lo + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let q = w * density(u);
            m0 += q;
            m1 += q * u;
            m2 += q * u * u;
        }
        (m0 * h / 3.0, m1 * h / 3.0, m2 * h / 3.0)
    };

    let (mut mx, mut mp, mut ex2, mut ep2) = (0.0, 0.0, 0.0, 0.0);
    for (&phi, &w) in f.nodes.iter().zip(f.weights.iter()) {
        let cx = r * (base + phi).cos();
        let cp = r * (base + phi).sin();
        let (n0x, m1x, m2x) = marginal_moments(cx);
        let (n0p, m1p, m2p) = marginal_moments(cp);
        let mean_x = m1x / n0x;
        let mean_p = m1p / n0p;
        let var_x = m2x / n0x - mean_x * mean_x;
        let var_p = m2p / n0p - mean_p * mean_p;
        mx += w * sqrt2 * mean_x;
        mp += w * sqrt2 * mean_p;
        ex2 += w * ((sqrt2 * mean_x).powi(2) + 4.0 * var_x);
        ep2 += w * ((sqrt2 * mean_p).powi(2) + 4.0 * var_p);
    }
    (mx, mp, ex2 - mx * mx, ep2 - mp * mp)
}
