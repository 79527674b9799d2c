//! The core quantifier: negativity minimization over all bipartite states
//! consistent with the measured moments and the sender-side overlap.
//!
//! The data enter as 12 linear functionals of the qubit ⊗ mode state ρ:
//! two qubit populations (½ each), per symbol the conditional first and
//! second moments of x̂ and p̂, and the two quadrature components of the
//! qubit coherence fixed by the overlap s. Moments arrive in shot-noise
//! units and are converted here to the internal convention (variances
//! halved, means unchanged — the symmetric β = (⟨x̂⟩+i⟨p̂⟩)/√2 makes the
//! mean conversion the identity). Equality targets become two-sided
//! inequalities with slack τ_feas·(1+|target|) so finite-sample records
//! cannot produce spurious infeasibility.

pub(crate) mod sdp;

use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{EntError, EntResult};
use crate::fock::{
    coherent_state, negative_part_sum, partial_transpose_a, quadrature_ops, BipartiteState,
    FockDim,
};
use crate::moments::{extract_beta, infer_overlap, MomentRecord, MomentUncertainty};
use sdp::{admm_solve, svec_len, svec_read, svec_write, ConicProblem, SplitState, Tuning};

/// Floor applied to sub-shot (flagged) variances when they enter the
/// quantifier, in shot-noise units.
const VARIANCE_FLOOR_SNL: f64 = 1e-6;

/// Sender-side reduced state ρ_A = ½[[1, s], [s, 1]], fixed by the overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedQubitState {
    pub overlap_s: f64,
}

impl ReducedQubitState {
    pub fn new(overlap_s: f64) -> EntResult<Self> {
        if !(0.0..=1.0).contains(&overlap_s) || !overlap_s.is_finite() {
            return Err(EntError::invalid(format!(
                "overlap must lie in [0, 1], got {overlap_s}"
            )));
        }
        Ok(ReducedQubitState { overlap_s })
    }
}

/// Per-symbol constraint targets in the internal quadrature convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolTargets {
    pub mean_x: f64,
    pub mean_p: f64,
    /// Full second moments ⟨x̂²⟩, ⟨p̂²⟩ (variance + mean², internal units).
    pub second_x: f64,
    pub second_p: f64,
}

/// The assembled constraint data for one minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub rho_a: ReducedQubitState,
    pub symbols: [SymbolTargets; 2],
    /// Symbol priors; uniform binary modulation.
    pub weights: [f64; 2],
    pub dim: FockDim,
}

/// Solver tolerances and the truncation growth schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Feasibility tolerance τ_feas on constraint residuals.
    pub tol_feas: f64,
    /// Objective tolerance τ_obj: negativity changes below this are noise.
    pub tol_obj: f64,
    /// Iteration cap per solve.
    pub max_iter: usize,
    /// Truncation schedule: starting dimension (amplitude-derived default
    /// when `None`), step between levels, and hard cap.
    pub dim_start: Option<usize>,
    pub dim_step: usize,
    pub dim_max: usize,
    /// Optional solver trace (iteration, objective, residual) appended here.
    pub trace_path: Option<PathBuf>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_feas: 1e-7,
            tol_obj: 1e-6,
            max_iter: 20_000,
            dim_start: None,
            dim_step: 4,
            dim_max: 48,
            trace_path: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> EntResult<()> {
        if !(self.tol_feas > 0.0 && self.tol_obj > 0.0) {
            return Err(EntError::invalid("solver tolerances must be positive"));
        }
        if self.max_iter < 100 {
            return Err(EntError::invalid("iteration cap must be at least 100"));
        }
        if self.dim_step == 0 || self.dim_max < 4 {
            return Err(EntError::invalid("invalid truncation schedule"));
        }
        if let Some(d0) = self.dim_start {
            if d0 < 4 || d0 > self.dim_max {
                return Err(EntError::invalid(format!(
                    "starting dimension {d0} outside [4, {}]",
                    self.dim_max
                )));
            }
        }
        Ok(())
    }
}

/// Terminal state of one minimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::Infeasible => "infeasible",
            SolverStatus::MaxIter => "max_iter",
        };
        f.write_str(s)
    }
}

/// Certified output of the negativity minimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativityResult {
    pub negativity: f64,
    pub log_negativity: f64,
    pub status: SolverStatus,
    /// Worst constraint residual beyond slack at the returned state: the
    /// larger of the worst row excess (in units of its slack width, scaled by
    /// τ_feas) and the partial-transpose coupling residual. At or below
    /// τ_feas the state reproduces every recorded moment within its declared
    /// tolerance band.
    pub residual: f64,
    /// Distance from the returned negativity to the certified dual lower
    /// bound on the optimum, when a certificate was extracted.
    pub lower_bound_gap: Option<f64>,
    pub d_used: usize,
    pub wall_time_s: f64,
    pub iterations: usize,
}

/// Converts a shot-noise-unit record plus overlap into internal-convention
/// constraint targets: variances are halved (after flooring flagged values at
/// 1e−6 SNL), means carry over unchanged, and second moments are formed as
/// variance + mean².
pub fn build_constraints(record: &MomentRecord, s: f64, dim: FockDim) -> EntResult<ConstraintSet> {
    record.validate()?;
    let rho_a = ReducedQubitState::new(s)?;
    let mut symbols = [SymbolTargets {
        mean_x: 0.0,
        mean_p: 0.0,
        second_x: 0.0,
        second_p: 0.0,
    }; 2];
    for k in 0..2 {
        let m = &record.symbols[k];
        let vx = m.var_x.max(VARIANCE_FLOOR_SNL) / 2.0;
        let vp = m.var_p.max(VARIANCE_FLOOR_SNL) / 2.0;
        symbols[k] = SymbolTargets {
            mean_x: m.mean_x,
            mean_p: m.mean_p,
            second_x: vx + m.mean_x * m.mean_x,
            second_p: vp + m.mean_p * m.mean_p,
        };
    }
    Ok(ConstraintSet {
        rho_a,
        symbols,
        weights: [0.5, 0.5],
        dim,
    })
}

/// Builds the svec-space conic problem: 12 normalized rows made of the two
/// population projectors, the eight conditional moment functionals, and the
/// two coherence quadratures.
fn assemble_problem(cs: &ConstraintSet, tol_feas: f64) -> EntResult<ConicProblem> {
    let d = cs.dim.d();
    let n = 2 * d;
    let nv = svec_len(n);
    let (x, p) = quadrature_ops(cs.dim);
    let x2 = &x.entries * &x.entries;
    let p2 = &p.entries * &p.entries;

    let embed = |op: &DMatrix<Complex64>, k: usize| -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((k * d, k * d), (d, d)).copy_from(op);
        m
    };
    let eye = DMatrix::<Complex64>::identity(d, d);

    let mut ops: Vec<(DMatrix<Complex64>, f64)> = Vec::with_capacity(12);
    ops.push((embed(&eye, 0), cs.weights[0]));
    ops.push((embed(&eye, 1), cs.weights[1]));
    for k in 0..2 {
        let w = cs.weights[k];
        let t = &cs.symbols[k];
        ops.push((embed(&x.entries, k), w * t.mean_x));
        ops.push((embed(&p.entries, k), w * t.mean_p));
        ops.push((embed(&x2, k), w * t.second_x));
        ops.push((embed(&p2, k), w * t.second_p));
    }
    // Qubit coherence: ⟨(|0⟩⟨1| + |1⟩⟨0|) ⊗ I⟩ = s and the conjugate
    // quadrature pinned to zero (the overlap is real by frame alignment).
    let mut c_re = DMatrix::<Complex64>::zeros(n, n);
    let mut c_im = DMatrix::<Complex64>::zeros(n, n);
    for t in 0..d {
        c_re[(t, d + t)] = Complex64::new(1.0, 0.0);
        c_re[(d + t, t)] = Complex64::new(1.0, 0.0);
        c_im[(t, d + t)] = Complex64::new(0.0, -1.0);
        c_im[(d + t, t)] = Complex64::new(0.0, 1.0);
    }
    ops.push((c_re, cs.rho_a.overlap_s));
    ops.push((c_im, 0.0));

    let mut rows = Vec::with_capacity(ops.len());
    let mut b = Vec::with_capacity(ops.len());
    let mut delta = Vec::with_capacity(ops.len());
    for (op, target) in &ops {
        let mut v = vec![0.0; nv];
        svec_write(op, &mut v);
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        debug_assert!(norm > 0.0);
        v.iter_mut().for_each(|a| *a /= norm);
        rows.push(v);
        b.push(target / norm);
        delta.push(tol_feas * (1.0 + target.abs()) / norm);
    }
    ConicProblem::new(n, rows, b, delta, (0, 1), (d as f64).sqrt())
}

/// Cold-start iterate: the two-block construction at the recorded mean
/// amplitudes with coherence matched to s — exact for noiseless loss
/// channels, a close feasible-ish guess otherwise.
fn initial_state(cs: &ConstraintSet, prob: &ConicProblem, sigma: f64) -> SplitState {
    let d = cs.dim.d();
    let n = 2 * d;
    let nv = svec_len(n);
    let sqrt2 = std::f64::consts::SQRT_2;
    let beta0 = Complex64::new(cs.symbols[0].mean_x / sqrt2, cs.symbols[0].mean_p / sqrt2);
    let beta1 = Complex64::new(cs.symbols[1].mean_x / sqrt2, cs.symbols[1].mean_p / sqrt2);
    let dim = cs.dim;
    let psi0 = coherent_state(beta0, dim).expect("finite mean amplitude");
    let psi1 = coherent_state(beta1, dim).expect("finite mean amplitude");
    let g = psi1.inner(&psi0);
    let mut c = if g.norm() > 1e-12 {
        Complex64::new(cs.rho_a.overlap_s / 2.0, 0.0) / g
    } else {
        Complex64::new(0.0, 0.0)
    };
    if c.norm() > 0.5 {
        c *= 0.5 / c.norm();
    }
    let half = Complex64::new(0.5, 0.0);
    let r00 = psi0.projector() * half;
    let r11 = psi1.projector() * half;
    let r01 = psi0.outer(&psi1) * c;
    let rho = BipartiteState::from_blocks(&r00, &r01, &r11).expect("Hermitian by construction");

    let mut z = vec![0.0; 3 * nv + prob.n_rows()];
    svec_write(&rho.entries, &mut z[0..nv]);
    // Split the partial transpose into its positive and negative parts.
    let pt = partial_transpose_a(&rho);
    let se = pt.entries.clone().symmetric_eigen();
    let mut pos = se.eigenvectors.clone();
    let mut neg = se.eigenvectors.clone();
    for (k, lam) in se.eigenvalues.iter().enumerate() {
        let lp = Complex64::new(lam.max(0.0), 0.0);
        let ln = Complex64::new((-lam).max(0.0), 0.0);
        for r in 0..n {
            pos[(r, k)] *= lp;
            neg[(r, k)] *= ln;
        }
    }
    let mplus = &pos * se.eigenvectors.adjoint();
    let mminus = &neg * se.eigenvectors.adjoint();
    svec_write(&mplus, &mut z[nv..2 * nv]);
    svec_write(&mminus, &mut z[2 * nv..3 * nv]);

    SplitState {
        z,
        u: vec![0.0; 3 * nv + prob.n_rows()],
        sigma,
    }
}

/// Re-embeds a split state from mode dimension `d_from` into `d_to` (each
/// qubit block is padded top-left), preserving the slack entries and penalty.
fn pad_state(state: &SplitState, d_from: usize, d_to: usize, n_rows: usize) -> SplitState {
    assert!(d_to >= d_from);
    let (n_from, n_to) = (2 * d_from, 2 * d_to);
    let (nv_from, nv_to) = (svec_len(n_from), svec_len(n_to));
    let embed = |src: &[f64]| -> Vec<f64> {
        let small = svec_read(src, n_from);
        let mut big = DMatrix::<Complex64>::zeros(n_to, n_to);
        for a in 0..2 {
            for b in 0..2 {
                big.view_mut((a * d_to, b * d_to), (d_from, d_from))
                    .copy_from(&small.view((a * d_from, b * d_from), (d_from, d_from)));
            }
        }
        let mut out = vec![0.0; nv_to];
        svec_write(&big, &mut out);
        out
    };
    let pad_vec = |v: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * nv_to + n_rows);
        out.extend(embed(&v[0..nv_from]));
        out.extend(embed(&v[nv_from..2 * nv_from]));
        out.extend(embed(&v[2 * nv_from..3 * nv_from]));
        out.extend_from_slice(&v[3 * nv_from..]);
        out
    };
    SplitState {
        z: pad_vec(&state.z),
        u: pad_vec(&state.u),
        sigma: state.sigma,
    }
}

/// A reusable warm start: the split state and the mode dimension it was
/// produced at.
pub(crate) struct WarmHandle {
    state: SplitState,
    dim: usize,
}

fn tuning_from(cfg: &SolverConfig) -> Tuning {
    Tuning {
        tol_feas: cfg.tol_feas,
        tol_obj: cfg.tol_obj,
        max_iter: cfg.max_iter,
        ..Tuning::default()
    }
}

fn solve_constraints(
    cs: &ConstraintSet,
    cfg: &SolverConfig,
    warm: Option<&WarmHandle>,
) -> EntResult<(NegativityResult, WarmHandle)> {
    let started = Instant::now();
    let prob = assemble_problem(cs, cfg.tol_feas)?;
    let tuning = tuning_from(cfg);
    let d = cs.dim.d();
    let init = match warm {
        Some(h) if h.dim <= d => pad_state(&h.state, h.dim, d, prob.n_rows()),
        _ => initial_state(cs, &prob, tuning.sigma0),
    };
    let out = admm_solve(&prob, &tuning, init)?;

    if let Some(path) = &cfg.trace_path {
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        for (iter, obj, viol) in &out.trace {
            writeln!(
                file,
                "d={d} iter={iter} objective={obj:.9e} residual={:.3e}",
                viol * cfg.tol_feas
            )?;
        }
        writeln!(
            file,
            "d={d} final iterations={} objective={:.9e} residual={:.3e} converged={}",
            out.iterations,
            out.objective,
            (out.viol * cfg.tol_feas).max(out.coupling),
            out.converged,
        )?;
    }

    // Report the negativity of the (trace-normalized) returned state.
    let mut rho = out.rho;
    let tr: f64 = (0..rho.nrows()).map(|i| rho[(i, i)].re).sum();
    if tr > 0.5 {
        let inv = Complex64::new(1.0 / tr, 0.0);
        rho.iter_mut().for_each(|e| *e *= inv);
    }
    let bip = BipartiteState::new(rho)
        .map_err(|_| EntError::Numerical("solver state lost Hermiticity".into()))?;
    let iterate_neg = negative_part_sum(&partial_transpose_a(&bip).entries);
    // The certified dual bound is a floor on the constrained minimum. The
    // returned state's negativity approaches the same value from the primal
    // side but can dip below the floor while feasibility is still loose —
    // on tightly pinned problems most of the value hides in the last
    // scraps of residual. Reporting the larger of the two clamps the
    // estimate to the floor; on certified convergence they agree within
    // the objective tolerance.
    let negativity = match out.dual_bound {
        Some(b) if b > iterate_neg => b,
        _ => iterate_neg,
    };
    let status = if out.converged {
        SolverStatus::Optimal
    } else if out.plateaued {
        SolverStatus::Infeasible
    } else {
        SolverStatus::MaxIter
    };
    let lower_bound_gap = out.dual_bound.map(|b| (negativity - b).max(0.0));
    let result = NegativityResult {
        negativity,
        log_negativity: (2.0 * negativity.max(0.0) + 1.0).log2(),
        status,
        // The solver measures row violations in box fractions; scaling by
        // τ_feas expresses the worst row's excess on the same footing as the
        // coupling residual, so one number reports both.
        residual: (out.viol * cfg.tol_feas).max(out.coupling),
        lower_bound_gap,
        d_used: d,
        wall_time_s: started.elapsed().as_secs_f64(),
        iterations: out.iterations,
    };
    Ok((
        result,
        WarmHandle {
            state: out.state,
            dim: d,
        },
    ))
}

/// Minimizes the negativity over all states consistent with the constraint
/// set, at the set's fixed truncation dimension.
pub fn min_negativity(cs: &ConstraintSet, cfg: &SolverConfig) -> EntResult<NegativityResult> {
    cfg.validate()?;
    let (result, _) = solve_constraints(cs, cfg, None)?;
    Ok(result)
}

/// Default starting truncation: d = max(12, ⌈10 + 10·|β|²⌉) from the largest
/// recorded mean amplitude (the receiver-side photon scale).
fn default_start_dim(record: &MomentRecord) -> usize {
    let beta_max = extract_beta(record)
        .iter()
        .map(|b| b.norm())
        .fold(0.0, f64::max);
    ((10.0 + 10.0 * beta_max * beta_max).ceil() as usize).max(12)
}

fn truncation_converge_impl(
    record: &MomentRecord,
    s: f64,
    cfg: &SolverConfig,
    warm: Option<&WarmHandle>,
) -> EntResult<(NegativityResult, WarmHandle)> {
    cfg.validate()?;
    let mut d = cfg
        .dim_start
        .unwrap_or_else(|| default_start_dim(record))
        .min(cfg.dim_max)
        .max(4);
    let cs = build_constraints(record, s, FockDim::new(d)?)?;
    let (mut result, mut handle) = solve_constraints(&cs, cfg, warm)?;
    let mut elapsed = result.wall_time_s;

    // A level's value enters the agreement test when its refined iterate is
    // feasible: either the dual certificate closed (Optimal) or only the
    // certificate lagged behind a feasible iterate (MaxIter with residual
    // inside tolerance). Judging agreement on certificate status alone would
    // let one slow dual ride force extra truncation levels whose values were
    // already settled.
    let value_bearing = |r: &NegativityResult| {
        r.status == SolverStatus::Optimal
            || (r.status == SolverStatus::MaxIter && r.residual <= cfg.tol_feas)
    };

    loop {
        if result.status == SolverStatus::Infeasible {
            // No larger space can repair an inconsistent moment set.
            result.wall_time_s = elapsed;
            return Ok((result, handle));
        }
        if d >= cfg.dim_max {
            if result.status == SolverStatus::Optimal {
                result.status = SolverStatus::MaxIter; // schedule exhausted
            }
            result.wall_time_s = elapsed;
            return Ok((result, handle));
        }
        let d2 = (d + cfg.dim_step).min(cfg.dim_max);
        let cs2 = build_constraints(record, s, FockDim::new(d2)?)?;
        let (next, next_handle) = solve_constraints(&cs2, cfg, Some(&handle))?;
        elapsed += next.wall_time_s;
        let delta = (next.negativity - result.negativity).abs();
        let agreed = value_bearing(&result) && value_bearing(&next) && delta < cfg.tol_obj;
        result = next;
        handle = next_handle;
        d = d2;
        if agreed {
            result.wall_time_s = elapsed;
            return Ok((result, handle));
        }
    }
}

/// Solves at increasing truncation dimensions along the configured schedule
/// until consecutive levels agree within τ_obj; `d_used` in the result is the
/// final dimension and the wall time covers the whole ladder.
pub fn truncation_converge(
    record: &MomentRecord,
    s: f64,
    cfg: &SolverConfig,
) -> EntResult<NegativityResult> {
    let (result, _) = truncation_converge_impl(record, s, cfg, None)?;
    Ok(result)
}

/// Adversarial error-bar quantification: for each k the record is moved to
/// its least favorable point within k standard errors — variances inflated
/// by k·se, mean magnitudes shrunk toward zero by k·se (floored at zero) —
/// and the minimization is repeated. Less displacement and more noise only
/// weaken the certifiable entanglement, so the results are non-increasing
/// in k.
///
/// `overlap_s` is the sender overlap of a known prepared alphabet; `None`
/// infers it from the unperturbed record. Either way it is held fixed across
/// all k: ρ_A is prepared upstream of the channel and carries no sampling
/// error from Bob's statistics.
pub fn quantify_with_error_bars(
    record: &MomentRecord,
    uncertainty: &MomentUncertainty,
    overlap_s: Option<f64>,
    k_sigmas: &[f64],
    cfg: &SolverConfig,
) -> EntResult<Vec<NegativityResult>> {
    record.validate()?;
    if k_sigmas.iter().any(|k| !(*k >= 0.0) || !k.is_finite()) {
        return Err(EntError::invalid("error-bar multiples must be nonnegative"));
    }
    let s = match overlap_s {
        Some(s) => ReducedQubitState::new(s)?.overlap_s,
        None => infer_overlap(&extract_beta(record), record.transmission_t)?.overlap_s,
    };
    let shrink = |v: f64, d: f64| v.signum() * (v.abs() - d).max(0.0);
    let mut results = Vec::with_capacity(k_sigmas.len());
    let mut warm: Option<WarmHandle> = None;
    for &k in k_sigmas {
        let mut pert = record.clone();
        for (sym, u) in pert.symbols.iter_mut().zip(&uncertainty.symbols) {
            sym.mean_x = shrink(sym.mean_x, k * u.se_mean_x);
            sym.mean_p = shrink(sym.mean_p, k * u.se_mean_p);
            sym.var_x += k * u.se_var_x;
            sym.var_p += k * u.se_var_p;
        }
        let (res, handle) = truncation_converge_impl(&pert, s, cfg, warm.as_ref())?;
        results.push(res);
        warm = Some(handle);
    }
    Ok(results)
}
