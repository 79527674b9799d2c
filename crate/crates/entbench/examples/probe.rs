use entbench::moments::MomentRecord;
use entbench::quant::{truncation_converge, SolverConfig};

fn main() {
    let t = 0.24_f64;
    let alpha = 0.3_f64;
    let beta = (2.0 * t).sqrt() * alpha;
    let record = MomentRecord::symmetric(beta, 0.0, 1.02, 1.02, 1_000_000, t);
    let s = (-2.0 * alpha * alpha).exp();
    let cfg = SolverConfig::default();

    let base = truncation_converge(&record, s, &cfg).unwrap();
    eprintln!(
        "base    N={:.9} status={:?} d_used={} iters={} t={:.1}s",
        base.negativity, base.status, base.d_used, base.iterations, base.wall_time_s
    );

    let mut cfg2 = cfg.clone();
    cfg2.dim_start = Some(base.d_used + 4);
    let plus = truncation_converge(&record, s, &cfg2).unwrap();
    eprintln!(
        "plus4   N={:.9} status={:?} d_used={} iters={} t={:.1}s",
        plus.negativity, plus.status, plus.d_used, plus.iterations, plus.wall_time_s
    );
    eprintln!(
        "delta   |dN|={:.3e}  (<1e-6: {})",
        (plus.negativity - base.negativity).abs(),
        (plus.negativity - base.negativity).abs() < 1e-6
    );
}
