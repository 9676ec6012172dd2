//! Small Monte Carlo run of the two-curve coupling martingale.

use sle_lab::coupling::*;

fn main() -> sle_lab::Result<()> {
    let params = PairParams { kappa: 3.0, rho: 0.5, x1: 0.0, x2: 1.0 };
    let e = params.exponents();
    println!("alpha {:.4} lambda {:.4} tau {:.4} delta {:.4}", e.alpha, e.lambda, e.tau, e.delta);
    let cfg = MartingaleConfig {
        params,
        polygons: [HullPolygon::half_disk(0.0, 0.1, 32)?, HullPolygon::half_disk(1.0, 0.1, 32)?],
        t1_max: None,
        t2_bar: 0.0025,
        cells: 16,
        substeps: 4,
        n_paths: 200,
        seed: 1,
    };
    let r = martingale_mc_test(&cfg)?;
    for (i, t) in r.times.iter().enumerate().step_by(4) {
        println!("t1 = {t:.6}: mean M = {:.5} +- {:.5}", r.mean[i], r.stderr[i]);
    }
    println!("terminal {:.5} +- {:.5}, max |z| {:.2}", r.terminal_mean, r.terminal_stderr, r.max_z());
    println!("factorization error {:.1e}, boundary error {:.1e}, ordering violations {}",
        r.max_factorization_err, r.max_boundary_err, r.ordering_violations);
    println!("Q slope {:.4} +- {:.4}", r.q_slope, r.q_slope_stderr);
    Ok(())
}
