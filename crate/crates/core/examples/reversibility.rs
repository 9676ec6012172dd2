//! Crossing angles of forward and inverted traces and a small two-sample test.

use sle_lab::reversibility::*;
use sle_lab::sde::Noise;

fn main() -> sle_lab::Result<()> {
    let p = Process::Degenerate { kappa: 2.0, rho: 1.0, side: Side::Plus };
    let tr = run_trace(&p, &last_crossing_grid(1.0, LAST_REL, LAST_REL_FAR), Noise::new(3), StopRule::Reach(100.0))?;
    let first = first_crossing_angle(&tr, 1.0).unwrap();
    let last = last_crossing_angle(&tr, 1.0, 100.0).unwrap();
    println!("{} steps, first crossing {:.5}, last crossing {:.5}", tr.len() - 1, first.angle, last.angle);
    let inv = invert_trace(&tr)?;
    println!("inverted trace: first crossing of the unit circle {:.5}", first_crossing_angle(&inv, 1.0).unwrap().angle);

    let r = test_reversal_degenerate(2.0, 1.0, Side::Plus, 200, 1.0, 17)?;
    println!("degenerate test, 200 paths: D = {:.4}, p = {:.4}", r.ks.statistic, r.ks.p_value);
    Ok(())
}
