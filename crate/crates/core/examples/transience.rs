//! Median maximal modulus at T, 2T, 4T.

use sle_lab::reversibility::*;

fn main() -> sle_lab::Result<()> {
    let grid = GridSpec { dt_min: 1e-5, rel: 1e-2, t_switch: f64::INFINITY, rel_far: 0.0, split: 1 };
    for p in [
        Process::Degenerate { kappa: 2.0, rho: 1.0, side: Side::Plus },
        Process::DegenerateIntermediate { kappa: 2.0, rho: 1.0, p2: 1.0 },
    ] {
        let r = transience_report(&p, &grid, &[1.0, 2.0, 4.0], 200, 4)?;
        println!("{p:?}\n  medians {:?}, ratio 4T/T {:.4}", r.medians, r.ratio());
    }
    Ok(())
}
