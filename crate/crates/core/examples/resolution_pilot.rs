//! Discretization shift of crossing angles when every step is halved.

use sle_lab::reversibility::*;

fn main() -> sle_lab::Result<()> {
    let forward = EnsembleSpec {
        process: Process::Degenerate { kappa: 3.0, rho: 0.5, side: Side::Plus },
        grid: GridSpec::uniform(UNIT_DT),
        kind: CrossingKind::First,
        radius: 1.0,
        escape: 100.0,
    };
    let backward = EnsembleSpec { grid: last_crossing_grid(1.0, LAST_REL, LAST_REL_FAR), kind: CrossingKind::Last, ..forward };
    for (name, spec) in [("first crossing", forward), ("last crossing", backward)] {
        let r = resolution_pilot(&spec, 50, 99, 2000)?;
        println!("{name}: shift {:.5} +- {:.5}, CDF shift {:.4}, tolerance {:.4}, pass {}",
            r.mean_shift, r.shift_stderr, r.cdf_shift, r.tolerance, r.passes());
    }
    Ok(())
}
