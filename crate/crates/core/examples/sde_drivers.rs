//! Standard, SLE(kappa; rho) and intermediate drivers with the gap monitor.

use sle_lab::sde::*;

fn main() -> sle_lab::Result<()> {
    let std_path = drive_standard(3.0, 1.0, 4096, 5)?;
    println!("standard: xi(1) = {:.6}", std_path.xi.last().unwrap());

    let cfg = SleConfig {
        kappa: 8.0 / 3.0,
        x0: 0.0,
        forces: vec![Force { rho: 1.0, at: ForceSpec::DegeneratePlus }, Force { rho: -0.5, at: ForceSpec::Finite(-1.0) }],
        horizon: 1.0,
        steps: 4096,
        seed: 5,
    };
    let d = drive_kappa_rho(&cfg)?;
    println!("kappa-rho: xi(1) = {:.6}, p1(1) = {:.6}, p2(1) = {:.6}, truncated: {:?}",
        d.xi.last().unwrap(), d.force("p1").unwrap().last().unwrap(), d.force("p2").unwrap().last().unwrap(), d.truncation);

    let icfg = IntermediateConfig { kappa: 2.0, rho: 1.0, p1: Some(1.0), p2: 2.0, horizon: 1.0, steps: 4096, seed: 5 };
    let (d, mon) = drive_intermediate_monitored(&icfg)?;
    println!("intermediate: xi(1) = {:.6}, monitor {:?}", d.xi.last().unwrap(), mon);

    let zero = IntermediateConfig { rho: 0.0, ..icfg };
    let a = drive_intermediate(&zero)?;
    let b = drive_standard(2.0, 1.0, 4096, 5)?;
    let diff = a.xi.iter().zip(&b.xi).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!("rho = 0 reduces to standard SLE: max difference {diff:e}");
    Ok(())
}
