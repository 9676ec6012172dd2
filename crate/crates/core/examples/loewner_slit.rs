//! Vertical slit, capacity estimates and a driver -> trace -> driver round trip.

use sle_lab::loewner::*;
use sle_lab::sde::drive_standard;

fn main() -> sle_lab::Result<()> {
    let n = 1000;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    let slit = DrivingPath::new(times, vec![0.0; n + 1])?;
    let tr = trace_from_driver(&slit)?;
    println!("slit tip {:.12} (exact 2i)", tr.points[n]);
    let chain = chain_from_driver(&slit)?;
    println!("hcap step sum {:.6}, asymptotic fit {:.6}", chain.hcap(), chain.hcap_fit());

    let d = drive_standard(2.0, 1.0, 2000, 11)?;
    let tr = trace_from_driver(&d)?;
    let (_, back) = unzip_curve(&tr)?;
    let err = d.xi.iter().zip(&back.xi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let terr = d.times.iter().zip(&back.times).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("round trip: driver sup error {err:.3e}, time sup error {terr:.3e}");
    println!("trace diameter {:.4}, max modulus {:.4}", tr.diameter_upto(tr.len() - 1), tr.max_modulus());
    Ok(())
}
