//! Tabulates U0, f0, g0 and V0 and compares U0 near 1 with the Gauss summation value.

use sle_lab::special::*;

fn main() -> sle_lab::Result<()> {
    let p = HypParams::new(3.0, 0.5)?;
    println!("a = {:.6}, b = {:.6}, c = {:.6}", p.a, p.b, p.c);
    println!("{:>6} {:>14} {:>14} {:>14} {:>14}", "x", "U0", "f0", "g0", "V0");
    for i in 1..10 {
        let x = i as f64 / 10.0;
        println!("{x:6.2} {:14.10} {:14.10} {:14.10} {:14.10}", u0(&p, x)?, f0(&p, x)?, g0(&p, x)?, v0(&p, x)?);
    }
    println!("U0(1-) = {:.10}, f0(1-) = {:.10}, g0'(0) = {:.10}", u0_limit_at_one(&p), f0_limit_at_one(&p), g0_d1_at_zero(&p));
    for y in [1e-2, 1e-4, 1e-6] {
        println!("U0(1 - {y:e}) - U0(1-) = {:e}", u0(&p, 1.0 - y)? - u0_limit_at_one(&p));
    }
    let k2 = HypParams::new(2.0, 1.0)?;
    println!("kappa = 2, rho = 1: U0(0.5) = {} (closed form 1 - x/3 = {})", u0(&k2, 0.5)?, 1.0 - 0.5 / 3.0);
    println!("J(1, 2) = {:.10}", drift_j(&p, 1.0, 2.0)?);
    Ok(())
}
