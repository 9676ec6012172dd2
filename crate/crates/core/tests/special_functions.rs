use proptest::prelude::*;
use sle_lab::special::*;

/// Plain power series, summed until the terms are negligible; independent of
/// the library's continuation scheme.
fn oracle_2f1(a: f64, b: f64, c: f64, x: f64) -> f64 {
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut n = 0.0;
    while n < 2.0e6 {
        term *= (a + n) * (b + n) / ((c + n) * (n + 1.0)) * x;
        n += 1.0;
        sum += term;
        if term == 0.0 || (n > 50.0 && term.abs() < 1e-18 * sum.abs()) {
            break;
        }
    }
    sum
}

const SETTINGS: [(f64, f64); 5] = [(2.0, 1.0), (2.0, -1.0), (3.0, 0.5), (3.5, 2.0), (8.0 / 3.0, 1.0)];

fn grid() -> impl Iterator<Item = f64> {
    (0..100).map(|i| i as f64 / 100.0)
}

#[test]
fn u0_matches_plain_series() {
    for &(k, r) in &SETTINGS {
        let p = HypParams::new(k, r).unwrap();
        for x in grid().chain([0.995, 0.999]) {
            let got = u0(&p, x).unwrap();
            let want = oracle_2f1(p.a, p.b, p.c, x);
            assert!((got - want).abs() <= 1e-11 * want.abs(), "k={k} r={r} x={x} got={got} want={want}");
        }
    }
}

#[test]
fn gauss_equation_residual_with_independent_second_derivative() {
    let mut worst = 0.0f64;
    for &(k, r) in &SETTINGS {
        let p = HypParams::new(k, r).unwrap();
        let (a, b, c) = (p.a, p.b, p.c);
        for x in grid() {
            let (u, du, _) = u0_jet(&p, x).unwrap();
            let d2 = a * b / c * (a + 1.0) * (b + 1.0) / (c + 1.0) * oracle_2f1(a + 2.0, b + 2.0, c + 2.0, x);
            let res = x * (x - 1.0) * d2 + ((a + b + 1.0) * x - c) * du + a * b * u;
            worst = worst.max(res.abs() / u.abs().max(1.0));
        }
    }
    assert!(worst <= 1e-8, "worst residual {worst}");
}

/// Extrapolates `f(1-)` from samples at `y = 1 - x` in geometric progression,
/// eliminating error terms `y^e` for `e` in the lattice generated by `g` and 1.
fn richardson_at_one(f: impl Fn(f64) -> f64, g: f64) -> f64 {
    let mut exps: Vec<f64> = Vec::new();
    for i in 0..6 {
        for j in 0..4 {
            let e = i as f64 * g + j as f64;
            if e > 1e-9 && !exps.iter().any(|&q| (q - e).abs() < 1e-6) {
                exps.push(e);
            }
        }
    }
    exps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = 6usize;
    exps.truncate(m);
    let ys: Vec<f64> = (0..=m).map(|k| 1e-2 * 0.25f64.powi(k as i32)).collect();
    let mut t: Vec<f64> = ys.iter().map(|&y| f(1.0 - y)).collect();
    for &e in &exps {
        let r = 4.0f64.powf(e);
        t = (0..t.len() - 1).map(|k| (r * t[k + 1] - t[k]) / (r - 1.0)).collect();
    }
    t[0]
}

#[test]
fn extrapolated_f0_reaches_its_limit() {
    for &(k, r) in &SETTINGS {
        let p = HypParams::new(k, r).unwrap();
        let est = richardson_at_one(|x| f0(&p, x).unwrap(), 8.0 / k - 2.0);
        assert!((est - f0_limit_at_one(&p)).abs() <= 1e-4, "kappa {k} rho {r}: {est} vs {}", f0_limit_at_one(&p));
    }
}

#[test]
fn u0_approaches_gauss_summation_value() {
    for &(k, r) in &SETTINGS {
        let p = HypParams::new(k, r).unwrap();
        let lim = u0_limit_at_one(&p);
        let gaps: Vec<f64> = [1e-2, 1e-3, 1e-4, 1e-5].iter().map(|y| (u0(&p, 1.0 - y).unwrap() - lim).abs()).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "kappa {k} rho {r}: {gaps:?}");
        assert!(gaps[3] <= 1e-3 * lim.abs().max(1.0), "kappa {k} rho {r}: {gaps:?}");
    }
}

proptest! {
    #[test]
    fn drift_j_scales_inversely(k in 0.5f64..3.9, r0 in 0.0f64..3.0, p1 in 0.01f64..5.0, gap in 0.01f64..5.0, s in 0.1f64..10.0) {
        let r = (k - 4.0) / 2.0 + r0;
        let p = HypParams::new(k, r).unwrap();
        let j = drift_j(&p, p1, p1 + gap).unwrap();
        let js = drift_j(&p, s * p1, s * (p1 + gap)).unwrap();
        prop_assert!((js - j / s).abs() <= 1e-12 * (j / s).abs().max(1e-300) + 1e-15);
    }
}
