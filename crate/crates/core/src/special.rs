//! Gauss hypergeometric function and the kernels built from it.
//!
//! `U0 = 2F1(a, b; c; x)` with `a = 2 rho / kappa`, `b = 1 - 4 / kappa`,
//! `c = (2 rho + 4) / kappa`. On `[0, 1/2]` the power series is summed
//! directly. On `(1/2, 1)` the solution of the hypergeometric equation is
//! continued from `x = 1/2` by a Taylor-series stepper whose coefficients come
//! from the three-term recurrence of the equation; each step stays inside half
//! the radius of convergence. `U0'` uses the parameter shift
//! `U0' = (ab/c) 2F1(a+1, b+1; c+1; x)` and `U0''` is solved from the equation.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Largest argument at which `U0` and its relatives are evaluated directly.
pub const X_MAX: f64 = 1.0 - 1e-6;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma function by the Lanczos approximation, reflected below 1/2.
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        if x == x.floor() {
            return f64::NAN;
        }
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
}

fn check_c(c: f64) -> Result<()> {
    if c <= 0.0 && c == c.floor() {
        return Err(Error::Parameter(format!("c = {c} is a non-positive integer")));
    }
    Ok(())
}

fn check_unit(x: f64) -> Result<()> {
    if !(0.0..1.0).contains(&x) {
        return Err(Error::Domain(format!("x = {x} outside [0, 1)")));
    }
    Ok(())
}

/// Power series of 2F1 and its derivative at `x`, for `|x| <= 1/2`.
fn series(a: f64, b: f64, c: f64, x: f64) -> (f64, f64) {
    // coef holds c_n, xp holds x^(n-1)
    let mut coef = 1.0;
    let mut xp = 1.0;
    let mut sum = 1.0;
    let mut dsum = 0.0;
    let mut n = 0.0;
    let floor = a.abs().max(b.abs()) + 2.0;
    loop {
        coef *= (a + n) * (b + n) / ((c + n) * (n + 1.0));
        n += 1.0;
        if coef == 0.0 {
            break;
        }
        let dterm = n * coef * xp;
        xp *= x;
        let term = coef * xp;
        sum += term;
        dsum += dterm;
        let small = term.abs() <= 1e-17 * sum.abs() && dterm.abs() <= 1e-17 * dsum.abs();
        if (n > floor && small) || n > 4000.0 || xp == 0.0 {
            break;
        }
    }
    (sum, dsum)
}

/// Continues `(U, U')` of the equation `x(x-1)U'' + ((a+b+1)x - c)U' + abU = 0`
/// from `x0` to `x1 >= x0` by Taylor steps.
fn continue_solution(a: f64, b: f64, c: f64, mut x0: f64, mut u: f64, mut du: f64, x1: f64) -> (f64, f64) {
    let ab = a * b;
    let q1 = a + b + 1.0;
    while x0 < x1 {
        let radius = x0.min(1.0 - x0);
        let h = (x1 - x0).min(0.5 * radius);
        let p0 = x0 * (x0 - 1.0);
        let p1 = 2.0 * x0 - 1.0;
        let q0 = q1 * x0 - c;
        // coefficients u_n scaled by h^n
        let mut cm1 = u;
        let mut c0 = du * h;
        let mut val = cm1 + c0;
        let mut dval = c0;
        let mut n = 0.0f64;
        loop {
            let next = -((p1 * n + q0) * (n + 1.0) * c0 * h + (n * (n - 1.0) + q1 * n + ab) * cm1 * h * h)
                / (p0 * (n + 2.0) * (n + 1.0));
            val += next;
            dval += (n + 2.0) * next;
            cm1 = c0;
            c0 = next;
            n += 1.0;
            let scale = val.abs().max(dval.abs()).max(1e-300);
            if n > 6.0 && cm1.abs() * (n + 1.0) <= 1e-17 * scale && c0.abs() * (n + 2.0) <= 1e-17 * scale {
                break;
            }
            if n > 400.0 {
                break;
            }
        }
        u = val;
        du = dval / h;
        x0 += h;
    }
    (u, du)
}

/// Value and first derivative of 2F1(a, b; c; x) on `[0, 1)`.
fn f21_with_derivative(a: f64, b: f64, c: f64, x: f64) -> (f64, f64) {
    if x <= 0.5 {
        return series(a, b, c, x);
    }
    let (u, du) = series(a, b, c, 0.5);
    continue_solution(a, b, c, 0.5, u, du, x)
}

/// Gauss hypergeometric function 2F1(a, b; c; x) for `x` in `[0, 1)`.
pub fn gauss_2f1(a: f64, b: f64, c: f64, x: f64) -> Result<f64> {
    check_c(c)?;
    check_unit(x)?;
    Ok(f21_with_derivative(a, b, c, x).0)
}

/// Parameters `(kappa, rho)` and the derived hypergeometric triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypParams {
    pub kappa: f64,
    pub rho: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HypParams {
    pub fn new(kappa: f64, rho: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 4.0) {
            return Err(Error::Parameter(format!("kappa = {kappa} must lie in (0,4)")));
        }
        if !rho.is_finite() || rho < (kappa - 4.0) / 2.0 {
            return Err(Error::Parameter(format!("rho = {rho} below (kappa-4)/2 = {}", (kappa - 4.0) / 2.0)));
        }
        let a = 2.0 * rho / kappa;
        let b = 1.0 - 4.0 / kappa;
        let c = (2.0 * rho + 4.0) / kappa;
        let p = HypParams { kappa, rho, a, b, c };
        let checks = [
            (b < 0.0, "b < 0"),
            (c >= 1.0 - 1e-12, "c >= 1"),
            (c - a - b > 1.0, "c - a - b > 1"),
            (c - a > 0.0, "c - a > 0"),
            (c - b > 0.0, "c - b > 0"),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(Error::Parameter(format!("hypergeometric condition {what} fails")));
            }
        }
        Ok(p)
    }
}

fn check_kernel_domain(x: f64) -> Result<()> {
    if !(0.0..=X_MAX).contains(&x) {
        return Err(Error::Domain(format!("x = {x} outside [0, {X_MAX}]")));
    }
    Ok(())
}

/// `(U0, U0', U0'')` at `x`.
pub fn u0_jet(p: &HypParams, x: f64) -> Result<(f64, f64, f64)> {
    check_kernel_domain(x)?;
    let (a, b, c) = (p.a, p.b, p.c);
    let u = f21_with_derivative(a, b, c, x).0;
    let ab = a * b;
    if ab == 0.0 {
        return Ok((u, 0.0, 0.0));
    }
    let (s1, ds1) = f21_with_derivative(a + 1.0, b + 1.0, c + 1.0, x);
    let du = ab / c * s1;
    let d2u = if x < 0.125 {
        ab / c * ds1
    } else {
        -(((a + b + 1.0) * x - c) * du + ab * u) / (x * (x - 1.0))
    };
    Ok((u, du, d2u))
}

/// `U0(x) = 2F1(a, b; c; x)`.
pub fn u0(p: &HypParams, x: f64) -> Result<f64> {
    check_kernel_domain(x)?;
    Ok(f21_with_derivative(p.a, p.b, p.c, x).0)
}

/// `lim U0(x)` as `x -> 1-`, the Gauss summation value.
pub fn u0_limit_at_one(p: &HypParams) -> f64 {
    let (a, b, c) = (p.a, p.b, p.c);
    if a == 0.0 {
        return 1.0;
    }
    gamma(c) * gamma(c - a - b) / (gamma(c - a) * gamma(c - b))
}

/// `f0 = U0' / U0`.
pub fn f0(p: &HypParams, x: f64) -> Result<f64> {
    check_kernel_domain(x)?;
    if p.a == 0.0 {
        return Ok(0.0);
    }
    let u = f21_with_derivative(p.a, p.b, p.c, x).0;
    let s1 = f21_with_derivative(p.a + 1.0, p.b + 1.0, p.c + 1.0, x).0;
    Ok(p.a * p.b / p.c * s1 / u)
}

/// `lim f0(x) = -a/2` as `x -> 1-`.
pub fn f0_limit_at_one(p: &HypParams) -> f64 {
    -p.a / 2.0
}

/// `g0 = rho + kappa x f0(x)`.
pub fn g0(p: &HypParams, x: f64) -> Result<f64> {
    Ok(p.rho + p.kappa * x * f0(p, x)?)
}

/// `g0'(0) = kappa f0(0) = kappa ab / c`.
pub fn g0_d1_at_zero(p: &HypParams) -> f64 {
    p.kappa * p.a * p.b / p.c
}

/// `V0 = x^(rho/kappa) U0(x)` on `(0, 1)`.
pub fn v0(p: &HypParams, x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Err(Error::Domain(format!("x = {x} outside (0, 1)")));
    }
    Ok(x.powf(p.rho / p.kappa) * u0(p, x)?)
}

/// Drift `J(p1, p2) = -(1/p1 - 1/p2) g0(p1/p2)` for `0 < p1 < p2`.
///
/// The ratio is clamped to [`X_MAX`]; beyond it `|J|` is below `1e-6 / p1`
/// times `|g0|`, which itself vanishes at 1.
pub fn drift_j(p: &HypParams, p1: f64, p2: f64) -> Result<f64> {
    if !(p1 > 0.0 && p2 > p1) {
        return Err(Error::Domain(format!("need 0 < p1 < p2, got p1 = {p1}, p2 = {p2}")));
    }
    if p.rho == 0.0 {
        return Ok(0.0);
    }
    let x = (p1 / p2).min(X_MAX);
    Ok(-(1.0 / p1 - 1.0 / p2) * g0(p, x)?)
}

/// `lim_{p1 -> 0+} (J(p1, p2) + rho / p1) = rho/p2 - (kappa/p2) ab/c`.
pub fn drift_j_degenerate_limit(p: &HypParams, p2: f64) -> Result<f64> {
    if !(p2 > 0.0) {
        return Err(Error::Domain(format!("p2 = {p2} must be positive")));
    }
    Ok(p.rho / p2 - p.kappa / p2 * (p.a * p.b / p.c))
}

/// Regular part `J(p1, p2) + rho / p1`, continuous down to `p1 = 0`.
pub fn drift_j_regular(p: &HypParams, p1: f64, p2: f64) -> Result<f64> {
    if p1 == 0.0 {
        return drift_j_degenerate_limit(p, p2);
    }
    if !(p1 > 0.0 && p2 > p1) {
        return Err(Error::Domain(format!("need 0 <= p1 < p2, got p1 = {p1}, p2 = {p2}")));
    }
    let x = p1 / p2;
    if x < 1e-4 {
        // J + rho/p1 = rho/p2 - kappa (1/p2 - x/p2) f0(x); avoids cancellation
        let f = f0(p, x)?;
        return Ok(p.rho / p2 - p.kappa * (1.0 - x) / p2 * f);
    }
    Ok(drift_j(p, p1, p2)? + p.rho / p1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn gamma_small_integers_and_half() {
        let mut fact = 1.0;
        for n in 1..15 {
            assert!(close(gamma(n as f64), fact, 1e-13), "n={n}");
            fact *= n as f64;
        }
        assert!(close(gamma(0.5), PI.sqrt(), 1e-13));
        assert!(close(gamma(-0.5), -2.0 * PI.sqrt(), 1e-13));
        assert!(gamma(-2.0).is_nan());
    }

    #[test]
    fn gamma_recurrence_on_grid() {
        let mut x = 0.05;
        while x < 19.0 {
            let lhs = gamma(x + 1.0);
            let rhs = x * gamma(x);
            assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs(), "x={x}");
            x += 0.37;
        }
    }

    #[test]
    fn terminating_series_values() {
        assert!(close(gauss_2f1(1.0, -1.0, 3.0, 0.5).unwrap(), 1.0 - 0.5 / 3.0, 1e-15));
        assert!(close(gauss_2f1(-1.0, -1.0, 1.0, 0.7).unwrap(), 1.7, 1e-15));
        assert_eq!(gauss_2f1(2.3, -0.7, 1.9, 0.0).unwrap(), 1.0);
        // 2F1(-2, b; c; x) = 1 - 2bx/c + b(b+1)x^2/(c(c+1))
        let (b, c, x) = (1.5, 2.5, 0.9);
        let want = 1.0 - 2.0 * b * x / c + b * (b + 1.0) * x * x / (c * (c + 1.0));
        assert!(close(gauss_2f1(-2.0, b, c, x).unwrap(), want, 1e-12));
    }

    #[test]
    fn elementary_closed_forms() {
        // 2F1(1,1;2;x) = -ln(1-x)/x
        for &x in &[0.1, 0.4, 0.6, 0.9, 0.99, 0.9999] {
            let want = -(1.0f64 - x).ln() / x;
            let got = gauss_2f1(1.0, 1.0, 2.0, x).unwrap();
            assert!(close(got, want, 1e-11), "x={x} got={got} want={want}");
        }
        // 2F1(a,b;b;x) = (1-x)^-a
        for &x in &[0.3, 0.75, 0.95] {
            let want = (1.0f64 - x).powf(-0.7);
            assert!(close(gauss_2f1(0.7, 2.2, 2.2, x).unwrap(), want, 1e-11));
        }
        // 2F1(1/2,1/2;3/2;x^2) = asin(x)/x
        for &x in &[0.5f64, 0.8, 0.97] {
            let want = x.asin() / x;
            assert!(close(gauss_2f1(0.5, 0.5, 1.5, x * x).unwrap(), want, 1e-11));
        }
    }

    #[test]
    fn invalid_arguments() {
        assert!(matches!(gauss_2f1(1.0, 1.0, -2.0, 0.1), Err(Error::Parameter(_))));
        assert!(matches!(gauss_2f1(1.0, 1.0, 2.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(gauss_2f1(1.0, 1.0, 2.0, -0.1), Err(Error::Domain(_))));
        assert!(HypParams::new(4.0, 1.0).is_err());
        assert!(HypParams::new(2.0, -1.5).is_err());
        assert!(HypParams::new(2.0, -1.0).is_ok());
    }

    #[test]
    fn kernel_examples() {
        let p = HypParams::new(2.0, 1.0).unwrap();
        assert_eq!((p.a, p.b, p.c), (1.0, -1.0, 3.0));
        assert!(close(u0(&p, 0.5).unwrap(), 5.0 / 6.0, 1e-14));
        assert!(close(u0_limit_at_one(&p), 2.0 / 3.0, 1e-13));
        assert!(close(f0(&p, 0.5).unwrap(), -0.4, 1e-14));
        assert!(close(f0(&p, 0.0).unwrap(), -1.0 / 3.0, 1e-14));
        assert!(close(g0(&p, 0.5).unwrap(), 0.6, 1e-14));
        assert_eq!(g0(&p, 0.0).unwrap(), 1.0);
        assert!(close(v0(&p, 0.25).unwrap(), 0.5 * (1.0 - 0.25 / 3.0), 1e-14));
        assert!(close(drift_j(&p, 1.0, 2.0).unwrap(), -0.3, 1e-14));
        assert!(close(drift_j_degenerate_limit(&p, 1.0).unwrap(), 5.0 / 3.0, 1e-14));
        assert!(close(drift_j_degenerate_limit(&p, 2.0).unwrap(), 5.0 / 6.0, 1e-14));
        let q = HypParams::new(2.0, -1.0).unwrap();
        assert!(close(u0(&q, 0.25).unwrap(), 1.25, 1e-14));
        assert!(close(u0_limit_at_one(&q), 2.0, 1e-13));
    }

    #[test]
    fn rho_zero_is_trivial() {
        let p = HypParams::new(3.0, 0.0).unwrap();
        assert_eq!(u0_limit_at_one(&p), 1.0);
        assert_eq!(f0(&p, 0.3).unwrap(), 0.0);
        assert_eq!(g0(&p, 0.7).unwrap(), 0.0);
        assert_eq!(v0(&p, 0.5).unwrap(), 1.0);
        assert_eq!(drift_j(&p, 0.2, 5.0).unwrap(), 0.0);
        assert_eq!(drift_j_degenerate_limit(&p, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn drift_j_far_second_point() {
        let p = HypParams::new(2.0, 1.0).unwrap();
        let j = drift_j(&p, 1.0, 1e9).unwrap();
        assert!((j + 1.0).abs() < 1e-8);
    }

    #[test]
    fn regular_part_is_continuous_at_zero() {
        let p = HypParams::new(3.0, 0.5).unwrap();
        let z = drift_j_regular(&p, 0.0, 1.0).unwrap();
        for &p1 in &[1e-3, 1e-5, 1e-7] {
            let r = drift_j_regular(&p, p1, 1.0).unwrap();
            assert!((r - z).abs() < 20.0 * p1, "p1={p1} r={r} z={z}");
        }
    }

    #[test]
    fn kernel_domain_is_enforced() {
        let p = HypParams::new(3.0, 0.5).unwrap();
        assert!(u0(&p, 1.0 - 1e-7).is_err());
        assert!(u0(&p, X_MAX).is_ok());
        assert!(v0(&p, 0.0).is_err());
        assert!(drift_j(&p, 2.0, 1.0).is_err());
    }
}
