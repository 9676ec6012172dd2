//! Chordal Loewner chains built from vertical-slit steps.
//!
//! Step `k` maps `w` to `xi_k + sqrt((w - xi_k)^2 + 4 dt_k)`, removing a vertical
//! slit of height `2 sqrt(dt_k)` standing on `xi_k`. A chain is the composition
//! of its steps in order; its half-plane capacity is `2 sum dt_k`.
//!
//! Traces are the exact tips of the slit hull: the point at time `t_k` is the
//! preimage of `xi_k + 2i sqrt(dt)` under the first `k - 1` steps, where each
//! step uses the driver value at the right end of its interval. Unzipping a
//! tip sequence therefore returns the generating driver up to rounding.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Root of `u` in the closed upper half-plane; when `u` is real and positive
/// the sign follows `side`.
#[inline]
fn sqrt_upper(re: f64, im: f64, side: f64) -> Complex64 {
    let m = (re * re + im * im).sqrt();
    if m == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let t = ((m + re.abs()) * 0.5).sqrt();
    let (mut pr, mut pi) = if re >= 0.0 { (t, im / (2.0 * t)) } else { (im.abs() / (2.0 * t), t.copysign(im)) };
    if pi < 0.0 || (pi == 0.0 && side < 0.0) {
        pr = -pr;
        pi = -pi;
    }
    Complex64::new(pr, pi)
}

#[inline]
fn step_forward(xi: f64, four_dt: f64, z: Complex64) -> Complex64 {
    let d = z - xi;
    let s = sqrt_upper(d.re * d.re - d.im * d.im + four_dt, 2.0 * d.re * d.im, d.re);
    Complex64::new(xi + s.re, s.im)
}

#[inline]
fn step_inverse(xi: f64, four_dt: f64, z: Complex64) -> Complex64 {
    let d = z - xi;
    let s = sqrt_upper(d.re * d.re - d.im * d.im - four_dt, 2.0 * d.re * d.im, d.re);
    Complex64::new(xi + s.re, s.im)
}

#[inline]
fn step_forward_real(xi: f64, four_dt: f64, x: f64) -> f64 {
    let d = x - xi;
    let s = (d * d + four_dt).sqrt();
    if d < 0.0 {
        xi - s
    } else {
        xi + s
    }
}

#[inline]
fn step_inverse_real(xi: f64, four_dt: f64, x: f64) -> f64 {
    let d = x - xi;
    let s = (d * d - four_dt).max(0.0).sqrt();
    if d < 0.0 {
        xi - s
    } else {
        xi + s
    }
}

/// Value and first three derivatives of a real map at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet3 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl Jet3 {
    pub fn identity(x: f64) -> Self {
        Jet3 { value: x, d1: 1.0, d2: 0.0, d3: 0.0 }
    }

    /// Pushes the jet through one slit step (chain rule to third order).
    #[inline]
    pub fn through(self, step: Step) -> Self {
        let d = self.value - step.xi;
        let four_dt = 4.0 * step.dt;
        let s2 = d * d + four_dt;
        let s = s2.sqrt();
        let sg = if d < 0.0 { -1.0 } else { 1.0 };
        let f1 = d.abs() / s;
        let f2 = sg * four_dt / (s2 * s);
        let f3 = -3.0 * sg * four_dt * d / (s2 * s2 * s);
        let (v1, v2, v3) = (self.d1, self.d2, self.d3);
        Jet3 {
            value: step.xi + sg * s,
            d1: f1 * v1,
            d2: f2 * v1 * v1 + f1 * v2,
            d3: f3 * v1 * v1 * v1 + 3.0 * f2 * v1 * v2 + f1 * v3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub xi: f64,
    pub dt: f64,
}

/// Composition of vertical-slit steps, with the hull's real footprint tracked
/// both in the original coordinates and in the image coordinates.
#[derive(Debug, Clone, Default)]
pub struct SlitChain {
    xi: Vec<f64>,
    four_dt: Vec<f64>,
    time: f64,
    footprint: Option<(f64, f64)>,
    image_footprint: Option<(f64, f64)>,
}

impl SlitChain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_steps(steps: &[Step]) -> Result<Self> {
        let mut c = Self::new();
        for s in steps {
            c.push(s.xi, s.dt)?;
        }
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn step(&self, k: usize) -> Step {
        Step { xi: self.xi[k], dt: 0.25 * self.four_dt[k] }
    }

    pub fn steps(&self) -> impl Iterator<Item = Step> + '_ {
        (0..self.len()).map(move |k| self.step(k))
    }

    /// Capacity time `sum dt_k`.
    pub fn time(&self) -> f64 {
        self.time
    }

    /// Half-plane capacity `2 sum dt_k`.
    pub fn hcap(&self) -> f64 {
        2.0 * self.time
    }

    /// Real interval covered by the hull, in original coordinates.
    pub fn footprint(&self) -> Option<(f64, f64)> {
        self.footprint
    }

    /// Image of the hull's real footprint under the chain.
    pub fn image_footprint(&self) -> Option<(f64, f64)> {
        self.image_footprint
    }

    /// Appends one step in place.
    pub fn push(&mut self, xi: f64, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() || !xi.is_finite() {
            return Err(Error::Parameter(format!("slit step needs finite xi and dt > 0, got xi = {xi}, dt = {dt}")));
        }
        let four_dt = 4.0 * dt;
        let (lo, hi) = match self.image_footprint {
            None => {
                self.footprint = Some((xi, xi));
                (xi, xi)
            }
            Some((l, r)) => {
                let (mut fl, mut fr) = self.footprint.unwrap();
                if xi < l {
                    fl = self.inverse_real(xi);
                }
                if xi > r {
                    fr = self.inverse_real(xi);
                }
                self.footprint = Some((fl, fr));
                (l.min(xi), r.max(xi))
            }
        };
        let nl = xi - ((lo - xi) * (lo - xi) + four_dt).sqrt();
        let nr = xi + ((hi - xi) * (hi - xi) + four_dt).sqrt();
        self.image_footprint = Some((nl, nr));
        self.xi.push(xi);
        self.four_dt.push(four_dt);
        self.time += dt;
        Ok(())
    }

    /// Returns a new chain with one more step.
    pub fn appended(&self, xi: f64, dt: f64) -> Result<Self> {
        let mut c = self.clone();
        c.push(xi, dt)?;
        Ok(c)
    }

    /// Chain made of the first `k` steps.
    pub fn prefix(&self, k: usize) -> Self {
        let mut c = Self::new();
        for j in 0..k.min(self.len()) {
            c.push(self.xi[j], 0.25 * self.four_dt[j]).expect("steps of a valid chain");
        }
        c
    }

    /// Forward map of the whole chain at `z` in the closed upper half-plane.
    pub fn forward(&self, z: Complex64) -> Complex64 {
        self.forward_range(z, 0, self.len())
    }

    /// Applies steps `from..to` in order.
    pub fn forward_range(&self, mut z: Complex64, from: usize, to: usize) -> Complex64 {
        for k in from..to {
            z = step_forward(self.xi[k], self.four_dt[k], z);
        }
        z
    }

    /// Inverse map of the whole chain.
    pub fn inverse(&self, w: Complex64) -> Complex64 {
        self.inverse_range(w, 0, self.len())
    }

    /// Inverse of steps `from..to`: applies step inverses from `to - 1` down to `from`.
    pub fn inverse_range(&self, mut w: Complex64, from: usize, to: usize) -> Complex64 {
        for k in (from..to).rev() {
            w = step_inverse(self.xi[k], self.four_dt[k], w);
        }
        w
    }

    fn inverse_real(&self, mut y: f64) -> f64 {
        for k in (0..self.len()).rev() {
            y = step_inverse_real(self.xi[k], self.four_dt[k], y);
        }
        y
    }

    fn check_outside(&self, x: f64) -> Result<()> {
        if let Some((l, r)) = self.footprint {
            if x >= l && x <= r {
                return Err(Error::Domain(format!("x = {x} lies in the swallowed interval [{l}, {r}]")));
            }
        }
        Ok(())
    }

    /// Forward map at a real point outside the hull.
    pub fn forward_real(&self, x: f64) -> Result<f64> {
        self.check_outside(x)?;
        let mut v = x;
        for k in 0..self.len() {
            v = step_forward_real(self.xi[k], self.four_dt[k], v);
        }
        Ok(v)
    }

    /// Value and derivatives through `order` (at most 3) at a real point outside
    /// the hull; orders above `order` are left at zero.
    pub fn forward_jet(&self, x: f64, order: usize) -> Result<Jet3> {
        if order > 3 {
            return Err(Error::Parameter(format!("jet order {order} above 3")));
        }
        self.check_outside(x)?;
        let mut j = Jet3::identity(x);
        for k in 0..self.len() {
            j = j.through(self.step(k));
        }
        if order < 3 {
            j.d3 = 0.0;
        }
        if order < 2 {
            j.d2 = 0.0;
        }
        if order < 1 {
            j.d1 = 0.0;
        }
        Ok(j)
    }

    /// Capacity estimate from the expansion `phi(z) = z + hcap/z + O(z^-2)`,
    /// read at `z = iR` where the `z^-2` term is imaginary.
    pub fn hcap_fit(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let (l, r) = self.image_footprint.unwrap();
        let scale = (r - l).abs().max(l.abs()).max(r.abs()).max(self.hcap().sqrt()).max(1e-300);
        let big = 1e3 * scale;
        let fit = |rad: f64| {
            let z = Complex64::new(0.0, rad);
            let w = self.forward(z);
            (z * (w - z)).re
        };
        // cancel the next even order by a two-radius combination
        let c1 = fit(big);
        let c2 = fit(2.0 * big);
        (4.0 * c2 - c1) / 3.0
    }
}

/// Polyline in the closed upper half-plane with capacity timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub times: Vec<f64>,
    pub points: Vec<Complex64>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_modulus(&self) -> f64 {
        self.points.iter().fold(0.0, |m, p| m.max(p.norm()))
    }

    /// Diameter of the first `k + 1` points.
    pub fn diameter_upto(&self, k: usize) -> f64 {
        let pts = &self.points[..=k.min(self.len().saturating_sub(1))];
        let mut d: f64 = 0.0;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                d = d.max((pts[i] - pts[j]).norm());
            }
        }
        d
    }
}

/// Sampled driving function with optional force-point paths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DrivingPath {
    pub times: Vec<f64>,
    pub xi: Vec<f64>,
    pub forces: Vec<(String, Vec<f64>)>,
    /// Reason the integration stopped before the horizon, if it did.
    pub truncation: Option<String>,
}

impl DrivingPath {
    pub fn new(times: Vec<f64>, xi: Vec<f64>) -> Result<Self> {
        let d = DrivingPath { times, xi, forces: Vec::new(), truncation: None };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() || self.times[0] != 0.0 {
            return Err(Error::Parameter("driver times must start at 0".into()));
        }
        if self.xi.len() != self.times.len() {
            return Err(Error::Parameter("driver xi and times differ in length".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("driver times must increase strictly".into()));
        }
        for (name, f) in &self.forces {
            if f.len() != self.times.len() {
                return Err(Error::Parameter(format!("force path {name} has the wrong length")));
            }
        }
        Ok(())
    }

    pub fn force(&self, name: &str) -> Option<&[f64]> {
        self.forces.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

/// Incremental trace construction: each appended step adds one tip.
#[derive(Debug, Clone)]
pub struct TraceBuilder {
    pub chain: SlitChain,
    pub trace: Trace,
}

impl TraceBuilder {
    pub fn new(x0: f64) -> Self {
        TraceBuilder { chain: SlitChain::new(), trace: Trace { times: vec![0.0], points: vec![Complex64::new(x0, 0.0)] } }
    }

    /// Adds the step `(xi, dt)` and returns the new tip.
    pub fn push(&mut self, xi: f64, dt: f64) -> Result<Complex64> {
        if !(dt > 0.0) {
            return Err(Error::Parameter(format!("dt = {dt} must be positive")));
        }
        let tip = self.chain.inverse(Complex64::new(xi, 2.0 * dt.sqrt()));
        self.chain.push(xi, dt)?;
        let t = self.trace.times.last().unwrap() + dt;
        self.trace.times.push(t);
        self.trace.points.push(tip);
        Ok(tip)
    }
}

/// Slit chain of a driver: step `k` uses `xi[k + 1]` over `times[k]..times[k + 1]`.
pub fn chain_from_driver(driver: &DrivingPath) -> Result<SlitChain> {
    driver.validate()?;
    let mut c = SlitChain::new();
    for k in 0..driver.len() - 1 {
        c.push(driver.xi[k + 1], driver.times[k + 1] - driver.times[k])?;
    }
    Ok(c)
}

/// Discretized Loewner trace of a driver.
pub fn trace_from_driver(driver: &DrivingPath) -> Result<Trace> {
    driver.validate()?;
    let mut b = TraceBuilder::new(driver.xi[0]);
    for k in 0..driver.len() - 1 {
        b.push(driver.xi[k + 1], driver.times[k + 1] - driver.times[k])?;
    }
    let mut tr = b.trace;
    tr.times = driver.times.clone();
    Ok(tr)
}

/// Options for [`unzip_curve_with`].
#[derive(Debug, Clone, Copy)]
pub struct UnzipOptions {
    /// Largest allowed turning between consecutive segments before the next
    /// segment is subdivided; `None` treats every vertex as a hull tip.
    pub max_turn: Option<f64>,
    /// Subdivision depth limit per segment.
    pub max_depth: u32,
}

impl Default for UnzipOptions {
    fn default() -> Self {
        UnzipOptions { max_turn: None, max_depth: 6 }
    }
}

fn turning(a: Complex64, b: Complex64, c: Complex64) -> f64 {
    let u = b - a;
    let v = c - b;
    if u.norm() == 0.0 || v.norm() == 0.0 {
        return 0.0;
    }
    (v / u).arg().abs()
}

fn unzip_point(chain: &mut SlitChain, times: &mut Vec<f64>, xi: &mut Vec<f64>, z: Complex64) -> Result<()> {
    let w = chain.forward(z);
    if !(w.im > 0.0) || !w.re.is_finite() {
        return Err(Error::Geometry(format!("curve point {z} does not lie above the unzipped hull")));
    }
    let dt = 0.25 * w.im * w.im;
    chain.push(w.re, dt)?;
    times.push(times.last().unwrap() + dt);
    xi.push(w.re);
    Ok(())
}

/// Unzips a simple curve starting on the real line, treating vertices as tips.
pub fn unzip_curve(curve: &Trace) -> Result<(SlitChain, DrivingPath)> {
    unzip_curve_with(curve, UnzipOptions::default())
}

/// Unzips a simple curve; see [`UnzipOptions`] for corner refinement.
pub fn unzip_curve_with(curve: &Trace, opts: UnzipOptions) -> Result<(SlitChain, DrivingPath)> {
    let pts = &curve.points;
    if pts.is_empty() {
        return Err(Error::Geometry("empty curve".into()));
    }
    if pts[0].im.abs() > 1e-12 * pts[0].re.abs().max(1.0) {
        return Err(Error::Geometry("curve must start on the real line".into()));
    }
    if pts.iter().skip(1).any(|p| !(p.im > 0.0)) {
        return Err(Error::Geometry("curve leaves the open upper half-plane after its seed".into()));
    }
    let mut chain = SlitChain::new();
    let mut times = vec![0.0];
    let mut xi = vec![pts[0].re];
    for k in 1..pts.len() {
        let turn = if k >= 2 { turning(pts[k - 2], pts[k - 1], pts[k]) } else { 0.0 };
        let pieces = match opts.max_turn {
            Some(mt) if turn > mt => {
                let depth = ((turn / mt).log2().ceil() as u32 + 1).min(opts.max_depth);
                // geometric refinement towards the corner
                let mut fr: Vec<f64> = (0..depth).map(|d| 0.5f64.powi((depth - d) as i32)).collect();
                fr.push(1.0);
                fr
            }
            _ => vec![1.0],
        };
        for f in pieces {
            let z = pts[k - 1] + (pts[k] - pts[k - 1]) * f;
            unzip_point(&mut chain, &mut times, &mut xi, z)?;
        }
    }
    let driver = DrivingPath { times, xi, forces: Vec::new(), truncation: None };
    Ok((chain, driver))
}

/// Image of a curve under the chain's forward map.
pub fn map_curve(chain: &SlitChain, curve: &Trace) -> Result<Trace> {
    let mut out = Vec::with_capacity(curve.len());
    let fp = chain.image_footprint();
    for &z in &curve.points {
        if z.im < 0.0 {
            return Err(Error::Geometry(format!("curve point {z} below the real line")));
        }
        if z.im == 0.0 {
            chain.check_outside(z.re).map_err(|_| Error::Geometry(format!("curve point {z} touches the hull")))?;
        }
        let w = chain.forward(z);
        if let Some((l, r)) = fp {
            let tol = 1e-12 * (r - l).abs().max(1.0);
            if w.im <= tol && w.re >= l && w.re <= r {
                return Err(Error::Geometry(format!("curve point {z} lies on the hull")));
            }
        }
        out.push(w);
    }
    Ok(Trace { times: curve.times.clone(), points: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn single_slit_values_and_jet() {
        let ch = SlitChain::new().appended(0.0, 1.0).unwrap();
        let w = ch.forward(c(3.0, 0.0));
        assert!((w.re - 13f64.sqrt()).abs() < 1e-14 && w.im == 0.0);
        let j = ch.forward_jet(3.0, 3).unwrap();
        assert!((j.value - 13f64.sqrt()).abs() < 1e-14);
        assert!((j.d1 - 3.0 / 13f64.sqrt()).abs() < 1e-14);
        assert!((j.d2 - 4.0 / 13f64.powf(1.5)).abs() < 1e-14);
        // d3 of sqrt(x^2+4) is -12x / (x^2+4)^(5/2)
        assert!((j.d3 + 36.0 / 13f64.powf(2.5)).abs() < 1e-14);
        assert_eq!(ch.hcap(), 2.0);
    }

    #[test]
    fn identity_jet_and_empty_chain() {
        let ch = SlitChain::new();
        assert_eq!(ch.forward_jet(5.0, 3).unwrap(), Jet3 { value: 5.0, d1: 1.0, d2: 0.0, d3: 0.0 });
        assert_eq!(ch.hcap(), 0.0);
        assert_eq!(ch.hcap_fit(), 0.0);
        let tiny = SlitChain::new().appended(0.0, 1e-30).unwrap();
        assert!((tiny.forward(c(1.0, 1.0)) - c(1.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn left_points_map_left_and_slit_maps_to_base() {
        let ch = SlitChain::new().appended(1.0, 0.25).unwrap();
        assert!((ch.forward_real(0.0).unwrap() - (1.0 - 2f64.sqrt())).abs() < 1e-15);
        let base = ch.forward(c(1.0, 1.0));
        assert!(base.im.abs() < 1e-15 && (base.re - 1.0).abs() < 1e-15);
        assert!(ch.forward_jet(1.0, 1).is_err());
        assert_eq!(ch.footprint(), Some((1.0, 1.0)));
        assert_eq!(ch.image_footprint(), Some((0.0, 2.0)));
    }

    #[test]
    fn inverse_round_trip() {
        let steps: Vec<Step> = (0..50).map(|k| Step { xi: (k as f64 * 0.3).sin() * 0.2, dt: 1e-3 }).collect();
        let ch = SlitChain::from_steps(&steps).unwrap();
        for &z in &[c(0.3, 0.4), c(-2.0, 0.01), c(5.0, 3.0), c(0.0, 1.5)] {
            let w = ch.forward(z);
            assert!((ch.inverse(w) - z).norm() < 1e-12, "z={z}");
        }
    }

    #[test]
    fn constant_driver_gives_vertical_slit() {
        let n = 1000;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let d = DrivingPath::new(times, vec![0.7; n + 1]).unwrap();
        let tr = trace_from_driver(&d).unwrap();
        let tip = *tr.points.last().unwrap();
        assert!((tip - c(0.7, 2.0)).norm() < 1e-9);
        assert_eq!(tr.points[0], c(0.7, 0.0));
    }

    #[test]
    fn empty_driver_gives_seed() {
        let d = DrivingPath::new(vec![0.0], vec![0.25]).unwrap();
        let tr = trace_from_driver(&d).unwrap();
        assert_eq!(tr.points, vec![c(0.25, 0.0)]);
    }

    #[test]
    fn unzip_vertical_segments() {
        let seg = Trace { times: vec![0.0, 1.0], points: vec![c(0.0, 0.0), c(0.0, 2.0)] };
        let (ch, d) = unzip_curve(&seg).unwrap();
        assert!((ch.hcap() - 2.0).abs() < 1e-14);
        assert!((d.times[1] - 1.0).abs() < 1e-14 && d.xi.iter().all(|x| x.abs() < 1e-14));
        let seg = Trace { times: vec![0.0, 1.0], points: vec![c(1.0, 0.0), c(1.0, 2.0)] };
        let (_, d) = unzip_curve(&seg).unwrap();
        assert!(d.xi.iter().all(|x| (x - 1.0).abs() < 1e-14));
    }

    #[test]
    fn map_horizontal_segment() {
        let ch = SlitChain::new().appended(0.0, 1.0).unwrap();
        let seg = Trace { times: vec![0.0, 1.0], points: vec![c(3.0, 0.0), c(4.0, 0.0)] };
        let img = map_curve(&ch, &seg).unwrap();
        assert!((img.points[0].re - 13f64.sqrt()).abs() < 1e-14);
        assert!((img.points[1].re - 20f64.sqrt()).abs() < 1e-14);
        let on_slit = Trace { times: vec![0.0], points: vec![c(0.0, 1.0)] };
        assert!(matches!(map_curve(&ch, &on_slit), Err(Error::Geometry(_))));
        let id = map_curve(&SlitChain::new(), &seg).unwrap();
        assert_eq!(id, seg);
    }

    #[test]
    fn rejects_bad_steps() {
        assert!(SlitChain::new().appended(0.0, 0.0).is_err());
        assert!(SlitChain::new().appended(0.0, -1.0).is_err());
        assert!(SlitChain::new().forward_jet(0.0, 4).is_err());
    }

    #[test]
    fn detached_slit_extends_footprint() {
        let mut ch = SlitChain::new();
        ch.push(0.0, 0.01).unwrap();
        ch.push(1.0, 0.01).unwrap();
        let (l, r) = ch.footprint().unwrap();
        assert_eq!(l, 0.0);
        let pre = (1.0f64 - 0.04).sqrt();
        assert!((r - pre).abs() < 1e-14);
        assert!(ch.forward_jet(0.5, 1).is_err());
        assert!(ch.forward_jet(1.5, 1).is_ok());
    }
}
