//! Two-time martingale for a pair of SLE(kappa; rho, kappa - 6 - rho) traces.
//!
//! Trace 1 starts from `(x1; x1+, x2)` and trace 2 from `(x2; x2-, x1)`, both with
//! weights `(rho, kappa - 6 - rho)`. The force paths `p_j`, `q_j` are the ones the
//! driver SDE integrates. The opposing map `phi_{k,t_j}(t_k, .)` is obtained by
//! mapping trace `k` through chain `j` and unzipping the image; jets of that
//! map at `xi_j` and `p_j` give `A_{j,h}`, `B_{j,0}` and `B~_{j,1}`.
//!
//! On the axes `t1 t2 = 0` the cell uses the closed boundary forms
//! (`M~ = A_{j,1}^{-rho/kappa}`, `L_j = A_{j,1}`, `L_k = 1`), so `M = 1` there.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loewner::{chain_from_driver, trace_from_driver, DrivingPath, Jet3, SlitChain, Step, Trace};
use crate::sde::{derive_seed, drive_kappa_rho, Force, ForceSpec, SleConfig};
use crate::special::{g0, u0, v0, HypParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairParams {
    pub kappa: f64,
    pub rho: f64,
    pub x1: f64,
    pub x2: f64,
}

/// Exponents `alpha`, `lambda`, `tau`, `delta` of the martingale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponents {
    pub alpha: f64,
    pub lambda: f64,
    pub tau: f64,
    pub delta: f64,
}

impl PairParams {
    pub fn validate(&self) -> Result<HypParams> {
        let hp = HypParams::new(self.kappa, self.rho)?;
        if !(self.x1 < self.x2) || !self.x1.is_finite() || !self.x2.is_finite() {
            return Err(Error::Parameter(format!("need x1 < x2, got {} and {}", self.x1, self.x2)));
        }
        Ok(hp)
    }

    pub fn exponents(&self) -> Exponents {
        let (k, r) = (self.kappa, self.rho);
        Exponents {
            alpha: (6.0 - k) / (2.0 * k),
            lambda: (8.0 - 3.0 * k) * (6.0 - k) / (2.0 * k),
            tau: (r + 2.0) * (k - 6.0 - r) / (2.0 * k),
            delta: -r * (k - 4.0 - r) / (4.0 * k),
        }
    }

    /// Weight of the force point at the other seed.
    pub fn rho_far(&self) -> f64 {
        self.kappa - 6.0 - self.rho
    }

    fn seed(&self, j: usize) -> f64 {
        if j == 0 {
            self.x1
        } else {
            self.x2
        }
    }
}

/// Simple polygon in the closed upper half-plane, closed implicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct HullPolygon {
    pub vertices: Vec<Complex64>,
}

fn cross(a: Complex64, b: Complex64) -> f64 {
    a.re * b.im - a.im * b.re
}

fn segments_intersect(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> bool {
    let d1 = cross(b - a, c - a);
    let d2 = cross(b - a, d - a);
    let d3 = cross(d - c, a - c);
    let d4 = cross(d - c, b - c);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Complex64, q: Complex64, r: Complex64, o: f64| {
        o == 0.0 && r.re >= p.re.min(q.re) && r.re <= p.re.max(q.re) && r.im >= p.im.min(q.im) && r.im <= p.im.max(q.im)
    };
    on(a, b, c, d1) || on(a, b, d, d2) || on(c, d, a, d3) || on(c, d, b, d4)
}

fn point_segment_distance(p: Complex64, a: Complex64, b: Complex64) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_sqr();
    if l2 == 0.0 {
        return (p - a).norm();
    }
    let s = (((p - a).re * ab.re + (p - a).im * ab.im) / l2).clamp(0.0, 1.0);
    (p - (a + ab * s)).norm()
}

impl HullPolygon {
    pub fn new(vertices: Vec<Complex64>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Parameter("a polygon needs at least 3 vertices".into()));
        }
        if vertices.iter().any(|v| !(v.im >= 0.0) || !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Parameter("polygon vertices must be finite and lie in the closed upper half-plane".into()));
        }
        let p = HullPolygon { vertices };
        let n = p.vertices.len();
        for i in 0..n {
            for j in i + 1..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = p.edge(i);
                let (c, d) = p.edge(j);
                if segments_intersect(a, b, c, d) {
                    return Err(Error::Parameter("polygon edges intersect".into()));
                }
            }
        }
        Ok(p)
    }

    /// Polygon inscribed in the half-disk of the given radius about a real center.
    pub fn half_disk(center: f64, radius: f64, segments: usize) -> Result<Self> {
        let m = segments.max(2);
        let v = (0..=m)
            .map(|i| {
                let th = std::f64::consts::PI * i as f64 / m as f64;
                let z = Complex64::new(center + radius * th.cos(), radius * th.sin());
                if i == 0 || i == m {
                    Complex64::new(z.re, 0.0)
                } else {
                    z
                }
            })
            .collect();
        Self::new(v)
    }

    fn edge(&self, i: usize) -> (Complex64, Complex64) {
        (self.vertices[i], self.vertices[(i + 1) % self.vertices.len()])
    }

    fn scale(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(1.0, f64::max)
    }

    pub fn boundary_distance(&self, z: Complex64) -> f64 {
        (0..self.vertices.len())
            .map(|i| {
                let (a, b) = self.edge(i);
                point_segment_distance(z, a, b)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Strict interior test (points on the boundary are outside).
    pub fn contains(&self, z: Complex64) -> bool {
        if self.boundary_distance(z) <= 1e-14 * self.scale() {
            return false;
        }
        let mut inside = false;
        let n = self.vertices.len();
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[j]);
            if (a.im > z.im) != (b.im > z.im) && z.re < (b.re - a.re) * (z.im - a.im) / (b.im - a.im) + a.re {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    /// True when the polygon contains a half-disk neighbourhood of the real point `x`.
    pub fn contains_seed(&self, x: f64) -> bool {
        let r = 1e-6 * self.scale();
        (1..8).all(|i| {
            let th = std::f64::consts::PI * i as f64 / 8.0;
            self.contains(Complex64::new(x + r * th.cos(), r * th.sin()))
        })
    }

    /// Largest distance from `x` to a vertex.
    pub fn radius_about(&self, x: f64) -> f64 {
        self.vertices.iter().map(|v| (v - x).norm()).fold(0.0, f64::max)
    }

    /// True when the closed polygons share no point.
    pub fn disjoint_from(&self, other: &HullPolygon) -> bool {
        for i in 0..self.vertices.len() {
            for j in 0..other.vertices.len() {
                let (a, b) = self.edge(i);
                let (c, d) = other.edge(j);
                if segments_intersect(a, b, c, d) {
                    return false;
                }
            }
        }
        !self.contains(other.vertices[0]) && !other.contains(self.vertices[0])
    }

    /// First index `k >= 1` whose trace point is not interior.
    pub fn exit_index(&self, trace: &Trace) -> Option<usize> {
        (1..trace.points.len()).find(|&k| !self.contains(trace.points[k]))
    }

    /// Fraction along the segment `a -> b` (with `a` inside) where it leaves the polygon.
    pub fn exit_fraction(&self, a: Complex64, b: Complex64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.contains(a + (b - a) * mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// Checks a polygon pair for the seeds of `params`.
pub fn validate_polygons(params: &PairParams, h1: &HullPolygon, h2: &HullPolygon) -> Result<()> {
    if !h1.contains_seed(params.x1) {
        return Err(Error::Parameter(format!("polygon 1 does not contain a neighbourhood of x1 = {}", params.x1)));
    }
    if !h2.contains_seed(params.x2) {
        return Err(Error::Parameter(format!("polygon 2 does not contain a neighbourhood of x2 = {}", params.x2)));
    }
    if !h1.disjoint_from(h2) {
        return Err(Error::Parameter("polygon closures overlap".into()));
    }
    Ok(())
}

/// One trace of a pair, with chain data at every step index.
#[derive(Debug, Clone)]
pub struct PairSide {
    pub driver: DrivingPath,
    pub chain: SlitChain,
    pub trace: Trace,
    /// `p_j` (degenerate force path) and `q_j` (path of the other seed)
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// `d/dz phi_j(t, x_k)` from the chain
    pub dq: Vec<f64>,
    /// Last usable step index (stopping time or end of run).
    pub stop: usize,
}

impl PairSide {
    fn new(driver: DrivingPath, other_seed: f64) -> Result<Self> {
        let chain = chain_from_driver(&driver)?;
        let trace = trace_from_driver(&driver)?;
        let p = driver.force("p1").ok_or_else(|| Error::Parameter("driver lacks force path p1".into()))?.to_vec();
        let q = driver.force("p2").ok_or_else(|| Error::Parameter("driver lacks force path p2".into()))?.to_vec();
        let mut dq = Vec::with_capacity(driver.len());
        let mut jet = Jet3::identity(other_seed);
        dq.push(1.0);
        for s in chain.steps() {
            jet = jet.through(s);
            dq.push(jet.d1);
        }
        let stop = driver.len() - 1;
        Ok(PairSide { driver, chain, trace, p, q, dq, stop })
    }

    pub fn time(&self, i: usize) -> f64 {
        self.driver.times[i]
    }
}

/// A simulated pair of traces.
#[derive(Debug, Clone)]
pub struct PairSetup {
    pub params: PairParams,
    pub sides: [PairSide; 2],
}

impl PairSetup {
    /// Builds a pair from drivers carrying force paths `p1` (degenerate) and `p2` (other seed).
    pub fn from_drivers(params: PairParams, d1: DrivingPath, d2: DrivingPath) -> Result<Self> {
        params.validate()?;
        if d1.xi[0] != params.x1 || d2.xi[0] != params.x2 {
            return Err(Error::Parameter("drivers must start at x1 and x2".into()));
        }
        Ok(PairSetup { params, sides: [PairSide::new(d1, params.x2)?, PairSide::new(d2, params.x1)?] })
    }

    /// Simulates both traces with common step `dt`; trace `j` runs for `steps[j]` steps.
    pub fn simulate(params: PairParams, dt: f64, steps: [usize; 2], seeds: [u64; 2]) -> Result<Self> {
        params.validate()?;
        let drive = |j: usize| {
            let (x, y) = (params.seed(j), params.seed(1 - j));
            let near = if j == 0 { ForceSpec::DegeneratePlus } else { ForceSpec::DegenerateMinus };
            drive_kappa_rho(&SleConfig {
                kappa: params.kappa,
                x0: x,
                forces: vec![Force { rho: params.rho, at: near }, Force { rho: params.rho_far(), at: ForceSpec::Finite(y) }],
                horizon: dt * steps[j] as f64,
                steps: steps[j],
                seed: seeds[j],
            })
        };
        Self::from_drivers(params, drive(0)?, drive(1)?)
    }

    /// Stops each trace at the first step whose point leaves its polygon.
    pub fn stop_at_polygons(&mut self, h: [&HullPolygon; 2]) {
        for j in 0..2 {
            let side = &mut self.sides[j];
            if let Some(k) = h[j].exit_index(&side.trace) {
                side.stop = side.stop.min(k);
            }
        }
    }
}

/// Jets of `phi_{k,t_j}(t_k, .)` at `xi_j(t_j)` (order 3) and `p_j(t_j)` (order 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpposingJets {
    pub a: Jet3,
    pub b: Jet3,
}

/// Unzips `points` (a curve from the real point `points[0]`), carrying jets at
/// `probe_a` and `probe_b`; returns them after each point count in `record`.
fn probe_unzip(points: &[Complex64], probe_a: f64, probe_b: f64, record: &[usize]) -> Result<Vec<OpposingJets>> {
    let mut out = Vec::with_capacity(record.len());
    let mut chain = SlitChain::new();
    let (mut ja, mut jb) = (Jet3::identity(probe_a), Jet3::identity(probe_b));
    let mut next = 0;
    let last = record.last().copied().unwrap_or(0);
    for s in 0..=last {
        if s > 0 {
            let w = chain.forward(points[s]);
            if !(w.im > 0.0) || !w.re.is_finite() {
                return Err(Error::Geometry(format!("hulls meet: mapped trace point {s} is not above the unzipped hull")));
            }
            let step = Step { xi: w.re, dt: 0.25 * w.im * w.im };
            chain.push(step.xi, step.dt)?;
            ja = ja.through(step);
            jb = jb.through(step);
        }
        while next < record.len() && record[next] == s {
            out.push(OpposingJets { a: ja, b: jb });
            next += 1;
        }
    }
    Ok(out)
}

impl PairSetup {
    /// `A_{j,h}` and the `p_j` jet at step indices `(i1, i2)`, computed from scratch.
    pub fn eval_a(&self, j: usize, idx: [usize; 2]) -> Result<OpposingJets> {
        let k = 1 - j;
        let (sj, sk) = (&self.sides[j], &self.sides[k]);
        let (ij, ik) = (idx[j], idx[k]);
        if ij >= sj.driver.len() || ik >= sk.driver.len() {
            return Err(Error::Parameter("cell index beyond the simulated paths".into()));
        }
        if ij == 0 {
            let x = self.params.seed(j);
            let jet = sk.chain.prefix(ik).forward_jet(x, 3)?;
            return Ok(OpposingJets { a: jet, b: jet });
        }
        let pts: Vec<Complex64> = sk.trace.points[..=ik].iter().map(|&z| sj.chain.forward_range(z, 0, ij)).collect();
        let r = probe_unzip(&pts, sj.driver.xi[ij], sj.p[ij], &[ik])?;
        Ok(r[0])
    }

    /// Jets for `j` along a row `idx[j] = ij` at every index in `others`.
    fn jets_along(&self, j: usize, ij: usize, mapped: &[Complex64], others: &[usize]) -> Result<Vec<OpposingJets>> {
        let k = 1 - j;
        let (sj, sk) = (&self.sides[j], &self.sides[k]);
        if ij == 0 {
            let mut jet = Jet3::identity(self.params.seed(j));
            let mut out = Vec::with_capacity(others.len());
            let mut s = 0;
            for &ik in others {
                while s < ik {
                    jet = jet.through(sk.chain.step(s));
                    s += 1;
                }
                out.push(OpposingJets { a: jet, b: jet });
            }
            return Ok(out);
        }
        probe_unzip(mapped, sj.driver.xi[ij], sj.p[ij], others)
    }
}

/// All quantities at one grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub t: [f64; 2],
    pub idx: [usize; 2],
    /// `A_{j,0..3}` as jets
    pub a: [Jet3; 2],
    pub b0: [f64; 2],
    pub bt1: [f64; 2],
    /// `E_{j,m}`, `m = 0, 1, 2`
    pub e: [[f64; 3]; 2],
    pub c12: f64,
    pub r: f64,
    pub d: f64,
    pub n: f64,
    pub f: f64,
    pub l: [f64; 2],
    pub m_tilde: f64,
    pub m: f64,
    /// Direct evaluation of `M` on cells with `t1 t2 != 0`.
    pub m_direct: Option<f64>,
    pub q: [Option<f64>; 2],
}

impl Cell {
    /// `A_{1,0} <= B_{1,0} < B_{2,0} <= A_{2,0}` with equality exactly on the axes.
    pub fn ordering_holds(&self) -> bool {
        let (a1, b1, b2, a2) = (self.a[0].value, self.b0[0], self.b0[1], self.a[1].value);
        let left = if self.t[0] == 0.0 { a1 == b1 } else { a1 < b1 };
        let right = if self.t[1] == 0.0 { a2 == b2 } else { b2 < a2 };
        left && b1 < b2 && right
    }

    /// Whether `L_j` lies between `A_{j,1}` and `B~_{j,1}` (with relative slack `tol`).
    pub fn l_between(&self, j: usize, tol: f64) -> bool {
        let (lo, hi) = (self.a[j].d1.min(self.bt1[j]), self.a[j].d1.max(self.bt1[j]));
        self.l[j] >= lo * (1.0 - tol) && self.l[j] <= hi * (1.0 + tol)
    }
}

struct CellGeometry {
    cell: Cell,
    /// `ln` of every factor of `M~` except `F`
    ln_mt_wo_f: f64,
    ln_md_wo_f: Option<f64>,
}

fn geometry(setup: &PairSetup, hp: &HypParams, idx: [usize; 2], jets: [OpposingJets; 2]) -> Result<CellGeometry> {
    let pr = setup.params;
    let ex = pr.exponents();
    let (kappa, rho, rf) = (pr.kappa, pr.rho, pr.rho_far());
    let t = [setup.sides[0].time(idx[0]), setup.sides[1].time(idx[1])];
    let a = [jets[0].a, jets[1].a];
    let b0 = [jets[0].b.value, jets[1].b.value];
    let bt1 = [jets[0].b.d1, jets[1].b.d1];
    let mut e = [[0.0; 3]; 2];
    for j in 0..2 {
        e[j][0] = a[j].value - a[1 - j].value;
        e[j][1] = a[j].value - b0[0];
        e[j][2] = a[j].value - b0[1];
    }
    let c12 = b0[0] - b0[1];
    let (e12, e21) = (e[0][2], e[1][1]);
    if e12 * e21 == 0.0 || c12 == 0.0 || e[0][0] == 0.0 {
        return Err(Error::Numerical(format!("degenerate cell geometry at indices {idx:?}")));
    }
    let r = (e[0][1] * e[1][2]) / (e12 * e21);
    let d = bt1[0] * bt1[1] / (c12 * c12);
    let n = a[0].d1 * a[1].d1 / (e[0][0] * e[0][0]);
    let xi = [setup.sides[0].driver.xi[idx[0]], setup.sides[1].driver.xi[idx[1]]];
    let p = [setup.sides[0].p[idx[0]], setup.sides[1].p[idx[1]]];
    let q = [setup.sides[0].q[idx[0]], setup.sides[1].q[idx[1]]];
    let dq = [setup.sides[0].dq[idx[0]], setup.sides[1].dq[idx[1]]];
    let axis = [t[0] == 0.0, t[1] == 0.0];
    let l = [0, 1].map(|j| if axis[j] { a[j].d1 } else { e[j][1 + j].abs() / (xi[j] - p[j]).abs() });
    let ln_rt = |j: usize| {
        -(rf / kappa) * (xi[j] - q[j]).abs().ln() - (rho * rf / (2.0 * kappa)) * (q[j] - p[j]).abs().ln()
            + ex.tau / 2.0 * dq[j].ln()
    };
    let (ln_mt, ln_md) = if axis[0] || axis[1] {
        let ln_mt = (0..2).filter(|&j| axis[j] && !axis[1 - j]).map(|j| -(rho / kappa) * a[j].d1.ln()).sum::<f64>();
        (ln_mt, None)
    } else {
        let common = ex.tau * (pr.x1 - pr.x2).abs().ln() + ln_rt(0) + ln_rt(1) + ex.delta * d.ln() + ex.alpha * n.ln();
        let ln_mt = common - (rho / kappa) * (e12 * e21).abs().ln() + u0(hp, r)?.ln();
        let ln_r = (0..2).map(|j| -(rho / kappa) * (xi[j] - p[j]).abs().ln()).sum::<f64>();
        let ln_md = common + ln_r + v0(hp, r)?.ln();
        (ln_mt, Some(ln_md))
    };
    let mut qd = [None, None];
    if !axis[0] && !axis[1] {
        let g = g0(hp, r)?;
        for j in 0..2 {
            let (ej0, ejj, ejk) = (e[j][0], e[j][1 + j], e[j][2 - j]);
            let a1 = a[j].d1;
            qd[j] = Some(
                (3.0 - kappa / 2.0) * (a[j].d2 / a1 - 2.0 * a1 / ej0) + g * (a1 / ejj - a1 / ejk)
                    - rho / (xi[j] - p[j])
                    - rf / (xi[j] - q[j]),
            );
        }
    }
    let cell = Cell {
        t,
        idx,
        a,
        b0,
        bt1,
        e,
        c12,
        r,
        d,
        n,
        f: 1.0,
        l,
        m_tilde: f64::NAN,
        m: f64::NAN,
        m_direct: None,
        q: qd,
    };
    Ok(CellGeometry { cell, ln_mt_wo_f: ln_mt, ln_md_wo_f: ln_md })
}

fn finish(g: CellGeometry, ex: &Exponents, rho_over_kappa: f64, f: f64) -> Cell {
    let mut c = g.cell;
    c.f = f;
    let lnf = -ex.lambda * f.ln();
    c.m_tilde = (g.ln_mt_wo_f + lnf).exp();
    c.m = (g.ln_mt_wo_f + lnf + rho_over_kappa * (c.l[0].ln() + c.l[1].ln())).exp();
    c.m_direct = g.ln_md_wo_f.map(|v| (v + lnf).exp());
    c
}

/// Evaluates one cell from scratch; `f` is the value of `F` there.
pub fn eval_cell(setup: &PairSetup, idx: [usize; 2], f: f64) -> Result<Cell> {
    let hp = setup.params.validate()?;
    let jets = [setup.eval_a(0, idx)?, setup.eval_a(1, idx)?];
    let g = geometry(setup, &hp, idx, jets)?;
    Ok(finish(g, &setup.params.exponents(), setup.params.rho / setup.params.kappa, f))
}

/// `Q_j` at one cell (`None` on the axis `t_j = 0`).
pub fn q_drift(setup: &PairSetup, j: usize, idx: [usize; 2]) -> Result<Option<f64>> {
    Ok(eval_cell(setup, idx, 1.0)?.q[j])
}

/// Every cell on a grid of step indices, with `F` by cumulative trapezoid.
#[derive(Debug, Clone)]
pub struct CouplingGrid {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    /// Row-major, `rows.len() x cols.len()`.
    pub cells: Vec<Cell>,
}

impl CouplingGrid {
    pub fn cell(&self, r: usize, c: usize) -> &Cell {
        &self.cells[r * self.cols.len() + c]
    }

    pub fn compute(setup: &PairSetup, rows: &[usize], cols: &[usize]) -> Result<Self> {
        let hp = setup.params.validate()?;
        let check = |v: &[usize], lim: usize, name: &str| -> Result<()> {
            if v.is_empty() || v[0] != 0 || v.windows(2).any(|w| w[1] <= w[0]) || *v.last().unwrap() > lim {
                return Err(Error::Parameter(format!("{name} must be increasing step indices from 0 within the path")));
            }
            Ok(())
        };
        check(rows, setup.sides[0].driver.len() - 1, "rows")?;
        check(cols, setup.sides[1].driver.len() - 1, "cols")?;
        let (nr, nc) = (rows.len(), cols.len());
        // jets1[r][c] along rows, jets2[c][r] along columns
        let along = |j: usize, own: &[usize], other: &[usize]| -> Result<Vec<Vec<OpposingJets>>> {
            let (sj, sk) = (&setup.sides[j], &setup.sides[1 - j]);
            let last = *other.last().unwrap();
            let mut mapped: Vec<Complex64> = sk.trace.points[..=last].to_vec();
            let mut at = 0;
            let mut out = Vec::with_capacity(own.len());
            for &i in own {
                for z in mapped.iter_mut() {
                    *z = sj.chain.forward_range(*z, at, i);
                }
                at = i;
                mapped[0].im = 0.0;
                out.push(setup.jets_along(j, i, &mapped, other)?);
            }
            Ok(out)
        };
        let j1 = along(0, rows, cols)?;
        let j2 = along(1, cols, rows)?;
        let mut geo = Vec::with_capacity(nr * nc);
        for (r, &i1) in rows.iter().enumerate() {
            for (c, &i2) in cols.iter().enumerate() {
                geo.push(geometry(setup, &hp, [i1, i2], [j1[r][c], j2[c][r]])?);
            }
        }
        let t1: Vec<f64> = rows.iter().map(|&i| setup.sides[0].time(i)).collect();
        let t2: Vec<f64> = cols.iter().map(|&i| setup.sides[1].time(i)).collect();
        let mut integral = vec![0.0; nr * nc];
        for r in 1..nr {
            for c in 1..nc {
                let nv = |rr: usize, cc: usize| geo[rr * nc + cc].cell.n;
                let avg = 0.25 * (nv(r - 1, c - 1) + nv(r - 1, c) + nv(r, c - 1) + nv(r, c));
                integral[r * nc + c] = integral[(r - 1) * nc + c] + integral[r * nc + c - 1] - integral[(r - 1) * nc + c - 1]
                    + 2.0 * avg * (t1[r] - t1[r - 1]) * (t2[c] - t2[c - 1]);
            }
        }
        let ex = setup.params.exponents();
        let rk = setup.params.rho / setup.params.kappa;
        let cells = geo.into_iter().zip(integral).map(|(g, i)| finish(g, &ex, rk, i.exp())).collect();
        Ok(CouplingGrid { rows: rows.to_vec(), cols: cols.to_vec(), cells })
    }
}

/// Up to `cells + 1` distinct step indices spread evenly over `0..=stop`.
pub fn even_indices(stop: usize, cells: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=cells).map(|c| ((c * stop) as f64 / cells as f64).round() as usize).collect();
    v.dedup();
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleConfig {
    pub params: PairParams,
    pub polygons: [HullPolygon; 2],
    /// Cap on `t1`; `None` uses half the squared radius of polygon 1 about `x1`,
    /// which the exit time of a hull confined to the polygon cannot exceed.
    pub t1_max: Option<f64>,
    pub t2_bar: f64,
    /// Grid cells along each axis.
    pub cells: usize,
    /// SDE steps per `t1` grid cell.
    pub substeps: usize,
    pub n_paths: usize,
    pub seed: u64,
}

impl MartingaleConfig {
    pub fn validate(&self) -> Result<HypParams> {
        let hp = self.params.validate()?;
        validate_polygons(&self.params, &self.polygons[0], &self.polygons[1])?;
        if !(self.t2_bar > 0.0) || self.cells == 0 || self.substeps == 0 {
            return Err(Error::Parameter("need t2_bar > 0, cells > 0 and substeps > 0".into()));
        }
        if let Some(t) = self.t1_max {
            if !(t > 0.0) {
                return Err(Error::Parameter(format!("t1_max = {t} must be positive")));
            }
        }
        Ok(hp)
    }

    pub fn t1_cap(&self) -> f64 {
        self.t1_max.unwrap_or_else(|| 0.5 * self.polygons[0].radius_about(self.params.x1).powi(2))
    }

    pub fn dt(&self) -> f64 {
        self.t1_cap() / (self.cells * self.substeps) as f64
    }

    /// Step counts of the two traces.
    pub fn steps(&self) -> [usize; 2] {
        [self.cells * self.substeps, (self.t2_bar / self.dt()).ceil().max(1.0) as usize]
    }

    /// Report times `g t1_cap / cells`.
    pub fn report_times(&self) -> Vec<f64> {
        (0..=self.cells).map(|g| g as f64 * self.t1_cap() / self.cells as f64).collect()
    }
}

/// Outcome of one pair in the martingale test.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub index: usize,
    /// `M(t_g ^ T1, t2_bar ^ T2)` at every report time.
    pub values: Vec<f64>,
    pub terminal: f64,
    pub stop: [usize; 2],
    /// Exit time estimates refined by bisection on the exit segment.
    pub exit_time: [Option<f64>; 2],
    pub m_min: f64,
    pub m_max: f64,
    pub max_factorization_err: f64,
    pub max_boundary_err: f64,
    pub ordering_violations: usize,
    pub l_violations: usize,
    pub cells: usize,
    /// `(dM/M, Q_1 dB_1/sqrt(kappa))` along the terminal column.
    pub q_pairs: Vec<(f64, f64)>,
}

fn exit_time(side: &PairSide, h: &HullPolygon) -> Option<f64> {
    let k = side.stop;
    if k == 0 || k >= side.trace.len() || h.contains(side.trace.points[k]) {
        return None;
    }
    let f = h.exit_fraction(side.trace.points[k - 1], side.trace.points[k]);
    Some(side.time(k - 1) + f * (side.time(k) - side.time(k - 1)))
}

/// Runs pair `index` of the test.
pub fn run_pair(cfg: &MartingaleConfig, index: usize) -> Result<PairOutcome> {
    let dt = cfg.dt();
    let seeds = [derive_seed(cfg.seed, 2 * index as u64), derive_seed(cfg.seed, 2 * index as u64 + 1)];
    let mut setup = PairSetup::simulate(cfg.params, dt, cfg.steps(), seeds)?;
    setup.stop_at_polygons([&cfg.polygons[0], &cfg.polygons[1]]);
    let stop = [setup.sides[0].stop, setup.sides[1].stop];
    let mut rows: Vec<usize> = (0..=cfg.cells).map(|g| g * cfg.substeps).filter(|&i| i < stop[0]).collect();
    rows.push(stop[0]);
    rows.dedup();
    let cols = even_indices(stop[1], cfg.cells);
    let grid = CouplingGrid::compute(&setup, &rows, &cols)?;
    let nc = cols.len();
    let last = grid.cell(rows.len() - 1, nc - 1).m;
    let values = (0..=cfg.cells)
        .map(|g| {
            let i = g * cfg.substeps;
            match rows.iter().position(|&r| r == i) {
                Some(r) if i < stop[0] => grid.cell(r, nc - 1).m,
                _ => last,
            }
        })
        .collect();
    let mut out = PairOutcome {
        index,
        values,
        terminal: last,
        stop,
        exit_time: [exit_time(&setup.sides[0], &cfg.polygons[0]), exit_time(&setup.sides[1], &cfg.polygons[1])],
        m_min: f64::INFINITY,
        m_max: f64::NEG_INFINITY,
        max_factorization_err: 0.0,
        max_boundary_err: 0.0,
        ordering_violations: 0,
        l_violations: 0,
        cells: grid.cells.len(),
        q_pairs: Vec::new(),
    };
    for c in &grid.cells {
        out.m_min = out.m_min.min(c.m);
        out.m_max = out.m_max.max(c.m);
        if !c.ordering_holds() {
            out.ordering_violations += 1;
        }
        if !(c.l_between(0, 1e-9) && c.l_between(1, 1e-9)) {
            out.l_violations += 1;
        }
        match c.m_direct {
            Some(md) => out.max_factorization_err = out.max_factorization_err.max(((md - c.m) / c.m).abs()),
            None => out.max_boundary_err = out.max_boundary_err.max((c.m - 1.0).abs()),
        }
    }
    let side = &setup.sides[0];
    let (kappa, rho, rf) = (cfg.params.kappa, cfg.params.rho, cfg.params.rho_far());
    for r in 1..rows.len() {
        let (prev, cur) = (grid.cell(r - 1, nc - 1), grid.cell(r, nc - 1));
        let Some(q) = prev.q[0] else { continue };
        let mut db = 0.0;
        for s in rows[r - 1]..rows[r] {
            let h = side.time(s + 1) - side.time(s);
            let x = side.driver.xi[s];
            let drift = rho / (x - side.p[s]) + rf / (x - side.q[s]);
            db += (side.driver.xi[s + 1] - x - drift * h) / kappa.sqrt();
        }
        out.q_pairs.push(((cur.m - prev.m) / prev.m, q * db / kappa.sqrt()));
    }
    Ok(out)
}

/// Ensemble summary of the martingale test.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    pub n_paths: usize,
    pub valid: usize,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub terminal_mean: f64,
    pub terminal_stderr: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub max_factorization_err: f64,
    pub max_boundary_err: f64,
    pub ordering_violations: usize,
    pub l_violations: usize,
    pub cells: usize,
    /// Lag-1 correlation of consecutive increments of `M` pooled over paths.
    pub increment_lag1_corr: f64,
    pub increment_lag1_stderr: f64,
    /// Least-squares slope of `dM/M` on `Q_1 dB_1 / sqrt(kappa)` and its standard error.
    pub q_slope: f64,
    pub q_slope_stderr: f64,
    pub failures: Vec<(usize, String)>,
    pub low_effective_n: bool,
    pub outcomes: Vec<PairOutcome>,
}

impl MartingaleReport {
    /// Largest `|mean - 1| / stderr` over report times with nonzero stderr.
    pub fn max_z(&self) -> f64 {
        let mut z = self
            .mean
            .iter()
            .zip(&self.stderr)
            .filter(|(_, &s)| s > 0.0)
            .map(|(m, s)| (m - 1.0).abs() / s)
            .fold(0.0, f64::max);
        if self.terminal_stderr > 0.0 {
            z = z.max((self.terminal_mean - 1.0).abs() / self.terminal_stderr);
        }
        z
    }

    /// Whether every report mean and the terminal mean lie within `k` standard errors of 1.
    pub fn within(&self, k: f64) -> bool {
        let ok = |m: f64, s: f64| (m - 1.0).abs() <= k * s;
        self.mean.iter().zip(&self.stderr).all(|(&m, &s)| ok(m, s)) && ok(self.terminal_mean, self.terminal_stderr)
    }
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn correlation(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (mx, my) = (pairs.iter().map(|p| p.0).sum::<f64>() / n, pairs.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Slope through the origin of `y` on `x`, with its standard error.
fn slope(pairs: &[(f64, f64)]) -> (f64, f64) {
    let sxx: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
    let b = pairs.iter().map(|p| p.0 * p.1).sum::<f64>() / sxx;
    let rss: f64 = pairs.iter().map(|p| (p.0 - b * p.1).powi(2)).sum();
    let dof = (pairs.len() as f64 - 1.0).max(1.0);
    (b, (rss / dof / sxx).sqrt())
}

/// Monte Carlo check that `M(t ^ T1, t2_bar ^ T2)` has mean 1 at every report time.
pub fn martingale_mc_test(cfg: &MartingaleConfig) -> Result<MartingaleReport> {
    cfg.validate()?;
    let results: Vec<Result<PairOutcome>> = (0..cfg.n_paths).into_par_iter().map(|i| run_pair(cfg, i)).collect();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    let valid = outcomes.len();
    let times = cfg.report_times();
    let mut mean = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for g in 0..times.len() {
        let v: Vec<f64> = outcomes.iter().map(|o| o.values[g]).collect();
        let (m, s) = mean_stderr(&v);
        mean.push(m);
        stderr.push(if s.is_nan() { 0.0 } else { s });
    }
    let term: Vec<f64> = outcomes.iter().map(|o| o.terminal).collect();
    let (terminal_mean, ts) = mean_stderr(&term);
    let mut inc = Vec::new();
    for o in &outcomes {
        for g in 2..o.values.len() {
            let (d0, d1) = (o.values[g - 1] - o.values[g - 2], o.values[g] - o.values[g - 1]);
            if d0 != 0.0 && d1 != 0.0 {
                inc.push((d0, d1));
            }
        }
    }
    let corr = if inc.len() > 2 { correlation(&inc) } else { f64::NAN };
    let qp: Vec<(f64, f64)> = outcomes.iter().flat_map(|o| o.q_pairs.iter().copied()).collect();
    let (q_slope, q_slope_stderr) = if qp.len() > 2 { slope(&qp) } else { (f64::NAN, f64::NAN) };
    let fold = |f: fn(&PairOutcome) -> f64, init: f64, op: fn(f64, f64) -> f64| outcomes.iter().map(f).fold(init, op);
    Ok(MartingaleReport {
        n_paths: cfg.n_paths,
        valid,
        times,
        mean,
        stderr,
        terminal_mean,
        terminal_stderr: if ts.is_nan() { 0.0 } else { ts },
        m_min: fold(|o| o.m_min, f64::INFINITY, f64::min),
        m_max: fold(|o| o.m_max, f64::NEG_INFINITY, f64::max),
        max_factorization_err: fold(|o| o.max_factorization_err, 0.0, f64::max),
        max_boundary_err: fold(|o| o.max_boundary_err, 0.0, f64::max),
        ordering_violations: outcomes.iter().map(|o| o.ordering_violations).sum(),
        l_violations: outcomes.iter().map(|o| o.l_violations).sum(),
        cells: outcomes.iter().map(|o| o.cells).sum(),
        increment_lag1_corr: corr,
        increment_lag1_stderr: 1.0 / (inc.len().max(1) as f64).sqrt(),
        q_slope,
        q_slope_stderr,
        low_effective_n: valid < 2 || (valid as f64) < 0.8 * cfg.n_paths as f64,
        failures,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PairParams {
        PairParams { kappa: 3.0, rho: 0.5, x1: 0.0, x2: 1.0 }
    }

    #[test]
    fn exponents_match_definitions() {
        let e = params().exponents();
        assert!((e.alpha - 0.5).abs() < 1e-15);
        assert!((e.lambda + 0.5).abs() < 1e-15);
        assert!((e.tau - 2.5 * -3.5 / 6.0).abs() < 1e-15);
        assert_eq!(PairParams { rho: 0.0, ..params() }.exponents().delta, 0.0);
        let p = PairParams { rho: -0.5, ..params() };
        assert!((p.exponents().delta + 0.25 * 0.25 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn polygon_basics() {
        let h = HullPolygon::half_disk(0.0, 0.1, 8).unwrap();
        assert!(h.contains(Complex64::new(0.0, 0.05)));
        assert!(!h.contains(Complex64::new(0.0, 0.2)));
        assert!(!h.contains(Complex64::new(0.05, 0.0)));
        assert!(h.contains_seed(0.0));
        assert!(!h.contains_seed(0.2));
        let g = HullPolygon::half_disk(1.0, 0.1, 8).unwrap();
        assert!(h.disjoint_from(&g));
        assert!(!h.disjoint_from(&HullPolygon::half_disk(0.15, 0.1, 8).unwrap()));
        let bow = vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 1.0), Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)];
        assert!(HullPolygon::new(bow).is_err());
        let f = h.exit_fraction(Complex64::new(0.0, 0.05), Complex64::new(0.0, 0.15));
        assert!((0.05 + 0.1 * f - 0.1).abs() < 1e-12);
    }

    fn small_pair(seed: u64) -> PairSetup {
        PairSetup::simulate(params(), 2e-5, [120, 100], [seed, seed + 1]).unwrap()
    }

    #[test]
    fn axis_values_follow_the_opposing_chain() {
        let s = small_pair(3);
        let c = eval_cell(&s, [0, 60], 1.0).unwrap();
        let q2 = s.sides[1].q[60];
        assert!((c.a[0].value - q2).abs() < 1e-4, "{} vs {q2}", c.a[0].value);
        assert_eq!(c.a[0].value, c.b0[0]);
        let c = eval_cell(&s, [40, 0], 1.0).unwrap();
        assert_eq!(c.a[0], Jet3::identity(s.sides[0].driver.xi[40]));
        assert!((c.m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_matches_single_cells_and_boundary_is_one() {
        let s = small_pair(5);
        let rows = vec![0, 30, 60, 120];
        let cols = vec![0, 25, 50, 100];
        let g = CouplingGrid::compute(&s, &rows, &cols).unwrap();
        for (r, &i1) in rows.iter().enumerate() {
            for (c, &i2) in cols.iter().enumerate() {
                let cell = g.cell(r, c);
                let single = eval_cell(&s, [i1, i2], cell.f).unwrap();
                assert!((single.m - cell.m).abs() < 1e-10 * cell.m.abs());
                assert!(cell.ordering_holds());
                if i1 == 0 || i2 == 0 {
                    assert!((cell.m - 1.0).abs() < 1e-12);
                } else {
                    assert!(cell.r > 0.0 && cell.r < 1.0);
                    let md = cell.m_direct.unwrap();
                    assert!(((md - cell.m) / cell.m).abs() < 1e-10);
                    assert!(cell.l_between(0, 1e-9) && cell.l_between(1, 1e-9));
                }
            }
        }
    }

    #[test]
    fn opposing_map_is_nearly_identity_far_away() {
        let s = small_pair(8);
        let c = eval_cell(&s, [60, 50], 1.0).unwrap();
        let t = c.t[1];
        assert!((c.a[0].d1 - 1.0).abs() < 10.0 * t);
    }
}
