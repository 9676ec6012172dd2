//! Distributional checks of trace reversal through crossing angles.
//!
//! Reversal statements hold up to a time change, so every comparison uses
//! the argument of the point where a trace crosses a circle about 0. The map
//! `z -> 1 / conj(z)` preserves arguments and swaps radii `r <-> 1/r`, and
//! swaps first crossings with last crossings.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loewner::{unzip_curve, Trace, TraceBuilder};
use crate::sde::{derive_seed, eps0, DriverState, Force, ForceSpec, IntermediateState, KappaRhoState, Noise};
use crate::special::HypParams;

/// `z -> 1 / conj(z)` applied pointwise, order reversed, preceded by the seed
/// `0` (the image of infinity); times are the capacities found by unzipping.
pub fn invert_trace(trace: &Trace) -> Result<Trace> {
    if trace.points.len() < 2 {
        return Err(Error::Geometry("trace needs at least two points".into()));
    }
    let mut pts = vec![Complex64::new(0.0, 0.0)];
    for &z in trace.points[1..].iter().rev() {
        if z.norm() == 0.0 || !(z.im > 0.0) {
            return Err(Error::Geometry(format!("trace point {z} is not in the open upper half-plane")));
        }
        pts.push(1.0 / z.conj());
    }
    let (_, driver) = unzip_curve(&Trace { times: vec![0.0; pts.len()], points: pts.clone() })?;
    Ok(Trace { times: driver.times, points: pts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingKind {
    First,
    Last,
}

impl CrossingKind {
    pub fn name(self) -> &'static str {
        match self {
            CrossingKind::First => "first_crossing",
            CrossingKind::Last => "last_crossing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingSample {
    pub radius: f64,
    pub angle: f64,
    pub kind: CrossingKind,
    pub path_id: usize,
    pub seed: u64,
}

/// Parameters `s` in `[0, 1]` where `a + s (b - a)` meets `|z| = r`, ascending.
fn circle_roots(a: Complex64, b: Complex64, r: f64) -> Vec<f64> {
    let d = b - a;
    let qa = d.norm_sqr();
    if qa == 0.0 {
        return Vec::new();
    }
    let qb = 2.0 * (a.re * d.re + a.im * d.im);
    let qc = a.norm_sqr() - r * r;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    // stable pair of roots
    let t = -0.5 * (qb + sq.copysign(qb));
    let mut roots = if t != 0.0 { vec![t / qa, qc / t] } else { vec![-qb / (2.0 * qa)] };
    roots.retain(|s| (0.0..=1.0).contains(s));
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots
}

fn crossing_sample(a: Complex64, b: Complex64, s: f64, r: f64, kind: CrossingKind) -> CrossingSample {
    let z = a + (b - a) * s;
    CrossingSample { radius: r, angle: z.arg(), kind, path_id: 0, seed: 0 }
}

/// Argument at the first point where the polyline meets `|z| = r`.
pub fn first_crossing_angle(trace: &Trace, r: f64) -> Option<CrossingSample> {
    first_crossing_in(&trace.points, r)
}

fn first_crossing_in(pts: &[Complex64], r: f64) -> Option<CrossingSample> {
    for k in 1..pts.len() {
        let (a, b) = (pts[k - 1], pts[k]);
        if a.norm().max(b.norm()) < r {
            continue;
        }
        if let Some(&s) = circle_roots(a, b, r).first() {
            return Some(crossing_sample(a, b, s, r, CrossingKind::First));
        }
    }
    None
}

/// Argument at the last crossing of `|z| = r` before the trace first reaches
/// `escape_factor * r`; `None` when it never does.
pub fn last_crossing_angle(trace: &Trace, r: f64, escape_factor: f64) -> Option<CrossingSample> {
    let pts = &trace.points;
    let e = pts.iter().position(|z| z.norm() >= escape_factor * r)?;
    for k in (1..=e).rev() {
        let (a, b) = (pts[k - 1], pts[k]);
        if let Some(&s) = circle_roots(a, b, r).last() {
            return Some(crossing_sample(a, b, s, r, CrossingKind::Last));
        }
    }
    None
}

/// Two-sample Kolmogorov-Smirnov result.
#[derive(Debug, Clone, PartialEq)]
pub struct KsReport {
    pub n1: usize,
    pub n2: usize,
    pub statistic: f64,
    pub p_value: f64,
    /// Paths that gave no sample, per ensemble.
    pub discarded: [usize; 2],
    /// False when either ensemble kept fewer than 80% of its paths.
    pub valid: bool,
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        let pi = std::f64::consts::PI;
        let x = -pi * pi / (8.0 * lambda * lambda);
        let s: f64 = (1..=20).map(|k| (x * ((2 * k - 1) as f64).powi(2)).exp()).sum();
        return (1.0 - (2.0 * pi).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sample statistic `sup |F1 - F2|` and its asymptotic p-value.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidTest("empty sample".into()));
    }
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(|p, q| p.partial_cmp(q).unwrap());
    b.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    let ne = n1 * n2 / (n1 + n2);
    Ok((d, kolmogorov_q(ne.sqrt() * d)))
}

fn ks_report(a: &[CrossingSample], b: &[CrossingSample], n: [usize; 2]) -> Result<KsReport> {
    let xa: Vec<f64> = a.iter().map(|s| s.angle).collect();
    let xb: Vec<f64> = b.iter().map(|s| s.angle).collect();
    let valid = (a.len() as f64) >= 0.8 * n[0] as f64 && (b.len() as f64) >= 0.8 * n[1] as f64 && !a.is_empty() && !b.is_empty();
    let (statistic, p_value) = if a.is_empty() || b.is_empty() { (f64::NAN, f64::NAN) } else { ks_two_sample(&xa, &xb)? };
    Ok(KsReport { n1: a.len(), n2: b.len(), statistic, p_value, discarded: [n[0] - a.len(), n[1] - b.len()], valid })
}

/// Which side a degenerate force point sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

/// A driving process seeded at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Process {
    /// SLE(kappa; rho) from `(0; 0+)` or `(0; 0-)`.
    Degenerate { kappa: f64, rho: f64, side: Side },
    /// SLE(kappa; rho) from `(0; b0)`.
    Generic { kappa: f64, rho: f64, b0: f64 },
    /// Intermediate SLE(kappa; rho) with force points `0+` and `p2`.
    DegenerateIntermediate { kappa: f64, rho: f64, p2: f64 },
}

impl Process {
    pub fn validate(&self) -> Result<()> {
        let (kappa, rho) = match *self {
            Process::Degenerate { kappa, rho, .. } | Process::Generic { kappa, rho, .. } => (kappa, rho),
            Process::DegenerateIntermediate { kappa, rho, p2 } => {
                if !(p2 > 0.0) {
                    return Err(Error::Parameter(format!("p2 = {p2} must be positive")));
                }
                (kappa, rho)
            }
        };
        HypParams::new(kappa, rho)?;
        if let Process::Generic { b0, .. } = *self {
            if !(b0 > 0.0 && b0.is_finite()) {
                return Err(Error::Parameter(format!("b0 = {b0} must be positive")));
            }
        }
        Ok(())
    }

    fn state(&self, eps: f64) -> Result<Box<dyn DriverState>> {
        Ok(match *self {
            Process::Degenerate { kappa, rho, side } => {
                let at = if side == Side::Plus { ForceSpec::DegeneratePlus } else { ForceSpec::DegenerateMinus };
                Box::new(KappaRhoState::new(kappa, 0.0, &[Force { rho, at }], eps))
            }
            Process::Generic { kappa, rho, b0 } => {
                Box::new(KappaRhoState::new(kappa, 0.0, &[Force { rho, at: ForceSpec::Finite(b0) }], eps))
            }
            Process::DegenerateIntermediate { kappa, rho, p2 } => {
                Box::new(IntermediateState::new(HypParams::new(kappa, rho)?, None, p2, eps))
            }
        })
    }
}

/// Time steps `max(dt_min, rel t)` before `t_switch` and `max(dt_min, rel_far t)`
/// after it; each step is cut into `split` equal parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dt_min: f64,
    pub rel: f64,
    pub t_switch: f64,
    pub rel_far: f64,
    pub split: usize,
}

impl GridSpec {
    pub fn uniform(dt: f64) -> Self {
        GridSpec { dt_min: dt, rel: 0.0, t_switch: f64::INFINITY, rel_far: 0.0, split: 1 }
    }

    /// The same grid with every step halved.
    pub fn halved(&self) -> Self {
        GridSpec { split: self.split * 2, ..*self }
    }

    fn coarse_dt(&self, t: f64) -> f64 {
        let rel = if t < self.t_switch { self.rel } else { self.rel_far };
        self.dt_min.max(rel * t)
    }

    /// Step lengths from `t = 0` on.
    pub fn steps(&self) -> impl Iterator<Item = f64> + '_ {
        let mut t = 0.0;
        let mut part = 0;
        let mut cur = 0.0;
        std::iter::from_fn(move || {
            if part == 0 {
                cur = self.coarse_dt(t);
                t += cur;
            }
            part = (part + 1) % self.split;
            Some(cur / self.split as f64)
        })
    }
}

/// When a simulated trace stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// First point with modulus at least `r`.
    Reach(f64),
    /// Capacity time reaches the horizon.
    Horizon(f64),
}

/// Largest number of steps a single run may take.
pub const MAX_RUN_STEPS: usize = 2_000_000;

/// Simulates a trace of `process` on `grid` driven by `noise` until `stop`.
pub fn run_trace(process: &Process, grid: &GridSpec, mut noise: Noise, stop: StopRule) -> Result<Trace> {
    process.validate()?;
    let mut steps = grid.steps();
    let first = steps.next().unwrap();
    let mut state = process.state(eps0(first))?;
    let mut b = TraceBuilder::new(0.0);
    let mut dt = first;
    for k in 0..MAX_RUN_STEPS {
        if let StopRule::Horizon(h) = stop {
            let t = b.chain.time();
            if t >= h * (1.0 - 1e-12) {
                return Ok(b.trace);
            }
            dt = dt.min(h - t);
        }
        let reason = state.advance(dt, &mut noise, k)?;
        let tip = b.push(state.xi(), dt)?;
        if let Some(r) = reason {
            return Err(Error::Numerical(format!("path ended early ({r})")));
        }
        if let StopRule::Reach(r) = stop {
            if tip.norm() >= r {
                return Ok(b.trace);
            }
        }
        dt = steps.next().unwrap();
    }
    Err(Error::Numerical(format!("stop rule not met within {MAX_RUN_STEPS} steps")))
}

/// A crossing statistic on one ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub process: Process,
    pub grid: GridSpec,
    pub kind: CrossingKind,
    pub radius: f64,
    /// Escape factor for last crossings.
    pub escape: f64,
}

impl EnsembleSpec {
    pub fn stop_rule(&self) -> StopRule {
        match self.kind {
            CrossingKind::First => StopRule::Reach(self.radius),
            CrossingKind::Last => StopRule::Reach(self.escape * self.radius),
        }
    }

    /// Crossing of one path (`Ok(None)` when the path gives no sample).
    pub fn sample(&self, path_id: usize, seed: u64, noise: Noise) -> Result<Option<CrossingSample>> {
        let tr = run_trace(&self.process, &self.grid, noise, self.stop_rule())?;
        let s = match self.kind {
            CrossingKind::First => first_crossing_angle(&tr, self.radius),
            CrossingKind::Last => last_crossing_angle(&tr, self.radius, self.escape),
        };
        Ok(s.map(|s| CrossingSample { path_id, seed, ..s }))
    }
}

/// Samples of one ensemble plus the paths that failed or gave none.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSamples {
    pub samples: Vec<CrossingSample>,
    pub n_paths: usize,
    pub failures: Vec<(usize, String)>,
}

/// Runs `n` paths with seeds `derive_seed(master, offset + i)`.
pub fn run_ensemble(spec: &EnsembleSpec, n: usize, master: u64, offset: u64) -> EnsembleSamples {
    let out: Vec<(usize, Result<Option<CrossingSample>>)> = (0..n)
        .into_par_iter()
        .map(|i| (i, {
            let s = derive_seed(master, offset + i as u64);
            spec.sample(i, s, Noise::new(s))
        }))
        .collect();
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in out {
        match r {
            Ok(Some(s)) => samples.push(s),
            Ok(None) => failures.push((i, "no crossing".to_string())),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    EnsembleSamples { samples, n_paths: n, failures }
}

/// Counts paths whose last-crossing angle changes when the escape factor is
/// doubled; returns `(changed, compared)`.
pub fn escape_stability(spec: &EnsembleSpec, n: usize, master: u64) -> Result<(usize, usize)> {
    if spec.kind != CrossingKind::Last {
        return Err(Error::Parameter("escape stability applies to last crossings".into()));
    }
    let far = StopRule::Reach(2.0 * spec.escape * spec.radius);
    let out: Vec<Option<bool>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let tr = run_trace(&spec.process, &spec.grid, Noise::new(derive_seed(master, i as u64)), far).ok()?;
            let a = last_crossing_angle(&tr, spec.radius, spec.escape)?;
            let b = last_crossing_angle(&tr, spec.radius, 2.0 * spec.escape)?;
            Some(a.angle != b.angle)
        })
        .collect();
    let compared = out.iter().flatten().count();
    Ok((out.iter().flatten().filter(|c| **c).count(), compared))
}

/// Both ensembles of a test and their comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ReversalOutcome {
    pub a: EnsembleSamples,
    pub b: EnsembleSamples,
    pub ks: KsReport,
}

pub fn compare(a: EnsembleSamples, b: EnsembleSamples) -> Result<ReversalOutcome> {
    let ks = ks_report(&a.samples, &b.samples, [a.n_paths, b.n_paths])?;
    Ok(ReversalOutcome { a, b, ks })
}

/// Seed offsets of the second ensemble of a test.
pub const SECOND_ENSEMBLE_OFFSET: u64 = 1 << 40;

/// Step length per unit capacity used for first crossings of the unit circle.
pub const UNIT_DT: f64 = 1.0 / 4096.0;

/// Grid for last crossings of radius `r`: uniform `r^2 UNIT_DT` steps, then
/// relative steps `rel t` up to `20 r^2` and `rel_far t` after.
pub fn last_crossing_grid(r: f64, rel: f64, rel_far: f64) -> GridSpec {
    GridSpec { dt_min: r * r * UNIT_DT, rel, t_switch: 20.0 * r * r, rel_far, split: 1 }
}

/// Default relative step sizes of [`last_crossing_grid`].
pub const LAST_REL: f64 = 4e-3;
pub const LAST_REL_FAR: f64 = 2e-2;

/// Forward first crossings of the unit circle against last crossings of `r0`
/// for SLE(kappa; rho) from `(0; 0+-)`.
pub fn test_reversal_degenerate(kappa: f64, rho: f64, side: Side, n_paths: usize, r0: f64, seed: u64) -> Result<ReversalOutcome> {
    let process = Process::Degenerate { kappa, rho, side };
    process.validate()?;
    if !(r0 > 0.0) {
        return Err(Error::Parameter(format!("r0 = {r0} must be positive")));
    }
    let a = EnsembleSpec { process, grid: GridSpec::uniform(UNIT_DT), kind: CrossingKind::First, radius: 1.0, escape: 100.0 };
    let b = EnsembleSpec {
        process,
        grid: last_crossing_grid(r0, LAST_REL, LAST_REL_FAR),
        kind: CrossingKind::Last,
        radius: r0,
        escape: 100.0,
    };
    compare(run_ensemble(&a, n_paths, seed, 0), run_ensemble(&b, n_paths, seed, SECOND_ENSEMBLE_OFFSET))
}

/// Ensemble A of the generic reversal: degenerate intermediate SLE with force
/// points `0+` and `1/b0`, first crossings of radius `r`.
pub fn generic_forward_spec(kappa: f64, rho: f64, b0: f64, r: f64) -> EnsembleSpec {
    EnsembleSpec {
        process: Process::DegenerateIntermediate { kappa, rho, p2: 1.0 / b0 },
        grid: GridSpec::uniform(UNIT_DT * r.min(1.0).powi(2)),
        kind: CrossingKind::First,
        radius: r,
        escape: 100.0,
    }
}

/// Ensemble B of the generic reversal: SLE(kappa; rho) from `(0; b0)`, last
/// crossings of radius `1/r`.
pub fn generic_reverse_spec(kappa: f64, rho: f64, b0: f64, r: f64) -> EnsembleSpec {
    let rb = 1.0 / r;
    let mut grid = last_crossing_grid(rb, LAST_REL, LAST_REL_FAR);
    grid.dt_min = UNIT_DT * b0.min(rb).powi(2);
    EnsembleSpec { process: Process::Generic { kappa, rho, b0 }, grid, kind: CrossingKind::Last, radius: rb, escape: 100.0 }
}

pub fn test_reversal_generic(kappa: f64, rho: f64, b0: f64, n_paths: usize, r: f64, seed: u64) -> Result<ReversalOutcome> {
    if !(r > 0.0) {
        return Err(Error::Parameter(format!("r = {r} must be positive")));
    }
    let a = generic_forward_spec(kappa, rho, b0, r);
    let b = generic_reverse_spec(kappa, rho, b0, r);
    a.process.validate()?;
    b.process.validate()?;
    compare(run_ensemble(&a, n_paths, seed, 0), run_ensemble(&b, n_paths, seed, SECOND_ENSEMBLE_OFFSET))
}

/// Paired comparison of one statistic at a grid and at the grid with halved steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotReport {
    pub pairs: usize,
    /// Mean of `coarse - fine` angle and its standard error.
    pub mean_shift: f64,
    pub shift_stderr: f64,
    /// Largest density of the fine sample (kernel estimate).
    pub max_density: f64,
    /// `sup |F_coarse - F_fine|` bound from the mean shift, `|shift| * max_density`.
    pub cdf_shift: f64,
    /// One third of the two-sample KS critical value at level 0.01 for `n_ref` paths each.
    pub tolerance: f64,
}

impl PilotReport {
    pub fn passes(&self) -> bool {
        self.cdf_shift <= self.tolerance
    }
}

/// Estimates the discretization shift of `spec`'s angle by halving every step
/// over `n` paths driven by the same Brownian paths.
pub fn resolution_pilot(spec: &EnsembleSpec, n: usize, master: u64, n_ref: usize) -> Result<PilotReport> {
    let fine = EnsembleSpec { grid: spec.grid.halved(), ..*spec };
    let pairs: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .filter_map(|i| {
            let s = derive_seed(master, i as u64);
            let c = spec.sample(i, s, Noise::coarsened(s, 2)).ok().flatten()?;
            let f = fine.sample(i, s, Noise::new(s)).ok().flatten()?;
            Some((c.angle, f.angle))
        })
        .collect();
    if pairs.len() < 2 {
        return Err(Error::InvalidTest("pilot produced fewer than two paired samples".into()));
    }
    let d: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let m = d.iter().sum::<f64>() / d.len() as f64;
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
    let fine_angles: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let fmax = max_density(&fine_angles);
    let ne = n_ref as f64 / 2.0;
    let crit = 1.628 / ne.sqrt();
    Ok(PilotReport {
        pairs: pairs.len(),
        mean_shift: m,
        shift_stderr: (var / d.len() as f64).sqrt(),
        max_density: fmax,
        cdf_shift: m.abs() * fmax,
        tolerance: crit / 3.0,
    })
}

/// Gaussian-kernel density maximum with Silverman's bandwidth.
fn max_density(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let h = 1.06 * sd * n.powf(-0.2);
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    (0..=200)
        .map(|i| {
            let t = lo + (hi - lo) * i as f64 / 200.0;
            norm * x.iter().map(|v| (-0.5 * ((t - v) / h).powi(2)).exp()).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Medians of the running maximum modulus at several horizons.
#[derive(Debug, Clone, PartialEq)]
pub struct TransienceReport {
    pub horizons: Vec<f64>,
    pub medians: Vec<f64>,
    pub n_paths: usize,
    pub failures: Vec<(usize, String)>,
}

impl TransienceReport {
    pub fn strictly_increasing(&self) -> bool {
        self.medians.windows(2).all(|w| w[1] > w[0])
    }

    /// `median(last horizon) / median(first horizon)`.
    pub fn ratio(&self) -> f64 {
        self.medians.last().unwrap() / self.medians[0]
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs `n` traces to the largest horizon and reports median `max |beta|` at each.
pub fn transience_report(process: &Process, grid: &GridSpec, horizons: &[f64], n: usize, master: u64) -> Result<TransienceReport> {
    process.validate()?;
    if horizons.is_empty() || horizons.iter().any(|h| !(*h > 0.0)) || horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("horizons must be positive and increasing".into()));
    }
    let last = *horizons.last().unwrap();
    let runs: Vec<(usize, Result<Vec<f64>>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = run_trace(process, grid, Noise::new(derive_seed(master, i as u64)), StopRule::Horizon(last)).map(|tr| {
                horizons
                    .iter()
                    .map(|&h| {
                        tr.times.iter().zip(&tr.points).take_while(|(t, _)| **t <= h * (1.0 + 1e-12)).map(|(_, z)| z.norm()).fold(0.0, f64::max)
                    })
                    .collect()
            });
            (i, r)
        })
        .collect();
    let mut cols = vec![Vec::new(); horizons.len()];
    let mut failures = Vec::new();
    for (i, r) in runs {
        match r {
            Ok(v) => v.into_iter().enumerate().for_each(|(k, x)| cols[k].push(x)),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if cols[0].is_empty() {
        return Err(Error::InvalidTest("no path completed".into()));
    }
    let medians = cols.iter_mut().map(|c| median(c)).collect();
    Ok(TransienceReport { horizons: horizons.to_vec(), medians, n_paths: n, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn slit(h: f64, n: usize) -> Trace {
        Trace { times: (0..=n).map(|k| k as f64).collect(), points: (0..=n).map(|k| c(0.0, h * k as f64 / n as f64)).collect() }
    }

    #[test]
    fn inversion_preserves_arguments() {
        let tr = Trace { times: vec![0.0, 1.0, 2.0], points: vec![c(0.0, 0.0), c(0.3, 0.4), c(-1.0, 2.0)] };
        let inv = invert_trace(&tr).unwrap();
        assert_eq!(inv.points.len(), 3);
        assert!((inv.points[1].arg() - c(-1.0, 2.0).arg()).abs() < 1e-12);
        assert!((inv.points[2].norm() - 2.0).abs() < 1e-12);
        assert!(inv.times.windows(2).all(|w| w[1] > w[0]));
        let v = invert_trace(&slit(2.0, 4)).unwrap();
        assert!(v.points[1..].iter().all(|z| (z.arg() - std::f64::consts::FRAC_PI_2).abs() < 1e-15));
        assert!((v.points[1].im - 0.5).abs() < 1e-15);
    }

    #[test]
    fn crossings_of_a_slit() {
        let tr = slit(2.0, 7);
        let s = first_crossing_angle(&tr, 1.3).unwrap();
        assert!((s.angle - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!(first_crossing_angle(&tr, 2.5).is_none());
        assert!(last_crossing_angle(&tr, 0.01, 100.0).is_some());
        assert!(last_crossing_angle(&tr, 0.1, 100.0).is_none());
    }

    #[test]
    fn last_crossing_takes_final_exit() {
        let pts = vec![c(0.0, 0.0), c(0.0, 2.0), c(1.5, 0.5), c(0.5, 0.5), c(0.5, 3.0), c(0.0, 300.0)];
        let tr = Trace { times: (0..6).map(|k| k as f64).collect(), points: pts };
        let f = first_crossing_angle(&tr, 1.0).unwrap();
        assert!((f.angle - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let l = last_crossing_angle(&tr, 1.0, 100.0).unwrap();
        let z = c(0.5, 0.75f64.sqrt());
        assert!((l.angle - z.arg()).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_values() {
        assert_eq!(kolmogorov_q(0.0), 1.0);
        assert!((kolmogorov_q(1.36) - 0.0494).abs() < 2e-4);
        assert!((kolmogorov_q(1.628) - 0.0100).abs() < 2e-4);
        assert!((kolmogorov_q(0.9) - kolmogorov_q(0.9 + 1e-9)).abs() < 1e-6);
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert_eq!(ks_two_sample(&x, &x).unwrap(), (0.0, 1.0));
        let y: Vec<f64> = x.iter().map(|v| v + 100.0).collect();
        assert_eq!(ks_two_sample(&x, &y).unwrap().0, 1.0);
    }

    #[test]
    fn grid_halving_splits_steps() {
        let g = GridSpec { dt_min: 0.01, rel: 0.1, t_switch: 1.0, rel_far: 0.5, split: 1 };
        let a: Vec<f64> = g.steps().take(40).collect();
        let b: Vec<f64> = g.halved().steps().take(80).collect();
        for k in 0..40 {
            assert_eq!(b[2 * k] + b[2 * k + 1], a[k]);
        }
        assert!(a[39] > a[0]);
    }

    #[test]
    fn mirrored_side_reflects_angles() {
        let g = GridSpec::uniform(1.0 / 512.0);
        for seed in 0..4 {
            let p = run_trace(&Process::Degenerate { kappa: 2.0, rho: 1.0, side: Side::Plus }, &g, Noise::new(seed), StopRule::Reach(1.0)).unwrap();
            let m = run_trace(&Process::Degenerate { kappa: 2.0, rho: 1.0, side: Side::Minus }, &g, Noise::new(seed).mirrored(), StopRule::Reach(1.0)).unwrap();
            let a = first_crossing_angle(&p, 1.0).unwrap().angle;
            let b = first_crossing_angle(&m, 1.0).unwrap().angle;
            assert!((a + b - std::f64::consts::PI).abs() < 1e-12, "{a} {b}");
        }
    }
}
