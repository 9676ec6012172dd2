//! Driving functions: standard SLE, SLE(kappa; rho vector) and intermediate SLE.
//!
//! All processes use Euler-Maruyama with the drift frozen at the left end of
//! each step. A step whose active force gap is below `10 sqrt(kappa dt)` is
//! split into 32 substeps; the substep noise is a Brownian bridge pinned to
//! the step's increment, so the coarse noise sequence does not depend on
//! whether a step was refined. A substep that would carry the driver across a
//! force point is redone on a finer bridge, up to [`MAX_REFINE_DEPTH`] levels;
//! past that the integration aborts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::loewner::DrivingPath;
use crate::special::{drift_j_regular, HypParams};

pub const SUBSTEPS: usize = 32;
pub const SUBSTEP_GAP_FACTOR: f64 = 10.0;
pub const COLLISION_TOL: f64 = 1e-6;
pub const EPS0_FACTOR: f64 = 1e-2;
pub const MAX_REFINE_DEPTH: u32 = 6;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of ensemble member `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

/// Gaussian noise for one path: a main stream of step increments and a
/// separate stream for bridge refinement.
pub struct Noise {
    main: ChaCha8Rng,
    sub: ChaCha8Rng,
    coarsen: usize,
    sign: f64,
}

impl Noise {
    pub fn new(seed: u64) -> Self {
        Self::coarsened(seed, 1)
    }

    /// Noise whose step increments each sum `c` consecutive draws, so a run with
    /// steps `c` times longer sees the same Brownian path as `Noise::new(seed)`
    /// on the finer grid.
    pub fn coarsened(seed: u64, c: usize) -> Self {
        let main = ChaCha8Rng::seed_from_u64(seed);
        let mut sub = ChaCha8Rng::seed_from_u64(seed);
        sub.set_stream(1);
        Noise { main, sub, coarsen: c.max(1), sign: 1.0 }
    }

    /// The same noise with every draw negated.
    pub fn mirrored(self) -> Self {
        Noise { sign: -self.sign, ..self }
    }

    /// Brownian increment over a step of length `dt`.
    pub fn increment(&mut self, dt: f64) -> f64 {
        let h = self.sign * (dt / self.coarsen as f64).sqrt();
        (0..self.coarsen).map(|_| h * self.main.sample::<f64, _>(StandardNormal)).sum()
    }

    /// Splits an increment `dw` over `dt` into `m` bridge increments.
    pub fn bridge(&mut self, dw: f64, dt: f64, m: usize) -> Vec<f64> {
        let h = self.sign * (dt / m as f64).sqrt();
        let z: Vec<f64> = (0..m).map(|_| h * self.sub.sample::<f64, _>(StandardNormal)).collect();
        let mean = z.iter().sum::<f64>() / m as f64;
        z.iter().map(|&v| v - mean + dw / m as f64).collect()
    }
}

/// Location of a force point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForceSpec {
    Finite(f64),
    Infinity,
    DegeneratePlus,
    DegenerateMinus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Force {
    pub rho: f64,
    pub at: ForceSpec,
}

/// Configuration of a chordal SLE(kappa; rho vector) run.
#[derive(Debug, Clone, PartialEq)]
pub struct SleConfig {
    pub kappa: f64,
    pub x0: f64,
    pub forces: Vec<Force>,
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa < 4.0) {
        return Err(Error::Parameter(format!("kappa = {kappa} must lie in (0,4)")));
    }
    Ok(())
}

fn check_grid(horizon: f64, steps: usize) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) || steps == 0 {
        return Err(Error::Parameter(format!("need horizon > 0 and steps > 0, got {horizon}, {steps}")));
    }
    Ok(())
}

impl SleConfig {
    pub fn validate(&self) -> Result<()> {
        check_kappa(self.kappa)?;
        check_grid(self.horizon, self.steps)?;
        let plus = self.forces.iter().filter(|f| f.at == ForceSpec::DegeneratePlus).count();
        let minus = self.forces.iter().filter(|f| f.at == ForceSpec::DegenerateMinus).count();
        if plus > 1 || minus > 1 {
            return Err(Error::Parameter("at most one degenerate force on each side".into()));
        }
        for f in &self.forces {
            if !f.rho.is_finite() {
                return Err(Error::Parameter("force weights must be finite".into()));
            }
            if let ForceSpec::Finite(p) = f.at {
                if p == self.x0 || !p.is_finite() {
                    return Err(Error::Parameter(format!("finite force point {p} must differ from the seed")));
                }
            }
        }
        let finite: Vec<&Force> = self.forces.iter().filter(|f| f.at != ForceSpec::Infinity).collect();
        if finite.len() == 1 && finite[0].rho < (self.kappa - 4.0) / 2.0 {
            return Err(Error::Parameter(format!(
                "rho = {} below (kappa-4)/2 = {}",
                finite[0].rho,
                (self.kappa - 4.0) / 2.0
            )));
        }
        Ok(())
    }
}

/// Configuration of an intermediate SLE(kappa; rho) run seeded at 0.
/// `p1 = None` is the degenerate point `0+`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateConfig {
    pub kappa: f64,
    pub rho: f64,
    pub p1: Option<f64>,
    pub p2: f64,
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
}

impl IntermediateConfig {
    pub fn validate(&self) -> Result<HypParams> {
        check_grid(self.horizon, self.steps)?;
        let hp = HypParams::new(self.kappa, self.rho)?;
        match self.p1 {
            Some(p1) if !(p1 > 0.0 && self.p2 > p1) => {
                Err(Error::Parameter(format!("need 0 < p1 < p2, got p1 = {p1}, p2 = {}", self.p2)))
            }
            None if !(self.p2 > 0.0) => Err(Error::Parameter(format!("p2 = {} must be positive", self.p2))),
            _ => Ok(hp),
        }
    }
}

/// Degenerate-start offset for a first step of length `dt`.
pub fn eps0(dt: f64) -> f64 {
    dt.sqrt() * EPS0_FACTOR
}

#[derive(Debug, Clone)]
struct ActiveForce {
    rho: f64,
    p: f64,
    /// +1 for points right of the driver, -1 for points left of it
    side: f64,
}

/// Integration state of SLE(kappa; rho vector).
#[derive(Debug, Clone)]
pub struct KappaRhoState {
    pub kappa: f64,
    sqrt_kappa: f64,
    pub xi: f64,
    forces: Vec<ActiveForce>,
    scale: f64,
    /// Number of global steps that were refined.
    pub refined_steps: usize,
}

impl KappaRhoState {
    /// State at time 0; `eps0` is the offset of degenerate points.
    pub fn new(kappa: f64, x0: f64, forces: &[Force], eps0: f64) -> Self {
        let mut act = Vec::new();
        let mut scale = 1.0f64.max(x0.abs());
        for f in forces {
            let (p, side) = match f.at {
                ForceSpec::Infinity => continue,
                ForceSpec::Finite(p) => (p, if p > x0 { 1.0 } else { -1.0 }),
                ForceSpec::DegeneratePlus => (x0 + eps0, 1.0),
                ForceSpec::DegenerateMinus => (x0 - eps0, -1.0),
            };
            scale = scale.max(p.abs());
            act.push(ActiveForce { rho: f.rho, p, side });
        }
        KappaRhoState { kappa, sqrt_kappa: kappa.sqrt(), xi: x0, forces: act, scale, refined_steps: 0 }
    }

    /// Current force point positions in configuration order (finite and degenerate only).
    pub fn points(&self) -> Vec<f64> {
        self.forces.iter().map(|f| f.p).collect()
    }

    fn min_active_gap(&self) -> f64 {
        self.forces.iter().filter(|f| f.rho != 0.0).map(|f| (f.p - self.xi).abs()).fold(f64::INFINITY, f64::min)
    }

    fn substep(&mut self, h: f64, dw: f64) {
        let xi = self.xi;
        let mut drift = 0.0;
        for f in &self.forces {
            drift += f.rho / (xi - f.p);
        }
        self.xi = xi + drift * h + self.sqrt_kappa * dw;
        for f in &mut self.forces {
            f.p += 2.0 * h / (f.p - xi);
        }
    }

    fn check(&self, step: usize) -> Result<Option<String>> {
        let tol = COLLISION_TOL * self.scale;
        for (m, f) in self.forces.iter().enumerate() {
            let gap = (f.p - self.xi) * f.side;
            if !(gap > 0.0) {
                return Err(Error::Numerical(format!(
                    "force point {} crossed the driver at step {step}; step size too coarse",
                    m + 1
                )));
            }
            if gap < tol {
                return Ok(Some(format!("collision of force point {} at step {step}", m + 1)));
            }
        }
        Ok(None)
    }

    fn refine(&mut self, h: f64, dw: f64, noise: &mut Noise, step: usize, depth: u32) -> Result<Option<String>> {
        let (xi, ps) = (self.xi, self.points());
        self.substep(h, dw);
        match self.check(step) {
            Err(_) if depth < MAX_REFINE_DEPTH => {
                self.xi = xi;
                for (f, p) in self.forces.iter_mut().zip(ps) {
                    f.p = p;
                }
                let hh = h / SUBSTEPS as f64;
                for d in noise.bridge(dw, h, SUBSTEPS) {
                    if let Some(r) = self.refine(hh, d, noise, step, depth + 1)? {
                        return Ok(Some(r));
                    }
                }
                Ok(None)
            }
            other => other,
        }
    }

    /// Advances by `dt`; returns a truncation reason when a gap collapses.
    pub fn advance(&mut self, dt: f64, noise: &mut Noise, step: usize) -> Result<Option<String>> {
        let dw = noise.increment(dt);
        if self.min_active_gap() < SUBSTEP_GAP_FACTOR * (self.kappa * dt).sqrt() {
            self.refined_steps += 1;
            let h = dt / SUBSTEPS as f64;
            for d in noise.bridge(dw, dt, SUBSTEPS) {
                if let Some(r) = self.refine(h, d, noise, step, 1)? {
                    return Ok(Some(r));
                }
            }
            Ok(None)
        } else {
            self.refine(dt, dw, noise, step, 0)
        }
    }
}

/// A driving process advanced step by step.
pub trait DriverState {
    fn xi(&self) -> f64;
    /// Force point positions, in configuration order.
    fn points(&self) -> Vec<f64>;
    /// Advances by `dt`; `Ok(Some(reason))` ends the path early.
    fn advance(&mut self, dt: f64, noise: &mut Noise, step: usize) -> Result<Option<String>>;
}

impl DriverState for KappaRhoState {
    fn xi(&self) -> f64 {
        self.xi
    }
    fn points(&self) -> Vec<f64> {
        KappaRhoState::points(self)
    }
    fn advance(&mut self, dt: f64, noise: &mut Noise, step: usize) -> Result<Option<String>> {
        KappaRhoState::advance(self, dt, noise, step)
    }
}

impl DriverState for IntermediateState {
    fn xi(&self) -> f64 {
        self.xi
    }
    fn points(&self) -> Vec<f64> {
        vec![self.p1, self.p2]
    }
    fn advance(&mut self, dt: f64, noise: &mut Noise, step: usize) -> Result<Option<String>> {
        IntermediateState::advance(self, dt, noise, step)
    }
}

fn uniform_times(horizon: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| k as f64 * horizon / steps as f64).collect()
}

/// `sqrt(kappa) W(t)` on the uniform grid of `n` steps over `[0, T]`.
pub fn drive_standard(kappa: f64, horizon: f64, steps: usize, seed: u64) -> Result<DrivingPath> {
    if !(kappa > 0.0) {
        return Err(Error::Parameter(format!("kappa = {kappa} must be positive")));
    }
    check_grid(horizon, steps)?;
    let cfg = SleConfig { kappa, x0: 0.0, forces: Vec::new(), horizon, steps, seed };
    integrate_kappa_rho(&cfg)
}

/// SLE(kappa; rho vector) driver with its force paths (named `p1`, `p2`, ...).
pub fn drive_kappa_rho(cfg: &SleConfig) -> Result<DrivingPath> {
    cfg.validate()?;
    integrate_kappa_rho(cfg)
}

fn integrate_kappa_rho(cfg: &SleConfig) -> Result<DrivingPath> {
    let times = uniform_times(cfg.horizon, cfg.steps);
    let dt = cfg.horizon / cfg.steps as f64;
    let mut st = KappaRhoState::new(cfg.kappa, cfg.x0, &cfg.forces, eps0(dt));
    let mut noise = Noise::new(cfg.seed);
    let nf = st.forces.len();
    let mut xi = vec![cfg.x0];
    let mut fp: Vec<Vec<f64>> = st.forces.iter().map(|f| vec![f.p]).collect();
    let mut truncation = None;
    for k in 0..cfg.steps {
        let r = st.advance(times[k + 1] - times[k], &mut noise, k)?;
        xi.push(st.xi);
        for m in 0..nf {
            fp[m].push(st.forces[m].p);
        }
        if r.is_some() {
            truncation = r;
            break;
        }
    }
    let n = xi.len();
    Ok(DrivingPath {
        times: times[..n].to_vec(),
        xi,
        forces: fp.into_iter().enumerate().map(|(m, v)| (format!("p{}", m + 1), v)).collect(),
        truncation,
    })
}

/// Drift of `ln(X2 / X1)` for the intermediate process at gaps `0 < X1 < X2`.
pub fn gap_log_drift(hp: &HypParams, x1: f64, x2: f64) -> Result<f64> {
    if !(x1 > 0.0 && x2 >= x1) {
        return Err(Error::Domain(format!("need 0 < X1 <= X2, got {x1}, {x2}")));
    }
    if x1 == x2 {
        return Ok(0.0);
    }
    let u = 1.0 / x1 - 1.0 / x2;
    let v = 1.0 / x1 + 1.0 / x2;
    let j = drift_j_regular(hp, x1, x2)? - hp.rho / x1;
    Ok(u * (j - (2.0 - hp.kappa / 2.0) * v))
}

/// Running check of the sign of [`gap_log_drift`] along a path.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GapMonitor {
    pub checks: usize,
    pub positive: usize,
    pub max_drift: f64,
}

/// Integration state of intermediate SLE(kappa; rho) seeded at 0.
#[derive(Debug, Clone)]
pub struct IntermediateState {
    pub hp: HypParams,
    sqrt_kappa: f64,
    pub xi: f64,
    pub p1: f64,
    pub p2: f64,
    scale: f64,
    pub monitor: GapMonitor,
    pub refined_steps: usize,
}

impl IntermediateState {
    pub fn new(hp: HypParams, p1: Option<f64>, p2: f64, eps0: f64) -> Self {
        let p1 = p1.unwrap_or(eps0);
        IntermediateState {
            hp,
            sqrt_kappa: hp.kappa.sqrt(),
            xi: 0.0,
            p1,
            p2,
            scale: 1.0f64.max(p2.abs()),
            monitor: GapMonitor { checks: 0, positive: 0, max_drift: f64::NEG_INFINITY },
            refined_steps: 0,
        }
    }

    fn substep(&mut self, h: f64, dw: f64) -> Result<()> {
        let xi = self.xi;
        let x1 = self.p1 - xi;
        let x2 = self.p2 - xi;
        let drift = if self.hp.rho == 0.0 { 0.0 } else { drift_j_regular(&self.hp, x1, x2)? - self.hp.rho / x1 };
        let gd = gap_log_drift(&self.hp, x1, x2)?;
        self.monitor.checks += 1;
        if gd > 0.0 {
            self.monitor.positive += 1;
        }
        self.monitor.max_drift = self.monitor.max_drift.max(gd);
        self.xi = xi + drift * h + self.sqrt_kappa * dw;
        self.p1 += 2.0 * h / x1;
        self.p2 += 2.0 * h / x2;
        Ok(())
    }

    fn check(&self, step: usize) -> Result<Option<String>> {
        let x1 = self.p1 - self.xi;
        if !(x1 > 0.0) || !(self.p2 > self.p1) {
            return Err(Error::Numerical(format!("ordering xi < p1 < p2 lost at step {step}; step size too coarse")));
        }
        if x1 < COLLISION_TOL * self.scale {
            return Ok(Some(format!("collision of p1 at step {step}")));
        }
        Ok(None)
    }

    fn refine(&mut self, h: f64, dw: f64, noise: &mut Noise, step: usize, depth: u32) -> Result<Option<String>> {
        let saved = (self.xi, self.p1, self.p2, self.monitor);
        self.substep(h, dw)?;
        match self.check(step) {
            Err(_) if depth < MAX_REFINE_DEPTH => {
                (self.xi, self.p1, self.p2, self.monitor) = saved;
                let hh = h / SUBSTEPS as f64;
                for d in noise.bridge(dw, h, SUBSTEPS) {
                    if let Some(r) = self.refine(hh, d, noise, step, depth + 1)? {
                        return Ok(Some(r));
                    }
                }
                Ok(None)
            }
            other => other,
        }
    }

    pub fn advance(&mut self, dt: f64, noise: &mut Noise, step: usize) -> Result<Option<String>> {
        let dw = noise.increment(dt);
        let gap = self.p1 - self.xi;
        if self.hp.rho != 0.0 && gap < SUBSTEP_GAP_FACTOR * (self.hp.kappa * dt).sqrt() {
            self.refined_steps += 1;
            let h = dt / SUBSTEPS as f64;
            for d in noise.bridge(dw, dt, SUBSTEPS) {
                if let Some(r) = self.refine(h, d, noise, step, 1)? {
                    return Ok(Some(r));
                }
            }
            Ok(None)
        } else {
            self.refine(dt, dw, noise, step, 0)
        }
    }
}

/// Intermediate SLE driver with force paths `p1`, `p2`, plus the gap monitor.
pub fn drive_intermediate_monitored(cfg: &IntermediateConfig) -> Result<(DrivingPath, GapMonitor)> {
    let hp = cfg.validate()?;
    let times = uniform_times(cfg.horizon, cfg.steps);
    let dt = cfg.horizon / cfg.steps as f64;
    let mut st = IntermediateState::new(hp, cfg.p1, cfg.p2, eps0(dt));
    let mut noise = Noise::new(cfg.seed);
    let (mut xi, mut p1, mut p2) = (vec![0.0], vec![st.p1], vec![st.p2]);
    let mut truncation = None;
    for k in 0..cfg.steps {
        let r = st.advance(times[k + 1] - times[k], &mut noise, k)?;
        xi.push(st.xi);
        p1.push(st.p1);
        p2.push(st.p2);
        if r.is_some() {
            truncation = r;
            break;
        }
    }
    let n = xi.len();
    let d = DrivingPath {
        times: times[..n].to_vec(),
        xi,
        forces: vec![("p1".into(), p1), ("p2".into(), p2)],
        truncation,
    };
    Ok((d, st.monitor))
}

/// Intermediate SLE driver with force paths `p1`, `p2`.
pub fn drive_intermediate(cfg: &IntermediateConfig) -> Result<DrivingPath> {
    drive_intermediate_monitored(cfg).map(|(d, _)| d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_is_deterministic() {
        let a = drive_standard(2.0, 1.0, 100, 42).unwrap();
        let b = drive_standard(2.0, 1.0, 100, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.xi, drive_standard(2.0, 1.0, 100, 43).unwrap().xi);
        assert_eq!(a.xi[0], 0.0);
        assert_eq!(a.times[100], 1.0);
    }

    #[test]
    fn no_forces_and_infinity_match_standard() {
        let s = drive_standard(3.0, 1.0, 200, 5).unwrap();
        let cfg = SleConfig { kappa: 3.0, x0: 0.0, forces: vec![], horizon: 1.0, steps: 200, seed: 5 };
        assert_eq!(drive_kappa_rho(&cfg).unwrap().xi, s.xi);
        let cfg = SleConfig { forces: vec![Force { rho: -3.0, at: ForceSpec::Infinity }], ..cfg };
        assert_eq!(drive_kappa_rho(&cfg).unwrap().xi, s.xi);
    }

    #[test]
    fn intermediate_first_drift() {
        let hp = HypParams::new(2.0, 1.0).unwrap();
        let j = drift_j_regular(&hp, 1.0, 2.0).unwrap() - 1.0;
        assert!((j + 0.3).abs() < 1e-14);
        assert!((drift_j_regular(&hp, 0.0, 1.0).unwrap() - 5.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn gap_drift_examples() {
        let hp = HypParams::new(2.0, 1.0).unwrap();
        assert!((gap_log_drift(&hp, 1.0, 2.0).unwrap() + 0.9).abs() < 1e-14);
        let h0 = HypParams::new(2.0, 0.0).unwrap();
        assert!((gap_log_drift(&h0, 1.0, 2.0).unwrap() + 0.75).abs() < 1e-14);
        assert_eq!(gap_log_drift(&hp, 1.0, 1.0).unwrap(), 0.0);
        assert!(gap_log_drift(&hp, 2.0, 1.0).is_err());
    }

    #[test]
    fn validation_messages() {
        let cfg = SleConfig {
            kappa: 2.0,
            x0: 0.0,
            forces: vec![Force { rho: -1.5, at: ForceSpec::DegeneratePlus }],
            horizon: 1.0,
            steps: 10,
            seed: 0,
        };
        let e = drive_kappa_rho(&cfg).unwrap_err().to_string();
        assert!(e.contains("rho") && e.contains("(kappa-4)/2"), "{e}");
        let cfg = SleConfig { kappa: 5.0, forces: vec![], ..cfg };
        assert!(drive_kappa_rho(&cfg).unwrap_err().to_string().contains("(0,4)"));
        let ic = IntermediateConfig { kappa: 2.0, rho: 1.0, p1: Some(2.0), p2: 1.0, horizon: 1.0, steps: 4, seed: 0 };
        assert!(drive_intermediate(&ic).is_err());
    }

    #[test]
    fn bridge_sums_to_increment() {
        let mut nz = Noise::new(9);
        let b = nz.bridge(0.37, 0.01, 32);
        assert_eq!(b.len(), 32);
        assert!((b.iter().sum::<f64>() - 0.37).abs() < 1e-14);
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }
}
