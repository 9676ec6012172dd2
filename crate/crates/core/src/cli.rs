//! Command-line front end: argument parsing, config files, artifact writing and exit codes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::coupling::{martingale_mc_test, HullPolygon, MartingaleConfig, MartingaleReport, PairParams};
use crate::error::{Error, Result};
use crate::io::{self, fmt_num, RunManifest, Table};
use crate::loewner::{trace_from_driver, DrivingPath};
use crate::reversibility::{self as rev, CrossingSample, GridSpec, Process, ReversalOutcome, Side};
use crate::sde::{drive_intermediate, drive_kappa_rho, drive_standard, Force, ForceSpec, IntermediateConfig, SleConfig};
use crate::special::{self, HypParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_INVALID_TEST: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "sle-lab", version, about = "Loewner chains, intermediate SLE and reversibility checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Optional `key = value` file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate one driving function and its trace.
    Simulate(SimulateArgs),
    /// Tabulate the hypergeometric kernel functions.
    Hyp(HypArgs),
    /// Monte Carlo test of the two-curve coupling martingale.
    Martingale(MartingaleArgs),
    /// Two-sample reversibility test on crossing angles.
    Reversibility(ReversibilityArgs),
    /// Median maximal modulus at growing horizons.
    Transience(TransienceArgs),
    /// Rerun a manifest and compare output hashes.
    Replay(ReplayArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessKind {
    Standard,
    #[value(name = "kappa_rho")]
    KappaRho,
    Intermediate,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "standard")]
    pub process: ProcessKind,
    #[arg(long)]
    pub kappa: f64,
    /// Weight of the intermediate process.
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    /// Force points `RHO@LOC`, comma separated; LOC is a number, `0+`, `0-` or `inf`.
    #[arg(long, default_value = "")]
    pub forces: String,
    #[arg(long, default_value_t = 0.0)]
    pub x0: f64,
    /// First force point of the intermediate process (number or `0+`).
    #[arg(long, default_value = "0+")]
    pub p1: String,
    #[arg(long, default_value_t = 1.0)]
    pub p2: f64,
    /// Capacity horizon.
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// Number of steps.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct HypArgs {
    #[arg(long)]
    pub kappa: f64,
    #[arg(long)]
    pub rho: f64,
    /// Comma-separated points; empty means 0, 0.01, ..., 0.99.
    #[arg(long, default_value = "")]
    pub x: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct MartingaleArgs {
    #[arg(long, default_value_t = 3.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.0)]
    pub x1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub x2: f64,
    /// Polygon file around x1 (default: half-disk of `--radius`).
    #[arg(long)]
    pub polygon1: Option<PathBuf>,
    #[arg(long)]
    pub polygon2: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub radius: f64,
    #[arg(long, default_value_t = 32)]
    pub segments: usize,
    /// Deterministic cap on t2.
    #[arg(long, default_value_t = 0.0025)]
    pub t2_bar: f64,
    /// Cap on t1 (default: half the squared polygon radius).
    #[arg(long)]
    pub t1_max: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub cells: usize,
    #[arg(long, default_value_t = 8)]
    pub substeps: usize,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReversalTest {
    Degenerate,
    Generic,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideArg {
    Plus,
    Minus,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Side {
        match s {
            SideArg::Plus => Side::Plus,
            SideArg::Minus => Side::Minus,
        }
    }
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct ReversibilityArgs {
    #[arg(long, value_enum, default_value = "degenerate")]
    pub test: ReversalTest,
    #[arg(long, default_value_t = 2.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long, value_enum, default_value = "plus")]
    pub side: SideArg,
    /// Last-crossing radius of the degenerate test.
    #[arg(long, default_value_t = 1.0)]
    pub r0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b0: f64,
    /// First-crossing radius of the generic test.
    #[arg(long, default_value_t = 0.5)]
    pub r: f64,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransienceProcess {
    Degenerate,
    #[value(name = "degenerate_intermediate")]
    DegenerateIntermediate,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct TransienceArgs {
    #[arg(long, value_enum, default_value = "degenerate")]
    pub process: TransienceProcess,
    #[arg(long, default_value_t = 2.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, value_enum, default_value = "plus")]
    pub side: SideArg,
    #[arg(long, default_value_t = 1.0)]
    pub p2: f64,
    /// Base horizon T; medians are reported at T, 2T and 4T.
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Smallest step; later steps are `rel * t`.
    #[arg(long, default_value_t = 1e-5)]
    pub dt_min: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub rel: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Output directory of the rerun (default: `replay` next to the manifest).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

/// Keys never stored in manifests.
const RUN_KEYS: [&str; 3] = ["out", "threads", "config"];

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parameter(_) | Error::Domain(_) | Error::Geometry(_) => EXIT_VALIDATION,
        Error::Numerical(_) => EXIT_NUMERICAL,
        Error::InvalidTest(_) => EXIT_INVALID_TEST,
        Error::Io(_) => EXIT_FAILURE,
    }
}

/// Appends `--key value` for every config entry whose flag is absent from `argv`.
pub fn expand_config(argv: &[String]) -> Result<Vec<String>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(argv.to_vec()) };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Parameter(format!("config {path}: {e}")))?;
    let mut out = argv.to_vec();
    for (k, v) in io::parse_config(&text)? {
        let flag = format!("--{k}");
        if k == "config" || argv.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        out.push(flag);
        out.push(v);
    }
    Ok(out)
}

/// Every subcommand parameter except run plumbing, as raw strings.
fn parameter_map(name: &str, m: &clap::ArgMatches) -> BTreeMap<String, String> {
    let cmd = Cli::command();
    let args: Vec<String> = cmd
        .find_subcommand(name)
        .map(|c| c.get_arguments().map(|a| a.get_id().to_string()).collect())
        .unwrap_or_default();
    let mut out = BTreeMap::new();
    for key in args.iter().map(String::as_str) {
        if RUN_KEYS.contains(&key) || m.value_source(key).is_none() {
            continue;
        }
        if let Ok(Some(vals)) = m.try_get_raw(key) {
            let v: Vec<String> = vals.map(|s| s.to_string_lossy().into_owned()).collect();
            out.insert(key.replace('_', "-"), v.join(","));
        }
    }
    out
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run(argv: &[String]) -> i32 {
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_VALIDATION;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let params = parameter_map(name, sub);
    match dispatch(cli.command, name, params) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(pool.install(f))
}

fn dispatch(cmd: Command, name: &str, params: BTreeMap<String, String>) -> Result<i32> {
    match cmd {
        Command::Simulate(a) => {
            let c = a.common.clone();
            with_threads(c.threads, || cmd_simulate(&a, RunManifest::new(name, params, c.seed, &c.out)))?
        }
        Command::Hyp(a) => cmd_hyp(&a),
        Command::Martingale(a) => {
            let c = a.common.clone();
            with_threads(c.threads, || cmd_martingale(&a, RunManifest::new(name, params, c.seed, &c.out)))?
        }
        Command::Reversibility(a) => {
            let c = a.common.clone();
            with_threads(c.threads, || cmd_reversibility(&a, RunManifest::new(name, params, c.seed, &c.out)))?
        }
        Command::Transience(a) => {
            let c = a.common.clone();
            with_threads(c.threads, || cmd_transience(&a, RunManifest::new(name, params, c.seed, &c.out)))?
        }
        Command::Replay(a) => cmd_replay(&a),
    }
}

fn parse_location(s: &str) -> Result<ForceSpec> {
    Ok(match s.trim() {
        "0+" => ForceSpec::DegeneratePlus,
        "0-" => ForceSpec::DegenerateMinus,
        "inf" | "infinity" => ForceSpec::Infinity,
        x => ForceSpec::Finite(x.parse().map_err(|_| Error::Parameter(format!("bad force location {x:?}")))?),
    })
}

/// Parses `RHO@LOC[,RHO@LOC...]`.
pub fn parse_forces(s: &str) -> Result<Vec<Force>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (r, l) = p.split_once('@').ok_or_else(|| Error::Parameter(format!("force {p:?} is not RHO@LOC")))?;
            let rho = r.trim().parse().map_err(|_| Error::Parameter(format!("bad force weight {r:?}")))?;
            Ok(Force { rho, at: parse_location(l)? })
        })
        .collect()
}

fn driver_table(d: &DrivingPath) -> Table {
    let mut header = vec!["t".to_string(), "xi".to_string()];
    header.extend(d.forces.iter().map(|(n, _)| n.clone()));
    let mut t = Table { header, rows: Vec::new() };
    for i in 0..d.len() {
        let mut row = vec![d.times[i], d.xi[i]];
        row.extend(d.forces.iter().map(|(_, v)| v[i]));
        t.push_nums(&row);
    }
    t
}

pub fn cmd_simulate(a: &SimulateArgs, mut m: RunManifest) -> Result<i32> {
    let seed = m.master_seed;
    if !(a.kappa > 0.0 && a.kappa < 4.0) {
        return Err(Error::Parameter(format!("kappa = {} must lie in (0,4)", a.kappa)));
    }
    let driver = match a.process {
        ProcessKind::Standard => drive_standard(a.kappa, a.t, a.n, seed)?,
        ProcessKind::KappaRho => {
            drive_kappa_rho(&SleConfig { kappa: a.kappa, x0: a.x0, forces: parse_forces(&a.forces)?, horizon: a.t, steps: a.n, seed })?
        }
        ProcessKind::Intermediate => {
            let p1 = match parse_location(&a.p1)? {
                ForceSpec::DegeneratePlus => None,
                ForceSpec::Finite(x) => Some(x),
                _ => return Err(Error::Parameter("p1 must be a number or 0+".into())),
            };
            drive_intermediate(&IntermediateConfig { kappa: a.kappa, rho: a.rho, p1, p2: a.p2, horizon: a.t, steps: a.n, seed })?
        }
    };
    let trace = trace_from_driver(&driver)?;
    m.write_table("driver.csv", &driver_table(&driver))?;
    let mut t = Table::new(&["t", "re", "im"]);
    for (s, z) in trace.times.iter().zip(&trace.points) {
        t.push_nums(&[*s, z.re, z.im]);
    }
    m.write_table("trace.csv", &t)?;
    if let Some(r) = &driver.truncation {
        eprintln!("warning: path truncated: {r}");
    }
    println!("{} steps, tip {:.6}{:+.6}i", driver.len() - 1, trace.points.last().unwrap().re, trace.points.last().unwrap().im);
    m.finish()?;
    Ok(EXIT_OK)
}

/// Rows of the kernel table at `xs`.
pub fn hyp_table(hp: &HypParams, xs: &[f64]) -> Result<Table> {
    let mut t = Table::new(&["x", "U0", "f0", "g0", "V0", "f0_bound_ok", "g0_bound_ok"]);
    for &x in xs {
        let (u, f, g) = (special::u0(hp, x)?, special::f0(hp, x)?, special::g0(hp, x)?);
        let fb = f >= hp.b / (1.0 - x) - 1e-12 * f.abs().max(1.0);
        let gb = g >= hp.rho + (hp.kappa - 4.0) * x / (1.0 - x) - 1e-12 * g.abs().max(1.0);
        t.push(vec![fmt_num(x), fmt_num(u), fmt_num(f), fmt_num(g), special::v0(hp, x).map(fmt_num).unwrap_or_default(), fb.to_string(), gb.to_string()]);
    }
    Ok(t)
}

pub fn cmd_hyp(a: &HypArgs) -> Result<i32> {
    let hp = HypParams::new(a.kappa, a.rho)?;
    let xs: Vec<f64> = if a.x.trim().is_empty() {
        (0..100).map(|i| i as f64 / 100.0).collect()
    } else {
        a.x.split(',').map(|s| s.trim().parse().map_err(|_| Error::Parameter(format!("bad x value {s:?}")))).collect::<Result<_>>()?
    };
    let bytes = hyp_table(&hp, &xs)?.to_bytes()?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(EXIT_OK)
}

fn read_polygon(p: &Path) -> Result<HullPolygon> {
    let text = std::fs::read_to_string(p).map_err(|e| Error::Parameter(format!("polygon {}: {e}", p.display())))?;
    io::parse_polygon(&text)
}

pub fn martingale_config(a: &MartingaleArgs, seed: u64) -> Result<MartingaleConfig> {
    let params = PairParams { kappa: a.kappa, rho: a.rho, x1: a.x1, x2: a.x2 };
    let poly = |f: &Option<PathBuf>, x: f64| match f {
        Some(p) => read_polygon(p),
        None => HullPolygon::half_disk(x, a.radius, a.segments),
    };
    let cfg = MartingaleConfig {
        params,
        polygons: [poly(&a.polygon1, a.x1)?, poly(&a.polygon2, a.x2)?],
        t1_max: a.t1_max,
        t2_bar: a.t2_bar,
        cells: a.cells,
        substeps: a.substeps,
        n_paths: a.n,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn martingale_tables(r: &MartingaleReport) -> (Table, Table) {
    let mut g = Table::new(&["t", "mean_m", "stderr"]);
    for i in 0..r.times.len() {
        g.push_nums(&[r.times[i], r.mean[i], r.stderr[i]]);
    }
    let mut p = Table::new(&["path_id", "terminal_m", "exit_time_1", "exit_time_2", "m_min", "m_max"]);
    for o in &r.outcomes {
        let e = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
        p.push(vec![o.index.to_string(), fmt_num(o.terminal), e(o.exit_time[0]), e(o.exit_time[1]), fmt_num(o.m_min), fmt_num(o.m_max)]);
    }
    (g, p)
}

pub fn martingale_json(r: &MartingaleReport) -> serde_json::Value {
    json!({
        "test": "martingale",
        "n_paths": r.n_paths,
        "valid": r.valid,
        "terminal_mean": r.terminal_mean,
        "terminal_stderr": r.terminal_stderr,
        "max_z": r.max_z(),
        "within_3_stderr": r.within(3.0),
        "max_stderr": r.stderr.iter().copied().fold(0.0, f64::max),
        "m_min": r.m_min,
        "m_max": r.m_max,
        "max_factorization_err": r.max_factorization_err,
        "max_boundary_err": r.max_boundary_err,
        "ordering_violations": r.ordering_violations,
        "l_violations": r.l_violations,
        "cells": r.cells,
        "increment_lag1_corr": r.increment_lag1_corr,
        "increment_lag1_stderr": r.increment_lag1_stderr,
        "q_slope": r.q_slope,
        "q_slope_stderr": r.q_slope_stderr,
        "failures": r.failures.iter().map(|(i, s)| json!({"path_id": i, "reason": s})).collect::<Vec<_>>(),
        "low_effective_n": r.low_effective_n,
    })
}

pub fn cmd_martingale(a: &MartingaleArgs, mut m: RunManifest) -> Result<i32> {
    let cfg = martingale_config(a, m.master_seed)?;
    let r = martingale_mc_test(&cfg)?;
    let (g, p) = martingale_tables(&r);
    m.write_table("mean_m.csv", &g)?;
    m.write_table("pairs.csv", &p)?;
    m.write("polygon1.txt", io::format_polygon(&cfg.polygons[0]).as_bytes())?;
    m.write("polygon2.txt", io::format_polygon(&cfg.polygons[1]).as_bytes())?;
    m.write_json("report.json", &martingale_json(&r))?;
    m.write("mean_m.svg", io::svg_mean_band("mean of M with 3 stderr band", &r.times, &r.mean, &r.stderr, 3.0, 1.0).as_bytes())?;
    println!(
        "valid {}/{}  terminal mean {:.6} +- {:.6}  max |z| {:.2}",
        r.valid, r.n_paths, r.terminal_mean, r.terminal_stderr, r.max_z()
    );
    m.finish()?;
    Ok(if r.low_effective_n { EXIT_INVALID_TEST } else { EXIT_OK })
}

pub fn samples_table(o: &ReversalOutcome) -> Table {
    let mut t = Table::new(&["ensemble", "path_id", "radius", "kind", "angle"]);
    let mut add = |e: &str, s: &[CrossingSample]| {
        for x in s {
            t.push(vec![e.into(), x.path_id.to_string(), fmt_num(x.radius), x.kind.name().into(), fmt_num(x.angle)]);
        }
    };
    add("A", &o.a.samples);
    add("B", &o.b.samples);
    t
}

pub fn reversal_json(test: &str, params: serde_json::Value, o: &ReversalOutcome, seed: u64) -> serde_json::Value {
    json!({
        "test": test,
        "params": params,
        "n1": o.ks.n1,
        "n2": o.ks.n2,
        "ks_statistic": o.ks.statistic,
        "p_value": o.ks.p_value,
        "discarded": o.ks.discarded,
        "valid": o.ks.valid,
        "failures": [o.a.failures.len(), o.b.failures.len()],
        "seeds": {"master": seed, "ensemble_a_offset": 0, "ensemble_b_offset": rev::SECOND_ENSEMBLE_OFFSET},
    })
}

pub fn cmd_reversibility(a: &ReversibilityArgs, mut m: RunManifest) -> Result<i32> {
    let seed = m.master_seed;
    let (name, params, o) = match a.test {
        ReversalTest::Degenerate => (
            "reversal_degenerate",
            json!({"kappa": a.kappa, "rho": a.rho, "side": format!("{:?}", a.side).to_lowercase(), "r0": a.r0, "n_paths": a.n}),
            rev::test_reversal_degenerate(a.kappa, a.rho, a.side.into(), a.n, a.r0, seed)?,
        ),
        ReversalTest::Generic => (
            "reversal_generic",
            json!({"kappa": a.kappa, "rho": a.rho, "b0": a.b0, "r": a.r, "n_paths": a.n}),
            rev::test_reversal_generic(a.kappa, a.rho, a.b0, a.n, a.r, seed)?,
        ),
    };
    m.write_table("samples.csv", &samples_table(&o))?;
    m.write_json("report.json", &reversal_json(name, params, &o, seed))?;
    let xa: Vec<f64> = o.a.samples.iter().map(|s| s.angle).collect();
    let xb: Vec<f64> = o.b.samples.iter().map(|s| s.angle).collect();
    m.write("cdf.svg", io::svg_cdf_overlay(name, "crossing angle", &[("A: first crossing", &xa), ("B: last crossing", &xb)]).as_bytes())?;
    println!("{name}: n1 {} n2 {} D {:.4} p {:.4}", o.ks.n1, o.ks.n2, o.ks.statistic, o.ks.p_value);
    m.finish()?;
    Ok(if o.ks.valid { EXIT_OK } else { EXIT_INVALID_TEST })
}

pub fn cmd_transience(a: &TransienceArgs, mut m: RunManifest) -> Result<i32> {
    let process = match a.process {
        TransienceProcess::Degenerate => Process::Degenerate { kappa: a.kappa, rho: a.rho, side: a.side.into() },
        TransienceProcess::DegenerateIntermediate => Process::DegenerateIntermediate { kappa: a.kappa, rho: a.rho, p2: a.p2 },
    };
    if !(a.t > 0.0 && a.dt_min > 0.0 && a.rel >= 0.0) {
        return Err(Error::Parameter("need t > 0, dt-min > 0 and rel >= 0".into()));
    }
    let grid = GridSpec { dt_min: a.dt_min, rel: a.rel, t_switch: f64::INFINITY, rel_far: a.rel, split: 1 };
    let r = rev::transience_report(&process, &grid, &[a.t, 2.0 * a.t, 4.0 * a.t], a.n, m.master_seed)?;
    let mut t = Table::new(&["horizon", "median_max_modulus"]);
    for (h, md) in r.horizons.iter().zip(&r.medians) {
        t.push_nums(&[*h, *md]);
    }
    m.write_table("medians.csv", &t)?;
    m.write_json(
        "report.json",
        &json!({
            "test": "transience",
            "horizons": r.horizons,
            "medians": r.medians,
            "ratio_4t_t": r.ratio(),
            "strictly_increasing": r.strictly_increasing(),
            "n_paths": r.n_paths,
            "failures": r.failures.len(),
        }),
    )?;
    println!("medians {:?}  ratio {:.4}", r.medians, r.ratio());
    m.finish()?;
    Ok(if r.failures.len() * 5 > r.n_paths { EXIT_INVALID_TEST } else { EXIT_OK })
}

/// Rebuilds the argument vector recorded in a manifest.
pub fn replay_argv(rec: &io::ManifestRecord, out: &Path, threads: usize) -> Vec<String> {
    let mut argv = vec!["sle-lab".to_string(), rec.command.clone()];
    for (k, v) in &rec.params {
        argv.push(format!("--{k}"));
        argv.push(v.clone());
    }
    argv.extend(["--out".into(), out.display().to_string(), "--threads".into(), threads.to_string()]);
    argv
}

pub fn cmd_replay(a: &ReplayArgs) -> Result<i32> {
    let rec = io::read_manifest(&a.manifest)?;
    let out = a.out.clone().unwrap_or_else(|| a.manifest.parent().unwrap_or(Path::new(".")).join("replay"));
    let code = run(&replay_argv(&rec, &out, a.threads));
    if code != EXIT_OK && code != EXIT_INVALID_TEST {
        return Ok(code);
    }
    let again = io::read_manifest(&out.join("manifest.json"))?;
    let mut mismatched = 0;
    for (name, hash) in rec.files.iter().filter(|(n, _)| n.ends_with(".csv")) {
        let same = again.files.get(name) == Some(hash);
        println!("{name}: {}", if same { "identical" } else { "DIFFERENT" });
        mismatched += usize::from(!same);
    }
    Ok(if mismatched == 0 { EXIT_OK } else { EXIT_FAILURE })
}
