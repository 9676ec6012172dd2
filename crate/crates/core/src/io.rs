//! Artifact output: CSV tables, JSON reports, run manifests and SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::coupling::HullPolygon;
use crate::error::{Error, Result};

/// Formats a float with 17 significant digits (lossless for `f64`).
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// An in-memory CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_nums(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&x| fmt_num(x)).collect());
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(&self.header).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.to_string()))
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Collects the outputs of one run and writes them with a manifest.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub params: BTreeMap<String, String>,
    pub master_seed: u64,
    pub started: String,
    pub files: Vec<(String, String)>,
    dir: PathBuf,
}

impl RunManifest {
    pub fn new(command: &str, params: BTreeMap<String, String>, master_seed: u64, dir: &Path) -> Self {
        RunManifest { command: command.into(), params, master_seed, started: timestamp(), files: Vec::new(), dir: dir.to_path_buf() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes one output file and records its hash.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        atomic_write(&path, bytes)?;
        self.files.retain(|(n, _)| n != name);
        self.files.push((name.to_string(), sha256_hex(bytes)));
        Ok(path)
    }

    pub fn write_table(&mut self, name: &str, t: &Table) -> Result<PathBuf> {
        self.write(name, &t.to_bytes()?)
    }

    pub fn write_json(&mut self, name: &str, v: &Value) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "command": self.command,
            "params": self.params,
            "master_seed": self.master_seed,
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "started": self.started,
            "finished": timestamp(),
            "files": self.files.iter().map(|(n, h)| json!({"name": n, "sha256": h})).collect::<Vec<_>>(),
        })
    }

    /// Writes `manifest.json` last.
    pub fn finish(self) -> Result<PathBuf> {
        let path = self.dir.join("manifest.json");
        let mut s = serde_json::to_string_pretty(&self.to_json()).map_err(|e| Error::Io(e.to_string()))?;
        s.push('\n');
        atomic_write(&path, s.as_bytes())?;
        Ok(path)
    }
}

/// Command, parameters and file hashes read back from a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub command: String,
    pub params: BTreeMap<String, String>,
    pub files: BTreeMap<String, String>,
}

pub fn read_manifest(path: &Path) -> Result<ManifestRecord> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))?;
    let bad = || Error::Parameter(format!("{}: not a run manifest", path.display()));
    let command = v["command"].as_str().ok_or_else(bad)?.to_string();
    let params = v["params"]
        .as_object()
        .ok_or_else(bad)?
        .iter()
        .map(|(k, x)| Ok((k.clone(), x.as_str().ok_or_else(bad)?.to_string())))
        .collect::<Result<_>>()?;
    let files = v["files"]
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|f| Ok((f["name"].as_str().ok_or_else(bad)?.to_string(), f["sha256"].as_str().ok_or_else(bad)?.to_string())))
        .collect::<Result<_>>()?;
    Ok(ManifestRecord { command, params, files })
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parameter(format!("config line {}: expected key = value", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parameter(format!("config line {}: empty key", i + 1)));
        }
        out.insert(k.replace('_', "-"), v.trim().to_string());
    }
    Ok(out)
}

/// Parses a polygon file with one `x y` vertex per line.
pub fn parse_polygon(text: &str) -> Result<HullPolygon> {
    let mut v = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let xs: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parameter(format!("polygon line {}: bad number {s:?}", i + 1)));
        if xs.len() != 2 {
            return Err(Error::Parameter(format!("polygon line {}: expected two numbers", i + 1)));
        }
        v.push(Complex64::new(num(xs[0])?, num(xs[1])?));
    }
    HullPolygon::new(v)
}

pub fn format_polygon(p: &HullPolygon) -> String {
    p.vertices.iter().map(|z| format!("{} {}\n", fmt_num(z.re), fmt_num(z.im))).collect()
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let (x1, y1) = (if x1 > x0 { x1 } else { x0 + 1.0 }, if y1 > y0 { y1 } else { y0 + 1.0 });
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }

    fn axes(&self, s: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
        let _ = writeln!(s, r#"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="black"/>"#, H - PAD, W - PAD);
        for i in 0..=4 {
            let fx = self.x0 + (self.x1 - self.x0) * i as f64 / 4.0;
            let fy = self.y0 + (self.y1 - self.y0) * i as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{fx:.3}</text>"#, self.px(fx), H - PAD + 16.0);
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{fy:.3}</text>"#, PAD - 4.0, self.py(fy) + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, escape(xlabel));
        let _ = writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#, H / 2.0, H / 2.0, escape(ylabel));
    }

    fn polyline(&self, s: &mut String, pts: &[(f64, f64)], color: &str, dash: bool) {
        let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y))).collect();
        let extra = if dash { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{extra}/>"#, d.join(" "));
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Empirical CDFs of several samples on common axes.
pub fn svg_cdf_overlay(title: &str, xlabel: &str, series: &[(&str, &[f64])]) -> String {
    let all = series.iter().flat_map(|(_, v)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let f = Frame::new(lo, hi, 0.0, 1.0);
    let mut s = String::new();
    f.axes(&mut s, title, xlabel, "empirical CDF");
    for (k, (name, v)) in series.iter().enumerate() {
        let mut x = v.to_vec();
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = x.len() as f64;
        let mut pts = vec![(lo, 0.0)];
        for (i, &xi) in x.iter().enumerate() {
            pts.push((xi, i as f64 / n));
            pts.push((xi, (i + 1) as f64 / n));
        }
        pts.push((hi, 1.0));
        let c = COLORS[k % COLORS.len()];
        f.polyline(&mut s, &pts, c, k % 2 == 1);
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{c}">{}</text>"#, PAD + 10.0, PAD + 16.0 * (k + 1) as f64, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Mean curve with a `k * stderr` band and a reference level.
pub fn svg_mean_band(title: &str, t: &[f64], mean: &[f64], stderr: &[f64], k: f64, reference: f64) -> String {
    let lo = mean.iter().zip(stderr).map(|(m, e)| m - k * e).fold(reference, f64::min);
    let hi = mean.iter().zip(stderr).map(|(m, e)| m + k * e).fold(reference, f64::max);
    let pad = 0.1 * (hi - lo).max(1e-6);
    let (t0, t1) = (t.first().copied().unwrap_or(0.0), t.last().copied().unwrap_or(1.0));
    let f = Frame::new(t0, t1, lo - pad, hi + pad);
    let mut s = String::new();
    f.axes(&mut s, title, "time", "mean M");
    let mut band: Vec<String> = t.iter().zip(mean).zip(stderr).map(|((&x, m), e)| format!("{:.2},{:.2}", f.px(x), f.py(m + k * e))).collect();
    band.extend(t.iter().zip(mean).zip(stderr).rev().map(|((&x, m), e)| format!("{:.2},{:.2}", f.px(x), f.py(m - k * e))));
    let _ = writeln!(s, r##"<polygon points="{}" fill="#1f77b4" fill-opacity="0.25" stroke="none"/>"##, band.join(" "));
    f.polyline(&mut s, &[(t0, reference), (t1, reference)], "black", true);
    let pts: Vec<(f64, f64)> = t.iter().copied().zip(mean.iter().copied()).collect();
    f.polyline(&mut s, &pts, COLORS[0], false);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02e23, 0.0, std::f64::consts::PI] {
            assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn config_and_polygon_parsing() {
        let c = parse_config("# run\nkappa = 3\n n_paths=10 # paths\n\n").unwrap();
        assert_eq!(c["kappa"], "3");
        assert_eq!(c["n-paths"], "10");
        assert!(parse_config("kappa 3").is_err());
        let p = parse_polygon("-1 0\n1 0\n0 1\n").unwrap();
        assert_eq!(p.vertices.len(), 3);
        assert_eq!(parse_polygon(&format_polygon(&p)).unwrap(), p);
        assert!(parse_polygon("0 0\n1 x\n").is_err());
    }

    #[test]
    fn manifest_records_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("demo", BTreeMap::from([("kappa".into(), "2".into())]), 7, dir.path());
        let mut t = Table::new(&["a", "b"]);
        t.push_nums(&[1.0, 0.5]);
        m.write_table("x.csv", &t).unwrap();
        let path = m.finish().unwrap();
        let r = read_manifest(&path).unwrap();
        assert_eq!(r.command, "demo");
        let bytes = std::fs::read(dir.path().join("x.csv")).unwrap();
        assert_eq!(r.files["x.csv"], sha256_hex(&bytes));
        assert!(String::from_utf8(bytes).unwrap().starts_with("a,b\n1.0000000000000000e0,"));
    }

    #[test]
    fn svg_outputs_are_well_formed() {
        let s = svg_cdf_overlay("t", "angle", &[("A", &[1.0, 2.0]), ("B", &[1.5])]);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        let s = svg_mean_band("m", &[0.0, 1.0], &[1.0, 1.01], &[0.01, 0.02], 3.0, 1.0);
        assert!(s.contains("<polygon"));
    }
}
