//! Result documents, run directories and CSV tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use relfermi_core::experiments::SweepRecord;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Default output root when `--out` is absent.
pub const OUT_ENV: &str = "RELFERMI_OUT";

pub const SWEEP_COLUMNS: [&str; 8] =
    ["a", "D_minus_a", "E", "E_plus_2m", "eps", "mu1", "mu2", "converged"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub version: String,
    pub profile: String,
}

impl Environment {
    pub fn current() -> Self {
        Environment {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            profile: if cfg!(debug_assertions) { "debug" } else { "release" }.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub kind: String,
    pub inputs: RunConfig,
    pub outputs: Value,
    pub environment: Environment,
    pub wall_seconds: f64,
}

pub fn out_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Fresh directory `<root>/<kind>-<k>` for the smallest unused `k`.
pub fn create_run_dir(root: &Path, kind: &str) -> std::io::Result<PathBuf> {
    fs::create_dir_all(root)?;
    for k in 1.. {
        let dir = root.join(format!("{kind}-{k:04}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!("unbounded search")
}

/// Writes a file that must not exist yet.
pub fn write_new(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut f = fs::OpenOptions::new().write(true).create_new(true).open(path)?;
    f.write_all(bytes)
}

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sweep_csv(records: &[SweepRecord]) -> csv::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_COLUMNS)?;
    for r in records {
        w.write_record([
            float(r.a),
            float(r.d_minus_a),
            float(r.energy),
            float(r.energy_plus_2m),
            float(r.eps),
            float(r.mu1),
            float(r.mu2),
            r.converged.to_string(),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

/// Records from a sweep CSV. Columns absent from the file take neutral
/// values: records count as resolved.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRecord>, String> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = rd.headers().map_err(|e| e.to_string())?.clone();
    if headers.iter().collect::<Vec<_>>() != SWEEP_COLUMNS {
        return Err(format!("{}: expected columns {}", path.display(), SWEEP_COLUMNS.join(",")));
    }
    rd.records()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| e.to_string())?;
            let f = |j: usize| -> Result<f64, String> {
                row[j].parse().map_err(|e| format!("row {}: column {}: {e}", i + 2, SWEEP_COLUMNS[j]))
            };
            let converged = row[7]
                .parse::<bool>()
                .map_err(|e| format!("row {}: converged: {e}", i + 2))?;
            let a = f(0)?;
            let d_minus_a = f(1)?;
            Ok(SweepRecord {
                ratio: a / (a + d_minus_a),
                a,
                d_minus_a,
                energy: f(2)?,
                energy_plus_2m: f(3)?,
                eps: f(4)?,
                mu1: f(5)?,
                mu2: f(6)?,
                grad_norm: f64::NAN,
                iterations: 0,
                converged,
                n: 0,
                box_length: f64::NAN,
                resolution: f64::NAN,
                resolved: true,
                lower_bound_held: true,
                profile_change: None,
            })
        })
        .collect()
}
