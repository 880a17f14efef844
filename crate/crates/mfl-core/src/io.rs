//! File formats: full-precision CSV for paths and tables, JSON for reports,
//! SHA-256 checksums for driver audit trails.

use std::fmt::Write as _;
use std::fs;
use std::path::Path as FsPath;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::grid::Path;
use crate::multiscale::SlowFastTrajectory;

/// 17 significant digits round-trip any f64 exactly.
fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV with header `t,dim0,...,dimK`, one row per grid point.
pub fn path_to_csv(path: &Path<f64>) -> String {
    let mut out = String::new();
    out.push('t');
    for k in 0..path.dim() {
        let _ = write!(out, ",dim{k}");
    }
    out.push('\n');
    for i in 0..path.len() {
        out.push_str(&fmt_full(path.grid().point(i)));
        for v in path.value(i) {
            out.push(',');
            out.push_str(&fmt_full(*v));
        }
        out.push('\n');
    }
    out
}

/// Trajectory CSV with header `t,x0...,y0...`.
pub fn trajectory_to_csv(traj: &SlowFastTrajectory) -> String {
    let mut out = String::new();
    out.push('t');
    for k in 0..traj.slow.dim() {
        let _ = write!(out, ",x{k}");
    }
    for k in 0..traj.fast.dim() {
        let _ = write!(out, ",y{k}");
    }
    out.push('\n');
    for i in 0..traj.slow.len() {
        out.push_str(&fmt_full(traj.slow.grid().point(i)));
        for v in traj.slow.value(i) {
            out.push(',');
            out.push_str(&fmt_full(*v));
        }
        for v in traj.fast.value(i) {
            out.push(',');
            out.push_str(&fmt_full(*v));
        }
        out.push('\n');
    }
    out
}

/// SHA-256 of the raw little-endian bytes of the path values.
pub fn path_checksum(path: &Path<f64>) -> String {
    let mut h = Sha256::new();
    for v in path.raw() {
        h.update(v.to_le_bytes());
    }
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Pretty JSON plus trailing newline (stable across runs for fixed input).
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(file: &FsPath, value: &T) -> Result<()> {
    fs::write(file, to_json_string(value)?)?;
    Ok(())
}

pub fn write_string(file: &FsPath, content: &str) -> Result<()> {
    fs::write(file, content)?;
    Ok(())
}

/// One row of the generic report table
/// (`eps,delta,stat,value,stderr,threshold,verdict`).
#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub stat: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub threshold: Option<f64>,
    pub verdict: Option<bool>,
}

pub fn table_to_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("eps,delta,stat,value,stderr,threshold,verdict\n");
    let opt = |v: Option<f64>| v.map(fmt_full).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            opt(r.eps),
            opt(r.delta),
            r.stat,
            fmt_full(r.value),
            opt(r.stderr),
            opt(r.threshold),
            r.verdict.map(|v| if v { "PASS" } else { "FAIL" }.to_string()).unwrap_or_default()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;

    #[test]
    fn csv_roundtrips_full_precision() {
        let grid = TimeGrid::new(1.0f64, 2).unwrap();
        let p = Path::new(grid, 1, vec![0.0, 0.1 + 0.2, std::f64::consts::PI]).unwrap();
        let csv = path_to_csv(&p);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,dim0");
        let row: Vec<&str> = lines.nth(1).unwrap().split(',').collect();
        assert_eq!(row[1].parse::<f64>().unwrap(), 0.1 + 0.2);
        let row: Vec<&str> = csv.lines().nth(3).unwrap().split(',').collect();
        assert_eq!(row[1].parse::<f64>().unwrap(), std::f64::consts::PI);
    }

    #[test]
    fn checksum_is_stable_and_sensitive() {
        let grid = TimeGrid::new(1.0f64, 2).unwrap();
        let p = Path::new(grid, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let q = Path::new(grid, 1, vec![0.0, 1.0, 2.0 + 1e-15]).unwrap();
        assert_eq!(path_checksum(&p), path_checksum(&p));
        assert_ne!(path_checksum(&p), path_checksum(&q));
        assert_eq!(path_checksum(&p).len(), 64);
    }

    #[test]
    fn table_csv_shape() {
        let rows = vec![TableRow {
            eps: Some(0.1),
            delta: None,
            stat: "ks".into(),
            value: 0.02,
            stderr: None,
            threshold: Some(0.05),
            verdict: Some(true),
        }];
        let csv = table_to_csv(&rows);
        assert!(csv.starts_with("eps,delta,stat,value,stderr,threshold,verdict\n"));
        assert!(csv.contains("PASS"));
    }
}
