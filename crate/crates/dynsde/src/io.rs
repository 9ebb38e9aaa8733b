//! On-disk formats.
//!
//! - `samples.bin`: magic `DSDM`, `u32` version, `u64` n, `u64` d, then
//!   `n * d` `f64` values row-major; all little-endian.
//! - CSV tables with floats printed as `{:.16e}` (17 significant digits).
//! - NDJSON step traces, one object `{sample_id, t, h, E, accepted}` per line.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use dynsde_core::StepRecord;

use crate::error::CliError;

pub const MAGIC: [u8; 4] = *b"DSDM";
pub const VERSION: u32 = 1;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_samples(path: &Path, n: usize, d: usize, data: &[f64]) -> Result<(), CliError> {
    assert_eq!(data.len(), n * d);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&(d as u64).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Returns `(n, d, data)`.
pub fn read_samples(path: &Path) -> Result<(usize, usize, Vec<f64>), CliError> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |m: &str| CliError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string()));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(bad("not a sample matrix (bad magic)"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != VERSION {
        return Err(bad("unsupported sample matrix version"));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let d = u64::from_le_bytes(b8) as usize;
    let len = n.checked_mul(d).ok_or_else(|| bad("matrix size overflows"))?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    if r.read(&mut b8)? != 0 {
        return Err(bad("trailing bytes after sample matrix"));
    }
    Ok((n, d, data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub sample_id: u64,
    pub t: f64,
    pub h: f64,
    #[serde(rename = "E")]
    pub error: f64,
    pub accepted: bool,
}

impl From<&StepRecord> for TraceLine {
    fn from(s: &StepRecord) -> Self {
        Self {
            sample_id: s.sample_id,
            t: s.t,
            h: s.h,
            error: s.error,
            accepted: s.accepted,
        }
    }
}

pub fn write_trace(path: &Path, steps: &[StepRecord]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in steps {
        serde_json::to_writer(&mut w, &TraceLine::from(s))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Summary of one `solve` run, written as `report.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    pub seed: u64,
    pub n_samples: usize,
    pub dim: usize,
    pub t_end: f64,
    /// Mean loop NFE per sample; denoising is reported separately.
    pub nfe_mean: f64,
    pub nfe_total: u64,
    pub denoise_nfe_total: u64,
    pub steps_accepted: u64,
    pub steps_rejected: u64,
    pub w2: f64,
    pub sliced_w2: f64,
    pub per_sample_nfe: Vec<u64>,
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = toml::to_string(value).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub const BENCH_HEADER: [&str; 8] = [
    "method",
    "eps_rel",
    "nfe",
    "steps_accepted",
    "steps_rejected",
    "w2",
    "sliced_w2",
    "wall_time_s",
];

/// One benchmark or ablation row. `wall_time_s` is the only
/// non-reproducible column.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub eps_rel: Option<f64>,
    pub nfe: f64,
    pub steps_accepted: u64,
    pub steps_rejected: u64,
    pub w2: f64,
    pub sliced_w2: f64,
    pub wall_time_s: f64,
}

impl BenchRow {
    fn record(&self) -> [String; 8] {
        [
            self.method.clone(),
            self.eps_rel.map(fmt_f64).unwrap_or_default(),
            fmt_f64(self.nfe),
            self.steps_accepted.to_string(),
            self.steps_rejected.to_string(),
            fmt_f64(self.w2),
            fmt_f64(self.sliced_w2),
            fmt_f64(self.wall_time_s),
        ]
    }
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(BENCH_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

pub const STABILITY_HEADER: [&str; 7] = ["lambda", "h", "analytic_m2", "empirical_m2", "ci", "stable", "diverged"];

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub lambda: f64,
    pub h: f64,
    /// `None` outside the stability region.
    pub analytic_m2: Option<f64>,
    pub empirical_m2: f64,
    pub ci: f64,
    pub stable: bool,
    pub diverged: bool,
}

pub fn write_stability_csv(path: &Path, rows: &[StabilityRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(STABILITY_HEADER)?;
    for r in rows {
        w.write_record([
            fmt_f64(r.lambda),
            fmt_f64(r.h),
            r.analytic_m2.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.empirical_m2),
            fmt_f64(r.ci),
            r.stable.to_string(),
            r.diverged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const LIMIT_HEADER: [&str; 5] = ["lambda", "h", "analytic_m2", "empirical_m2", "ci"];

pub fn write_limit_csv(path: &Path, lambda: f64, rows: &[(f64, f64, f64, f64)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(LIMIT_HEADER)?;
    for (h, a, e, ci) in rows {
        w.write_record([fmt_f64(lambda), fmt_f64(*h), fmt_f64(*a), fmt_f64(*e), fmt_f64(*ci)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let data = vec![1.0, -2.5, f64::MIN_POSITIVE, 1e300, 0.1, -0.0];
        write_samples(&p, 3, 2, &data).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"DSDM");
        assert_eq!(bytes.len(), 4 + 4 + 8 + 8 + 6 * 8);
        let (n, d, back) = read_samples(&p).unwrap();
        assert_eq!((n, d), (3, 2));
        assert_eq!(back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, 6.02214076e23, -1e-300, 0.5263157894736842] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn trace_lines_have_exact_keys() {
        let rec = StepRecord {
            sample_id: 3,
            t: 0.5,
            h: 0.01,
            error: 0.7,
            accepted: true,
            noise_id: 2,
        };
        let v: serde_json::Value = serde_json::to_value(TraceLine::from(&rec)).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["E", "accepted", "h", "sample_id", "t"]);
    }
}
