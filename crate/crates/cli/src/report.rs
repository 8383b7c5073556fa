//! Report types and their JSON / CSV emission.

use std::fs;
use std::path::Path;

use scaleprune_core::{Error as CoreError, RecoveryKind, Strategy};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::Config;

pub const JSON_NAME: &str = "report.json";
pub const CSV_NAME: &str = "report.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub scale: usize,
    pub height: usize,
    pub width: usize,
    pub tokens: usize,
    pub kept: usize,
    pub skipped: bool,
    pub cache_len: usize,
    pub flops: u64,
    pub dense_flops: u64,
    pub wall_ns: u64,
    pub dense_wall_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub flops: u64,
    pub dense_flops: u64,
    pub wall_ns: u64,
    pub dense_wall_ns: u64,
    pub flop_speedup: f64,
    /// Absent when timing is disabled.
    pub wall_speedup: Option<f64>,
}

impl Totals {
    pub fn from_scales(scales: &[ScaleRecord]) -> Self {
        let flops = scales.iter().map(|s| s.flops).sum();
        let dense_flops = scales.iter().map(|s| s.dense_flops).sum();
        let wall_ns = scales.iter().map(|s| s.wall_ns).sum();
        let dense_wall_ns = scales.iter().map(|s| s.dense_wall_ns).sum();
        Self {
            flops,
            dense_flops,
            wall_ns,
            dense_wall_ns,
            flop_speedup: ratio(dense_flops, flops).unwrap_or(f64::INFINITY),
            wall_speedup: ratio(dense_wall_ns, wall_ns),
        }
    }
}

pub(crate) fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFidelity {
    pub seed: u64,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    /// Means over seeds.
    pub psnr_db: f64,
    pub ssim: f64,
    pub per_seed: Vec<SeedFidelity>,
}

impl Fidelity {
    pub fn from_seeds(per_seed: Vec<SeedFidelity>) -> Self {
        let n = per_seed.len() as f64;
        Self {
            psnr_db: per_seed.iter().map(|s| s.psnr_db).sum::<f64>() / n,
            ssim: per_seed.iter().map(|s| s.ssim).sum::<f64>() / n,
            per_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub seed: Option<u64>,
    pub scale: Option<usize>,
    pub message: String,
}

impl ErrorRecord {
    pub fn new(seed: Option<u64>, err: &CoreError) -> Self {
        let (scale, message) = match err {
            CoreError::AtScale { scale, source } => (Some(*scale), source.to_string()),
            other => (None, other.to_string()),
        };
        Self {
            seed,
            scale,
            message,
        }
    }
}

impl std::fmt::Display for ErrorRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let Some(seed) = self.seed {
            write!(f, "seed {seed}: ")?;
        }
        if let Some(scale) = self.scale {
            write!(f, "scale {scale}: ")?;
        }
        f.write_str(&self.message)
    }
}

/// Result of `run`: a pruned schedule against the dense reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: Config,
    pub seeds: Vec<u64>,
    pub scales: Vec<ScaleRecord>,
    pub totals: Totals,
    /// Present only when both the dense and the pruned runs completed.
    pub fidelity: Option<Fidelity>,
    pub error: Option<ErrorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub stages: usize,
    pub ratio: f64,
    pub processed_tokens: usize,
    pub flops: u64,
    pub analytic_speedup: f64,
    pub wall_ns: u64,
    pub wall_speedup: Option<f64>,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateRow {
    pub strategy: Strategy,
    pub recovery: RecoveryKind,
    pub ratio: f64,
    pub stages: usize,
    pub flops: u64,
    pub analytic_speedup: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub scale: usize,
    pub height: usize,
    pub width: usize,
    pub tokens: usize,
    pub cache_len: usize,
    pub flops: u64,
    pub flop_share: f64,
    pub wall_ns: u64,
    pub wall_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub scale: usize,
    pub sigma: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Tabular report shared by sweep, ablate, profile and sensitivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport<R> {
    pub kind: String,
    pub config: Config,
    pub seeds: Vec<u64>,
    pub rows: Vec<R>,
}

pub type SweepReport = TableReport<SweepRow>;
pub type AblateReport = TableReport<AblateRow>;
pub type ProfileReport = TableReport<ProfileRow>;
pub type SensitivityReport = TableReport<SensitivityRow>;

#[derive(Debug, thiserror::Error)]
pub enum WriteError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot encode {path}: {message}")]
    Encode { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WriteError + '_ {
    move |source| WriteError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports are always serializable");
    s.push('\n');
    s
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> serde_json::Result<T> {
    serde_json::from_str(text)
}

pub fn to_csv<R: Serialize>(rows: &[R]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn write_report<T: Serialize, R: Serialize>(
    dir: &Path,
    report: &T,
    rows: &[R],
) -> Result<(), WriteError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json = dir.join(JSON_NAME);
    fs::write(&json, to_json(report)).map_err(io_err(&json))?;
    let csv_path = dir.join(CSV_NAME);
    let csv = to_csv(rows).map_err(|e| WriteError::Encode {
        path: csv_path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(&csv_path, csv).map_err(io_err(&csv_path))
}

impl RunReport {
    pub fn write(&self, dir: &Path) -> Result<(), WriteError> {
        write_report(dir, self, &self.scales)
    }
}

impl<R: Serialize> TableReport<R> {
    pub fn write(&self, dir: &Path) -> Result<(), WriteError> {
        write_report(dir, self, &self.rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(scale: usize, flops: u64, wall: u64) -> ScaleRecord {
        ScaleRecord {
            scale,
            height: scale,
            width: scale,
            tokens: scale * scale,
            kept: scale * scale,
            skipped: false,
            cache_len: 0,
            flops,
            dense_flops: 2 * flops,
            wall_ns: wall,
            dense_wall_ns: 3 * wall,
        }
    }

    #[test]
    fn totals_are_sums() {
        let scales = vec![record(1, 10, 5), record(2, 30, 7)];
        let t = Totals::from_scales(&scales);
        assert_eq!(
            (t.flops, t.dense_flops, t.wall_ns, t.dense_wall_ns),
            (40, 80, 12, 36)
        );
        assert_eq!(t.flop_speedup, 2.0);
        assert_eq!(t.wall_speedup, Some(3.0));
        let t = Totals::from_scales(&[record(1, 10, 0)]);
        assert_eq!(t.wall_speedup, None);
    }

    #[test]
    fn csv_has_header_and_blank_options() {
        let rows = vec![ProfileRow {
            scale: 1,
            height: 1,
            width: 1,
            tokens: 1,
            cache_len: 0,
            flops: 3,
            flop_share: 1.0,
            wall_ns: 0,
            wall_share: None,
        }];
        let csv = to_csv(&rows).unwrap();
        assert_eq!(
            csv,
            "scale,height,width,tokens,cache_len,flops,flop_share,wall_ns,wall_share\n1,1,1,1,0,3,1.0,0,\n"
        );
    }

    #[test]
    fn error_record_unwraps_scale() {
        let e = CoreError::Param("bad".into()).at_scale(3);
        let r = ErrorRecord::new(Some(7), &e);
        assert_eq!(r.scale, Some(3));
        assert_eq!(r.to_string(), "seed 7: scale 3: invalid parameter: bad");
    }
}
