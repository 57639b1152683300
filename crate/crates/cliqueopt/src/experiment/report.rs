//! Machine-readable experiment reports and their CSV/JSON emission.
//!
//! CSV schemas are stable:
//!
//! - convergence rows: `k,dt,mean_err,std_err`; the fitted slopes go to a
//!   separate `<stem>_slopes.csv` with `k,slope,r_squared,n_points`.
//! - energy sweep rows:
//!   `formulation,weight_normalized,mean_energy,std_energy,n_trials,trimmed_flag`.
//!
//! JSON mirrors the full report structure including metadata and, for the
//! sweep, per-trial outcomes.

use std::fmt::Write as _;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::TerminationReason;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown format '{other}' (expected csv or json)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
}

impl ReportMetadata {
    pub fn new(seed: u64, config: &impl Serialize) -> Self {
        let text = serde_json::to_string(config).unwrap_or_default();
        let mut hasher = DefaultHasher::new();
        text.hash(&mut hasher);
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: format!("{:016x}", hasher.finish()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub k: usize,
    pub dt: f64,
    pub mean_err: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub k: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<ConvergenceRow>,
    pub slopes: Vec<SlopeFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub formulation: String,
    pub weight: f64,
    pub weight_normalized: f64,
    pub mean_energy: f64,
    pub std_energy: f64,
    pub n_trials: usize,
    pub trimmed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub formulation: String,
    pub weight: f64,
    pub energy: f64,
    pub normalized: f64,
    pub success: bool,
    pub termination: TerminationReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySweepReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<SweepRow>,
    pub trials: Vec<TrialOutcome>,
}

/// Either experiment's results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentReport {
    Convergence(ConvergenceReport),
    EnergySweep(EnergySweepReport),
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            context: "serializing report".into(),
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            context: "parsing report".into(),
            source,
        })
    }

    /// Main CSV body for this report.
    pub fn to_csv(&self) -> String {
        match self {
            ExperimentReport::Convergence(r) => {
                let mut out = String::from("k,dt,mean_err,std_err\n");
                for row in &r.rows {
                    let _ = writeln!(
                        out,
                        "{},{},{},{}",
                        row.k, row.dt, row.mean_err, row.std_err
                    );
                }
                out
            }
            ExperimentReport::EnergySweep(r) => {
                let mut out = String::from(
                    "formulation,weight_normalized,mean_energy,std_energy,n_trials,trimmed_flag\n",
                );
                for row in &r.rows {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        row.formulation,
                        row.weight_normalized,
                        row.mean_energy,
                        row.std_energy,
                        row.n_trials,
                        row.trimmed
                    );
                }
                out
            }
        }
    }

    /// Companion slopes CSV (convergence reports only).
    pub fn slopes_csv(&self) -> Option<String> {
        match self {
            ExperimentReport::Convergence(r) => {
                let mut out = String::from("k,slope,r_squared,n_points\n");
                for s in &r.slopes {
                    let _ =
                        writeln!(out, "{},{},{},{}", s.k, s.slope, s.r_squared, s.n_points);
                }
                Some(out)
            }
            ExperimentReport::EnergySweep(_) => None,
        }
    }
}

fn sibling_with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

/// Writes the report to `path` in the requested format. CSV convergence
/// reports additionally write `<stem>_slopes.csv` next to the main file.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: &Path) -> Result<()> {
    let write = |p: &Path, text: &str| -> Result<()> {
        std::fs::write(p, text).map_err(|source| Error::Io {
            context: format!("writing report {}", p.display()),
            source,
        })
    };
    match format {
        ReportFormat::Json => write(path, &report.to_json()?),
        ReportFormat::Csv => {
            write(path, &report.to_csv())?;
            if let Some(slopes) = report.slopes_csv() {
                write(&sibling_with_suffix(path, "_slopes"), &slopes)?;
            }
            Ok(())
        }
    }
}

/// Ordinary least squares of `y` on `x` in log-log space, returning slope,
/// intercept, and the coefficient of determination.
pub fn log_log_fit(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|(x, _)| x.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| y.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let pred = intercept + slope * x;
            (y - pred) * (y - pred)
        })
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some((slope, intercept, r_squared))
}

/// Sample mean and (n-1)-normalized standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn empty_convergence() -> ExperimentReport {
        ExperimentReport::Convergence(ConvergenceReport {
            metadata: ReportMetadata::new(0, &()),
            rows: vec![],
            slopes: vec![],
        })
    }

    #[test]
    fn empty_report_is_header_only() {
        let csv = empty_convergence().to_csv();
        assert_eq!(csv, "k,dt,mean_err,std_err\n");
    }

    #[test]
    fn json_roundtrip_preserves_report() {
        let report = ExperimentReport::Convergence(ConvergenceReport {
            metadata: ReportMetadata::new(3, &"cfg"),
            rows: vec![ConvergenceRow { k: 1, dt: 0.1, mean_err: 1e-3, std_err: 1e-4 }],
            slopes: vec![SlopeFit {
                k: 1,
                slope: 2.01,
                intercept: 0.4,
                r_squared: 0.999,
                n_points: 20,
            }],
        });
        let back = ExperimentReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn csv_row_count_matches_grid() {
        let rows: Vec<ConvergenceRow> = (0..20)
            .flat_map(|i| {
                [1usize, 2].map(|k| ConvergenceRow {
                    k,
                    dt: 0.15 / (i + 1) as f64,
                    mean_err: 1e-3,
                    std_err: 0.0,
                })
            })
            .collect();
        let report = ExperimentReport::Convergence(ConvergenceReport {
            metadata: ReportMetadata::new(0, &()),
            rows,
            slopes: vec![],
        });
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 1 + 20 * 2);
    }

    #[test]
    fn emit_writes_main_and_slopes_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conv.csv");
        let report = empty_convergence();
        emit_report(&report, ReportFormat::Csv, &path).unwrap();
        assert!(path.exists());
        assert!(dir.path().join("conv_slopes.csv").exists());

        let json_path = dir.path().join("conv.json");
        emit_report(&report, ReportFormat::Json, &json_path).unwrap();
        let text = std::fs::read_to_string(&json_path).unwrap();
        assert_eq!(ExperimentReport::from_json(&text).unwrap(), report);
    }

    #[test]
    fn log_log_fit_recovers_power_law() {
        let points: Vec<(f64, f64)> =
            (1..=10).map(|i| (i as f64 * 0.01, 3.5 * (i as f64 * 0.01).powf(2.0))).collect();
        let (slope, intercept, r2) = log_log_fit(&points).unwrap();
        assert_relative_eq!(slope, 2.0, epsilon = 1e-10);
        assert_relative_eq!(intercept, 3.5f64.ln(), epsilon = 1e-10);
        assert_relative_eq!(r2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mean_std_basic() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_relative_eq!(m, 2.0);
        assert_relative_eq!(s, 1.0);
        assert!(mean_std(&[]).0 == 0.0);
    }
}
