use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EvalConfig, TOOL_VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSample {
    pub path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub crop_count: usize,
    pub top1: f64,
    pub top5: f64,
    pub top1_hits: usize,
    pub top5_hits: usize,
}

impl SweepPoint {
    pub(crate) fn from_report(crop_count: usize, report: &EvalReport) -> Self {
        Self {
            crop_count,
            top1: report.top1,
            top5: report.top5,
            top1_hits: report.top1_hits,
            top5_hits: report.top5_hits,
        }
    }
}

/// Result of one evaluation or sweep. Field order is the serialized order.
/// Worker count and batch cap are deliberately absent: they cannot change
/// the numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tool_version: String,
    pub config_hash: String,
    pub model: String,
    pub strategy: String,
    pub fusion: String,
    pub seed: u64,
    pub samples: usize,
    pub failed: usize,
    pub failures: Vec<FailedSample>,
    /// Percent, rounded to 2 decimals.
    pub top1: f64,
    pub top5: f64,
    pub top1_hits: usize,
    pub top5_hits: usize,
    pub mean_crops: f64,
    pub wall_time_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepPoint>>,
}

fn percent(hits: usize, total: usize) -> f64 {
    (100.0 * hits as f64 / total as f64 * 100.0).round() / 100.0
}

impl EvalReport {
    pub(crate) fn empty(config: &EvalConfig) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_owned(),
            config_hash: config.config_hash(),
            model: config.descriptor.name.clone(),
            strategy: config.strategy.to_string(),
            fusion: config.fusion.to_string(),
            seed: config.seed,
            samples: 0,
            failed: 0,
            failures: Vec::new(),
            top1: 0.0,
            top5: 0.0,
            top1_hits: 0,
            top5_hits: 0,
            mean_crops: 0.0,
            wall_time_secs: 0.0,
            sweep: None,
        }
    }

    pub(crate) fn finish(&mut self, total_crops: usize) {
        self.top1 = percent(self.top1_hits, self.samples);
        self.top5 = percent(self.top5_hits, self.samples);
        self.mean_crops = total_crops as f64 / self.samples as f64;
    }

    /// Copy with the wall time zeroed, for comparisons across runs.
    pub fn without_wall_time(&self) -> Self {
        Self {
            wall_time_secs: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    /// Header plus one row per (strategy, fusion, crop_count).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,fusion,crop_count,samples,top1,top5\n");
        let mut row = |count: &str, top1: f64, top5: f64| {
            let _ = writeln!(
                out,
                "{},{},{count},{},{top1:.2},{top5:.2}",
                csv_field(&self.strategy),
                self.fusion,
                self.samples
            );
        };
        match &self.sweep {
            Some(curve) => {
                for p in curve {
                    row(&p.crop_count.to_string(), p.top1, p.top5);
                }
            }
            None => {
                let count = if self.mean_crops.fract() == 0.0 {
                    format!("{}", self.mean_crops as usize)
                } else {
                    format!("{:.2}", self.mean_crops)
                };
                row(&count, self.top1, self.top5);
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(Error::config(format!("unknown report format '{other}' (json|csv)"))),
        }
    }
}

pub fn write_report(report: &EvalReport, format: ReportFormat, path: &Path) -> Result<()> {
    let body = match format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Csv => report.to_csv(),
    };
    std::fs::write(path, body)?;
    Ok(())
}
