//! Machine-readable experiment outputs: the JSON run report and the CSV
//! rows of the sweep, rank-study and compare protocols.
//!
//! Floats are written in shortest round-trip form, so identical runs give
//! identical files apart from the wall-time fields.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bayes::{HyperParams, SolverConfig};
use crate::error::{Error, Result};
use crate::vp::VpConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    BayesCp,
    Vp,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::BayesCp => "bayes-cp",
            Method::Vp => "vp",
        })
    }
}

/// Solver settings echoed into a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum RunConfig {
    BayesCp { hyper: HyperParams, solver: SolverConfig },
    Vp { solver: VpConfig },
}

impl RunConfig {
    pub fn method(&self) -> Method {
        match self {
            RunConfig::BayesCp { .. } => Method::BayesCp,
            RunConfig::Vp { .. } => Method::Vp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub method: Method,
    pub dims: Vec<usize>,
    /// Observed entries over total entries.
    pub sampling_ratio: f64,
    pub observed_entries: usize,
    pub seed: u64,
    /// Present when a truth tensor was supplied.
    pub relative_error: Option<f64>,
    /// Bayesian CP only.
    pub predicted_rank: Option<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Bayesian CP only.
    pub final_elbo: Option<f64>,
    pub wall_time_seconds: f64,
    pub config: RunConfig,
}

impl ExperimentReport {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Report(m.into()));
        if self.dims.is_empty() || self.dims.contains(&0) {
            return bad("dims must be non-empty with positive extents");
        }
        if !(self.sampling_ratio > 0.0 && self.sampling_ratio <= 1.0) {
            return bad("sampling_ratio must lie in (0, 1]");
        }
        if let Some(e) = self.relative_error {
            if !(e >= 0.0) || !e.is_finite() {
                return bad("relative_error must be finite and non-negative");
            }
        }
        if !(self.wall_time_seconds >= 0.0) {
            return bad("wall_time_seconds must be non-negative");
        }
        if self.config.method() != self.method {
            return bad("config does not match method");
        }
        if self.method == Method::Vp && (self.predicted_rank.is_some() || self.final_elbo.is_some()) {
            return bad("predicted_rank and final_elbo are reserved for bayes-cp");
        }
        Ok(())
    }

    /// Pretty-printed JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Report(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: ExperimentReport = serde_json::from_str(text).map_err(|e| Error::Report(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// One row of a sampling-ratio sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    /// 0-based repetition.
    pub rep: usize,
    /// Sub-seed that drew the mask.
    pub mask_seed: u64,
    pub observed_entries: usize,
    pub relative_error: f64,
    pub predicted_rank: usize,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_seconds: f64,
}

/// One row of a maximum-rank study: "Maximum Rank / Predicted Rank /
/// Relative Error" plus diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankStudyRow {
    pub max_rank: usize,
    pub predicted_rank: usize,
    pub relative_error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_seconds: f64,
}

/// One row per method of a comparison. A failed method keeps its row with
/// empty metrics and the error text in `status`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: Method,
    pub ratio: f64,
    pub relative_error: Option<f64>,
    pub predicted_rank: Option<usize>,
    pub iterations: Option<usize>,
    pub wall_time_seconds: Option<f64>,
    pub status: String,
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Report(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    std::fs::write(path, csv_string(rows)?)?;
    Ok(())
}

pub fn parse_csv<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::Report(e.to_string())))
        .collect()
}
