//! Run traces: long-format metric rows plus a JSON sidecar with metadata and
//! final artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SgspError};
use crate::game::{PolicyProfile, ValueProfile};

pub const CSV_HEADER: &str = "step,metric,value";

/// Metric whose values depend on the machine, excluded from replay comparisons.
pub const WALL_CLOCK_METRIC: &str = "wall_clock_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    /// Budget exhausted.
    Completed,
    /// Stopped early because the certificate passed.
    Converged { step: u64 },
    /// Non-finite estimate; the trace up to `step` is retained.
    Aborted { step: u64, detail: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub experiment: String,
    pub algorithm: String,
    pub seed: u64,
    pub rng: String,
    pub config_hash: String,
    pub started_unix_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub meta: TraceMeta,
    pub rows: Vec<TraceRow>,
    pub status: RunStatus,
    pub wall_clock_ms: f64,
    /// Scalar end-of-run statistics (final objective, mean distances, drift).
    pub summary: BTreeMap<String, f64>,
    pub outcome: Option<String>,
    pub final_policy: Option<PolicyProfile>,
    pub final_values: Option<ValueProfile>,
}

impl RunTrace {
    pub fn new(meta: TraceMeta) -> Self {
        Self {
            meta,
            rows: Vec::new(),
            status: RunStatus::Completed,
            wall_clock_ms: 0.0,
            summary: BTreeMap::new(),
            outcome: None,
            final_policy: None,
            final_values: None,
        }
    }

    pub fn push(&mut self, step: u64, metric: &str, value: f64) {
        self.rows.push(TraceRow {
            step,
            metric: metric.to_string(),
            value,
        });
    }

    /// Values of one metric in step order.
    pub fn series(&self, metric: &str) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| (r.step, r.value))
            .collect()
    }

    pub fn last(&self, metric: &str) -> Option<f64> {
        self.rows.iter().rev().find(|r| r.metric == metric).map(|r| r.value)
    }

    pub fn is_aborted(&self) -> bool {
        matches!(self.status, RunStatus::Aborted { .. })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{},{},{:.16e}", row.step, row.metric, row.value);
        }
        out
    }

    /// CSV lines that must replay byte-for-byte under a fixed seed and config.
    pub fn replayable_lines(&self) -> Vec<String> {
        self.to_csv()
            .lines()
            .filter(|l| l.split(',').nth(1) != Some(WALL_CLOCK_METRIC))
            .map(str::to_string)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn write_sidecar(&self, path: &Path, config: &serde_json::Value) -> Result<()> {
        let doc = Sidecar {
            config: config.clone(),
            trace: SidecarTrace {
                meta: &self.meta,
                status: &self.status,
                wall_clock_ms: self.wall_clock_ms,
                summary: &self.summary,
                outcome: self.outcome.as_deref(),
                final_policy: self.final_policy.as_ref(),
                final_values: self.final_values.as_ref(),
            },
        };
        fs::write(path, serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Vec<TraceRow>> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(SgspError::Structure("trace CSV is missing its header".into()));
        }
        lines
            .enumerate()
            .map(|(k, line)| {
                let bad = || SgspError::Structure(format!("malformed trace row {}: {line}", k + 2));
                let mut parts = line.splitn(3, ',');
                let step = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                let metric = parts.next().ok_or_else(bad)?.to_string();
                let value = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                Ok(TraceRow { step, metric, value })
            })
            .collect()
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: serde_json::Value,
    trace: SidecarTrace<'a>,
}

#[derive(Serialize)]
struct SidecarTrace<'a> {
    meta: &'a TraceMeta,
    status: &'a RunStatus,
    wall_clock_ms: f64,
    summary: &'a BTreeMap<String, f64>,
    outcome: Option<&'a str>,
    final_policy: Option<&'a PolicyProfile>,
    final_values: Option<&'a ValueProfile>,
}

/// Sidecar contents as read back by `summarize`.
#[derive(Debug, Clone, Deserialize)]
pub struct SidecarDocument {
    pub config: serde_json::Value,
    pub trace: SidecarSummary,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SidecarSummary {
    pub meta: TraceMeta,
    pub status: RunStatus,
    pub wall_clock_ms: f64,
    pub summary: BTreeMap<String, f64>,
    pub outcome: Option<String>,
}

impl SidecarDocument {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
