//! Sweep reports: CSV rows, a JSON form carrying provenance metadata, and
//! per-metric series for plotting.
//!
//! CSV columns are `strategy,eta,accuracy,sensitivity,precision,f1,loss,flops,error`.
//! Metrics are fractions written with the shortest representation that parses
//! back to the same `f64`, so CSV and JSON carry identical values.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pruning::{Strategy, SweepRow};

pub const CSV_HEADER: &str = "strategy,eta,accuracy,sensitivity,precision,f1,loss,flops,error";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    /// FNV-1a 64 of the canonical JSON of the run configuration, hex.
    pub config_hash: String,
    pub version: String,
    /// How the overall metrics are defined.
    pub metric_notes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub meta: ReportMeta,
    pub rows: Vec<SweepRow>,
}

pub const METRIC_NOTES: &str = "accuracy = multiclass trace/total; sensitivity, precision and f1 use N as negative \
     and S/V/F/Q as positive, where TP = non-normal beats predicted as their own class; \
     flops = 917440*(1-eta)+19136";

/// FNV-1a 64 of `bytes` as 16 hex digits.
pub fn config_hash(bytes: &[u8]) -> String {
    let h = bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3));
    format!("{h:016x}")
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl SweepReport {
    pub fn new(meta: ReportMeta, mut rows: Vec<SweepRow>) -> Self {
        rows.sort_by(|a, b| a.strategy.cmp(&b.strategy).then(a.eta.total_cmp(&b.eta)));
        Self { meta, rows }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.strategy,
                r.eta,
                r.accuracy,
                r.sensitivity,
                r.precision,
                r.f1,
                r.loss,
                r.flops,
                csv_escape(r.error.as_deref().unwrap_or(""))
            );
        }
        s
    }

    /// Parses rows written by [`SweepReport::to_csv`].
    pub fn rows_from_csv(text: &str) -> Result<Vec<SweepRow>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => return Err(Error::Parse { line: 1, cause: format!("expected header {CSV_HEADER:?}") }),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |cause: String| Error::Parse { line: i + 1, cause };
            let (fields, error) = match line.split_once(",\"") {
                Some((head, quoted)) => {
                    let inner = quoted.strip_suffix('"').ok_or_else(|| err("unterminated quote".into()))?;
                    (head.split(',').collect::<Vec<_>>(), Some(inner.replace("\"\"", "\"")))
                }
                None => {
                    let mut f: Vec<&str> = line.split(',').collect();
                    let last = f.pop().unwrap_or_default();
                    (f, (!last.is_empty()).then(|| last.to_string()))
                }
            };
            if fields.len() != 8 {
                return Err(err(format!("expected 9 columns, found {}", fields.len() + 1)));
            }
            let num = |j: usize| -> Result<f64> {
                fields[j].parse().map_err(|_| err(format!("column {} is not a number: {:?}", j + 1, fields[j])))
            };
            rows.push(SweepRow {
                strategy: fields[0].parse().map_err(|e: Error| err(e.to_string()))?,
                eta: num(1)?,
                accuracy: num(2)?,
                sensitivity: num(3)?,
                precision: num(4)?,
                f1: num(5)?,
                loss: num(6)?,
                flops: fields[7].parse().map_err(|_| err(format!("bad flops {:?}", fields[7])))?,
                error,
            });
        }
        Ok(rows)
    }

    /// Pretty JSON. Non-finite metrics of failed cells become `null`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), cause: e.to_string() })
    }

    /// `eta,<strategy>...` table of one metric, one column per strategy.
    pub fn series_csv(&self, metric: Metric) -> String {
        let mut strategies: Vec<Strategy> = self.rows.iter().map(|r| r.strategy).collect();
        strategies.dedup();
        let mut etas: Vec<f64> = self.rows.iter().map(|r| r.eta).collect();
        etas.sort_by(f64::total_cmp);
        etas.dedup();
        let mut s = String::from("eta");
        for st in &strategies {
            let _ = write!(s, ",{st}");
        }
        s.push('\n');
        for &eta in &etas {
            let _ = write!(s, "{eta}");
            for &st in &strategies {
                let v = self.rows.iter().find(|r| r.strategy == st && r.eta == eta).map(|r| metric.get(r));
                match v {
                    Some(v) => {
                        let _ = write!(s, ",{v}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    F1,
    Loss,
    Sensitivity,
    Flops,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Accuracy, Metric::F1, Metric::Loss, Metric::Sensitivity, Metric::Flops];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
            Metric::Loss => "loss",
            Metric::Sensitivity => "sensitivity",
            Metric::Flops => "flops",
        }
    }

    pub fn get(self, row: &SweepRow) -> f64 {
        match self {
            Metric::Accuracy => row.accuracy,
            Metric::F1 => row.f1,
            Metric::Loss => row.loss,
            Metric::Sensitivity => row.sensitivity,
            Metric::Flops => row.flops as f64,
        }
    }
}
