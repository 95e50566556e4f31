use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trajectory::{ErrorSample, TrajectoryMetrics};
use super::volume::VolumeMetrics;
use crate::error::{Error, Result};

/// A fixed, named list of metric values.
pub trait MetricSet {
    fn names() -> &'static [&'static str];
    fn metric_values(&self) -> Vec<f64>;
}

impl MetricSet for TrajectoryMetrics {
    fn names() -> &'static [&'static str] {
        &TrajectoryMetrics::NAMES
    }
    fn metric_values(&self) -> Vec<f64> {
        self.values().to_vec()
    }
}

impl MetricSet for VolumeMetrics {
    fn names() -> &'static [&'static str] {
        &VolumeMetrics::NAMES
    }
    fn metric_values(&self) -> Vec<f64> {
        self.values().to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow<M> {
    pub trial: String,
    pub method: String,
    pub metrics: M,
}

/// One row per (trial, method): `trial,method,<metric columns>`.
pub fn write_metrics_csv<M: MetricSet>(w: &mut impl Write, rows: &[MetricsRow<M>]) -> Result<()> {
    writeln!(w, "trial,method,{}", M::names().join(","))?;
    for r in rows {
        let vals: Vec<String> = r.metrics.metric_values().iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{},{}", r.trial, r.method, vals.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single trial.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std, n }
    }

    /// `mean(std)` with two decimals, the usual table cell.
    pub fn cell(&self) -> String {
        format!("{:.2}({:.2})", self.mean, self.std)
    }
}

/// Per method, per metric mean and standard deviation across trials.
pub fn aggregate<M: MetricSet>(rows: &[MetricsRow<M>]) -> BTreeMap<String, BTreeMap<String, MeanStd>> {
    let mut by_method: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for r in rows {
        by_method.entry(r.method.clone()).or_default().push(r.metrics.metric_values());
    }
    by_method
        .into_iter()
        .map(|(method, trials)| {
            let stats = M::names()
                .iter()
                .enumerate()
                .map(|(c, name)| {
                    let column: Vec<f64> = trials.iter().map(|t| t[c]).collect();
                    (name.to_string(), MeanStd::of(&column))
                })
                .collect();
            (method, stats)
        })
        .collect()
}

/// A metrics CSV read back without knowing which metric set produced it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub names: Vec<String>,
    pub rows: Vec<MetricsRow<Vec<f64>>>,
}

impl MetricsTable {
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::parse(path, 1, e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if header.len() < 3 || header[0] != "trial" || header[1] != "method" {
            return Err(Error::parse(path, 1, "expected header `trial,method,<metrics>`"));
        }
        let mut table = MetricsTable {
            names: header[2..].to_vec(),
            rows: Vec::new(),
        };
        for record in rdr.records() {
            let record = record.map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            let metrics = (2..record.len())
                .map(|i| {
                    record[i]
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::parse(path, line, format!("column `{}`: {e}", header[i])))
                })
                .collect::<Result<Vec<f64>>>()?;
            table.rows.push(MetricsRow {
                trial: record[0].trim().to_string(),
                method: record[1].trim().to_string(),
                metrics,
            });
        }
        Ok(table)
    }

    /// Appends the rows of `other`, which must have the same columns.
    pub fn extend(&mut self, other: MetricsTable) -> Result<()> {
        if self.names.is_empty() && self.rows.is_empty() {
            *self = other;
            return Ok(());
        }
        if self.names != other.names {
            return Err(Error::invalid("metrics tables have different columns"));
        }
        self.rows.extend(other.rows);
        Ok(())
    }

    pub fn aggregate(&self) -> BTreeMap<String, BTreeMap<String, MeanStd>> {
        let mut by_method: BTreeMap<String, Vec<&[f64]>> = BTreeMap::new();
        for r in &self.rows {
            by_method.entry(r.method.clone()).or_default().push(&r.metrics);
        }
        by_method
            .into_iter()
            .map(|(method, trials)| {
                let stats = self
                    .names
                    .iter()
                    .enumerate()
                    .map(|(c, name)| (name.clone(), MeanStd::of(&trials.iter().map(|t| t[c]).collect::<Vec<_>>())))
                    .collect();
                (method, stats)
            })
            .collect()
    }
}

/// A `method | metric ...` markdown table of `mean(std)` cells.
pub fn write_markdown_table(
    w: &mut impl Write,
    names: &[String],
    stats: &BTreeMap<String, BTreeMap<String, MeanStd>>,
) -> Result<()> {
    writeln!(w, "| method | {} |", names.join(" | "))?;
    writeln!(w, "|---|{}", "---|".repeat(names.len()))?;
    for (method, cols) in stats {
        let cells: Vec<String> = names.iter().map(|n| cols.get(n).map_or_else(String::new, MeanStd::cell)).collect();
        writeln!(w, "| {method} | {} |", cells.join(" | "))?;
    }
    Ok(())
}

/// Plot-ready per-DOF error series.
pub fn write_error_series_csv(w: &mut impl Write, samples: &[ErrorSample]) -> Result<()> {
    writeln!(w, "t,dx_mm,dy_mm,dz_mm,droll_deg,dpitch_deg,dyaw_deg")?;
    for s in samples {
        writeln!(w, "{},{},{},{},{},{},{}", s.t, s.dx, s.dy, s.dz, s.droll, s.dpitch, s.dyaw)?;
    }
    Ok(())
}
