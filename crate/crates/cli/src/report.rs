//! Run reports: JSON for machines, CSV tables for plotting.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use fibre_transport::transport::{float_repr, LawReport};

use crate::config::RunConfig;

/// Bumped whenever a field changes meaning or disappears.
pub const SCHEMA_VERSION: u32 = 1;

/// A scalar outcome that is not a law report, e.g. an oracle error.
#[derive(Clone, Debug, Serialize)]
pub struct Metric {
    pub name: String,
    #[serde(with = "float_repr")]
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub pass: bool,
}

impl Metric {
    /// Passes when `value < tolerance`.
    pub fn below(name: &str, value: f64, tolerance: f64) -> Self {
        Metric { name: name.into(), value, tolerance: Some(tolerance), pass: value < tolerance }
    }

    /// Passes when `value >= minimum`.
    pub fn at_least(name: &str, value: f64, minimum: f64) -> Self {
        Metric { name: name.into(), value, tolerance: Some(minimum), pass: value >= minimum }
    }

    /// Informational value that always passes.
    pub fn info(name: &str, value: f64) -> Self {
        Metric { name: name.into(), value, tolerance: None, pass: true }
    }

    pub fn flag(name: &str, ok: bool) -> Self {
        Metric { name: name.into(), value: if ok { 0.0 } else { 1.0 }, tolerance: None, pass: ok }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Entry {
    pub id: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub reports: Vec<LawReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub metrics: Vec<Metric>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub data: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Entry {
    pub fn new(id: impl Into<String>) -> Self {
        Entry { id: id.into(), pass: true, reports: Vec::new(), metrics: Vec::new(), data: Value::Null, error: None }
    }

    pub fn report(&mut self, r: LawReport) {
        self.reports.push(r);
    }

    pub fn metric(&mut self, m: Metric) {
        self.metrics.push(m);
    }

    /// An evaluation error fails the entry.
    pub fn fail(&mut self, message: impl Into<String>) {
        self.error = Some(message.into());
    }

    pub fn finish(mut self) -> Self {
        self.pass = self.error.is_none() && self.reports.iter().all(|r| r.pass) && self.metrics.iter().all(|m| m.pass);
        self
    }
}

/// One row per law report and metric.
#[derive(Clone, Debug, Serialize)]
pub struct SummaryRow {
    pub id: String,
    pub check: String,
    #[serde(with = "float_repr")]
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub samples: Option<usize>,
    pub witnesses: Option<usize>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub pass: bool,
    pub config: RunConfig,
    pub entries: Vec<Entry>,
    pub summary: Vec<SummaryRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

impl RunReport {
    /// Sorts entries by id so the report does not depend on evaluation order.
    pub fn new(command: &str, config: RunConfig, mut entries: Vec<Entry>) -> Self {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        let summary = entries
            .iter()
            .flat_map(|e| {
                let laws = e.reports.iter().map(|r| SummaryRow {
                    id: e.id.clone(),
                    check: r.law.to_string(),
                    value: r.max_residual,
                    tolerance: Some(r.tolerance),
                    samples: Some(r.samples),
                    witnesses: Some(r.witnesses.len()),
                    pass: r.pass,
                });
                let metrics = e.metrics.iter().map(|m| SummaryRow {
                    id: e.id.clone(),
                    check: m.name.clone(),
                    value: m.value,
                    tolerance: m.tolerance,
                    samples: None,
                    witnesses: None,
                    pass: m.pass,
                });
                let error = e.error.iter().map(|_| SummaryRow {
                    id: e.id.clone(),
                    check: "error".into(),
                    value: f64::INFINITY,
                    tolerance: None,
                    samples: None,
                    witnesses: None,
                    pass: false,
                });
                laws.chain(metrics).chain(error).collect::<Vec<_>>()
            })
            .collect();
        RunReport {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            seed: config.seed,
            pass: entries.iter().all(|e| e.pass),
            config,
            entries,
            summary,
            timings: None,
        }
    }

    pub fn failed(&self) -> usize {
        self.entries.iter().filter(|e| !e.pass).count()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn summary_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "check", "value", "tolerance", "samples", "witnesses", "pass"])?;
        for r in &self.summary {
            w.write_record([
                r.id.clone(),
                r.check.clone(),
                format_float(r.value),
                r.tolerance.map(format_float).unwrap_or_default(),
                r.samples.map(|n| n.to_string()).unwrap_or_default(),
                r.witnesses.map(|n| n.to_string()).unwrap_or_default(),
                r.pass.to_string(),
            ])?;
        }
        csv_string(w)
    }
}

/// Shortest round-tripping representation.
pub fn format_float(x: f64) -> String {
    format!("{x:e}")
}

/// A CSV series with a header and rows of equal length.
#[derive(Clone, Debug, Default)]
pub struct Series {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Series {
    pub fn new(header: &[&str]) -> Self {
        Series { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        csv_string(w)
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String, csv::Error> {
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
