//! Config-driven front end for the fibre-transport library: builds backends
//! from a TOML file, runs one subcommand, and writes a JSON report plus CSV
//! tables.

// Negated float comparisons are deliberate: NaN values must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;

pub use commands::Command;
pub use config::RunConfig;
pub use error::CliError;
pub use report::RunReport;

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub step: Option<f64>,
    /// Replaces every tolerance in the config, including per-backend ones.
    pub tolerance: Option<f64>,
    pub out: Option<PathBuf>,
    pub timings: bool,
}

/// A finished run: the report and its CSV series.
#[derive(Clone, Debug)]
pub struct Run {
    pub report: RunReport,
    pub series: Vec<(String, report::Series)>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(step) = self.step {
            cfg.step = step;
        }
        if let Some(tol) = self.tolerance {
            cfg.tolerance = Some(tol);
            for b in &mut cfg.backends {
                b.tolerance = None;
            }
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
    }
}

/// Runs `command` on a validated config. `source` locates errors by line.
pub fn execute(command: Command, mut cfg: RunConfig, overrides: &Overrides, source: Option<&str>) -> Result<Run, CliError> {
    overrides.apply(&mut cfg);
    let locate = |e: CliError| match source {
        Some(s) => e.locate(s),
        None => e,
    };
    cfg.validate().map_err(locate)?;
    let jobs = backend::jobs(&cfg).map_err(locate)?;
    let outcome = commands::run(command, &cfg, &jobs).map_err(locate)?;
    // the output location is not part of the experiment
    cfg.out = None;
    let mut report = RunReport::new(command.name(), cfg, outcome.entries);
    if overrides.timings {
        report.timings = Some(outcome.timings);
    }
    Ok(Run { report, series: outcome.series })
}

/// Writes `<command>.json`, `<command>.csv` and `<command>-<series>.csv` into
/// `dir`, returning the paths written.
pub fn write_outputs(run: &Run, dir: &std::path::Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let stem = &run.report.command;
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    let mut files = vec![
        (dir.join(format!("{stem}.json")), run.report.to_json()),
        (dir.join(format!("{stem}.csv")), run.report.summary_csv().map_err(csv_err)?),
    ];
    for (name, series) in &run.series {
        files.push((dir.join(format!("{stem}-{name}.csv")), series.to_csv().map_err(csv_err)?));
    }
    for (path, body) in &files {
        std::fs::write(path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
