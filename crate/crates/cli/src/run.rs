use std::fs::OpenOptions;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use entropy_bounds::instances::InstanceManifest;
use entropy_bounds::report::{BoundReport, SolveOptions, TraceRow, TRACE_HEADER};

pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Provenance of one solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: Vec<String>,
    pub relaxation: String,
    pub instance_path: Option<String>,
    pub instance: InstanceManifest,
    pub options: SolveOptions,
    pub outputs: Vec<String>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub code_version: String,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn code_version() -> String {
    format!("entropy-bounds {}", env!("CARGO_PKG_VERSION"))
}

/// One row of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub run_id: String,
    pub instance: String,
    pub method: String,
    pub n: usize,
    pub s: usize,
    pub seed: Option<u64>,
    pub rho: Option<f64>,
    pub gamma: Option<f64>,
    pub complemented: bool,
    pub termination: String,
    pub iterations: Option<usize>,
    pub time_s: f64,
    pub primal: Option<f64>,
    pub bound: Option<f64>,
    pub gap: Option<f64>,
    pub error: String,
}

impl ResultRow {
    pub fn from_report(run_id: &str, instance: &str, n: usize, s: usize, report: &BoundReport, complemented: bool) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        ResultRow {
            schema_version: CSV_SCHEMA_VERSION,
            run_id: run_id.to_string(),
            instance: instance.to_string(),
            method: report.relaxation.name().to_string(),
            n,
            s,
            seed: report.seed,
            rho: Some(report.rho),
            gamma: Some(report.gamma),
            complemented,
            termination: termination_name(report).to_string(),
            iterations: Some(report.iterations),
            time_s: report.wall_time_s,
            primal: finite(report.primal_value),
            bound: finite(report.bound),
            gap: finite(report.dual_gap),
            error: String::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn failed(run_id: &str, instance: &str, method: &str, n: usize, s: usize, seed: Option<u64>, time_s: f64, err: &anyhow::Error) -> Self {
        ResultRow {
            schema_version: CSV_SCHEMA_VERSION,
            run_id: run_id.to_string(),
            instance: instance.to_string(),
            method: method.to_string(),
            n,
            s,
            seed,
            rho: None,
            gamma: None,
            complemented: false,
            termination: "error".into(),
            iterations: None,
            time_s,
            primal: None,
            bound: None,
            gap: None,
            error: format!("{err:#}"),
        }
    }
}

pub fn termination_name(report: &BoundReport) -> &'static str {
    use entropy_bounds::report::Termination::*;
    match report.termination {
        GapTol => "gap_tol",
        IterLimit => "iter_limit",
        TimeLimit => "time_limit",
    }
}

/// Append rows, writing the header only when the file is new or empty.
pub fn append_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(TRACE_HEADER)?;
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
