//! Report rows, per-check summaries, and atomic CSV/JSON output.

use serde::Serialize;
use sheetspace::flows::FlowStep;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const CSV_NAME: &str = "report.csv";
pub const JSON_NAME: &str = "report.json";
pub const TRAJECTORY_NAME: &str = "flow_trajectory.csv";

/// One line of report.csv.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub check: String,
    pub param: String,
    pub grid: String,
    pub epsilon: Option<f64>,
    pub residual: Option<f64>,
    pub slope: Option<f64>,
    pub pass: bool,
}

impl Row {
    pub fn new(param: impl Into<String>, grid: impl Into<String>) -> Row {
        Row { check: String::new(), param: param.into(), grid: grid.into(), epsilon: None, residual: None, slope: None, pass: false }
    }

    pub fn epsilon(mut self, e: f64) -> Row {
        self.epsilon = Some(e);
        self
    }

    pub fn residual(mut self, r: f64) -> Row {
        self.residual = Some(r);
        self
    }

    pub fn slope(mut self, s: Option<f64>) -> Row {
        self.slope = s;
        self
    }

    pub fn pass(mut self, p: bool) -> Row {
        self.pass = p;
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub seed: Option<u64>,
    pub params: serde_json::Map<String, serde_json::Value>,
    pub rows: Vec<Row>,
    /// Worst fitted slope over the check's sweeps.
    pub slope: Option<f64>,
    pub pass: bool,
    pub error: Option<String>,
    /// The only field that differs between identical runs.
    pub wall_time_s: f64,
    #[serde(skip)]
    pub trajectory: Option<Vec<FlowStep>>,
}

impl CheckReport {
    pub fn new(name: &str) -> CheckReport {
        CheckReport {
            name: name.into(),
            seed: None,
            params: serde_json::Map::new(),
            rows: Vec::new(),
            slope: None,
            pass: false,
            error: None,
            wall_time_s: 0.0,
            trajectory: None,
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        self.params.insert(key.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    pub fn row(&mut self, mut row: Row) {
        row.check = self.name.clone();
        self.rows.push(row);
    }

    pub fn summary_slope(&mut self, slope: Option<f64>) {
        self.slope = slope;
    }

    pub fn fail(&mut self, grid: String, err: impl std::fmt::Display) {
        self.error = Some(err.to_string());
        self.row(Row::new("error", grid));
    }

    pub fn finish(&mut self, secs: f64) {
        self.wall_time_s = secs;
        self.pass = self.error.is_none() && !self.rows.is_empty() && self.rows.iter().all(|r| r.pass);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub n: usize,
    pub dim_n: usize,
    pub cr_codim: usize,
    pub grid: String,
    pub pass: bool,
    pub checks: Vec<CheckReport>,
}

impl Report {
    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.checks.iter().flat_map(|c| c.rows.iter())
    }
}

/// Write through a temporary file in `dir`, then rename over `name`.
fn write_atomic(dir: &Path, name: &str, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> std::io::Result<PathBuf> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    write(tmp.as_file_mut())?;
    tmp.as_file_mut().flush()?;
    let target = dir.join(name);
    tmp.persist(&target).map_err(|e| e.error)?;
    Ok(target)
}

pub fn write_csv(dir: &Path, report: &Report) -> std::io::Result<PathBuf> {
    write_atomic(dir, CSV_NAME, |w| {
        let mut out = csv::Writer::from_writer(w);
        for row in report.rows() {
            out.serialize(row)?;
        }
        if report.rows().next().is_none() {
            out.write_record(["check", "param", "grid", "epsilon", "residual", "slope", "pass"])?;
        }
        out.flush()
    })
}

pub fn write_json(dir: &Path, report: &Report) -> std::io::Result<PathBuf> {
    write_atomic(dir, JSON_NAME, |w| {
        serde_json::to_writer_pretty(&mut *w, report)?;
        writeln!(w)
    })
}

#[derive(Serialize)]
struct TrajectoryRow {
    step: usize,
    area: f64,
    grad_norm: f64,
    eta: f64,
    consistency: f64,
}

pub fn write_trajectory(dir: &Path, log: &[FlowStep]) -> std::io::Result<PathBuf> {
    write_atomic(dir, TRAJECTORY_NAME, |w| {
        let mut out = csv::Writer::from_writer(w);
        for s in log {
            out.serialize(TrajectoryRow { step: s.step, area: s.area, grad_norm: s.grad_norm, eta: s.eta, consistency: s.consistency })?;
        }
        out.flush()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_empty_fields() {
        let mut c = CheckReport::new("domega");
        c.row(Row::new("trial=0", "8x8").epsilon(0.01).residual(2.5e-5).pass(true));
        c.finish(0.0);
        assert!(c.pass);
        let rep = Report { scenario: "x".into(), seed: 42, n: 4, dim_n: 8, cr_codim: 2, grid: "8x8".into(), pass: true, checks: vec![c] };
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), &rep).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("check,param,grid,epsilon,residual,slope,pass"));
        assert_eq!(lines.next(), Some("domega,trial=0,8x8,0.01,0.000025,,true"));
    }

    #[test]
    fn failing_row_fails_the_check() {
        let mut c = CheckReport::new("levi");
        c.row(Row::new("a", "-").pass(true));
        c.row(Row::new("b", "-").pass(false));
        c.finish(0.0);
        assert!(!c.pass);
        let mut empty = CheckReport::new("levi");
        empty.finish(0.0);
        assert!(!empty.pass);
    }
}
