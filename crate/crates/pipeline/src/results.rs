use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::ExperimentKind;
use crate::error::Result;

/// One `(seed × cell)` result. Columns not measured by a runner are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub cell: String,
    pub arm: String,
    pub seed: u64,
    pub alpha: f64,
    pub source_id: String,
    pub target_id: String,
    pub d_sym: Option<f64>,
    pub d_identity: Option<f64>,
    /// Distance between the counterfactual views of the two tasks.
    pub d_sym_cf: Option<f64>,
    pub pehe: Option<f64>,
    pub factual_loss: Option<f64>,
    pub cf_loss: Option<f64>,
    pub n_train: usize,
}

impl ResultRow {
    pub fn new(experiment: ExperimentKind, cell: impl Into<String>, arm: impl Into<String>, seed: u64, alpha: f64) -> Self {
        ResultRow {
            experiment: experiment.name().to_string(),
            cell: cell.into(),
            arm: arm.into(),
            seed,
            alpha,
            source_id: String::new(),
            target_id: String::new(),
            d_sym: None,
            d_identity: None,
            d_sym_cf: None,
            pehe: None,
            factual_loss: None,
            cf_loss: None,
            n_train: 0,
        }
    }
}

pub const RESULT_COLUMNS: [&str; 14] = [
    "experiment",
    "cell",
    "arm",
    "seed",
    "alpha",
    "source_id",
    "target_id",
    "d_sym",
    "d_identity",
    "d_sym_cf",
    "pehe",
    "factual_loss",
    "cf_loss",
    "n_train",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path, &self.rows, &RESULT_COLUMNS)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(ResultTable {
            rows: read_csv(path)?,
        })
    }

    pub fn filter<'a>(&'a self, arm: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.arm == arm)
    }
}

/// Long-format plot data: one `(series, x, y)` point per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub experiment: String,
    pub series: String,
    pub x: f64,
    pub y: f64,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
}

impl CurvePoint {
    pub fn median(experiment: ExperimentKind, series: impl Into<String>, x: f64, y: f64, alpha: Option<f64>) -> Self {
        CurvePoint {
            experiment: experiment.name().to_string(),
            series: series.into(),
            x,
            y,
            seed: None,
            alpha,
        }
    }
}

pub const CURVE_COLUMNS: [&str; 6] = ["experiment", "series", "x", "y", "seed", "alpha"];

pub fn save_curves(points: &[CurvePoint], path: impl AsRef<Path>) -> Result<()> {
    write_csv(path, points, &CURVE_COLUMNS)
}

pub fn load_curves(path: impl AsRef<Path>) -> Result<Vec<CurvePoint>> {
    read_csv(path)
}

/// One verified inequality in the bound sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub source: String,
    pub target: String,
    pub seed: u64,
    pub alpha: f64,
    pub bound: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

pub const BOUND_COLUMNS: [&str; 9] = ["source", "target", "seed", "alpha", "bound", "lhs", "rhs", "slack", "holds"];

fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Named pass/fail property evaluated on a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub table: ResultTable,
    pub curves: Vec<CurvePoint>,
    pub bounds: Vec<BoundRow>,
    pub summary: Map<String, Value>,
    pub checks: Vec<Check>,
}

impl RunOutput {
    pub fn new(experiment: ExperimentKind, config_hash: String) -> Self {
        RunOutput {
            experiment,
            config_hash,
            table: ResultTable::default(),
            curves: Vec::new(),
            bounds: Vec::new(),
            summary: Map::new(),
            checks: Vec::new(),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn summarize(&mut self, key: &str, value: impl Serialize) {
        self.summary
            .insert(key.to_string(), serde_json::to_value(value).expect("summary value serializes"));
    }

    /// Writes `<name>-<hash>-{results,curves,bounds}.csv` and `-summary.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let stem = format!("{}-{}", self.experiment.name(), self.config_hash);
        let mut written = Vec::new();
        let p = dir.join(format!("{stem}-results.csv"));
        self.table.save(&p)?;
        written.push(p);
        if !self.curves.is_empty() {
            let p = dir.join(format!("{stem}-curves.csv"));
            save_curves(&self.curves, &p)?;
            written.push(p);
        }
        if !self.bounds.is_empty() {
            let p = dir.join(format!("{stem}-bounds.csv"));
            write_csv(&p, &self.bounds, &BOUND_COLUMNS)?;
            written.push(p);
        }
        let summary = serde_json::json!({
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "summary": self.summary,
            "checks": self.checks,
        });
        let p = dir.join(format!("{stem}-summary.json"));
        std::fs::write(&p, serde_json::to_string_pretty(&summary)? + "\n")?;
        written.push(p);
        Ok(written)
    }
}
