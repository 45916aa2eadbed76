//! Result bundle: a flat JSON summary of scalars plus CSV tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Round to 9 significant digits, the precision of every emitted float.
pub fn round_sig(x: f64) -> f64 {
    if x.is_finite() {
        format!("{x:.8e}").parse().expect("formatted float parses")
    } else {
        x
    }
}

/// A summary value. Non-finite floats are stored as text (`inf`, `-inf`, `nan`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl Scalar {
    pub fn float(x: f64) -> Self {
        if x.is_finite() {
            Scalar::Float(round_sig(x))
        } else {
            Scalar::Text(x.to_string().to_lowercase())
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Float(x) => Some(*x),
            Scalar::Int(i) => Some(*i as f64),
            Scalar::Text(t) => t.parse().ok(),
            Scalar::Bool(_) => None,
        }
    }
}

impl From<f64> for Scalar {
    fn from(x: f64) -> Self {
        Scalar::float(x)
    }
}

impl From<u64> for Scalar {
    fn from(x: u64) -> Self {
        Scalar::Int(x as i64)
    }
}

impl From<usize> for Scalar {
    fn from(x: usize) -> Self {
        Scalar::Int(x as i64)
    }
}

impl From<bool> for Scalar {
    fn from(x: bool) -> Self {
        Scalar::Bool(x)
    }
}

impl From<&str> for Scalar {
    fn from(x: &str) -> Self {
        Scalar::Text(x.to_string())
    }
}

pub type Summary = BTreeMap<String, Scalar>;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) if x.is_finite() => format!("{x:.8e}"),
            Cell::Float(x) => x.to_string().to_lowercase(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Float)
    }
}

/// Column-ordered table; the first column is the independent variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width must match the header"
        );
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("cells are utf-8")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultBundle {
    pub summary: Summary,
    /// Keyed by output name.
    pub tables: BTreeMap<String, ResultTable>,
    /// Output name to file name.
    pub files: BTreeMap<String, String>,
}

impl ResultBundle {
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<Scalar>) {
        self.summary.insert(key.into(), value.into());
    }

    pub fn scalar(&self, key: &str) -> Option<f64> {
        self.summary.get(key).and_then(Scalar::as_f64)
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("scalars serialize");
        s.push('\n');
        s
    }

    fn file_name(&self, key: &str, ext: &str) -> String {
        self.files
            .get(key)
            .cloned()
            .unwrap_or_else(|| format!("{key}.{ext}"))
    }
}

pub fn parse_summary(text: &str) -> Result<Summary> {
    serde_json::from_str(text).map_err(|e| Error::config("summary", e.to_string()))
}

/// Write the summary and every table into `dir`, returning the paths written.
pub fn serialize_results(bundle: &ResultBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    let summary = dir.join(bundle.file_name("summary", "json"));
    std::fs::write(&summary, bundle.summary_json()).map_err(io(&summary))?;
    written.push(summary);
    for (key, table) in &bundle.tables {
        let path = dir.join(bundle.file_name(key, "csv"));
        std::fs::write(&path, table.to_csv()).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}
