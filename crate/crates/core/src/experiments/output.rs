//! Run directories: `meta.json`, versioned CSV tables and `summary.json`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};

pub const SERIES_SCHEMA: &str = "attnflow.series/1";
pub const TABLE_SCHEMA: &str = "attnflow.table/1";
pub const META_SCHEMA: &str = "attnflow.meta/1";
pub const SUMMARY_SCHEMA: &str = "attnflow.summary/1";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every column name a CSV may carry.
pub const FIELD_REGISTRY: &[&str] = &[
    "run_id", "trial", "time", "layer", "step", "m", "kappa", "gamma", "reference", "u", "R", "deviation",
    "participation_ratio", "max_overlap", "min_overlap", "f", "g", "stderr_f", "stderr_g", "eta", "alpha", "heads",
    "depth", "t_l", "label", "m0", "m_mean", "m_var", "m_drift", "chain_mean", "chain_stderr", "sde_mean", "sde_stderr",
    "gap", "gap_stderr", "censored", "self_gap", "self_gap_stderr", "i", "j", "max_z", "max_abs_diff", "d", "r", "mc",
    "mc_stderr", "expansion", "discrepancy",
];

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    F(f64),
    I(u64),
    S(String),
    B(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => format!("{x}"),
            Cell::I(x) => x.to_string(),
            Cell::S(s) => s.clone(),
            Cell::B(b) => b.to_string(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as u64)
    }
}
impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::B(x)
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}

/// A named CSV table. Time series (`time` column present) use
/// [`SERIES_SCHEMA`]; other tables use [`TABLE_SCHEMA`].
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&'static str]) -> Self {
        for c in columns {
            assert!(FIELD_REGISTRY.contains(c), "column `{c}` is not in the field registry");
        }
        Table {
            name: name.to_string(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width differs from header of `{}`", self.name);
        self.rows.push(row);
    }

    pub fn schema(&self) -> &'static str {
        if self.columns.contains(&"time") {
            SERIES_SCHEMA
        } else {
            TABLE_SCHEMA
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    /// `# schema=<id> table=<name>` followed by an RFC-4180 CSV body.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = format!("# schema={} table={}\n", self.schema(), self.name).into_bytes();
        {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(&mut out);
            w.write_record(&self.columns)?;
            for row in &self.rows {
                w.write_record(row.iter().map(Cell::render))?;
            }
            w.flush()?;
        }
        Ok(out)
    }
}

/// Header comment and column names of a CSV written by [`Table::to_bytes`].
pub fn read_header(path: &Path) -> Result<(String, Vec<String>)> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    let schema = first
        .strip_prefix("# schema=")
        .and_then(|s| s.split_whitespace().next())
        .ok_or_else(|| Error::Shape(format!("{}: missing schema comment", path.display())))?
        .to_string();
    let header = lines.next().transpose()?.unwrap_or_default();
    let cols = header.trim_end().split(',').map(str::to_string).collect();
    Ok((schema, cols))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Identity of a run: hash of the resolved config (minus output location and
/// thread count) and the library version.
pub fn run_id(cfg: &RunConfig) -> String {
    let body = serde_json::to_string(&cfg.identity()).expect("config serializes");
    sha256_hex(format!("{VERSION}\n{body}").as_bytes())[..16].to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub schema: String,
    pub run_id: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub config: RunConfig,
    pub status: RunStatus,
    /// Values that were guessed or defaulted where the source is silent.
    pub flags: Vec<String>,
    pub notes: BTreeMap<String, serde_json::Value>,
    pub wall_time_s: Option<f64>,
    /// CSV file name → SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Meta {
    pub fn load(path: &Path) -> Result<Meta> {
        let text = fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let meta: Meta =
            serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        if meta.schema != META_SCHEMA {
            return Err(Error::config("schema", format!("expected {META_SCHEMA}, found {}", meta.schema)));
        }
        Ok(meta)
    }
}

/// Single writer for one run directory.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates `path`; an existing non-empty directory is refused.
    pub fn create(path: &Path) -> Result<RunDir> {
        if path.exists() && fs::read_dir(path)?.next().is_some() {
            return Err(Error::config("out_dir", format!("{} exists and is not empty", path.display())));
        }
        fs::create_dir_all(path)?;
        Ok(RunDir { path: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let tmp = self.path.join(format!(".{name}.tmp"));
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(tmp, self.path.join(name))?;
        Ok(())
    }

    pub fn write_meta(&self, meta: &Meta) -> Result<()> {
        self.write_atomic("meta.json", &serde_json::to_vec_pretty(meta)?)
    }

    /// Writes the table and returns the SHA-256 of the bytes written.
    pub fn write_table(&self, table: &Table) -> Result<String> {
        let bytes = table.to_bytes()?;
        self.write_atomic(&table.file_name(), &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn write_summary(&self, summary: &serde_json::Value) -> Result<()> {
        self.write_atomic("summary.json", &serde_json::to_vec_pretty(summary)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_bytes_have_schema_line_and_header() {
        let mut t = Table::new("order", &["run_id", "trial", "time", "m"]);
        t.push(vec!["abc".into(), 0usize.into(), 0.5.into(), 0.25.into()]);
        let s = String::from_utf8(t.to_bytes().unwrap()).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("# schema=attnflow.series/1 table=order"));
        assert_eq!(lines.next(), Some("run_id,trial,time,m"));
        assert_eq!(lines.next(), Some("abc,0,0.5,0.25"));
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, f64::MIN_POSITIVE] {
            let c = Cell::F(x).render();
            assert_eq!(c.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    #[should_panic(expected = "field registry")]
    fn unregistered_column_panics() {
        Table::new("x", &["bogus"]);
    }

    #[test]
    fn text_cells_are_quoted() {
        let mut t = Table::new("grid", &["label", "eta"]);
        t.push(vec!["a,b".into(), 1.0.into()]);
        let s = String::from_utf8(t.to_bytes().unwrap()).unwrap();
        assert!(s.contains("\"a,b\",1"));
        assert!(s.starts_with("# schema=attnflow.table/1"));
    }
}
