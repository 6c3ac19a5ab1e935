// SPDX-License-Identifier: MIT OR Apache-2.0

//! Table, manifest and plot emission.
//!
//! A run produces an [`ExperimentReport`]: a [`Manifest`] plus named tables
//! and optional SVG figures. [`emit`] writes one CSV per table, one SVG per
//! figure and `manifest.json`. Numbers are printed with six significant
//! digits and every CSV row ends with the config digest of the manifest, so
//! CSV bytes depend only on configuration, seed and inputs.

pub mod svg;
pub mod tables;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use crate::backend::BackendMeta;
use crate::error::{Error, Result};

/// Name of the digest column appended to every table.
pub const DIGEST_COLUMN: &str = "digest";

/// Short SHA-256 digest of the canonical (key-sorted) JSON form of `config`.
pub fn config_digest<T: Serialize>(config: &T) -> String {
    let value = serde_json::to_value(config).expect("config serializes");
    let canonical = serde_json::to_string(&value).expect("value serializes");
    hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
}

/// Formats `x` with six significant digits, `%g` style: fixed notation for
/// decimal exponents in `[-4, 6)`, scientific otherwise, trailing zeros
/// dropped.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    /// Integer.
    Int(i64),
    /// Real number, printed by [`format_number`].
    Float(f64),
    /// Text.
    Text(String),
    /// Boolean.
    Bool(bool),
    /// Empty cell.
    Missing,
}

impl Cell {
    /// Rendered CSV field.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_number(*v),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Missing => String::new(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Missing, Into::into)
    }
}

/// A named table with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem.
    pub name: String,
    /// Column names, without the digest column.
    pub columns: Vec<String>,
    /// Rows, each as long as `columns`.
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    /// Empty table.
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends a row.
    ///
    /// # Panics
    /// If the row length differs from the column count.
    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row of table {} has the wrong width",
            self.name
        );
        self.rows.push(row);
    }

    /// CSV bytes with the digest column appended.
    pub fn to_csv(&self, digest: &str) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header: Vec<&str> = self.columns.iter().map(String::as_str).collect();
        header.push(DIGEST_COLUMN);
        w.write_record(&header)?;
        for row in &self.rows {
            let mut fields: Vec<String> = row.iter().map(Cell::render).collect();
            fields.push(digest.to_string());
            w.write_record(&fields)?;
        }
        w.into_inner()
            .map_err(|e| Error::InvalidInput(format!("csv buffer: {e}")))
    }
}

/// An SVG figure.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    /// File stem.
    pub name: String,
    /// Document text.
    pub svg: String,
}

/// A table listed in the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    /// Table name.
    pub name: String,
    /// File name relative to the output directory.
    pub file: String,
    /// Row count.
    pub rows: usize,
    /// Column names including the digest column.
    pub columns: Vec<String>,
}

/// Provenance of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Program name.
    pub tool: String,
    /// Program version.
    pub version: String,
    /// Pipeline that produced the outputs.
    pub command: String,
    /// Run seed.
    pub seed: u64,
    /// [`config_digest`] of the effective configuration.
    pub config_digest: String,
    /// The effective configuration.
    pub config: serde_json::Value,
    /// Backend description, when one was used.
    pub backend: Option<BackendMeta>,
    /// Readout used for intermediate layers.
    pub layer_readout: Option<String>,
    /// Start time (RFC 3339, UTC).
    pub started_at: String,
    /// End time (RFC 3339, UTC).
    pub finished_at: String,
    /// Tables written.
    pub tables: Vec<TableEntry>,
    /// Figures written.
    pub figures: Vec<String>,
    /// Other files written by the pipeline.
    pub files: Vec<String>,
    /// Non-fatal problems.
    pub warnings: Vec<String>,
}

/// Current UTC time in RFC 3339, or the time given by `SOURCE_DATE_EPOCH`
/// when that variable holds a Unix timestamp.
pub fn timestamp() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| OffsetDateTime::from_unix_timestamp(secs).ok())
        .unwrap_or_else(OffsetDateTime::now_utc);
    now.replace_nanosecond(0)
        .unwrap_or(now)
        .format(&Rfc3339)
        .unwrap_or_default()
}

impl Manifest {
    /// Manifest for `command` with `config`, started now.
    pub fn new<T: Serialize>(command: &str, seed: u64, config: &T) -> Self {
        Manifest {
            tool: "aspectprobe".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config_digest: config_digest(config),
            config: serde_json::to_value(config).expect("config serializes"),
            backend: None,
            layer_readout: None,
            started_at: timestamp(),
            finished_at: String::new(),
            tables: Vec::new(),
            figures: Vec::new(),
            files: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

/// Everything a run writes.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    /// Provenance.
    pub manifest: Manifest,
    /// Tables in emission order.
    pub tables: Vec<Table>,
    /// Figures in emission order.
    pub figures: Vec<Figure>,
}

impl ExperimentReport {
    /// Report without tables.
    pub fn new(manifest: Manifest) -> Self {
        ExperimentReport {
            manifest,
            tables: Vec::new(),
            figures: Vec::new(),
        }
    }

    /// Adds a table.
    pub fn table(&mut self, table: Table) -> &mut Self {
        self.tables.push(table);
        self
    }

    /// Adds a figure.
    pub fn figure(&mut self, figure: Figure) -> &mut Self {
        self.figures.push(figure);
        self
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes tables, figures and `manifest.json` into `out_dir`, creating it if
/// needed. Returns the written paths, manifest last.
pub fn emit(report: &ExperimentReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = report.manifest.clone();
    let digest = manifest.config_digest.clone();
    let mut written = Vec::new();
    for table in &report.tables {
        if report.tables.iter().filter(|t| t.name == table.name).count() > 1 {
            return Err(Error::InvalidInput(format!("duplicate table name {:?}", table.name)));
        }
        let file = format!("{}.csv", table.name);
        let path = dir.join(&file);
        write(&path, &table.to_csv(&digest)?)?;
        let mut columns = table.columns.clone();
        columns.push(DIGEST_COLUMN.into());
        manifest.tables.push(TableEntry {
            name: table.name.clone(),
            file,
            rows: table.rows.len(),
            columns,
        });
        written.push(path);
    }
    for fig in &report.figures {
        let file = format!("{}.svg", fig.name);
        let path = dir.join(&file);
        write(&path, fig.svg.as_bytes())?;
        manifest.figures.push(file);
        written.push(path);
    }
    if manifest.finished_at.is_empty() {
        manifest.finished_at = timestamp();
    }
    let path = dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write(&path, json.as_bytes())?;
    written.push(path);
    Ok(written)
}

/// A table read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    /// Header including the digest column.
    pub header: Vec<String>,
    /// Raw fields.
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    /// Index of `column`.
    pub fn column(&self, column: &str) -> Option<usize> {
        self.header.iter().position(|h| h == column)
    }
}

/// Reads a CSV written by [`emit`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<CsvTable> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(CsvTable { header, rows })
}

/// A run directory checked against its manifest.
#[derive(Debug, Clone)]
pub struct RunCheck {
    /// The manifest.
    pub manifest: Manifest,
    /// Problems found; empty when every table is traceable.
    pub problems: Vec<String>,
}

/// Loads `manifest.json` from `dir` and checks that every listed table exists,
/// has the listed header and row count, and carries the manifest digest in
/// every row.
pub fn check_run(dir: impl AsRef<Path>) -> Result<RunCheck> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut problems = Vec::new();
    for entry in &manifest.tables {
        let t = match read_csv(dir.join(&entry.file)) {
            Ok(t) => t,
            Err(e) => {
                problems.push(format!("{}: {e}", entry.file));
                continue;
            }
        };
        if t.header != entry.columns {
            problems.push(format!("{}: header differs from manifest", entry.file));
        }
        if t.rows.len() != entry.rows {
            problems.push(format!(
                "{}: {} rows, manifest lists {}",
                entry.file,
                t.rows.len(),
                entry.rows
            ));
        }
        match t.column(DIGEST_COLUMN) {
            Some(i) => {
                if let Some(bad) = t.rows.iter().position(|r| r.get(i) != Some(&manifest.config_digest)) {
                    problems.push(format!("{}: row {} carries a foreign digest", entry.file, bad + 1));
                }
            }
            None => problems.push(format!("{}: no digest column", entry.file)),
        }
    }
    Ok(RunCheck { manifest, problems })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(1.0), "1");
        assert_eq!(format_number(0.5), "0.5");
        assert_eq!(format_number(2.0 / 3.0), "0.666667");
        assert_eq!(format_number(123456.0), "123456");
        assert_eq!(format_number(1234567.0), "1.23457e+06");
        assert_eq!(format_number(0.0001234567), "0.000123457");
        assert_eq!(format_number(1.5e-7), "1.5e-07");
        assert_eq!(format_number(-0.25), "-0.25");
        assert_eq!(format_number(1.5e-5), "1.5e-05");
        assert_eq!(format_number(f64::NAN), "nan");
        assert_eq!(format_number(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn rounding_crosses_into_next_decade() {
        // 999999.5 rounds to 1.00000e6 in scientific form
        assert_eq!(format_number(999999.5), "1e+06");
        assert_eq!(format_number(0.99999999), "1");
    }

    #[test]
    fn config_digest_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":[1,2]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"a":[1,2],"b":1}"#).unwrap();
        assert_eq!(config_digest(&a), config_digest(&b));
        assert_eq!(config_digest(&a).len(), 16);
        let c: serde_json::Value = serde_json::from_str(r#"{"a":[2,1],"b":1}"#).unwrap();
        assert_ne!(config_digest(&a), config_digest(&c));
    }

    #[test]
    fn empty_report_writes_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let report = ExperimentReport::new(Manifest::new("report", 7, &serde_json::json!({})));
        let written = emit(&report, dir.path()).unwrap();
        assert_eq!(written.len(), 1);
        assert!(written[0].ends_with("manifest.json"));
        let check = check_run(dir.path()).unwrap();
        assert!(check.problems.is_empty());
        assert_eq!(check.manifest.seed, 7);
    }

    #[test]
    fn csv_rows_carry_digest_and_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new("t", &["a", "b"]);
        t.push(vec![Cell::from(1usize), Cell::from(0.125)]);
        t.push(vec![Cell::from("x,y"), Cell::Missing]);
        let mut report = ExperimentReport::new(Manifest::new("x", 1, &serde_json::json!({"k": 1})));
        report.table(t);
        emit(&report, dir.path()).unwrap();
        let digest = config_digest(&serde_json::json!({"k": 1}));
        let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(text, format!("a,b,digest\n1,0.125,{digest}\n\"x,y\",,{digest}\n"));
        assert!(check_run(dir.path()).unwrap().problems.is_empty());
        std::fs::write(dir.path().join("t.csv"), "a,b,digest\n1,2,zzz\n").unwrap();
        let problems = check_run(dir.path()).unwrap().problems;
        assert!(problems.iter().any(|p| p.contains("foreign digest")));
        assert!(problems.iter().any(|p| p.contains("rows")));
    }

    #[test]
    fn duplicate_table_names_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = ExperimentReport::new(Manifest::new("x", 1, &serde_json::json!({})));
        report.table(Table::new("t", &["a"])).table(Table::new("t", &["a"]));
        assert!(emit(&report, dir.path()).is_err());
    }

    #[test]
    fn source_date_epoch_fixes_timestamps() {
        // only check the format; the variable is process-global
        let ts = timestamp();
        assert!(ts.ends_with('Z') && ts.contains('T'), "{ts}");
    }
}
