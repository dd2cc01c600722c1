//! CSV and JSON artifact schemas shared by every emitter and reader.
//!
//! CSV files carry a header row, UTF-8 text and LF line endings. Numbers use
//! the shortest decimal string that parses back to the same `f64`, so a file
//! read and rewritten is byte-identical. JSON documents are pretty-printed
//! with sorted keys.

use serde::Serialize;
use serde_json::Value;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemaId {
    Dispersion,
    NkT,
    NpairT,
    CpmT,
    NkAvg,
    Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    /// Finite float.
    Finite,
    /// Finite float or empty field.
    OptionalFinite,
    Integer,
    /// `A` or `B`.
    Layer,
    /// One of the topology class names.
    Topology,
}

#[derive(Debug, Clone, Copy)]
pub struct Column {
    pub name: &'static str,
    pub kind: ColumnKind,
}

const fn col(name: &'static str, kind: ColumnKind) -> Column {
    Column { name, kind }
}

use ColumnKind::*;

const DISPERSION: &[Column] = &[
    col("kx", Finite),
    col("ky", Finite),
    col("eps", Finite),
    col("re_omega", Finite),
    col("im_omega", Finite),
    col("eps_tilde", Finite),
    col("re_xi", Finite),
    col("im_xi", Finite),
];
const NK_T: &[Column] = &[
    col("t", Finite),
    col("kx", Finite),
    col("ky", Finite),
    col("layer", Layer),
    col("value", Finite),
    col("stderr", Finite),
];
const NPAIR_T: &[Column] = &[col("t", Finite), col("n_pair", Finite), col("stderr", Finite)];
const CPM_T: &[Column] = &[
    col("t", Finite),
    col("layer", Layer),
    col("dx", Integer),
    col("dy", Integer),
    col("re", Finite),
    col("im", Finite),
];
const NK_AVG: &[Column] = &[col("kx", Finite), col("ky", Finite), col("mean", Finite), col("stderr", Finite)];
const SUMMARY: &[Column] = &[
    col("param", Finite),
    col("gamma", Finite),
    col("kx_star", OptionalFinite),
    col("ky_star", OptionalFinite),
    col("topology", Topology),
    col("component_count", Integer),
];

pub const TOPOLOGY_NAMES: &[&str] = &["empty", "points", "ring", "arcs", "disks"];

impl SchemaId {
    pub fn columns(self) -> &'static [Column] {
        match self {
            SchemaId::Dispersion => DISPERSION,
            SchemaId::NkT => NK_T,
            SchemaId::NpairT => NPAIR_T,
            SchemaId::CpmT => CPM_T,
            SchemaId::NkAvg => NK_AVG,
            SchemaId::Summary => SUMMARY,
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            SchemaId::Dispersion => "dispersion.csv",
            SchemaId::NkT => "nk_t.csv",
            SchemaId::NpairT => "npair_t.csv",
            SchemaId::CpmT => "cpm_t.csv",
            SchemaId::NkAvg => "nk_avg.csv",
            SchemaId::Summary => "summary.csv",
        }
    }

    pub fn from_file_name(name: &str) -> Option<Self> {
        ALL_CSV.iter().copied().find(|s| s.file_name() == name)
    }
}

pub const ALL_CSV: &[SchemaId] = &[
    SchemaId::Dispersion,
    SchemaId::NkT,
    SchemaId::NpairT,
    SchemaId::CpmT,
    SchemaId::NkAvg,
    SchemaId::Summary,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Data row, 1-based, excluding the header.
    pub row: Option<usize>,
    pub column: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.row, &self.column) {
            (Some(r), Some(c)) => write!(f, "row {r}, column {c}: {}", self.message),
            (None, Some(c)) => write!(f, "column {c}: {}", self.message),
            (Some(r), None) => write!(f, "row {r}: {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(v) => fmt_f64(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

/// Shortest round-trip decimal text for `v`, switching to exponent form for
/// very small or very large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn check_field(kind: ColumnKind, field: &str) -> Option<String> {
    match kind {
        Finite | OptionalFinite => {
            if field.is_empty() {
                return (kind == Finite).then(|| "empty field where a number is required".to_string());
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => None,
                Ok(v) => Some(format!("non-finite value {v}")),
                Err(_) => Some(format!("`{field}` is not a number")),
            }
        }
        Integer => field.parse::<i64>().err().map(|_| format!("`{field}` is not an integer")),
        Layer => (!matches!(field, "A" | "B")).then(|| format!("`{field}` is not a layer label")),
        Topology => (!TOPOLOGY_NAMES.contains(&field)).then(|| format!("`{field}` is not a topology class")),
    }
}

/// Checks a header and string records against `id`, collecting every violation.
pub fn validate_records<I>(header: &[String], records: I, id: SchemaId) -> Vec<Violation>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let cols = id.columns();
    let mut out = Vec::new();
    let mut position = Vec::with_capacity(cols.len());
    for c in cols {
        match header.iter().position(|h| h == c.name) {
            Some(p) => position.push(Some(p)),
            None => {
                out.push(Violation { row: None, column: Some(c.name.into()), message: "missing column".into() });
                position.push(None);
            }
        }
    }
    for h in header {
        if !cols.iter().any(|c| c.name == h) {
            out.push(Violation { row: None, column: Some(h.clone()), message: "unexpected column".into() });
        }
    }
    if out.is_empty() && header.iter().map(String::as_str).ne(cols.iter().map(|c| c.name)) {
        out.push(Violation { row: None, column: None, message: "columns out of order".into() });
    }
    for (n, rec) in records.into_iter().enumerate() {
        let row = n + 1;
        if rec.len() != header.len() {
            out.push(Violation {
                row: Some(row),
                column: None,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
            continue;
        }
        for (c, p) in cols.iter().zip(&position) {
            if let Some(p) = *p {
                if let Some(msg) = check_field(c.kind, &rec[p]) {
                    out.push(Violation { row: Some(row), column: Some(c.name.into()), message: msg });
                }
            }
        }
    }
    out
}

/// Parsed CSV contents as strings.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub records: Vec<Vec<String>>,
}

pub fn read_raw(path: &Path) -> Result<RawTable> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_raw(&text)
}

pub fn parse_raw(text: &str) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let mut records = Vec::new();
    for r in rdr.records() {
        records.push(r?.iter().map(str::to_string).collect());
    }
    Ok(RawTable { header, records })
}

/// Validates a CSV file; errors only when it cannot be read or parsed as CSV.
pub fn validate_path(path: &Path, id: SchemaId) -> Result<Vec<Violation>> {
    let raw = read_raw(path)?;
    Ok(validate_records(&raw.header, raw.records, id))
}

/// Reads a CSV file and rejects it unless it conforms to `id`.
pub fn read_validated(path: &Path, id: SchemaId) -> Result<RawTable> {
    let raw = read_raw(path)?;
    let v = validate_records(&raw.header, raw.records.clone(), id);
    if let Some(first) = v.first() {
        return Err(Error::Schema(format!("{}: {} ({} violations)", path.display(), first, v.len())));
    }
    Ok(raw)
}

pub fn render_csv(id: SchemaId, rows: &[Vec<Cell>]) -> Result<String> {
    let header: Vec<String> = id.columns().iter().map(|c| c.name.to_string()).collect();
    let records: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(Cell::render).collect()).collect();
    let v = validate_records(&header, records.iter().cloned(), id);
    if let Some(first) = v.first() {
        return Err(Error::Schema(format!("{}: {} ({} violations)", id.file_name(), first, v.len())));
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(&header)?;
    for r in &records {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Validates rows against `id` and writes them to `path`.
pub fn write_csv(path: &Path, id: SchemaId, rows: &[Vec<Cell>]) -> Result<()> {
    let text = render_csv(id, rows)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Re-renders a validated raw table; used to check byte-level round trips.
pub fn rewrite_raw(raw: &RawTable, id: SchemaId) -> Result<String> {
    let cols = id.columns();
    let rows: Vec<Vec<Cell>> = raw
        .records
        .iter()
        .map(|r| {
            r.iter()
                .zip(cols)
                .map(|(s, c)| match c.kind {
                    Finite => Cell::Float(s.parse().unwrap_or(f64::NAN)),
                    OptionalFinite if s.is_empty() => Cell::Empty,
                    OptionalFinite => Cell::Float(s.parse().unwrap_or(f64::NAN)),
                    Integer => Cell::Int(s.parse().unwrap_or_default()),
                    Layer | Topology => Cell::Text(s.clone()),
                })
                .collect()
        })
        .collect();
    render_csv(id, &rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JsonSchemaId {
    Manifest,
    Report,
    Comparison,
}

impl JsonSchemaId {
    pub fn required_keys(self) -> &'static [&'static str] {
        match self {
            JsonSchemaId::Manifest => &["config", "git_describe", "seed", "solver", "wall_time_s"],
            JsonSchemaId::Report => &["component_count", "gamma", "k_star", "topology"],
            JsonSchemaId::Comparison => &["geometry", "pairs", "regime_one_end", "times"],
        }
    }
}

pub fn validate_json(value: &Value, id: JsonSchemaId) -> Vec<Violation> {
    let Some(obj) = value.as_object() else {
        return vec![Violation { row: None, column: None, message: "top level is not an object".into() }];
    };
    let mut out: Vec<Violation> = id
        .required_keys()
        .iter()
        .filter(|k| !obj.contains_key(**k))
        .map(|k| Violation { row: None, column: Some(k.to_string()), message: "missing key".into() })
        .collect();
    if id == JsonSchemaId::Report {
        match obj.get("topology").and_then(Value::as_str) {
            Some(t) if TOPOLOGY_NAMES.contains(&t) => {}
            Some(t) => out.push(Violation {
                row: None,
                column: Some("topology".into()),
                message: format!("`{t}` is not a topology class"),
            }),
            None if obj.contains_key("topology") => out.push(Violation {
                row: None,
                column: Some("topology".into()),
                message: "not a string".into(),
            }),
            None => {}
        }
        if let Some(g) = obj.get("gamma") {
            if !g.as_f64().is_some_and(f64::is_finite) {
                out.push(Violation { row: None, column: Some("gamma".into()), message: "not a finite number".into() });
            }
        }
    }
    out
}

/// Pretty JSON with keys sorted at every level.
pub fn render_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's default map is ordered by key
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, id: JsonSchemaId) -> Result<()> {
    let v = serde_json::to_value(value)?;
    let violations = validate_json(&v, id);
    if let Some(first) = violations.first() {
        return Err(Error::Schema(format!("{}: {}", path.display(), first)));
    }
    std::fs::write(path, render_json(&v)?)?;
    Ok(())
}

pub fn read_json(path: &Path, id: JsonSchemaId) -> Result<Value> {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if let Some(first) = validate_json(&v, id).first() {
        return Err(Error::Schema(format!("{}: {}", path.display(), first)));
    }
    Ok(v)
}
