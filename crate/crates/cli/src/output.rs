use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};

use crate::args::Format;

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, without `--out`.
    pub argv: Vec<String>,
    pub params: Json,
    pub version: String,
    pub seeds: Vec<u64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub generator: String,
}

#[derive(Debug, Clone)]
pub enum Value {
    /// Natural log of a probability.
    LnProb(f64),
    /// Computed quantity, printed to 6 significant digits.
    Num(f64),
    /// User-supplied value, printed as given.
    Given(f64),
    Int(u64),
    Text(String),
    Missing,
}

/// Six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() || (x.fract() == 0.0 && x.abs() < 1e15) {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        format!("{:.*}", (5 - mag) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

impl Value {
    fn render(&self, log: bool) -> String {
        match self {
            Value::LnProb(ln) if log => sig6(*ln),
            Value::LnProb(ln) => sig6(ln.exp()),
            Value::Num(x) => sig6(*x),
            Value::Given(x) => format!("{x}"),
            Value::Int(n) => n.to_string(),
            Value::Text(s) => s.clone(),
            Value::Missing => String::new(),
        }
    }

    fn json(&self, log: bool) -> Json {
        match self {
            Value::LnProb(ln) if log => json!(ln),
            Value::LnProb(ln) => json!(ln.exp()),
            Value::Num(x) | Value::Given(x) => json!(x),
            Value::Int(n) => json!(n),
            Value::Text(s) => json!(s),
            Value::Missing => Json::Null,
        }
    }
}

/// Result of one command: named fields and/or a table.
#[derive(Debug, Default)]
pub struct Output {
    pub fields: Vec<(String, Value)>,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Output {
    pub fn field(&mut self, name: impl Into<String>, value: Value) {
        self.fields.push((name.into(), value));
    }

    pub fn render(&self, format: Format, log: bool, manifest: &RunManifest) -> Result<String> {
        match format {
            Format::Text => Ok(self.text(log)),
            Format::Csv => self.csv(log),
            Format::Json => {
                let mut doc = Map::new();
                doc.insert("manifest".into(), serde_json::to_value(manifest)?);
                if !self.fields.is_empty() {
                    let report: Map<String, Json> =
                        self.fields.iter().map(|(k, v)| (k.clone(), v.json(log))).collect();
                    doc.insert("report".into(), Json::Object(report));
                }
                if !self.header.is_empty() {
                    let rows: Vec<Json> = self
                        .rows
                        .iter()
                        .map(|row| {
                            Json::Object(
                                self.header
                                    .iter()
                                    .zip(row)
                                    .map(|(h, v)| (h.to_string(), v.json(log)))
                                    .collect(),
                            )
                        })
                        .collect();
                    doc.insert("rows".into(), Json::Array(rows));
                }
                Ok(serde_json::to_string_pretty(&Json::Object(doc))? + "\n")
            }
        }
    }

    fn text(&self, log: bool) -> String {
        let mut s = String::new();
        let width = self.fields.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in &self.fields {
            let _ = writeln!(s, "{k:<width$}  {}", v.render(log));
        }
        if !self.header.is_empty() {
            if !self.fields.is_empty() {
                s.push('\n');
            }
            let cells: Vec<Vec<String>> = self
                .rows
                .iter()
                .map(|r| r.iter().map(|v| v.render(log)).collect())
                .collect();
            let widths: Vec<usize> = self
                .header
                .iter()
                .enumerate()
                .map(|(i, h)| cells.iter().map(|r| r[i].len()).chain([h.len()]).max().unwrap_or(0))
                .collect();
            let line = |items: Vec<&str>| {
                items
                    .iter()
                    .zip(&widths)
                    .map(|(c, w)| format!("{c:>w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            let _ = writeln!(s, "{}", line(self.header.clone()));
            for r in &cells {
                let _ = writeln!(s, "{}", line(r.iter().map(String::as_str).collect()));
            }
        }
        s
    }

    fn csv(&self, log: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.header.is_empty() {
            w.write_record(self.fields.iter().map(|(k, _)| k.as_str()))?;
            w.write_record(self.fields.iter().map(|(_, v)| v.render(log)))?;
        } else {
            w.write_record(&self.header)?;
            for r in &self.rows {
                w.write_record(r.iter().map(|v| v.render(log)))?;
            }
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub fn manifest_path(out: &Path) -> std::path::PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    name.into()
}
