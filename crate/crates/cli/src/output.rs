//! Result files, the manifest sidecar and number formatting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// One emitted result: a file name and its full contents.
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    pub fn json(name: impl Into<String>, value: &impl Serialize) -> Result<Self, CliError> {
        let mut contents = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        contents.push('\n');
        Ok(Artifact {
            name: name.into(),
            contents,
        })
    }

    pub fn csv(name: impl Into<String>, table: Table) -> Self {
        Artifact {
            name: name.into(),
            contents: table.finish(),
        }
    }
}

/// CSV with a header row; numbers are written round-trippable.
pub struct Table {
    text: String,
    columns: usize,
}

pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Scientific notation with 17 significant digits.
pub fn number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            text: header.join(",") + "\n",
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        assert_eq!(cells.len(), self.columns, "row width does not match the header");
        let line: Vec<String> = cells
            .into_iter()
            .map(|c| match c {
                Cell::Int(i) => i.to_string(),
                Cell::Num(v) => number(v),
                Cell::Text(t) => t,
            })
            .collect();
        let _ = writeln!(self.text, "{}", line.join(","));
    }

    fn finish(self) -> String {
        self.text
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    model: Option<String>,
    parameters: &'a BTreeMap<String, Value>,
    seed: Option<u64>,
    outputs: Vec<String>,
    tool_version: &'static str,
    /// Seconds since the epoch; `SOURCE_DATE_EPOCH` when set.
    timestamp: u64,
}

fn timestamp() -> Result<u64, CliError> {
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("SOURCE_DATE_EPOCH must be an integer, got `{v}`"))),
        Err(_) => Ok(SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())),
    }
}

pub struct RunRecord<'a> {
    pub command: &'a str,
    pub model: Option<&'a Path>,
    pub parameters: BTreeMap<String, Value>,
    pub seed: Option<u64>,
}

/// Writes the artifacts and a `<command>.manifest.json` into `dir`, or the
/// artifacts alone to stdout.
pub fn emit(record: &RunRecord, artifacts: &[Artifact], dir: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let Some(dir) = dir else {
        let mut out = std::io::stdout().lock();
        for a in artifacts {
            out.write_all(a.contents.as_bytes()).map_err(|e| CliError::Io(e.to_string()))?;
        }
        return Ok(Vec::new());
    };
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::with_capacity(artifacts.len() + 1);
    for a in artifacts {
        let path = dir.join(&a.name);
        fs::write(&path, &a.contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    let manifest = Manifest {
        command: record.command,
        model: record.model.map(|p| p.display().to_string()),
        parameters: &record.parameters,
        seed: record.seed,
        outputs: artifacts.iter().map(|a| a.name.clone()).collect(),
        tool_version: env!("CARGO_PKG_VERSION"),
        timestamp: timestamp()?,
    };
    let path = dir.join(format!("{}.manifest.json", record.command));
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    written.push(path);
    Ok(written)
}
