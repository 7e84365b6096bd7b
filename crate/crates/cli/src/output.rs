use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance embedded in every output. Timestamps live only in the sidecar
/// `run_manifest.json`, so repeated runs produce identical data files.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished: Option<String>,
}

/// SHA-256 of the canonical serialisation (object keys sorted).
pub fn config_hash(config: &Value) -> String {
    let canonical = serde_json::to_string(&canonicalize(config)).expect("serialisable");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn canonicalize(v: &Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = serde_json::Map::new();
            for k in keys {
                out.insert(k.clone(), canonicalize(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(a) => Value::Array(a.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

impl RunManifest {
    pub fn new(command: &str, config: &Value, seed: u64, outputs: Vec<PathBuf>) -> Self {
        RunManifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config_hash: config_hash(config),
            seed,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            started: None,
            finished: None,
        }
    }

    pub fn json_line(&self) -> String {
        serde_json::to_string(self).expect("serialisable")
    }
}

/// Float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
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

impl From<u8> for Cell {
    fn from(v: u8) -> Self {
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

/// CSV with a `# manifest: {...}` first line.
pub struct Csv {
    header: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl Csv {
    pub fn new(header: &[&'static str]) -> Self {
        Csv {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn render(&self, manifest: &RunManifest) -> String {
        let mut s = String::new();
        writeln!(s, "# manifest: {}", manifest.json_line()).unwrap();
        writeln!(s, "{}", self.header.join(",")).unwrap();
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Int(i) => i.to_string(),
                    Cell::Float(x) => fmt_f64(*x),
                    Cell::Text(t) => t.clone(),
                })
                .collect();
            writeln!(s, "{}", cells.join(",")).unwrap();
        }
        s
    }
}

pub struct OutDir {
    pub dir: PathBuf,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(OutDir { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        std::fs::write(&p, contents)?;
        Ok(p)
    }

    pub fn write_sidecar(&self, manifest: &RunManifest) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(manifest).expect("serialisable");
        self.write("run_manifest.json", &(text + "\n"))?;
        Ok(())
    }
}

/// Pretty JSON of `{ "manifest": ..., <payload fields> }`.
pub fn json_with_manifest(manifest: &RunManifest, payload: impl Serialize) -> String {
    let mut v = serde_json::to_value(payload).expect("serialisable");
    if let Value::Object(map) = &mut v {
        map.insert("manifest".into(), serde_json::to_value(manifest).expect("serialisable"));
    }
    serde_json::to_string_pretty(&v).expect("serialisable") + "\n"
}
