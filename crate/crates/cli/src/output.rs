use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use trajgpt::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

/// Provenance stamped into every output.
pub fn meta(command: &str, config_hash: &str) -> Value {
    json!({ "tool": "trajgpt", "version": VERSION, "command": command, "config_hash": config_hash })
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Writes `value` as pretty JSON with a `meta` field merged in.
pub fn write_report<S: Serialize>(path: &Path, meta: &Value, value: &S) -> Result<()> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::Format(e.to_string()))?;
    match &mut v {
        Value::Object(map) => {
            map.insert("meta".into(), meta.clone());
        }
        other => {
            *other = json!({ "meta": meta, "report": other.clone() });
        }
    }
    let text = serde_json::to_string_pretty(&v).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Line-delimited JSON output whose first line is `{"meta": …}`.
pub struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path, meta: &Value) -> Result<Self> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = JsonLines { path: path.to_path_buf(), out: BufWriter::new(file) };
        w.write(&json!({ "meta": meta }))?;
        Ok(w)
    }

    /// Reopens an existing log for appending, keeping only the meta line and
    /// records for which `keep` holds.
    pub fn reopen(path: &Path, meta: &Value, keep: impl Fn(&Value) -> bool) -> Result<Self> {
        let mut kept = Vec::new();
        if let Ok(file) = File::open(path) {
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| io_err(path, e))?;
                if let Ok(v) = serde_json::from_str::<Value>(&line) {
                    if v.get("meta").is_none() && keep(&v) {
                        kept.push(line);
                    }
                }
            }
        }
        let mut w = Self::create(path, meta)?;
        for line in kept {
            writeln!(w.out, "{line}").map_err(|e| io_err(&w.path, e))?;
        }
        Ok(w)
    }

    pub fn write<S: Serialize>(&mut self, record: &S) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| io_err(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| io_err(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| io_err(&self.path, e))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary file and renames, so a checkpoint is never
/// half-written.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}
