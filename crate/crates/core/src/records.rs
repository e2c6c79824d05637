//! Line-delimited JSON records.
//!
//! Floats are written with 6 significant digits, except under the keys in
//! [`FULL_PRECISION_KEYS`], which hold filter inputs that must survive a
//! round trip bit-exactly.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Number, Value};
use thiserror::Error;

pub const SIGNIFICANT_DIGITS: usize = 6;

/// Keys whose numeric values are written at full precision.
pub const FULL_PRECISION_KEYS: [&str; 3] = ["minade_free", "minade_pf", "free_iou"];

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("serialize: {0}")]
    Serialize(String),
}

/// Rounds to `digits` significant decimal digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    let s = format!("{:.*e}", digits.saturating_sub(1), x);
    let r: f64 = s.parse().expect("formatted float parses");
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                if let Some(r) = Number::from_f64(round_sig(x, SIGNIFICANT_DIGITS)) {
                    *n = r;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => {
            for (k, item) in map.iter_mut() {
                if !FULL_PRECISION_KEYS.contains(&k.as_str()) {
                    round_value(item);
                }
            }
        }
        _ => {}
    }
}

/// One record as a single JSON line, without the newline.
pub fn to_line<T: Serialize>(record: &T) -> Result<String, RecordError> {
    let mut value =
        serde_json::to_value(record).map_err(|e| RecordError::Serialize(e.to_string()))?;
    round_value(&mut value);
    serde_json::to_string(&value).map_err(|e| RecordError::Serialize(e.to_string()))
}

pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, records: &[T]) -> Result<(), RecordError> {
    let io_err = |source| RecordError::Io {
        path: "<output>".into(),
        source,
    };
    for r in records {
        out.write_all(to_line(r)?.as_bytes()).map_err(io_err)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Parses every non-blank line; errors carry 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(input: R) -> Result<Vec<T>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|source| RecordError::Io {
            path: "<input>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RecordError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, records: &[T]) -> Result<(), RecordError> {
    let file = File::create(path).map_err(|source| RecordError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_jsonl(BufWriter::new(file), records).map_err(|e| with_path(e, path))
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RecordError> {
    let file = File::open(path).map_err(|source| RecordError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_jsonl(BufReader::new(file)).map_err(|e| with_path(e, path))
}

fn with_path(e: RecordError, path: &Path) -> RecordError {
    match e {
        RecordError::Io { source, .. } => RecordError::Io {
            path: path.display().to_string(),
            source,
        },
        RecordError::Parse { line, message } => RecordError::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}
