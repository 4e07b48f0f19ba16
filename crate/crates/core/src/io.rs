//! JSONL and JSON file helpers shared by every on-disk stream.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Open { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl IoError {
    pub fn invalid(path: &Path, message: impl Into<String>) -> Self {
        IoError::Invalid { path: path.to_path_buf(), message: message.into() }
    }
}

/// Parses every non-blank line of `text` as one record. Line numbers in
/// errors are 1-based and refer to `path`.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<T>, IoError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record =
            serde_json::from_str(line).map_err(|e| IoError::Parse { path: path.to_path_buf(), line: idx + 1, message: e.to_string() })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(|source| IoError::Open { path: path.to_path_buf(), source })?;
    let mut text = String::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::Parse { path: path.to_path_buf(), line: idx + 1, message: e.to_string() })?;
        text.push_str(&line);
        text.push('\n');
    }
    parse_jsonl(&text, path)
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    write_text(path, &to_jsonl(records))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Open { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse { path: path.to_path_buf(), line: e.line(), message: e.to_string() })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| IoError::Open { path: parent.to_path_buf(), source })?;
        }
    }
    let file = File::create(path).map_err(|source| IoError::Open { path: path.to_path_buf(), source })?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|source| IoError::Open { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Row {
        a: u32,
    }

    #[test]
    fn parse_error_names_the_line() {
        let text = "{\"a\":1}\n\n{\"a\":\"x\"}\n";
        let err = parse_jsonl::<Row>(text, Path::new("rows.jsonl")).unwrap_err();
        assert!(err.to_string().starts_with("rows.jsonl:3:"), "{err}");
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let rows: Vec<Row> = parse_jsonl("{\"a\":4,\"extra\":true}\n", Path::new("x")).unwrap();
        assert_eq!(rows, vec![Row { a: 4 }]);
    }
}
