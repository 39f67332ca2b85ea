//! Newline-delimited JSON artifact files shared by every pipeline stage.
//!
//! Each file starts with one header object describing the producing tool,
//! the artifact kind, a digest of the configuration that shaped the content,
//! and a creation timestamp. Records follow, one JSON object per line, with
//! keys serialized in sorted order so reruns produce identical bytes.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const TOOL_NAME: &str = "s7ttl";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path} line {line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("{path}: expected artifact kind {expected:?}, found {found:?}")]
    WrongKind { path: String, expected: String, found: String },
}

/// The self-describing first line of every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHeader {
    pub tool: String,
    pub version: String,
    pub kind: String,
    pub config_digest: String,
    pub created_at: String,
    #[serde(default)]
    pub meta: Value,
}

impl FileHeader {
    pub fn new(kind: &str, config_digest: String, meta: Value) -> Self {
        FileHeader {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            kind: kind.to_string(),
            config_digest,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            meta,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: FileHeader,
}

/// Lowercase hex SHA-256 over the given parts, each terminated by a NUL.
pub fn config_digest<I, S>(parts: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_ref());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

/// Serializes with sorted object keys.
pub fn to_sorted_json<T: Serialize>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("artifact types serialize to JSON");
    serde_json::to_string(&value).expect("JSON values serialize")
}

pub fn write_ndjson<W: Write, T: Serialize>(mut out: W, header: &FileHeader, rows: &[T]) -> io::Result<()> {
    writeln!(out, "{}", to_sorted_json(&HeaderLine { header: header.clone() }))?;
    for row in rows {
        writeln!(out, "{}", to_sorted_json(row))?;
    }
    out.flush()
}

pub fn write_ndjson_file<T: Serialize>(path: &Path, header: &FileHeader, rows: &[T]) -> Result<(), FileError> {
    let io_err = |source| FileError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_ndjson(BufWriter::new(file), header, rows).map_err(io_err)
}

/// Reads an artifact, returning its header (if present) and rows.
pub fn read_ndjson<R: BufRead, T: DeserializeOwned>(
    input: R,
    name: &str,
) -> Result<(Option<FileHeader>, Vec<T>), FileError> {
    let mut header = None;
    let mut rows = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line.map_err(|source| FileError::Io {
            path: name.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 {
            if let Ok(h) = serde_json::from_str::<HeaderLine>(&line) {
                header = Some(h.header);
                continue;
            }
        }
        let row = serde_json::from_str(&line).map_err(|e| FileError::Parse {
            path: name.to_string(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn read_ndjson_file<T: DeserializeOwned>(
    path: &Path,
    expected_kind: &str,
) -> Result<(Option<FileHeader>, Vec<T>), FileError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|source| FileError::Io {
        path: name.clone(),
        source,
    })?;
    let (header, rows) = read_ndjson(BufReader::new(file), &name)?;
    if let Some(h) = &header {
        if h.kind != expected_kind {
            return Err(FileError::WrongKind {
                path: name,
                expected: expected_kind.to_string(),
                found: h.kind.clone(),
            });
        }
    }
    Ok((header, rows))
}

/// Drops the `created_at` field from a header line so artifacts can be
/// compared across runs.
pub fn strip_timestamps(contents: &str) -> String {
    contents
        .lines()
        .map(|line| match serde_json::from_str::<HeaderLine>(line) {
            Ok(mut h) => {
                h.header.created_at.clear();
                to_sorted_json(&h)
            }
            Err(_) => line.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        zeta: u32,
        alpha: String,
    }

    #[test]
    fn keys_are_sorted_and_header_round_trips() {
        let header = FileHeader::new("rows", config_digest(["a", "b"]), json!({"seed": 7}));
        let rows = vec![Row { zeta: 1, alpha: "x".into() }];
        let mut buf = Vec::new();
        write_ndjson(&mut buf, &header, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("{\"alpha\""));
        let (h, back): (_, Vec<Row>) = read_ndjson(&buf[..], "mem").unwrap();
        assert_eq!(h.unwrap(), header);
        assert_eq!(back, rows);
    }

    #[test]
    fn headerless_files_are_accepted() {
        let (h, rows): (_, Vec<Row>) = read_ndjson(&b"{\"zeta\":2,\"alpha\":\"y\"}\n"[..], "mem").unwrap();
        assert!(h.is_none());
        assert_eq!(rows.len(), 1);
    }

    #[test]
    fn digest_separates_parts() {
        assert_ne!(config_digest(["ab", "c"]), config_digest(["a", "bc"]));
        assert_eq!(config_digest(["x"]).len(), 64);
    }

    #[test]
    fn strip_timestamps_blanks_only_the_header_time() {
        let a = FileHeader::new("rows", "d".into(), Value::Null);
        let mut b = a.clone();
        b.created_at = "2000-01-01T00:00:00Z".into();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_ndjson::<_, Row>(&mut buf_a, &a, &[]).unwrap();
        write_ndjson::<_, Row>(&mut buf_b, &b, &[]).unwrap();
        assert_ne!(buf_a, buf_b);
        assert_eq!(
            strip_timestamps(std::str::from_utf8(&buf_a).unwrap()),
            strip_timestamps(std::str::from_utf8(&buf_b).unwrap())
        );
    }
}
