//! Newline-delimited JSON manifests with a provenance header line.
//!
//! The first line of every manifest is a [`ManifestHeader`]; each following
//! line is one record.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub kind: String,
    pub seed: u64,
    pub config_digest: String,
    /// Counts per `(ta, sp)` class for triplet manifests, keyed `"00"`..`"11"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_histogram: Option<BTreeMap<String, usize>>,
}

impl ManifestHeader {
    pub fn new(kind: impl Into<String>, seed: u64, config_digest: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: kind.into(),
            seed,
            config_digest: config_digest.into(),
            label_histogram: None,
        }
    }
}

pub fn write_records<T: Serialize>(path: &Path, header: Option<&ManifestHeader>, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
    if let Some(h) = header {
        put(serde_json::to_string(h)?)?;
    }
    for r in records {
        put(serde_json::to_string(r)?)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads records, skipping blank lines. With `expect_header`, the first line
/// must be a [`ManifestHeader`] with a supported schema version.
pub fn read_records<T: DeserializeOwned>(
    path: &Path,
    expect_header: bool,
) -> Result<(Option<ManifestHeader>, Vec<T>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut out = Vec::new();
    let mut first = true;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema_err = |message: String| Error::Schema {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        if first && expect_header {
            first = false;
            let h: ManifestHeader =
                serde_json::from_str(&line).map_err(|e| schema_err(format!("bad header: {e}")))?;
            if h.schema_version != SCHEMA_VERSION {
                return Err(schema_err(format!(
                    "unsupported schema_version {}",
                    h.schema_version
                )));
            }
            header = Some(h);
            continue;
        }
        first = false;
        out.push(serde_json::from_str(&line).map_err(|e| schema_err(e.to_string()))?);
    }
    if expect_header && header.is_none() {
        return Err(Error::Schema {
            path: path.display().to_string(),
            line: 1,
            message: "missing header".into(),
        });
    }
    Ok((header, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_required_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        let h = ManifestHeader::new("test", 3, "abc");
        write_records(&p, Some(&h), &[1u32, 2, 3]).unwrap();
        let (hh, v): (_, Vec<u32>) = read_records(&p, true).unwrap();
        assert_eq!(hh, Some(h));
        assert_eq!(v, vec![1, 2, 3]);

        write_records::<u32>(&p, None, &[5]).unwrap();
        assert!(read_records::<u32>(&p, true).is_err());
    }
}
