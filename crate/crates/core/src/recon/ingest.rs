//! Readers for externally produced transcripts, speaker embeddings and PESQ scores.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `<utt_id>\t<text>` per line; blank lines are ignored.
pub fn read_transcripts(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let mut out = BTreeMap::new();
    for (no, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line.split_once('\t').ok_or_else(|| {
            Error::Validation(format!(
                "{}:{}: expected <utt_id>\\t<text>",
                path.display(),
                no + 1
            ))
        })?;
        if out.insert(id.to_string(), text.to_string()).is_some() {
            return Err(Error::Validation(format!(
                "{}: duplicate utterance {id:?}",
                path.display()
            )));
        }
    }
    Ok(out)
}

/// `utt_id,pesq` rows with an optional header line.
pub fn read_external_pesq(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    let mut out = BTreeMap::new();
    for (no, line) in read_text(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (no == 0 && line.eq_ignore_ascii_case("utt_id,pesq")) {
            continue;
        }
        let bad = || {
            Error::Validation(format!(
                "{}:{}: expected utt_id,pesq",
                path.display(),
                no + 1
            ))
        };
        let (id, v) = line.split_once(',').ok_or_else(bad)?;
        let v: f64 = v.trim().parse().map_err(|_| bad())?;
        if !v.is_finite() {
            return Err(bad());
        }
        out.insert(id.trim().to_string(), v);
    }
    Ok(out)
}

/// u32 length prefix followed by float32 values, little-endian.
pub fn read_embedding(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 {
        return Err(Error::Validation(format!(
            "{}: missing length prefix",
            path.display()
        )));
    }
    let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    if bytes.len() != 4 + 4 * n {
        return Err(Error::LengthMismatch {
            expected: 4 + 4 * n,
            found: bytes.len(),
        });
    }
    Ok(bytes[4..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect())
}

pub fn write_embedding(v: &[f32], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(4 + 4 * v.len());
    buf.extend_from_slice(&(v.len() as u32).to_le_bytes());
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
