//! RVQ model file, little-endian:
//! magic "ACBM", u16 version, u16 N, N x u32 K, u32 frame_len, u32 hop,
//! u32 sample_rate, then every centroid as f64, stage-major then row-major.

use std::path::Path;

use super::{Codebook, RvqModel};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"ACBM";
pub const MODEL_VERSION: u16 = 1;

pub fn save_model(m: &RvqModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.n_stages() as u16).to_le_bytes());
    for k in m.codebook_sizes() {
        buf.extend_from_slice(&k.to_le_bytes());
    }
    buf.extend_from_slice(&(m.frame_len() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.hop() as u32).to_le_bytes());
    buf.extend_from_slice(&m.sample_rate().to_le_bytes());
    for cb in m.stages() {
        for v in cb.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<RvqModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(Error::Validation(format!(
                "{}: truncated model file",
                path.display()
            )));
        }
        pos += n;
        Ok(&bytes[pos - n..pos])
    };
    let magic: [u8; 4] = take(4)?.try_into().unwrap();
    if magic != MODEL_MAGIC {
        return Err(Error::BadMagic {
            expected: MODEL_MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            expected: MODEL_VERSION,
            found: version,
        });
    }
    let n = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
    let mut ks = Vec::with_capacity(n);
    for _ in 0..n {
        ks.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
    }
    let frame_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let hop = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let sample_rate = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let mut stages = Vec::with_capacity(n);
    for k in ks {
        let raw = take(k * frame_len * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        stages.push(Codebook::new(values, frame_len)?);
    }
    if pos != bytes.len() {
        return Err(Error::Validation(format!(
            "{}: trailing bytes in model file",
            path.display()
        )));
    }
    RvqModel::new(stages, frame_len, hop, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trip() {
        let stages = vec![
            Codebook::new((0..12).map(|i| i as f64 * 0.25 - 1.0).collect(), 4).unwrap(),
            Codebook::new(vec![0.5, -0.5, 1e-300, 3.0], 4).unwrap(),
        ];
        let m = RvqModel::new(stages, 4, 2, 24000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.acbm");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 2 + 8 + 12 + 16 * 8);
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_model(&path).is_err());
    }
}
