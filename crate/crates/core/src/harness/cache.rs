//! On-disk token-grid cache keyed by codec, utterance and content hash.

use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::codec::{load_token_grid, write_token_grid, TokenGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TokenCache {
    dir: PathBuf,
}

/// Hash of the audio content together with everything that shapes the codec's output.
pub fn content_key(audio_digest: &[u8; 32], codec_fingerprint: &str) -> String {
    let mut h = Sha256::new();
    h.update(audio_digest);
    h.update(codec_fingerprint.as_bytes());
    let d = h.finalize();
    d[..16].iter().map(|b| format!("{b:02x}")).collect()
}

fn safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl TokenCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TokenCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, codec: &str, utt_id: &str, key: &str) -> PathBuf {
        self.dir
            .join(safe(codec))
            .join(format!("{}-{key}.tokens", safe(utt_id)))
    }

    /// A cached grid, or `None` on a miss. Unreadable entries count as misses.
    pub fn get(&self, codec: &str, utt_id: &str, key: &str) -> Option<TokenGrid> {
        let p = self.path(codec, utt_id, key);
        if !p.is_file() {
            return None;
        }
        load_token_grid(&p).ok().map(|g| g.with_source(codec))
    }

    /// Writes to a temporary file in the same directory, then renames over the target.
    pub fn put(&self, codec: &str, utt_id: &str, key: &str, g: &TokenGrid) -> Result<()> {
        let p = self.path(codec, utt_id, key);
        let parent = p.parent().expect("cache path has a parent");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(parent, e))?;
        write_token_grid(g, &mut tmp).map_err(|e| Error::io(&p, e))?;
        tmp.flush().map_err(|e| Error::io(&p, e))?;
        tmp.persist(&p).map_err(|e| Error::io(&p, e.error))?;
        Ok(())
    }

    /// Returns the grid and whether it came from the cache.
    pub fn get_or_insert_with(
        &self,
        codec: &str,
        utt_id: &str,
        key: &str,
        encode: impl FnOnce() -> Result<TokenGrid>,
    ) -> Result<(TokenGrid, bool)> {
        if let Some(g) = self.get(codec, utt_id, key) {
            return Ok((g, true));
        }
        let g = encode()?;
        self.put(codec, utt_id, key, &g)?;
        Ok((g, false))
    }
}
