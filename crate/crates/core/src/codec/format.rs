//! Little-endian token-grid file format.
//!
//! ```text
//! magic    "ACBT"     4 bytes
//! version  u16 = 1
//! flags    u16 = 0
//! rate_num u32        token rate numerator
//! rate_den u32        token rate denominator
//! n        u16        codebooks
//! t        u32        frames
//! sizes    n x u32
//! tokens   t x n x u32, frame-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::TokenGrid;
use crate::error::{Error, Result};
use crate::signal::Rational;

pub const TOKEN_MAGIC: [u8; 4] = *b"ACBT";
pub const TOKEN_VERSION: u16 = 1;
pub(crate) const HEADER_LEN: usize = 22;

pub fn write_token_grid(g: &TokenGrid, mut out: impl Write) -> std::io::Result<()> {
    let n = u16::try_from(g.n_codebooks())
        .map_err(|_| std::io::Error::other("more than 65535 codebooks"))?;
    let t = u32::try_from(g.n_frames())
        .map_err(|_| std::io::Error::other("more than u32::MAX frames"))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * (g.n_codebooks() + g.tokens().len()));
    buf.extend_from_slice(&TOKEN_MAGIC);
    buf.extend_from_slice(&TOKEN_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&g.token_rate().num().to_le_bytes());
    buf.extend_from_slice(&g.token_rate().den().to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&t.to_le_bytes());
    for s in g.codebook_sizes() {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    for tok in g.tokens() {
        buf.extend_from_slice(&tok.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn read_token_grid(mut input: impl Read, source: &str) -> Result<TokenGrid> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(source, e))?;
    parse(&bytes, source)
}

pub fn save_token_grid(g: &TokenGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_token_grid(g, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_token_grid(path: impl AsRef<Path>) -> Result<TokenGrid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse(&bytes, &source)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::InvalidGrid(format!(
                "file truncated at byte {} (needed {n} more)",
                self.pos
            ))),
        }
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn parse(bytes: &[u8], source: &str) -> Result<TokenGrid> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = c.take(4)?.try_into().unwrap();
    if magic != TOKEN_MAGIC {
        return Err(Error::BadMagic {
            expected: TOKEN_MAGIC,
            found: magic,
        });
    }
    let version = c.u16()?;
    if version != TOKEN_VERSION {
        return Err(Error::VersionMismatch {
            expected: TOKEN_VERSION,
            found: version,
        });
    }
    let flags = c.u16()?;
    if flags != 0 {
        return Err(Error::InvalidGrid(format!("unknown flags {flags:#06x}")));
    }
    let num = c.u32()?;
    let den = c.u32()?;
    let rate = Rational::new(num, den)
        .map_err(|_| Error::InvalidGrid(format!("bad token rate {num}/{den}")))?;
    let n = c.u16()? as usize;
    let t = c.u32()? as usize;
    let sizes = (0..n).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let count = t
        .checked_mul(n)
        .ok_or_else(|| Error::InvalidGrid("grid dimensions overflow".into()))?;
    let payload = c.take(
        count
            .checked_mul(4)
            .ok_or_else(|| Error::InvalidGrid("grid dimensions overflow".into()))?,
    )?;
    if c.pos != bytes.len() {
        return Err(Error::InvalidGrid(format!(
            "{} trailing bytes after token payload",
            bytes.len() - c.pos
        )));
    }
    let tokens = payload
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    TokenGrid::new(tokens, t, sizes, rate, source)
}
