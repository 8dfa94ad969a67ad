//! Codec abstraction and the discrete token-grid data model.
//!
//! Anything that turns audio into a `T x N` grid of codebook indices (and,
//! optionally, back into audio) implements [`CodecAdapter`]. External neural
//! codecs take part through token files on disk, see [`ExternalCodec`].

mod adapters;
mod format;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal::{Rational, Waveform};

pub use adapters::{ExternalCodec, IdentityCodec, RandomCodec, DESCRIPTOR_FILE};
pub use format::{
    load_token_grid, read_token_grid, save_token_grid, write_token_grid, TOKEN_MAGIC, TOKEN_VERSION,
};

/// Default number of leading codebooks kept when comparing multi-codebook codecs.
pub const DEFAULT_FIRST_K: usize = 8;

/// Frame-major matrix of codebook indices.
#[derive(Debug, Clone)]
pub struct TokenGrid {
    tokens: Vec<u32>,
    n_frames: usize,
    codebook_sizes: Vec<u32>,
    token_rate: Rational,
    source_codec: String,
    handle: Option<u64>,
}

/// Grids compare by content: tokens, shape, sizes and rate. The source name
/// and the adapter handle are bookkeeping and do not take part.
impl PartialEq for TokenGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n_frames == other.n_frames
            && self.codebook_sizes == other.codebook_sizes
            && self.token_rate == other.token_rate
            && self.tokens == other.tokens
    }
}

impl TokenGrid {
    pub fn new(
        tokens: Vec<u32>,
        n_frames: usize,
        codebook_sizes: Vec<u32>,
        token_rate: Rational,
        source_codec: impl Into<String>,
    ) -> Result<Self> {
        let n = codebook_sizes.len();
        if n == 0 {
            return Err(Error::InvalidGrid(
                "grid needs at least one codebook".into(),
            ));
        }
        if n_frames == 0 {
            return Err(Error::InvalidGrid("grid needs at least one frame".into()));
        }
        if let Some(c) = codebook_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidGrid(format!("codebook {c} has size 0")));
        }
        if tokens.len() != n_frames * n {
            return Err(Error::InvalidGrid(format!(
                "{} tokens for a {n_frames}x{n} grid",
                tokens.len()
            )));
        }
        for (i, &tok) in tokens.iter().enumerate() {
            let c = i % n;
            if tok >= codebook_sizes[c] {
                return Err(Error::TokenOutOfRange {
                    frame: i / n,
                    codebook: c,
                    token: tok,
                    size: codebook_sizes[c],
                });
            }
        }
        Ok(Self {
            tokens,
            n_frames,
            codebook_sizes,
            token_rate,
            source_codec: source_codec.into(),
            handle: None,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_codebooks(&self) -> usize {
        self.codebook_sizes.len()
    }

    pub fn codebook_sizes(&self) -> &[u32] {
        &self.codebook_sizes
    }

    pub fn token_rate(&self) -> Rational {
        self.token_rate
    }

    pub fn source_codec(&self) -> &str {
        &self.source_codec
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn get(&self, frame: usize, codebook: usize) -> u32 {
        self.tokens[frame * self.n_codebooks() + codebook]
    }

    pub fn frame(&self, t: usize) -> &[u32] {
        let n = self.n_codebooks();
        &self.tokens[t * n..(t + 1) * n]
    }

    pub fn column(&self, codebook: usize) -> Vec<u32> {
        self.tokens
            .iter()
            .skip(codebook)
            .step_by(self.n_codebooks())
            .copied()
            .collect()
    }

    /// Opaque tag an adapter attaches to grids it produced, so `decode`
    /// can find state it cached during `encode`.
    pub fn handle(&self) -> Option<u64> {
        self.handle
    }

    pub fn with_handle(mut self, handle: u64) -> Self {
        self.handle = Some(handle);
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source_codec = source.into();
        self
    }
}

/// Keeps the first `k` codebooks of `g`.
pub fn truncate_codebooks(g: &TokenGrid, k: usize) -> Result<TokenGrid> {
    let n = g.n_codebooks();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "cannot keep {k} of {n} codebooks"
        )));
    }
    if k == n {
        return Ok(g.clone());
    }
    let tokens = g
        .tokens
        .chunks_exact(n)
        .flat_map(|f| &f[..k])
        .copied()
        .collect();
    Ok(TokenGrid {
        tokens,
        n_frames: g.n_frames,
        codebook_sizes: g.codebook_sizes[..k].to_vec(),
        token_rate: g.token_rate,
        source_codec: g.source_codec.clone(),
        handle: g.handle,
    })
}

/// What kind of information a codec's tokens carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureType {
    /// Text-indescribable signal detail.
    Acoustic,
    /// Content strictly describable by text.
    Semantic,
    /// Both kinds mixed in the same tokens.
    Fused,
    /// Both kinds, separated into different codebook streams.
    Decoupled,
}

impl fmt::Display for FeatureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureType::Acoustic => "acoustic",
            FeatureType::Semantic => "semantic",
            FeatureType::Fused => "fused",
            FeatureType::Decoupled => "decoupled",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    Semantic,
    Acoustic,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecDescriptor {
    pub name: String,
    pub feature_type: FeatureType,
    pub sample_rate: u32,
    pub token_rate: Rational,
    pub n_codebooks: usize,
    pub codebook_sizes: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bitrate_bps: Option<f64>,
    /// Semantic columns of a decoupled codec; the rest are acoustic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_columns: Option<Vec<usize>>,
}

impl CodecDescriptor {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("codec {:?}: {m}", self.name)));
        if self.name.is_empty() {
            return bad("empty name".into());
        }
        if self.sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        if self.n_codebooks == 0 || self.codebook_sizes.len() != self.n_codebooks {
            return bad(format!(
                "{} codebook sizes for {} codebooks",
                self.codebook_sizes.len(),
                self.n_codebooks
            ));
        }
        if self.codebook_sizes.contains(&0) {
            return bad("codebook size 0".into());
        }
        if let Some(bps) = self.bitrate_bps {
            let nominal = self.nominal_bitrate();
            if !bps.is_finite() || (bps - nominal).abs() > 0.01 * nominal {
                return bad(format!(
                    "bitrate {bps} bps is inconsistent with {nominal} bps implied by token rate and codebook sizes"
                ));
            }
        }
        if let Some(cols) = &self.semantic_columns {
            if self.feature_type != FeatureType::Decoupled {
                return bad("semantic_columns is only meaningful for decoupled codecs".into());
            }
            if cols.iter().any(|&c| c >= self.n_codebooks) {
                return bad("semantic column out of range".into());
            }
        }
        Ok(())
    }

    /// token_rate * sum of log2(codebook size).
    pub fn nominal_bitrate(&self) -> f64 {
        self.token_rate.as_f64()
            * self
                .codebook_sizes
                .iter()
                .map(|&s| (s as f64).log2())
                .sum::<f64>()
    }

    /// Role of every codebook column. Decoupled codecs default to a semantic
    /// column 0 and acoustic remainder.
    pub fn column_roles(&self) -> Vec<StreamRole> {
        match self.feature_type {
            FeatureType::Acoustic => vec![StreamRole::Acoustic; self.n_codebooks],
            FeatureType::Semantic => vec![StreamRole::Semantic; self.n_codebooks],
            FeatureType::Fused => vec![StreamRole::Mixed; self.n_codebooks],
            FeatureType::Decoupled => {
                let semantic = self.semantic_columns.clone().unwrap_or_else(|| vec![0]);
                (0..self.n_codebooks)
                    .map(|c| {
                        if semantic.contains(&c) {
                            StreamRole::Semantic
                        } else {
                            StreamRole::Acoustic
                        }
                    })
                    .collect()
            }
        }
    }

    /// Checks that a grid has this descriptor's codebook layout.
    pub fn check_grid(&self, g: &TokenGrid) -> Result<()> {
        if g.n_codebooks() != self.n_codebooks {
            return Err(Error::DescriptorMismatch(format!(
                "grid has {} codebooks, descriptor {:?} declares {}",
                g.n_codebooks(),
                self.name,
                self.n_codebooks
            )));
        }
        if g.codebook_sizes() != self.codebook_sizes.as_slice() {
            return Err(Error::DescriptorMismatch(format!(
                "grid codebook sizes {:?} differ from descriptor {:?}",
                g.codebook_sizes(),
                self.codebook_sizes
            )));
        }
        Ok(())
    }
}

/// Behavioural contract every evaluated codec satisfies.
pub trait CodecAdapter: Send + Sync {
    fn descriptor(&self) -> &CodecDescriptor;

    /// Encodes `wave`. `utt_id` names the manifest entry when the audio is an
    /// original utterance; derived audio (reconstructions, shifted copies) has none.
    fn encode(&self, wave: &Waveform, utt_id: Option<&str>) -> Result<TokenGrid>;

    fn decode(&self, grid: &TokenGrid) -> Result<Waveform>;

    /// Whether `encode` accepts audio that is not a manifest utterance.
    /// Multi-round and time-shift experiments need this.
    fn encodes_arbitrary_audio(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        &self.descriptor().name
    }
}

/// SHA-256 over the sample rate and the little-endian bits of every sample.
pub fn waveform_digest(w: &Waveform) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(w.sample_rate().to_le_bytes());
    for s in w.samples() {
        h.update(s.to_bits().to_le_bytes());
    }
    h.finalize().into()
}

pub(crate) fn digest_prefix(d: &[u8; 32]) -> u64 {
    u64::from_le_bytes(d[..8].try_into().expect("8-byte prefix"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(t: usize, sizes: Vec<u32>) -> TokenGrid {
        let n = sizes.len();
        let tokens = (0..t * n).map(|i| (i as u32 * 7) % sizes[i % n]).collect();
        TokenGrid::new(tokens, t, sizes, Rational::integer(75).unwrap(), "test").unwrap()
    }

    #[test]
    fn grid_validates_range() {
        let r = Rational::integer(50).unwrap();
        let err = TokenGrid::new(vec![1024], 1, vec![1024], r, "x").unwrap_err();
        assert!(err.to_string().contains("token out of range"));
        assert!(TokenGrid::new(vec![], 0, vec![4], r, "x").is_err());
        assert!(TokenGrid::new(vec![0, 0], 1, vec![], r, "x").is_err());
        assert!(TokenGrid::new(vec![0, 0, 0], 1, vec![4, 4], r, "x").is_err());
    }

    #[test]
    fn truncation_keeps_leading_columns() {
        let g = grid(5, vec![16, 16, 8, 4]);
        assert_eq!(truncate_codebooks(&g, 4).unwrap(), g);
        let one = truncate_codebooks(&g, 1).unwrap();
        assert_eq!(one.n_codebooks(), 1);
        assert_eq!(one.column(0), g.column(0));
        assert_eq!(one.token_rate(), g.token_rate());
        assert!(truncate_codebooks(&g, 0).is_err());
        assert!(truncate_codebooks(&g, 5).is_err());
    }

    proptest! {
        #[test]
        fn truncation_composes(t in 1usize..20, n in 1usize..9, k in 1usize..9, j in 1usize..9) {
            prop_assume!(k <= n && j <= k);
            let g = grid(t, (0..n).map(|c| 2 + c as u32 * 3).collect());
            let twice = truncate_codebooks(&truncate_codebooks(&g, k).unwrap(), j).unwrap();
            prop_assert_eq!(twice, truncate_codebooks(&g, j).unwrap());
        }
    }

    fn dac_like() -> CodecDescriptor {
        CodecDescriptor {
            name: "dac".into(),
            feature_type: FeatureType::Acoustic,
            sample_rate: 24000,
            token_rate: Rational::integer(75).unwrap(),
            n_codebooks: 8,
            codebook_sizes: vec![1024; 8],
            bitrate_bps: Some(6000.0),
            semantic_columns: None,
        }
    }

    #[test]
    fn descriptor_bitrate_consistency() {
        let mut d = dac_like();
        d.validate().unwrap();
        d.bitrate_bps = Some(6050.0);
        d.validate().unwrap();
        d.bitrate_bps = Some(6100.0);
        assert!(d.validate().is_err());
        let mimi = CodecDescriptor {
            name: "mimi".into(),
            feature_type: FeatureType::Fused,
            sample_rate: 24000,
            token_rate: "12.5".parse().unwrap(),
            n_codebooks: 8,
            codebook_sizes: vec![2048; 8],
            bitrate_bps: Some(1100.0),
            semantic_columns: None,
        };
        mimi.validate().unwrap();
    }

    #[test]
    fn descriptor_json_round_trip() {
        let json = r#"{"name":"semanticodec","feature_type":"decoupled","sample_rate":16000,
            "token_rate":"100","n_codebooks":2,"codebook_sizes":[8192,8192]}"#;
        let d: CodecDescriptor = serde_json::from_str(json).unwrap();
        d.validate().unwrap();
        assert_eq!(
            d.column_roles(),
            vec![StreamRole::Semantic, StreamRole::Acoustic]
        );
        let again: CodecDescriptor =
            serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(again, d);
        assert!(
            serde_json::from_str::<CodecDescriptor>(&json.replace("decoupled", "phonetic"))
                .is_err()
        );
    }

    #[test]
    fn descriptor_checks_grid_layout() {
        let d = dac_like();
        assert!(d.check_grid(&grid(3, vec![1024; 8])).is_ok());
        assert!(matches!(
            d.check_grid(&grid(3, vec![1024; 9])),
            Err(Error::DescriptorMismatch(_))
        ));
    }
}
