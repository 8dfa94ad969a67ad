use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    digest_prefix, load_token_grid, waveform_digest, CodecAdapter, CodecDescriptor, FeatureType,
    TokenGrid,
};
use crate::error::{Error, Result};
use crate::signal::{read_wav, Rational, Waveform};

pub const DESCRIPTOR_FILE: &str = "descriptor.json";
const TEST_CODEBOOK: u32 = 1024;

/// Codec whose tokens and reconstructions were produced elsewhere.
///
/// The directory holds `descriptor.json`, one `<utt_id>.tokens` file per
/// utterance and optionally `<utt_id>.rec.wav` reconstructions.
pub struct ExternalCodec {
    dir: PathBuf,
    descriptor: CodecDescriptor,
    issued: Mutex<HashMap<u64, String>>,
}

impl ExternalCodec {
    pub fn new(dir: impl Into<PathBuf>, descriptor: CodecDescriptor) -> Result<Self> {
        descriptor.validate()?;
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::Validation(format!(
                "external codec directory {} does not exist",
                dir.display()
            )));
        }
        Ok(Self {
            dir,
            descriptor,
            issued: Mutex::new(HashMap::new()),
        })
    }

    /// Writes `descriptor.json` into `dir`, creating the directory.
    pub fn write_descriptor(dir: impl AsRef<Path>, descriptor: &CodecDescriptor) -> Result<()> {
        descriptor.validate()?;
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(DESCRIPTOR_FILE);
        let text =
            serde_json::to_string_pretty(descriptor).expect("serializable descriptor") + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Opens a directory using its own `descriptor.json`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(DESCRIPTOR_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let descriptor: CodecDescriptor = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        Self::new(dir, descriptor)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn tokens_path(&self, utt_id: &str) -> PathBuf {
        self.dir.join(format!("{utt_id}.tokens"))
    }

    pub fn reconstruction_path(&self, utt_id: &str) -> PathBuf {
        self.dir.join(format!("{utt_id}.rec.wav"))
    }

    pub fn has_reconstruction(&self, utt_id: &str) -> bool {
        self.reconstruction_path(utt_id).is_file()
    }

    /// Loads the token file of one utterance and checks it against the descriptor.
    pub fn load(&self, utt_id: &str) -> Result<TokenGrid> {
        let path = self.tokens_path(utt_id);
        if !path.is_file() {
            return Err(Error::NoTokensForUtterance(utt_id.to_string()));
        }
        let grid = load_token_grid(&path)?.with_source(self.descriptor.name.clone());
        self.descriptor.check_grid(&grid)?;
        if grid.token_rate() != self.descriptor.token_rate {
            return Err(Error::DescriptorMismatch(format!(
                "{}: token rate {} differs from descriptor {}",
                path.display(),
                grid.token_rate(),
                self.descriptor.token_rate
            )));
        }
        Ok(grid)
    }
}

fn id_handle(utt_id: &str) -> u64 {
    let d: [u8; 32] = Sha256::digest(utt_id.as_bytes()).into();
    digest_prefix(&d)
}

impl CodecAdapter for ExternalCodec {
    fn descriptor(&self) -> &CodecDescriptor {
        &self.descriptor
    }

    fn encode(&self, _wave: &Waveform, utt_id: Option<&str>) -> Result<TokenGrid> {
        let Some(id) = utt_id else {
            return Err(Error::NoTokensForUtterance("<derived audio>".into()));
        };
        let handle = id_handle(id);
        let grid = self.load(id)?.with_handle(handle);
        self.issued
            .lock()
            .expect("external codec map poisoned")
            .insert(handle, id.to_string());
        Ok(grid)
    }

    fn decode(&self, grid: &TokenGrid) -> Result<Waveform> {
        let id = grid
            .handle()
            .and_then(|h| {
                self.issued
                    .lock()
                    .expect("external codec map poisoned")
                    .get(&h)
                    .cloned()
            })
            .ok_or_else(|| Error::DecodeUnavailable(self.descriptor.name.clone()))?;
        let path = self.reconstruction_path(&id);
        if !path.is_file() {
            return Err(Error::DecodeUnavailable(format!(
                "{} (no reconstruction for {id:?})",
                self.descriptor.name
            )));
        }
        read_wav(path)
    }

    fn encodes_arbitrary_audio(&self) -> bool {
        false
    }
}

/// Test codec whose decode is exact.
///
/// Each non-overlapping frame's token is a content hash of its samples modulo
/// 1024, so identical audio always yields identical tokens while a shifted
/// copy sees different frame contents. Decode returns the encoded input from
/// a cache.
pub struct IdentityCodec {
    frame_len: usize,
    descriptor: CodecDescriptor,
    cache: Mutex<HashMap<u64, Waveform>>,
}

impl IdentityCodec {
    pub fn new(frame_len: usize, sample_rate: u32) -> Result<Self> {
        if frame_len == 0 {
            return Err(Error::InvalidParameter("frame_len must be positive".into()));
        }
        let descriptor = CodecDescriptor {
            name: "identity".into(),
            feature_type: FeatureType::Acoustic,
            sample_rate,
            token_rate: Rational::new(sample_rate, frame_len as u32)?,
            n_codebooks: 1,
            codebook_sizes: vec![TEST_CODEBOOK],
            bitrate_bps: None,
            semantic_columns: None,
        };
        Ok(Self {
            frame_len,
            descriptor,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }
}

impl CodecAdapter for IdentityCodec {
    fn descriptor(&self) -> &CodecDescriptor {
        &self.descriptor
    }

    fn encode(&self, wave: &Waveform, _utt_id: Option<&str>) -> Result<TokenGrid> {
        let t = wave.len() / self.frame_len;
        if t == 0 {
            return Err(Error::SignalTooShort {
                needed: self.frame_len,
                actual: wave.len(),
            });
        }
        let tokens = wave.samples()[..t * self.frame_len]
            .chunks_exact(self.frame_len)
            .map(frame_token)
            .collect();
        let handle = digest_prefix(&waveform_digest(wave));
        self.cache
            .lock()
            .expect("identity cache poisoned")
            .insert(handle, wave.clone());
        Ok(TokenGrid::new(
            tokens,
            t,
            vec![TEST_CODEBOOK],
            Rational::new(wave.sample_rate(), self.frame_len as u32)?,
            "identity",
        )?
        .with_handle(handle))
    }

    fn decode(&self, grid: &TokenGrid) -> Result<Waveform> {
        grid.handle()
            .and_then(|h| {
                self.cache
                    .lock()
                    .expect("identity cache poisoned")
                    .get(&h)
                    .cloned()
            })
            .ok_or_else(|| {
                Error::DecodeUnavailable("identity (grid was not produced by this codec)".into())
            })
    }
}

fn frame_token(frame: &[f64]) -> u32 {
    let mut h = Sha256::new();
    for v in frame {
        h.update(v.to_le_bytes());
    }
    let d = h.finalize();
    u32::from_le_bytes([d[0], d[1], d[2], d[3]]) % TEST_CODEBOOK
}

/// Null-model codec: i.i.d. uniform tokens and white-noise reconstructions.
///
/// Every call draws from a fresh stream of a seeded generator, so two
/// encodes of the same audio are independent but a codec rebuilt with the
/// same seed replays the same sequence of outputs.
pub struct RandomCodec {
    seed: u64,
    frame_len: usize,
    descriptor: CodecDescriptor,
    calls: AtomicU64,
}

impl RandomCodec {
    pub const DEFAULT_FRAME_LEN: usize = 320;
    pub const DEFAULT_CODEBOOKS: usize = 8;

    pub fn new(seed: u64) -> Self {
        Self::with_shape(
            seed,
            Self::DEFAULT_FRAME_LEN,
            Self::DEFAULT_CODEBOOKS,
            16000,
        )
        .expect("default shape is valid")
    }

    pub fn with_shape(
        seed: u64,
        frame_len: usize,
        n_codebooks: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        if frame_len == 0 || n_codebooks == 0 {
            return Err(Error::InvalidParameter(
                "frame_len and n_codebooks must be positive".into(),
            ));
        }
        let descriptor = CodecDescriptor {
            name: "random".into(),
            feature_type: FeatureType::Acoustic,
            sample_rate,
            token_rate: Rational::new(sample_rate, frame_len as u32)?,
            n_codebooks,
            codebook_sizes: vec![TEST_CODEBOOK; n_codebooks],
            bitrate_bps: None,
            semantic_columns: None,
        };
        Ok(Self {
            seed,
            frame_len,
            descriptor,
            calls: AtomicU64::new(0),
        })
    }

    fn next_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.calls.fetch_add(1, Ordering::SeqCst));
        rng
    }
}

impl CodecAdapter for RandomCodec {
    fn descriptor(&self) -> &CodecDescriptor {
        &self.descriptor
    }

    fn encode(&self, wave: &Waveform, _utt_id: Option<&str>) -> Result<TokenGrid> {
        let t = wave.len() / self.frame_len;
        if t == 0 {
            return Err(Error::SignalTooShort {
                needed: self.frame_len,
                actual: wave.len(),
            });
        }
        let n = self.descriptor.n_codebooks;
        let mut rng = self.next_rng();
        let tokens = (0..t * n)
            .map(|_| rng.gen_range(0..TEST_CODEBOOK))
            .collect();
        TokenGrid::new(
            tokens,
            t,
            vec![TEST_CODEBOOK; n],
            Rational::new(wave.sample_rate(), self.frame_len as u32)?,
            "random",
        )
    }

    fn decode(&self, grid: &TokenGrid) -> Result<Waveform> {
        let mut rng = self.next_rng();
        let len = grid.n_frames() * self.frame_len;
        let rate = grid.token_rate().as_f64() * self.frame_len as f64;
        let samples = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Waveform::new(samples, rate.round() as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::save_token_grid;

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 16000).unwrap()
    }

    #[test]
    fn identity_shape_and_exact_decode() {
        let c = IdentityCodec::new(160, 16000).unwrap();
        let x = noise(16000 + 37, 1);
        let g = c.encode(&x, None).unwrap();
        assert_eq!((g.n_frames(), g.n_codebooks()), (100, 1));
        let mut h = Sha256::new();
        for v in &x.samples()[800..960] {
            h.update(v.to_le_bytes());
        }
        let d = h.finalize();
        assert_eq!(
            g.get(5, 0),
            u32::from_le_bytes([d[0], d[1], d[2], d[3]]) % 1024
        );
        let y = c.decode(&g).unwrap();
        assert_eq!(y, x);
        assert_eq!(c.encode(&y, None).unwrap(), g);
    }

    #[test]
    fn identity_keeps_inputs_apart() {
        let c = IdentityCodec::new(100, 16000).unwrap();
        let (a, b) = (noise(1000, 1), noise(1000, 2));
        let (ga, gb) = (c.encode(&a, None).unwrap(), c.encode(&b, None).unwrap());
        assert_ne!(ga, gb);
        assert_eq!(c.decode(&ga).unwrap(), a);
        assert_eq!(c.decode(&gb).unwrap(), b);
        let stray =
            TokenGrid::new(vec![0], 1, vec![1024], Rational::integer(1).unwrap(), "x").unwrap();
        assert!(matches!(c.decode(&stray), Err(Error::DecodeUnavailable(_))));
    }

    #[test]
    fn identity_tokens_follow_content() {
        let c = IdentityCodec::new(100, 16000).unwrap();
        let x = noise(1000, 3);
        let g = c.encode(&x, None).unwrap();
        let slid = Waveform::new(x.samples()[100..].to_vec(), 16000).unwrap();
        let gs = c.encode(&slid, None).unwrap();
        assert_eq!(gs.column(0), g.column(0)[1..].to_vec());
        let flat = c
            .encode(&Waveform::new(vec![0.25; 500], 16000).unwrap(), None)
            .unwrap();
        assert!(flat.column(0).iter().all(|&t| t == flat.get(0, 0)));
    }

    #[test]
    fn random_codec_is_reproducible_but_fresh_per_call() {
        let x = noise(32000, 4);
        let a = RandomCodec::new(9);
        let b = RandomCodec::new(9);
        let a1 = a.encode(&x, None).unwrap();
        let a2 = a.encode(&x, None).unwrap();
        assert_eq!(a1, b.encode(&x, None).unwrap());
        assert_eq!(a2, b.encode(&x, None).unwrap());
        assert_ne!(a1, a2);
        assert!(a1.tokens().iter().all(|&t| t < 1024));
        let y = a.decode(&a1).unwrap();
        assert_eq!(y.len(), a1.n_frames() * RandomCodec::DEFAULT_FRAME_LEN);
        assert_eq!(y.sample_rate(), 16000);
    }

    #[test]
    fn random_codec_same_id_rate_is_null() {
        // Binomial oracle: matches ~ Bin(n, 1/1024).
        let c = RandomCodec::new(1);
        let x = noise(16000 * 20, 5);
        let g1 = c.encode(&x, None).unwrap();
        let g2 = c.encode(&x, None).unwrap();
        let n = g1.tokens().len() as f64;
        let same = g1
            .tokens()
            .iter()
            .zip(g2.tokens())
            .filter(|(a, b)| a == b)
            .count() as f64;
        let p = 1.0 / 1024.0;
        let sigma = (p * (1.0 - p) / n).sqrt();
        assert!(((same / n) - p).abs() <= 3.0 * sigma, "ratio {}", same / n);
    }

    fn write_descriptor(dir: &Path, n: usize) -> CodecDescriptor {
        let d = CodecDescriptor {
            name: "ext".into(),
            feature_type: FeatureType::Fused,
            sample_rate: 16000,
            token_rate: Rational::integer(50).unwrap(),
            n_codebooks: n,
            codebook_sizes: vec![1024; n],
            bitrate_bps: None,
            semantic_columns: None,
        };
        std::fs::write(
            dir.join(DESCRIPTOR_FILE),
            serde_json::to_string(&d).unwrap(),
        )
        .unwrap();
        d
    }

    fn grid(n: usize) -> TokenGrid {
        TokenGrid::new(
            (0..4 * n as u32).collect(),
            4,
            vec![1024; n],
            Rational::integer(50).unwrap(),
            "g",
        )
        .unwrap()
    }

    #[test]
    fn external_codec_resolves_files() {
        let dir = tempfile::tempdir().unwrap();
        write_descriptor(dir.path(), 8);
        save_token_grid(&grid(8), dir.path().join("u1.tokens")).unwrap();
        save_token_grid(&grid(9), dir.path().join("u9.tokens")).unwrap();
        let c = ExternalCodec::open(dir.path()).unwrap();
        let x = noise(100, 1);

        let g = c.encode(&x, Some("u1")).unwrap();
        assert_eq!(g, grid(8));
        assert_eq!(g.source_codec(), "ext");

        let err = c.encode(&x, Some("nope")).unwrap_err();
        assert!(err.to_string().contains("no tokens for utterance"));
        assert!(matches!(
            c.encode(&x, Some("u9")),
            Err(Error::DescriptorMismatch(_))
        ));
        assert!(c.encode(&x, None).is_err());
        assert!(!c.encodes_arbitrary_audio());

        // No reconstruction on disk yet.
        assert!(matches!(c.decode(&g), Err(Error::DecodeUnavailable(_))));
        let rec = noise(640, 7);
        crate::signal::write_wav(&rec, dir.path().join("u1.rec.wav")).unwrap();
        let back = c.decode(&g).unwrap();
        assert_eq!(back.len(), 640);
    }
}
