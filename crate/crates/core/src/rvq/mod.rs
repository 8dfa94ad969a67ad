//! Reference residual vector quantizer.
//!
//! Frames are Hann-windowed time-domain slices at 50% overlap. Each stage is
//! a k-means codebook trained on the residual left by the stages before it,
//! and decoding is a weight-normalised overlap-add of the summed centroids.

mod frames;
pub mod kmeans;
mod model_file;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{CodecAdapter, CodecDescriptor, FeatureType, TokenGrid};
use crate::error::{Error, Result};
use crate::signal::{resample, Rational, Waveform};

pub use frames::{extract_frames, frame_count, overlap_add, window_sum, FrameSet};
pub use kmeans::{KMeansFit, KMeansParams};
pub use model_file::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};

/// `K x D` centroid matrix of one residual stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<f64>,
    dim: usize,
}

impl Codebook {
    pub fn new(centroids: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not form a codebook of {dim}-dimensional rows",
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite centroid".into()));
        }
        Ok(Self { centroids, dim })
    }

    pub fn len(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.centroids
    }

    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        kmeans::nearest(x, &self.centroids, self.dim)
    }
}

/// Training diagnostics for one stage, as mean squared norm per frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageStats {
    pub input_energy: f64,
    pub residual_energy: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvqModel {
    stages: Vec<Codebook>,
    frame_len: usize,
    hop: usize,
    sample_rate: u32,
    stats: Vec<StageStats>,
}

#[derive(Debug, Clone)]
pub struct RvqConfig {
    pub codebook_sizes: Vec<usize>,
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub seed: u64,
    pub kmeans: KMeansParams,
}

impl Default for RvqConfig {
    /// Eight stages of 1024 entries over 1024-sample frames at 24 kHz.
    fn default() -> Self {
        Self {
            codebook_sizes: vec![1024; 8],
            frame_len: 1024,
            hop: 512,
            sample_rate: 24000,
            seed: 0,
            kmeans: KMeansParams::default(),
        }
    }
}

impl RvqConfig {
    pub fn uniform(n_stages: usize, k: usize) -> Self {
        Self {
            codebook_sizes: vec![k; n_stages],
            ..Self::default()
        }
    }
}

impl RvqModel {
    pub fn new(
        stages: Vec<Codebook>,
        frame_len: usize,
        hop: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        frames::check_framing(frame_len, hop)?;
        if stages.is_empty() {
            return Err(Error::InvalidParameter(
                "model needs at least one stage".into(),
            ));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidParameter(
                "sample rate must be positive".into(),
            ));
        }
        if let Some(s) = stages.iter().position(|c| c.dim() != frame_len) {
            return Err(Error::ShapeMismatch(format!(
                "stage {s} has dimension {} but frames have {frame_len} samples",
                stages[s].dim()
            )));
        }
        Ok(Self {
            stages,
            frame_len,
            hop,
            sample_rate,
            stats: Vec::new(),
        })
    }

    pub fn stages(&self) -> &[Codebook] {
        &self.stages
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn codebook_sizes(&self) -> Vec<u32> {
        self.stages.iter().map(|c| c.len() as u32).collect()
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn token_rate(&self) -> Rational {
        Rational::new(self.sample_rate, self.hop as u32).expect("positive rate")
    }

    /// Per-stage training statistics; empty for models loaded from disk.
    pub fn stats(&self) -> &[StageStats] {
        &self.stats
    }

    fn conform(&self, w: &Waveform) -> Result<Waveform> {
        if w.sample_rate() == self.sample_rate {
            Ok(w.clone())
        } else {
            resample(w, self.sample_rate)
        }
    }

    /// Quantizes one frame through every stage; returns tokens and the leftover residual.
    pub fn quantize_frame(&self, frame: &[f64]) -> (Vec<u32>, Vec<f64>) {
        let mut residual = frame.to_vec();
        let mut tokens = Vec::with_capacity(self.stages.len());
        for cb in &self.stages {
            let (idx, _) = cb.nearest(&residual);
            for (r, c) in residual.iter_mut().zip(cb.centroid(idx)) {
                *r -= c;
            }
            tokens.push(idx as u32);
        }
        (tokens, residual)
    }

    /// Sum of the selected centroids for one frame.
    pub fn frame_embedding(&self, tokens: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; self.frame_len];
        for (cb, &tok) in self.stages.iter().zip(tokens) {
            for (o, c) in out.iter_mut().zip(cb.centroid(tok as usize)) {
                *o += c;
            }
        }
        out
    }

    pub fn descriptor(&self) -> CodecDescriptor {
        let sizes = self.codebook_sizes();
        CodecDescriptor {
            name: "ref-rvq".into(),
            feature_type: FeatureType::Acoustic,
            sample_rate: self.sample_rate,
            token_rate: self.token_rate(),
            n_codebooks: sizes.len(),
            codebook_sizes: sizes,
            bitrate_bps: None,
            semantic_columns: None,
        }
    }
}

/// Trains one k-means codebook per stage on the running residual of the corpus frames.
pub fn train_rvq(corpus: &[Waveform], config: &RvqConfig) -> Result<RvqModel> {
    frames::check_framing(config.frame_len, config.hop)?;
    if config.codebook_sizes.is_empty() {
        return Err(Error::InvalidParameter("need at least one stage".into()));
    }
    if config.codebook_sizes.contains(&0) {
        return Err(Error::InvalidParameter(
            "codebook size K must be at least 1".into(),
        ));
    }
    let dim = config.frame_len;
    let mut data = Vec::new();
    for w in corpus {
        let w = if w.sample_rate() == config.sample_rate {
            w.clone()
        } else {
            resample(w, config.sample_rate)?
        };
        if w.len() >= dim {
            data.extend_from_slice(extract_frames(&w, dim, config.hop)?.frames.data());
        }
    }
    let n = data.len() / dim;
    let needed = *config.codebook_sizes.iter().max().expect("non-empty");
    if n < needed {
        return Err(Error::InsufficientFrames { needed, actual: n });
    }

    let mut stages = Vec::with_capacity(config.codebook_sizes.len());
    let mut stats = Vec::with_capacity(config.codebook_sizes.len());
    for (s, &k) in config.codebook_sizes.iter().enumerate() {
        let input_energy = data.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(s as u64);
        let fit = kmeans::kmeans(&data, dim, k, &config.kmeans, &mut rng).map_err(|e| match e {
            Error::InsufficientData(_) => Error::DegenerateCodebook { stage: s, k },
            other => other,
        })?;
        if kmeans::find_duplicate_rows(&fit.centroids, dim, 1e-12).is_some() {
            return Err(Error::DegenerateCodebook { stage: s, k });
        }
        for (p, &a) in data.chunks_exact_mut(dim).zip(&fit.assignment) {
            for (v, c) in p.iter_mut().zip(&fit.centroids[a * dim..(a + 1) * dim]) {
                *v -= c;
            }
        }
        stats.push(StageStats {
            input_energy,
            residual_energy: fit.inertia / n as f64,
            iterations: fit.iterations,
        });
        stages.push(Codebook::new(fit.centroids, dim)?);
    }
    let mut model = RvqModel::new(stages, config.frame_len, config.hop, config.sample_rate)?;
    model.stats = stats;
    Ok(model)
}

pub fn rvq_encode(m: &RvqModel, w: &Waveform) -> Result<TokenGrid> {
    let w = m.conform(w)?;
    let fs = extract_frames(&w, m.frame_len, m.hop)?;
    let mut tokens = Vec::with_capacity(fs.frames.n_frames() * m.n_stages());
    for row in fs.frames.rows() {
        tokens.extend(m.quantize_frame(row).0);
    }
    TokenGrid::new(
        tokens,
        fs.frames.n_frames(),
        m.codebook_sizes(),
        m.token_rate(),
        "ref-rvq",
    )
}

/// Decodes a grid whose codebooks are the model's stages or a leading prefix of them.
pub fn rvq_decode(m: &RvqModel, g: &TokenGrid) -> Result<Waveform> {
    let sizes = m.codebook_sizes();
    if g.n_codebooks() > sizes.len() || g.codebook_sizes() != &sizes[..g.n_codebooks()] {
        return Err(Error::ShapeMismatch(format!(
            "grid codebooks {:?} do not match model stages {:?}",
            g.codebook_sizes(),
            sizes
        )));
    }
    let t = g.n_frames();
    let mut frames = Vec::with_capacity(t * m.frame_len);
    for f in 0..t {
        frames.extend(m.frame_embedding(g.frame(f)));
    }
    let ws = window_sum(t, m.frame_len, m.hop);
    Waveform::new(overlap_add(&frames, m.frame_len, m.hop, &ws), m.sample_rate)
}

/// [`CodecAdapter`] over a trained [`RvqModel`].
pub struct RvqCodec {
    model: RvqModel,
    descriptor: CodecDescriptor,
}

impl RvqCodec {
    pub fn new(model: RvqModel) -> Self {
        let descriptor = model.descriptor();
        Self { model, descriptor }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.descriptor.name = name.into();
        self
    }

    pub fn model(&self) -> &RvqModel {
        &self.model
    }
}

impl CodecAdapter for RvqCodec {
    fn descriptor(&self) -> &CodecDescriptor {
        &self.descriptor
    }

    fn encode(&self, wave: &Waveform, _utt_id: Option<&str>) -> Result<TokenGrid> {
        Ok(rvq_encode(&self.model, wave)?.with_source(self.descriptor.name.clone()))
    }

    fn decode(&self, grid: &TokenGrid) -> Result<Waveform> {
        rvq_decode(&self.model, grid)
    }
}
