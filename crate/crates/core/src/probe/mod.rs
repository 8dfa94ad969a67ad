//! Downstream probes over frozen token representations.
//!
//! Pooled linear probes cover classification and regression; a linear
//! context model trained with CTC covers character recognition.

mod ctc;
mod ctc_probe;
mod linear;
pub mod metrics;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::TokenGrid;
use crate::error::{Error, Result};
use crate::rvq::RvqModel;

pub use ctc::{ctc_greedy_decode, ctc_loss, CtcOutput};
pub use ctc_probe::{
    decode_chars, encode_text, normalize_transcript, train_ctc_probe, CtcEval, CtcProbe,
    CHAR_VOCAB, CONTEXT, EMBED_DIM,
};
pub use linear::{eval_classifier, train_linear_probe, LinearProbe, MetricRecord, Standardizer};

const ACFE_MAGIC: [u8; 4] = *b"ACFE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Multiclass,
    Multilabel,
    Regression,
    CtcAsr,
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Multiclass => "multiclass",
            ProbeKind::Multilabel => "multilabel",
            ProbeKind::Regression => "regression",
            ProbeKind::CtcAsr => "ctc_asr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMetric {
    Accuracy,
    R2,
    RocAuc,
    Ap,
    Wer,
    Cer,
}

impl ProbeMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeMetric::Accuracy => "acc",
            ProbeMetric::R2 => "r2",
            ProbeMetric::RocAuc => "roc_auc",
            ProbeMetric::Ap => "ap",
            ProbeMetric::Wer => "wer",
            ProbeMetric::Cer => "cer",
        }
    }

    fn legal_for(self, kind: ProbeKind) -> bool {
        matches!(
            (kind, self),
            (ProbeKind::Multiclass, ProbeMetric::Accuracy)
                | (ProbeKind::Multilabel, ProbeMetric::RocAuc | ProbeMetric::Ap)
                | (ProbeKind::Regression, ProbeMetric::R2)
                | (ProbeKind::CtcAsr, ProbeMetric::Wer | ProbeMetric::Cer)
        )
    }
}

impl fmt::Display for ProbeMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "acc" | "accuracy" => ProbeMetric::Accuracy,
            "r2" => ProbeMetric::R2,
            "roc_auc" | "roc-auc" => ProbeMetric::RocAuc,
            "ap" | "pr_auc" => ProbeMetric::Ap,
            "wer" => ProbeMetric::Wer,
            "cer" => ProbeMetric::Cer,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown probe metric {other:?}"
                )))
            }
        })
    }
}

/// Macro or micro averaging over multilabel columns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTaskSpec {
    pub kind: ProbeKind,
    /// Classes, labels or regression targets. Ignored for `ctc_asr`.
    #[serde(default)]
    pub n_outputs: usize,
    /// Empty means the standard set for `kind`.
    #[serde(default)]
    pub metrics: Vec<ProbeMetric>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Maximum number of gradient steps, shared by every codec under comparison.
    #[serde(default)]
    pub compute_budget: Option<usize>,
    #[serde(default)]
    pub averaging: Averaging,
}

fn default_epochs() -> usize {
    100
}

fn default_lr() -> f64 {
    0.1
}

fn default_batch() -> usize {
    32
}

impl ProbeKind {
    pub fn standard_metrics(self) -> Vec<ProbeMetric> {
        match self {
            ProbeKind::Multiclass => vec![ProbeMetric::Accuracy],
            ProbeKind::Multilabel => vec![ProbeMetric::RocAuc, ProbeMetric::Ap],
            ProbeKind::Regression => vec![ProbeMetric::R2],
            ProbeKind::CtcAsr => vec![ProbeMetric::Wer, ProbeMetric::Cer],
        }
    }
}

impl ProbeTaskSpec {
    /// Spec with the standard metric set for `kind`.
    pub fn new(kind: ProbeKind, n_outputs: usize) -> Self {
        ProbeTaskSpec {
            kind,
            n_outputs,
            metrics: kind.standard_metrics(),
            epochs: default_epochs(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            seed: 0,
            compute_budget: None,
            averaging: Averaging::Macro,
        }
    }

    /// Metrics to report: the configured ones, or the standard set.
    pub fn effective_metrics(&self) -> Vec<ProbeMetric> {
        if self.metrics.is_empty() {
            self.kind.standard_metrics()
        } else {
            self.metrics.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(m) = self.metrics.iter().find(|m| !m.legal_for(self.kind)) {
            return Err(Error::InvalidParameter(format!(
                "metric {m} is not defined for {:?} probes",
                self.kind
            )));
        }
        if self.kind != ProbeKind::CtcAsr && self.n_outputs == 0 {
            return Err(Error::InvalidParameter(
                "probe needs at least one output".into(),
            ));
        }
        if self.kind == ProbeKind::Multiclass && self.n_outputs < 2 {
            return Err(Error::InvalidParameter(
                "multiclass probe needs at least two classes".into(),
            ));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(
                "batch_size and learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Whether another gradient step fits the budget.
    pub(crate) fn step_allowed(&self, steps_taken: usize) -> bool {
        self.compute_budget.is_none_or(|b| steps_taken < b)
    }
}

/// Supervision target for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Class(usize),
    /// 0/1 indicator per label.
    Multilabel(Vec<u8>),
    Regression(Vec<f64>),
}

/// Mean and population std over time, concatenated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledEmbedding {
    pub vector: Vec<f64>,
}

impl PooledEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Where per-frame embeddings come from.
#[derive(Debug, Clone, Copy)]
pub enum EmbeddingSource<'a> {
    /// Sum of the stage centroids selected by each frame's tokens.
    Rvq(&'a RvqModel),
    /// Concatenated per-codebook one-hot vectors.
    OneHot,
    /// A `T x E` row-major matrix supplied by the codec.
    Frames { data: &'a [f64], dim: usize },
}

/// Pool a `T x E` frame matrix.
pub fn pool_frames(data: &[f64], n_frames: usize, dim: usize) -> Result<PooledEmbedding> {
    if n_frames == 0 {
        return Err(Error::InsufficientFrames {
            needed: 1,
            actual: 0,
        });
    }
    if data.len() != n_frames * dim {
        return Err(Error::LengthMismatch {
            expected: n_frames * dim,
            found: data.len(),
        });
    }
    let t = n_frames as f64;
    let mut mean = vec![0.0; dim];
    for row in data.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let mut var = vec![0.0; dim];
    for row in data.chunks_exact(dim) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut vector = mean;
    vector.extend(var.into_iter().map(|s| (s / t).sqrt()));
    if vector.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite frame embedding".into()));
    }
    Ok(PooledEmbedding { vector })
}

/// Pool a token grid through an embedding source.
pub fn pool_embeddings(g: &TokenGrid, source: EmbeddingSource<'_>) -> Result<PooledEmbedding> {
    let t = g.n_frames();
    if t == 0 {
        return Err(Error::InsufficientFrames {
            needed: 1,
            actual: 0,
        });
    }
    match source {
        EmbeddingSource::Rvq(model) => {
            if g.n_codebooks() > model.n_stages() {
                return Err(Error::ShapeMismatch(format!(
                    "grid has {} codebooks, model has {} stages",
                    g.n_codebooks(),
                    model.n_stages()
                )));
            }
            let data: Vec<f64> = (0..t)
                .flat_map(|i| model.frame_embedding(g.frame(i)))
                .collect();
            pool_frames(&data, t, data.len() / t)
        }
        EmbeddingSource::OneHot => {
            // Mean of an indicator is its frequency p, its population std sqrt(p(1-p)).
            let total: usize = g.codebook_sizes().iter().map(|&k| k as usize).sum();
            let mut counts = vec![0usize; total];
            let mut offset = 0;
            for (cb, &k) in g.codebook_sizes().iter().enumerate() {
                for tok in g.column(cb) {
                    counts[offset + tok as usize] += 1;
                }
                offset += k as usize;
            }
            let p: Vec<f64> = counts.iter().map(|&c| c as f64 / t as f64).collect();
            let mut vector = p.clone();
            vector.extend(p.iter().map(|p| (p * (1.0 - p)).max(0.0).sqrt()));
            Ok(PooledEmbedding { vector })
        }
        EmbeddingSource::Frames { data, dim } => {
            if dim == 0 || data.len() / dim.max(1) != t {
                return Err(Error::LengthMismatch {
                    expected: t,
                    found: data.len() / dim.max(1),
                });
            }
            pool_frames(data, t, dim)
        }
    }
}

/// Per-frame embedding dump: magic, u32 T, u32 E, f32 LE row-major.
pub fn write_frame_embeddings(
    path: impl AsRef<Path>,
    data: &[f64],
    n_frames: usize,
    dim: usize,
) -> Result<()> {
    let path = path.as_ref();
    if data.len() != n_frames * dim {
        return Err(Error::LengthMismatch {
            expected: n_frames * dim,
            found: data.len(),
        });
    }
    let mut buf = Vec::with_capacity(12 + 4 * data.len());
    buf.extend_from_slice(&ACFE_MAGIC);
    buf.extend_from_slice(&(n_frames as u32).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in data {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Returns `(data, T, E)`.
pub fn read_frame_embeddings(path: impl AsRef<Path>) -> Result<(Vec<f64>, usize, usize)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::MalformedContainer(format!(
            "{}: truncated embedding header",
            path.display()
        )));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != ACFE_MAGIC {
        return Err(Error::BadMagic {
            expected: ACFE_MAGIC,
            found: magic,
        });
    }
    let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let e = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != 4 * t * e {
        return Err(Error::LengthMismatch {
            expected: t * e,
            found: body.len() / 4,
        });
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok((data, t, e))
}

/// One line of the probe report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub task: String,
    pub dataset: String,
    pub metric: ProbeMetric,
    pub value: f64,
}

/// `codec,task,dataset,metric,value`.
pub fn probe_csv(rows: &[(String, ProbeResult)]) -> String {
    let mut s = String::from("codec,task,dataset,metric,value\n");
    for (codec, r) in rows {
        s.push_str(&format!(
            "{codec},{},{},{},{}\n",
            r.task,
            r.dataset,
            r.metric,
            crate::analysis::fmt_g(r.value)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Rational;

    fn grid(tokens: Vec<u32>, frames: usize, sizes: Vec<u32>) -> TokenGrid {
        TokenGrid::new(tokens, frames, sizes, Rational::new(50, 1).unwrap(), "t").unwrap()
    }

    #[test]
    fn pooling_arithmetic() {
        let p = pool_frames(&[0.0, 2.0, 2.0, 0.0], 2, 2).unwrap();
        assert_eq!(p.vector, vec![1.0, 1.0, 1.0, 1.0]);
        let c = pool_frames(&[3.0, -1.0, 3.0, -1.0, 3.0, -1.0], 3, 2).unwrap();
        assert_eq!(&c.vector[2..], &[0.0, 0.0]);
        assert_eq!(c.dim(), 4);
        assert!(pool_frames(&[], 0, 2).is_err());
    }

    #[test]
    fn one_hot_pooling_matches_explicit_matrix() {
        let g = grid(vec![0, 1, 2, 1, 0, 0], 3, vec![3, 2]);
        let mut rows = Vec::new();
        for t in 0..3 {
            let mut r = vec![0.0; 5];
            r[g.get(t, 0) as usize] = 1.0;
            r[3 + g.get(t, 1) as usize] = 1.0;
            rows.extend(r);
        }
        let explicit = pool_frames(&rows, 3, 5).unwrap();
        let fast = pool_embeddings(&g, EmbeddingSource::OneHot).unwrap();
        for (a, b) in explicit.vector.iter().zip(&fast.vector) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(fast.dim(), 10);
    }

    #[test]
    fn frame_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.acfe");
        let data = vec![0.5, -1.25, 3.0, 0.0, 2.0, 8.0];
        write_frame_embeddings(&path, &data, 2, 3).unwrap();
        let (back, t, e) = read_frame_embeddings(&path).unwrap();
        assert_eq!((t, e), (2, 3));
        assert_eq!(back, data);
        let g = grid(vec![0, 0], 2, vec![4]);
        let p = pool_embeddings(
            &g,
            EmbeddingSource::Frames {
                data: &back,
                dim: 3,
            },
        )
        .unwrap();
        assert_eq!(p.dim(), 6);
        std::fs::write(&path, b"ACFE\x01\0\0\0").unwrap();
        assert!(read_frame_embeddings(&path).is_err());
    }

    #[test]
    fn metric_legality() {
        let mut s = ProbeTaskSpec::new(ProbeKind::Multiclass, 3);
        assert!(s.validate().is_ok());
        s.metrics.push(ProbeMetric::R2);
        assert!(s.validate().is_err());
        assert!(ProbeTaskSpec::new(ProbeKind::Regression, 1)
            .validate()
            .is_ok());
        assert!(ProbeTaskSpec::new(ProbeKind::Multiclass, 1)
            .validate()
            .is_err());
        assert_eq!(
            "roc-auc".parse::<ProbeMetric>().unwrap(),
            ProbeMetric::RocAuc
        );
    }

    #[test]
    fn label_json_shape() {
        let l: Label = serde_json::from_str(r#"{"class":2}"#).unwrap();
        assert_eq!(l, Label::Class(2));
        let m: Label = serde_json::from_str(r#"{"multilabel":[0,1,1]}"#).unwrap();
        assert_eq!(m, Label::Multilabel(vec![0, 1, 1]));
    }
}
