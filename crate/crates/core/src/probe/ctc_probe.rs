use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ctc::{ctc_greedy_decode, ctc_loss, min_frames};
use super::{ProbeKind, ProbeTaskSpec};
use crate::codec::TokenGrid;
use crate::error::{Error, Result};
use crate::recon::{align, EditCounts};

/// Output characters; class `i + 1` is `CHAR_VOCAB[i]`, class 0 is blank.
pub const CHAR_VOCAB: &str = "abcdefghijklmnopqrstuvwxyz '";
pub const EMBED_DIM: usize = 64;
/// Frames stacked on each side of the centre frame.
pub const CONTEXT: usize = 2;
const WIDTH: usize = 2 * CONTEXT + 1;
const STACKED: usize = WIDTH * EMBED_DIM;

/// Lowercase, drop characters outside the vocabulary, collapse spaces.
pub fn normalize_transcript(text: &str) -> String {
    let kept: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_whitespace() { ' ' } else { c })
        .filter(|&c| CHAR_VOCAB.contains(c))
        .collect();
    kept.split(' ')
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Class indices of a normalized transcript.
pub fn encode_text(text: &str) -> Vec<usize> {
    text.chars()
        .filter_map(|c| CHAR_VOCAB.find(c).map(|i| i + 1))
        .collect()
}

pub fn decode_chars(labels: &[usize]) -> String {
    let vocab: Vec<char> = CHAR_VOCAB.chars().collect();
    labels
        .iter()
        .filter_map(|&l| vocab.get(l.wrapping_sub(1)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtcProbe {
    pub codebook_sizes: Vec<u32>,
    /// One `K x 64` table per codebook; frame vectors are summed across codebooks.
    pub embeddings: Vec<Vec<f64>>,
    /// `(|vocab| + 1) x (5 * 64)` row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub n_classes: usize,
    pub steps: usize,
    /// Mean per-utterance training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl CtcProbe {
    fn new(codebook_sizes: Vec<u32>, rng: &mut ChaCha8Rng) -> Self {
        let n_classes = CHAR_VOCAB.chars().count() + 1;
        let embeddings = codebook_sizes
            .iter()
            .map(|&k| {
                (0..k as usize * EMBED_DIM)
                    .map(|_| rng.gen_range(-0.1..0.1))
                    .collect()
            })
            .collect();
        let scale = 1.0 / (STACKED as f64).sqrt();
        let weights = (0..n_classes * STACKED)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        CtcProbe {
            codebook_sizes,
            embeddings,
            weights,
            bias: vec![0.0; n_classes],
            n_classes,
            steps: 0,
            epoch_losses: Vec::new(),
        }
    }

    fn check(&self, g: &TokenGrid) -> Result<()> {
        if g.codebook_sizes() != self.codebook_sizes.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "grid codebooks {:?}, probe trained on {:?}",
                g.codebook_sizes(),
                self.codebook_sizes
            )));
        }
        Ok(())
    }

    /// Per-frame summed embeddings, `T x 64`.
    fn frame_vectors(&self, g: &TokenGrid) -> Vec<f64> {
        let mut e = vec![0.0; g.n_frames() * EMBED_DIM];
        for (t, row) in e.chunks_exact_mut(EMBED_DIM).enumerate() {
            for (c, &tok) in g.frame(t).iter().enumerate() {
                let v =
                    &self.embeddings[c][tok as usize * EMBED_DIM..(tok as usize + 1) * EMBED_DIM];
                row.iter_mut().zip(v).for_each(|(r, x)| *r += x);
            }
        }
        e
    }

    /// Context-stacked inputs with zero padding, `T x 320`.
    fn stack(e: &[f64], t_len: usize) -> Vec<f64> {
        let mut s = vec![0.0; t_len * STACKED];
        for t in 0..t_len {
            for j in 0..WIDTH {
                let src = t as isize + j as isize - CONTEXT as isize;
                if (0..t_len as isize).contains(&src) {
                    let src = src as usize;
                    s[t * STACKED + j * EMBED_DIM..t * STACKED + (j + 1) * EMBED_DIM]
                        .copy_from_slice(&e[src * EMBED_DIM..(src + 1) * EMBED_DIM]);
                }
            }
        }
        s
    }

    fn project(&self, stacked: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(stacked.len() / STACKED * self.n_classes);
        for s in stacked.chunks_exact(STACKED) {
            for (w, b) in self.weights.chunks_exact(STACKED).zip(&self.bias) {
                out.push(b + w.iter().zip(s).map(|(a, x)| a * x).sum::<f64>());
            }
        }
        out
    }

    /// `T x (|vocab| + 1)` logits for a grid.
    pub fn logits(&self, g: &TokenGrid) -> Result<Vec<f64>> {
        self.check(g)?;
        let e = self.frame_vectors(g);
        Ok(self.project(&Self::stack(&e, g.n_frames())))
    }

    pub fn transcribe(&self, g: &TokenGrid) -> Result<String> {
        Ok(decode_chars(&ctc_greedy_decode(
            &self.logits(g)?,
            self.n_classes,
        )))
    }

    /// Corpus-level WER and CER of greedy transcripts.
    pub fn evaluate(&self, eval: &[(&TokenGrid, &str)]) -> Result<CtcEval> {
        let per_utt: Vec<(EditCounts, EditCounts)> = eval
            .par_iter()
            .map(|(g, text)| {
                let hyp = self.transcribe(g)?;
                let reference = normalize_transcript(text);
                let words = |s: &str| {
                    s.split(' ')
                        .filter(|w| !w.is_empty())
                        .map(str::to_owned)
                        .collect::<Vec<_>>()
                };
                let chars = |s: &str| s.chars().collect::<Vec<_>>();
                Ok((
                    align(&words(&reference), &words(&hyp)),
                    align(&chars(&reference), &chars(&hyp)),
                ))
            })
            .collect::<Result<_>>()?;
        let sum = |pick: fn(&(EditCounts, EditCounts)) -> EditCounts| {
            per_utt
                .iter()
                .map(pick)
                .fold(EditCounts::default(), |a, b| EditCounts {
                    substitutions: a.substitutions + b.substitutions,
                    deletions: a.deletions + b.deletions,
                    insertions: a.insertions + b.insertions,
                    ref_len: a.ref_len + b.ref_len,
                })
        };
        let (w, c) = (sum(|p| p.0), sum(|p| p.1));
        if w.ref_len == 0 || c.ref_len == 0 {
            return Err(Error::EmptyReference);
        }
        Ok(CtcEval {
            wer: w.rate(),
            cer: c.rate(),
            n: eval.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtcEval {
    pub wer: f64,
    pub cer: f64,
    pub n: usize,
}

/// SGD through the projection, context stacking and embedding tables.
///
/// Utterances whose target cannot fit their grid are skipped.
pub fn train_ctc_probe(train: &[(&TokenGrid, &str)], spec: &ProbeTaskSpec) -> Result<CtcProbe> {
    spec.validate()?;
    if spec.kind != ProbeKind::CtcAsr {
        return Err(Error::InvalidParameter(format!(
            "{:?} spec passed to the CTC probe",
            spec.kind
        )));
    }
    let Some((first, _)) = train.first() else {
        return Err(Error::EmptyTrainingData);
    };
    let sizes = first.codebook_sizes().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut probe = CtcProbe::new(sizes, &mut rng);
    let mut items = Vec::new();
    for (g, text) in train {
        probe.check(g)?;
        let target = encode_text(&normalize_transcript(text));
        if !target.is_empty() && g.n_frames() >= min_frames(&target) {
            items.push((*g, target));
        }
    }
    if items.is_empty() {
        return Err(Error::InsufficientData(
            "no training target is non-empty and fits its grid".into(),
        ));
    }

    let n_cls = probe.n_classes;
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut gw = vec![0.0; probe.weights.len()];
    let mut gb = vec![0.0; n_cls];
    'epochs: for _ in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(spec.batch_size) {
            if !spec.step_allowed(probe.steps) {
                break 'epochs;
            }
            gw.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            // (codebook, token, gradient) contributions to the embedding tables.
            let mut ge: Vec<(usize, usize, Vec<f64>)> = Vec::new();
            for &i in batch {
                let (g, target) = &items[i];
                let t_len = g.n_frames();
                let e = probe.frame_vectors(g);
                let s = CtcProbe::stack(&e, t_len);
                let out = ctc_loss(&probe.project(&s), n_cls, target)?;
                epoch_loss += out.loss;
                seen += 1;
                let mut de = vec![0.0; t_len * EMBED_DIM];
                for t in 0..t_len {
                    let dl = &out.grad[t * n_cls..(t + 1) * n_cls];
                    let st = &s[t * STACKED..(t + 1) * STACKED];
                    let mut ds = vec![0.0; STACKED];
                    for (k, &d) in dl.iter().enumerate() {
                        gb[k] += d;
                        let w = &probe.weights[k * STACKED..(k + 1) * STACKED];
                        for ((gwi, x), (dsi, wi)) in gw[k * STACKED..(k + 1) * STACKED]
                            .iter_mut()
                            .zip(st)
                            .zip(ds.iter_mut().zip(w))
                        {
                            *gwi += d * x;
                            *dsi += d * wi;
                        }
                    }
                    for j in 0..WIDTH {
                        let src = t as isize + j as isize - CONTEXT as isize;
                        if (0..t_len as isize).contains(&src) {
                            let src = src as usize;
                            de[src * EMBED_DIM..(src + 1) * EMBED_DIM]
                                .iter_mut()
                                .zip(&ds[j * EMBED_DIM..(j + 1) * EMBED_DIM])
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                }
                for t in 0..t_len {
                    for (c, &tok) in g.frame(t).iter().enumerate() {
                        ge.push((
                            c,
                            tok as usize,
                            de[t * EMBED_DIM..(t + 1) * EMBED_DIM].to_vec(),
                        ));
                    }
                }
            }
            let scale = spec.learning_rate / batch.len() as f64;
            probe
                .weights
                .iter_mut()
                .zip(&gw)
                .for_each(|(w, g)| *w -= scale * g);
            probe
                .bias
                .iter_mut()
                .zip(&gb)
                .for_each(|(b, g)| *b -= scale * g);
            for (c, tok, d) in ge {
                probe.embeddings[c][tok * EMBED_DIM..(tok + 1) * EMBED_DIM]
                    .iter_mut()
                    .zip(&d)
                    .for_each(|(w, g)| *w -= scale * g);
            }
            probe.steps += 1;
        }
        if seen > 0 {
            probe.epoch_losses.push(epoch_loss / seen as f64);
        }
    }
    if probe
        .weights
        .iter()
        .chain(probe.embeddings.iter().flatten())
        .any(|v| !v.is_finite())
    {
        return Err(Error::InvalidParameter(
            "CTC probe diverged; lower the learning rate".into(),
        ));
    }
    Ok(probe)
}
