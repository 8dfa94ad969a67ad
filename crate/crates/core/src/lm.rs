//! Token-stream perplexity: interpolated Kneser-Ney n-grams, normalization to a
//! 1024-entry reference codebook, and external log-probability ingestion.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::codec::TokenGrid;
use crate::error::{Error, Result};

pub const REFERENCE_CODEBOOK_SIZE: f64 = 1024.0;
pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_DISCOUNT: f64 = 0.75;
pub const LOGPROB_MAGIC: [u8; 4] = *b"ACLP";
pub const LOGPROB_VERSION: u16 = 1;

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    followers: HashMap<u32, u64>,
    total: u64,
}

/// Interpolated Kneser-Ney model over tokens `0..vocab_size`.
///
/// The top order uses raw counts, lower orders use continuation counts (the
/// number of distinct left neighbours, with stream start counted as one),
/// and the recursion ends in the uniform distribution.
#[derive(Debug, Clone)]
pub struct NGramLM {
    order: usize,
    vocab_size: usize,
    discount: f64,
    /// `levels[k - 1]` maps a `(k - 1)`-token context to its follower counts.
    levels: Vec<HashMap<Vec<u32>, ContextCounts>>,
}

impl NGramLM {
    /// An untrained model: every token has probability `1 / vocab_size`.
    pub fn uniform(vocab_size: usize) -> Self {
        Self {
            order: 1,
            vocab_size,
            discount: DEFAULT_DISCOUNT,
            levels: vec![HashMap::new()],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    fn level_prob(&self, k: usize, ctx: &[u32], w: u32) -> f64 {
        if k == 0 {
            return 1.0 / self.vocab_size as f64;
        }
        let lower = self.level_prob(k - 1, ctx.get(1..).unwrap_or(ctx), w);
        match self.levels[k - 1].get(ctx) {
            Some(c) if c.total > 0 => {
                let hit = c.followers.get(&w).copied().unwrap_or(0) as f64;
                let types = c.followers.len() as f64;
                ((hit - self.discount).max(0.0) + self.discount * types * lower) / c.total as f64
            }
            _ => lower,
        }
    }

    /// `p(w | history)`, using at most the last `order - 1` history tokens.
    pub fn prob(&self, history: &[u32], w: u32) -> f64 {
        let h = history.len().min(self.order - 1);
        self.level_prob(h + 1, &history[history.len() - h..], w)
    }
}

fn check_tokens(stream: &[u32], vocab_size: usize) -> Result<()> {
    if let Some(i) = stream.iter().position(|&t| t as usize >= vocab_size) {
        return Err(Error::TokenOutOfRange {
            frame: i,
            codebook: 0,
            token: stream[i],
            size: vocab_size as u32,
        });
    }
    Ok(())
}

pub fn train_ngram(
    streams: &[Vec<u32>],
    order: usize,
    vocab_size: usize,
    discount: f64,
) -> Result<NGramLM> {
    if order == 0 {
        return Err(Error::InvalidParameter(
            "n-gram order must be at least 1".into(),
        ));
    }
    if vocab_size == 0 {
        return Err(Error::InvalidParameter(
            "vocabulary must be non-empty".into(),
        ));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "discount must lie in (0, 1), got {discount}"
        )));
    }
    if streams.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyTrainingData);
    }
    for s in streams {
        check_tokens(s, vocab_size)?;
    }
    let mut levels = vec![HashMap::<Vec<u32>, ContextCounts>::new(); order];
    let add = |level: &mut HashMap<Vec<u32>, ContextCounts>, gram: &[u32]| {
        let (ctx, w) = gram.split_at(gram.len() - 1);
        let c = level.entry(ctx.to_vec()).or_default();
        *c.followers.entry(w[0]).or_default() += 1;
        c.total += 1;
    };
    for s in streams {
        for i in 0..s.len().saturating_sub(order - 1) {
            add(&mut levels[order - 1], &s[i..i + order]);
        }
    }
    for k in 1..order {
        let mut seen: HashSet<(Option<u32>, &[u32])> = HashSet::new();
        for s in streams {
            for i in 0..s.len().saturating_sub(k - 1) {
                let left = i.checked_sub(1).map(|j| s[j]);
                seen.insert((left, &s[i..i + k]));
            }
        }
        // Sorted so the count tables are built in a fixed order.
        let mut grams: Vec<&[u32]> = seen.into_iter().map(|(_, g)| g).collect();
        grams.sort_unstable();
        for g in grams {
            add(&mut levels[k - 1], g);
        }
    }
    Ok(NGramLM {
        order,
        vocab_size,
        discount,
        levels,
    })
}

/// Sum of `-ln p` over the stream and its length.
pub fn stream_loss(lm: &NGramLM, stream: &[u32]) -> Result<(f64, usize)> {
    check_tokens(stream, lm.vocab_size)?;
    let n = lm.order - 1;
    let loss = (0..stream.len())
        .map(|t| -lm.prob(&stream[t.saturating_sub(n)..t], stream[t]).ln())
        .sum();
    Ok((loss, stream.len()))
}

pub fn cross_entropy(lm: &NGramLM, stream: &[u32]) -> Result<f64> {
    if stream.is_empty() {
        return Err(Error::InsufficientData("empty token stream".into()));
    }
    let (loss, n) = stream_loss(lm, stream)?;
    Ok(loss / n as f64)
}

/// `exp(ce) / (codebook_size / 1024)`.
pub fn normalize_ppl(ce: f64, codebook_size: f64) -> f64 {
    ce.exp() / (codebook_size / REFERENCE_CODEBOOK_SIZE)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodebookPerplexity {
    pub codebook_index: usize,
    pub codebook_size: u32,
    pub ce: f64,
    pub ppl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerplexityRecord {
    /// Mean of the per-codebook cross-entropies, nats per token.
    pub ce_loss: f64,
    /// Geometric mean of the codebook sizes.
    pub codebook_size: f64,
    pub normalized_ppl: f64,
    pub per_codebook: Vec<CodebookPerplexity>,
}

impl PerplexityRecord {
    /// Builds the record from per-codebook cross-entropies.
    pub fn from_codebook_ce(ces: &[(usize, u32, f64)]) -> Result<Self> {
        if ces.is_empty() {
            return Err(Error::InsufficientData("no codebooks".into()));
        }
        let per_codebook: Vec<CodebookPerplexity> = ces
            .iter()
            .map(|&(i, s, ce)| CodebookPerplexity {
                codebook_index: i,
                codebook_size: s,
                ce,
                ppl: normalize_ppl(ce, s as f64),
            })
            .collect();
        let n = ces.len() as f64;
        let ce_loss = ces.iter().map(|c| c.2).sum::<f64>() / n;
        let codebook_size = if ces.iter().all(|c| c.1 == ces[0].1) {
            ces[0].1 as f64
        } else {
            (ces.iter().map(|c| (c.1 as f64).ln()).sum::<f64>() / n).exp()
        };
        Ok(Self {
            ce_loss,
            codebook_size,
            normalized_ppl: normalize_ppl(ce_loss, codebook_size),
            per_codebook,
        })
    }
}

fn split_columns(grids: &[&TokenGrid], codebook: usize) -> Vec<Vec<u32>> {
    grids.iter().map(|g| g.column(codebook)).collect()
}

/// Trains one independent model per codebook column on `train` and scores `valid`.
pub fn eval_grid_ppl(
    train: &[&TokenGrid],
    valid: &[&TokenGrid],
    order: usize,
    discount: f64,
) -> Result<PerplexityRecord> {
    let first = train
        .first()
        .ok_or_else(|| Error::InsufficientData("empty training split".into()))?;
    if valid.is_empty() {
        return Err(Error::InsufficientData("empty validation split".into()));
    }
    let sizes = first.codebook_sizes().to_vec();
    if let Some(g) = train
        .iter()
        .chain(valid)
        .find(|g| g.codebook_sizes() != sizes.as_slice())
    {
        return Err(Error::ShapeMismatch(format!(
            "grid codebooks {:?} differ from {:?}",
            g.codebook_sizes(),
            sizes
        )));
    }
    let ces: Vec<(usize, u32, f64)> = sizes
        .par_iter()
        .enumerate()
        .map(|(c, &s)| {
            let lm = train_ngram(&split_columns(train, c), order, s as usize, discount)?;
            let (mut loss, mut n) = (0.0, 0usize);
            for stream in split_columns(valid, c) {
                let (l, k) = stream_loss(&lm, &stream)?;
                loss += l;
                n += k;
            }
            if n == 0 {
                return Err(Error::InsufficientData(
                    "validation streams are empty".into(),
                ));
            }
            Ok((c, s, loss / n as f64))
        })
        .collect::<Result<_>>()?;
    PerplexityRecord::from_codebook_ce(&ces)
}

/// Per-token natural-log probabilities for one codebook, from an external model.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbStream {
    pub codebook_index: usize,
    pub values: Vec<f64>,
}

pub fn write_logprobs(s: &LogProbStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + 8 * s.values.len());
    buf.extend_from_slice(&LOGPROB_MAGIC);
    buf.extend_from_slice(&LOGPROB_VERSION.to_le_bytes());
    buf.extend_from_slice(&(s.codebook_index as u16).to_le_bytes());
    buf.extend_from_slice(&(s.values.len() as u64).to_le_bytes());
    for v in &s.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_logprobs(path: impl AsRef<Path>) -> Result<LogProbStream> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Validation(format!(
            "{}: truncated log-prob header",
            path.display()
        )));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != LOGPROB_MAGIC {
        return Err(Error::BadMagic {
            expected: LOGPROB_MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != LOGPROB_VERSION {
        return Err(Error::VersionMismatch {
            expected: LOGPROB_VERSION,
            found: version,
        });
    }
    let codebook_index = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() - 16 != count * 8 {
        return Err(Error::LengthMismatch {
            expected: count,
            found: (bytes.len() - 16) / 8,
        });
    }
    let values: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(i) = values.iter().position(|v| !(*v <= 0.0)) {
        return Err(Error::PositiveLogProb {
            index: i,
            value: values[i],
        });
    }
    Ok(LogProbStream {
        codebook_index,
        values,
    })
}

/// Perplexity record from external streams covering a `frames x sizes.len()` token grid.
pub fn record_from_logprobs(
    streams: &[LogProbStream],
    sizes: &[u32],
    frames: usize,
) -> Result<PerplexityRecord> {
    let total: usize = streams.iter().map(|s| s.values.len()).sum();
    if total != frames * sizes.len() {
        return Err(Error::LengthMismatch {
            expected: frames * sizes.len(),
            found: total,
        });
    }
    let mut ces = Vec::with_capacity(streams.len());
    for s in streams {
        let size = *sizes.get(s.codebook_index).ok_or_else(|| {
            Error::Validation(format!(
                "log-prob stream for unknown codebook {}",
                s.codebook_index
            ))
        })?;
        if s.values.len() != frames {
            return Err(Error::LengthMismatch {
                expected: frames,
                found: s.values.len(),
            });
        }
        ces.push((
            s.codebook_index,
            size,
            -s.values.iter().sum::<f64>() / frames as f64,
        ));
    }
    ces.sort_by_key(|c| c.0);
    PerplexityRecord::from_codebook_ce(&ces)
}

/// `codec,overall_ppl,cb1_ppl..cbN_ppl`, with N the widest record.
pub fn ppl_csv(rows: &[(String, PerplexityRecord)]) -> String {
    let width = rows
        .iter()
        .map(|r| r.1.per_codebook.len())
        .max()
        .unwrap_or(0);
    let mut out = String::from("codec,overall_ppl");
    for i in 1..=width {
        out += &format!(",cb{i}_ppl");
    }
    out.push('\n');
    for (name, rec) in rows {
        out += &format!("{name},{}", crate::analysis::fmt_g(rec.normalized_ppl));
        for i in 0..width {
            out.push(',');
            if let Some(c) = rec.per_codebook.get(i) {
                out += &crate::analysis::fmt_g(c.ppl);
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Rational;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unigram_hand_case() {
        let lm = train_ngram(&[vec![0, 0, 0, 1]], 1, 4, 0.75).unwrap();
        // (3 - .75 + .75*2/4) / 4, (1 - .75 + .375) / 4, .375 / 4
        assert!((lm.prob(&[], 0) - 0.65625).abs() < 1e-15);
        assert!((lm.prob(&[], 1) - 0.15625).abs() < 1e-15);
        assert!((lm.prob(&[], 2) - 0.09375).abs() < 1e-15);
        assert!((lm.prob(&[], 3) - 0.09375).abs() < 1e-15);
    }

    #[test]
    fn uniform_model_scores_ln_v() {
        let lm = NGramLM::uniform(64);
        let ce = cross_entropy(&lm, &[1, 5, 63, 0]).unwrap();
        assert!((ce - 64f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&lm, &[64]).is_err());
    }

    #[test]
    fn cycle_is_nearly_free() {
        let s: Vec<u32> = (0..10_000).map(|i| i % 2).collect();
        let lm = train_ngram(std::slice::from_ref(&s), 2, 2, 0.75).unwrap();
        assert!(cross_entropy(&lm, &s).unwrap() < 0.1);
    }

    #[test]
    fn two_state_chain_entropy_rate() {
        // P(0->1) = a, P(1->0) = b; stationary pi = (b, a) / (a + b).
        let (a, b) = (0.2f64, 0.4f64);
        let h2 = |p: f64| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        let h = (b * h2(a) + a * h2(b)) / (a + b);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut gen = |n: usize| {
            let mut s = vec![0u32];
            while s.len() < n {
                let flip = rng.gen::<f64>() < if s[s.len() - 1] == 0 { a } else { b };
                s.push(s[s.len() - 1] ^ u32::from(flip));
            }
            s
        };
        let train = gen(100_000);
        let test = gen(100_000);
        let lm = train_ngram(&[train], 2, 2, 0.75).unwrap();
        let ce = cross_entropy(&lm, &test).unwrap();
        assert!((ce - h).abs() < 0.05 * h, "{ce} vs {h}");
    }

    #[test]
    fn training_is_deterministic_and_validated() {
        let s = vec![vec![1, 2, 3, 1, 2, 2, 0]];
        let a = train_ngram(&s, 3, 4, 0.75).unwrap();
        let b = train_ngram(&s, 3, 4, 0.75).unwrap();
        for h in [vec![], vec![1], vec![1, 2], vec![3, 3]] {
            for w in 0..4 {
                assert_eq!(a.prob(&h, w).to_bits(), b.prob(&h, w).to_bits());
            }
        }
        assert!(matches!(
            train_ngram(&[vec![]], 2, 4, 0.75),
            Err(Error::EmptyTrainingData)
        ));
        assert!(train_ngram(&s, 0, 4, 0.75).is_err());
        assert!(train_ngram(&s, 2, 3, 0.75).is_err());
        assert!(train_ngram(&s, 2, 4, 1.0).is_err());
    }

    #[test]
    fn normalization_examples() {
        assert!((normalize_ppl(4096f64.ln(), 4096.0) - 1024.0).abs() < 1e-9);
        assert_eq!(normalize_ppl(0.0, 1024.0), 1.0);
        assert!((normalize_ppl(2f64.ln(), 2048.0) - 1.0).abs() < 1e-15);
        let r = PerplexityRecord::from_codebook_ce(&[(0, 1024, 1.0), (1, 1024, 3.0)]).unwrap();
        assert!((r.normalized_ppl - 2f64.exp()).abs() < 1e-12);
    }

    fn grid(tokens: Vec<u32>, n_cb: usize, size: u32) -> TokenGrid {
        let t = tokens.len() / n_cb;
        TokenGrid::new(
            tokens,
            t,
            vec![size; n_cb],
            Rational::integer(50).unwrap(),
            "t",
        )
        .unwrap()
    }

    #[test]
    fn grid_ppl_single_codebook_and_column_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let toks: Vec<u32> = (0..2000).map(|_| rng.gen_range(0..8)).collect();
        let tr = grid(toks[..1600].to_vec(), 2, 8);
        let va = grid(toks[1600..].to_vec(), 2, 8);
        let rec = eval_grid_ppl(&[&tr], &[&va], 2, 0.75).unwrap();
        assert_eq!(rec.per_codebook.len(), 2);

        let swap = |g: &TokenGrid| {
            let t: Vec<u32> = (0..g.n_frames())
                .flat_map(|f| [g.get(f, 1), g.get(f, 0)])
                .collect();
            grid(t, 2, 8)
        };
        let rec2 = eval_grid_ppl(&[&swap(&tr)], &[&swap(&va)], 2, 0.75).unwrap();
        assert_eq!(rec.per_codebook[0].ce, rec2.per_codebook[1].ce);
        assert_eq!(rec.per_codebook[1].ce, rec2.per_codebook[0].ce);
        assert!((rec.normalized_ppl - rec2.normalized_ppl).abs() < 1e-12);

        let one_tr = grid(tr.column(0), 1, 8);
        let one_va = grid(va.column(0), 1, 8);
        let single = eval_grid_ppl(&[&one_tr], &[&one_va], 2, 0.75).unwrap();
        assert_eq!(single.ce_loss, single.per_codebook[0].ce);
        assert_eq!(single.normalized_ppl, single.per_codebook[0].ppl);
        assert!(eval_grid_ppl(&[&tr], &[], 2, 0.75).is_err());
    }

    #[test]
    fn logprob_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cb0.aclp");
        let s = LogProbStream {
            codebook_index: 0,
            values: vec![(1.0f64 / 1024.0).ln(); 10],
        };
        write_logprobs(&s, &p).unwrap();
        let back = read_logprobs(&p).unwrap();
        assert_eq!(back, s);
        let rec = record_from_logprobs(std::slice::from_ref(&back), &[1024], 10).unwrap();
        assert!((rec.normalized_ppl - 1024.0).abs() < 1e-9);
        assert!(matches!(
            record_from_logprobs(&[back], &[1024, 1024], 10),
            Err(Error::LengthMismatch { .. })
        ));
        write_logprobs(
            &LogProbStream {
                codebook_index: 0,
                values: vec![-1.0, 0.5],
            },
            &p,
        )
        .unwrap();
        assert!(matches!(
            read_logprobs(&p),
            Err(Error::PositiveLogProb { index: 1, .. })
        ));
    }

    #[test]
    fn table_csv_layout() {
        let r =
            PerplexityRecord::from_codebook_ce(&[(0, 1024, 1024f64.ln()), (1, 1024, 1024f64.ln())])
                .unwrap();
        assert_eq!(
            ppl_csv(&[("c".into(), r)]),
            "codec,overall_ppl,cb1_ppl,cb2_ppl\nc,1024,1024,1024\n"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn distributions_sum_to_one(
            seqs in prop::collection::vec(prop::collection::vec(0u32..6, 1..40), 1..4),
            order in 1usize..4,
            hist in prop::collection::vec(0u32..6, 0..4),
        ) {
            let lm = train_ngram(&seqs, order, 6, 0.75).unwrap();
            let total: f64 = (0..6).map(|w| lm.prob(&hist, w)).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for s in &seqs {
                for &w in s {
                    prop_assert!(lm.prob(&[], w) > 0.0);
                }
            }
        }
    }
}
