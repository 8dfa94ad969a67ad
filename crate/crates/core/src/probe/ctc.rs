use crate::error::{Error, Result};

const BLANK: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct CtcOutput {
    /// `-ln p(target | logits)` in nats; `+inf` when infeasible.
    pub loss: f64,
    /// Gradient of `loss` with respect to the `T x C` logits; zero when infeasible.
    pub grad: Vec<f64>,
    /// False when the target cannot be emitted in `T` frames.
    pub feasible: bool,
}

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_softmax_rows(logits: &[f64], n_classes: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(n_classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Frames needed to emit `target`: one per label plus a blank between each repeated pair.
pub(crate) fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// CTC loss and its gradient by log-space forward-backward. Class 0 is blank.
pub fn ctc_loss(logits: &[f64], n_classes: usize, target: &[usize]) -> Result<CtcOutput> {
    if n_classes < 2 || logits.len() % n_classes != 0 || logits.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits do not form rows of {n_classes} classes",
            logits.len()
        )));
    }
    if let Some(&l) = target.iter().find(|&&l| l == BLANK || l >= n_classes) {
        return Err(Error::InvalidLabels(format!(
            "target label {l} is blank or out of range"
        )));
    }
    let t_len = logits.len() / n_classes;
    if t_len < min_frames(target) {
        return Ok(CtcOutput {
            loss: f64::INFINITY,
            grad: vec![0.0; logits.len()],
            feasible: false,
        });
    }

    let logp = log_softmax_rows(logits, n_classes);
    let lp = |t: usize, k: usize| logp[t * n_classes + k];
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &l in target {
        ext.push(l);
        ext.push(BLANK);
    }
    let s_len = ext.len();
    let skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];
    let ninf = f64::NEG_INFINITY;

    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = lse2(a, prev[s - 1]);
            }
            if skip(s) {
                a = lse2(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = a + lp(t, ext[s]);
        }
    }

    let mut beta = vec![ninf; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = lp(t_len - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(t_len - 1, ext[s_len - 2]);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut b = next[s];
            if s + 1 < s_len {
                b = lse2(b, next[s + 1]);
            }
            if s + 2 < s_len && skip(s + 2) {
                b = lse2(b, next[s + 2]);
            }
            beta[t * s_len + s] = b + lp(t, ext[s]);
        }
    }

    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = lse2(log_p, alpha[last + s_len - 2]);
    }

    let mut grad = vec![0.0; logits.len()];
    for t in 0..t_len {
        let row = &mut grad[t * n_classes..(t + 1) * n_classes];
        for (k, g) in row.iter_mut().enumerate() {
            *g = lp(t, k).exp();
        }
        for s in 0..s_len {
            let i = t * s_len + s;
            // alpha and beta both include the emission at t.
            let occ = alpha[i] + beta[i] - lp(t, ext[s]) - log_p;
            if occ > ninf {
                row[ext[s]] -= occ.exp();
            }
        }
    }
    Ok(CtcOutput {
        loss: -log_p,
        grad,
        feasible: true,
    })
}

/// Per-frame argmax, repeats collapsed, blanks removed.
pub fn ctc_greedy_decode(logits: &[f64], n_classes: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = BLANK;
    for row in logits.chunks_exact(n_classes) {
        let k = super::metrics::argmax(row);
        if k != BLANK && k != prev {
            out.push(k);
        }
        prev = k;
    }
    out
}
