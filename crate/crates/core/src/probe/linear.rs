use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{
    accuracy, average_precision, macro_average, micro_average, r2_score, roc_auc,
};
use super::{Averaging, Label, PooledEmbedding, ProbeKind, ProbeMetric, ProbeTaskSpec};
use crate::error::{Error, Result};

/// Per-feature affine map fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(xs: &[&[f64]]) -> Self {
        let d = xs[0].len();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in xs {
            for (m, v) in mean.iter_mut().zip(*x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for x in xs {
            for ((s, v), m) in var.iter_mut().zip(*x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        // Constant features pass through centred but unscaled.
        let std = var
            .into_iter()
            .map(|s| (s / n).sqrt())
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub kind: ProbeKind,
    /// `L x D` row-major, acting on standardized features.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub n_outputs: usize,
    pub dim: usize,
    pub standardizer: Standardizer,
    /// Gradient steps actually taken.
    pub steps: usize,
}

impl LinearProbe {
    fn logits(&self, z: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(z).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }

    /// Class probabilities, label probabilities or regression values.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let z = self.standardizer.apply(x);
        let mut out = self.logits(&z);
        link(self.kind, &mut out);
        out
    }

    /// Weights and bias expressed on raw (unstandardized) features.
    pub fn raw_parameters(&self) -> (Vec<f64>, Vec<f64>) {
        let mut w = self.weights.clone();
        let mut b = self.bias.clone();
        for (row, bias) in w.chunks_exact_mut(self.dim).zip(b.iter_mut()) {
            for ((wi, m), s) in row
                .iter_mut()
                .zip(&self.standardizer.mean)
                .zip(&self.standardizer.std)
            {
                *wi /= s;
                *bias -= *wi * m;
            }
        }
        (w, b)
    }
}

fn link(kind: ProbeKind, v: &mut [f64]) {
    match kind {
        ProbeKind::Multiclass => {
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in v.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            v.iter_mut().for_each(|x| *x /= sum);
        }
        ProbeKind::Multilabel => v.iter_mut().for_each(|x| *x = 1.0 / (1.0 + (-*x).exp())),
        ProbeKind::Regression | ProbeKind::CtcAsr => {}
    }
}

/// Target vector in output space: one-hot, indicators or raw targets.
fn target(label: &Label, kind: ProbeKind, n: usize) -> Result<Vec<f64>> {
    let bad = |msg: String| Err(Error::InvalidLabels(msg));
    match (kind, label) {
        (ProbeKind::Multiclass, Label::Class(c)) => {
            if *c >= n {
                return bad(format!("class {c} out of range for {n} classes"));
            }
            let mut t = vec![0.0; n];
            t[*c] = 1.0;
            Ok(t)
        }
        (ProbeKind::Multilabel, Label::Multilabel(bits)) => {
            if bits.len() != n || bits.iter().any(|&b| b > 1) {
                return bad(format!("multilabel target must be {n} zeros and ones"));
            }
            Ok(bits.iter().map(|&b| b as f64).collect())
        }
        (ProbeKind::Regression, Label::Regression(v)) => {
            if v.len() != n || v.iter().any(|x| !x.is_finite()) {
                return bad(format!("regression target must be {n} finite values"));
            }
            Ok(v.clone())
        }
        (k, l) => bad(format!("label {l:?} does not fit a {k:?} probe")),
    }
}

/// Mini-batch SGD on standardized pooled features.
pub fn train_linear_probe(
    train: &[(PooledEmbedding, Label)],
    spec: &ProbeTaskSpec,
) -> Result<LinearProbe> {
    spec.validate()?;
    if spec.kind == ProbeKind::CtcAsr {
        return Err(Error::InvalidParameter(
            "ctc_asr tasks use the CTC probe".into(),
        ));
    }
    if train.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} training examples, need 2",
            train.len()
        )));
    }
    let dim = train[0].0.dim();
    if let Some((e, _)) = train.iter().find(|(e, _)| e.dim() != dim) {
        return Err(Error::ShapeMismatch(format!(
            "embedding dims {dim} and {}",
            e.dim()
        )));
    }
    let n = spec.n_outputs;
    let targets: Vec<Vec<f64>> = train
        .iter()
        .map(|(_, l)| target(l, spec.kind, n))
        .collect::<Result<_>>()?;
    if spec.kind == ProbeKind::Multiclass {
        let first = targets[0].iter().position(|&v| v == 1.0);
        if targets
            .iter()
            .all(|t| t.iter().position(|&v| v == 1.0) == first)
        {
            return Err(Error::InvalidLabels(
                "training set contains a single class".into(),
            ));
        }
    }
    let raw: Vec<&[f64]> = train.iter().map(|(e, _)| e.vector.as_slice()).collect();
    let standardizer = Standardizer::fit(&raw);
    let xs: Vec<Vec<f64>> = raw.iter().map(|x| standardizer.apply(x)).collect();

    let mut probe = LinearProbe {
        kind: spec.kind,
        weights: vec![0.0; n * dim],
        bias: vec![0.0; n],
        n_outputs: n,
        dim,
        standardizer,
        steps: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut gw = vec![0.0; n * dim];
    let mut gb = vec![0.0; n];
    'epochs: for _ in 0..spec.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(spec.batch_size) {
            if !spec.step_allowed(probe.steps) {
                break 'epochs;
            }
            gw.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let mut out = probe.logits(&xs[i]);
                link(spec.kind, &mut out);
                // Softmax+CE, sigmoid+BCE and identity+half-MSE all give prediction minus target.
                for (l, (o, t)) in out.iter().zip(&targets[i]).enumerate() {
                    let d = o - t;
                    gb[l] += d;
                    for (g, x) in gw[l * dim..(l + 1) * dim].iter_mut().zip(&xs[i]) {
                        *g += d * x;
                    }
                }
            }
            let scale = spec.learning_rate / batch.len() as f64;
            for (w, g) in probe.weights.iter_mut().zip(&gw) {
                *w -= scale * g;
            }
            for (b, g) in probe.bias.iter_mut().zip(&gb) {
                *b -= scale * g;
            }
            probe.steps += 1;
        }
    }
    if probe
        .weights
        .iter()
        .chain(&probe.bias)
        .any(|v| !v.is_finite())
    {
        return Err(Error::InvalidParameter(
            "probe diverged; lower the learning rate".into(),
        ));
    }
    Ok(probe)
}

/// Metrics for one probe on one evaluation split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub n: usize,
    pub accuracy: Option<f64>,
    pub r2: Option<f64>,
    pub roc_auc: Option<f64>,
    pub ap: Option<f64>,
    /// Label columns left out of the ROC-AUC average for having a single class.
    pub skipped_labels: Vec<usize>,
}

impl MetricRecord {
    pub fn get(&self, m: ProbeMetric) -> Option<f64> {
        match m {
            ProbeMetric::Accuracy => self.accuracy,
            ProbeMetric::R2 => self.r2,
            ProbeMetric::RocAuc => self.roc_auc,
            ProbeMetric::Ap => self.ap,
            ProbeMetric::Wer | ProbeMetric::Cer => None,
        }
    }
}

pub fn eval_classifier(
    probe: &LinearProbe,
    eval: &[(PooledEmbedding, Label)],
    averaging: Averaging,
) -> Result<MetricRecord> {
    if eval.is_empty() {
        return Err(Error::InsufficientData("empty evaluation set".into()));
    }
    let scores: Vec<Vec<f64>> = eval.iter().map(|(e, _)| probe.predict(&e.vector)).collect();
    let targets: Vec<Vec<f64>> = eval
        .iter()
        .map(|(_, l)| target(l, probe.kind, probe.n_outputs))
        .collect::<Result<_>>()?;
    let mut rec = MetricRecord {
        n: eval.len(),
        ..Default::default()
    };
    match probe.kind {
        ProbeKind::Multiclass => {
            let labels: Vec<usize> = targets
                .iter()
                .map(|t| t.iter().position(|&v| v == 1.0).unwrap())
                .collect();
            rec.accuracy = Some(accuracy(&scores, &labels));
        }
        ProbeKind::Multilabel => {
            let labels: Vec<Vec<bool>> = targets
                .iter()
                .map(|t| t.iter().map(|&v| v == 1.0).collect())
                .collect();
            match averaging {
                Averaging::Macro => {
                    let (auc, skipped) = macro_average(&scores, &labels, roc_auc);
                    rec.roc_auc = auc;
                    rec.skipped_labels = skipped;
                    rec.ap = macro_average(&scores, &labels, average_precision).0;
                }
                Averaging::Micro => {
                    rec.roc_auc = micro_average(&scores, &labels, roc_auc);
                    rec.ap = micro_average(&scores, &labels, average_precision);
                }
            }
        }
        ProbeKind::Regression => {
            let mut total = 0.0;
            for j in 0..probe.n_outputs {
                let p: Vec<f64> = scores.iter().map(|s| s[j]).collect();
                let y: Vec<f64> = targets.iter().map(|t| t[j]).collect();
                total +=
                    r2_score(&p, &y).map_err(|e| e.context(format!("regression target {j}")))?;
            }
            rec.r2 = Some(total / probe.n_outputs as f64);
        }
        ProbeKind::CtcAsr => unreachable!("linear probes are never ctc_asr"),
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn emb(v: Vec<f64>) -> PooledEmbedding {
        PooledEmbedding { vector: v }
    }

    fn blobs(n: usize, seed: u64) -> Vec<(PooledEmbedding, Label)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let c = i % 2;
                let centre = if c == 0 { -1.5 } else { 1.5 };
                let x = vec![centre + rng.gen_range(-0.9..0.9), rng.gen_range(-3.0..3.0)];
                (emb(x), Label::Class(c))
            })
            .collect()
    }

    #[test]
    fn separable_blobs() {
        let data = blobs(200, 3);
        let spec = ProbeTaskSpec {
            epochs: 100,
            learning_rate: 0.1,
            ..ProbeTaskSpec::new(ProbeKind::Multiclass, 2)
        };
        let probe = train_linear_probe(&data, &spec).unwrap();
        let rec = eval_classifier(&probe, &data, Averaging::Macro).unwrap();
        assert!(rec.accuracy.unwrap() >= 0.99, "{rec:?}");
        let again = train_linear_probe(&data, &spec).unwrap();
        assert_eq!(probe, again);
    }

    #[test]
    fn regression_matches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<_> = (0..200)
            .map(|_| {
                let x1: f64 = rng.gen_range(-2.0..2.0);
                let x2: f64 = rng.gen_range(-1.0..1.0);
                (emb(vec![x1, x2]), Label::Regression(vec![3.0 * x1 - 2.0]))
            })
            .collect();
        let spec = ProbeTaskSpec {
            epochs: 200,
            batch_size: 16,
            ..ProbeTaskSpec::new(ProbeKind::Regression, 1)
        };
        let probe = train_linear_probe(&data, &spec).unwrap();
        let (w, b) = probe.raw_parameters();
        assert!((w[0] - 3.0).abs() < 1e-2, "{w:?}");
        assert!(w[1].abs() < 1e-2);
        assert!((b[0] + 2.0).abs() < 1e-2, "{b:?}");
        let rec = eval_classifier(&probe, &data, Averaging::Macro).unwrap();
        assert!(rec.r2.unwrap() > 0.9999);
    }

    #[test]
    fn budget_caps_steps() {
        let data = blobs(64, 1);
        let spec = ProbeTaskSpec {
            batch_size: 8,
            compute_budget: Some(13),
            ..ProbeTaskSpec::new(ProbeKind::Multiclass, 2)
        };
        assert_eq!(train_linear_probe(&data, &spec).unwrap().steps, 13);
    }

    #[test]
    fn rejects_bad_training_sets() {
        let spec = ProbeTaskSpec::new(ProbeKind::Multiclass, 2);
        let one_class: Vec<_> = (0..4)
            .map(|i| (emb(vec![i as f64]), Label::Class(1)))
            .collect();
        assert!(matches!(
            train_linear_probe(&one_class, &spec),
            Err(Error::InvalidLabels(_))
        ));
        assert!(train_linear_probe(&one_class[..1], &spec).is_err());
        let wrong = vec![
            (emb(vec![0.0]), Label::Class(0)),
            (emb(vec![1.0]), Label::Class(5)),
        ];
        assert!(train_linear_probe(&wrong, &spec).is_err());
    }

    #[test]
    fn multilabel_hand_scores() {
        // A probe with identity weights on a 1-d feature reproduces the hand ranking.
        let probe = LinearProbe {
            kind: ProbeKind::Multilabel,
            weights: vec![1.0],
            bias: vec![0.0],
            n_outputs: 1,
            dim: 1,
            standardizer: Standardizer {
                mean: vec![0.0],
                std: vec![1.0],
            },
            steps: 0,
        };
        let eval: Vec<_> = [(0.9, 1), (0.8, 0), (0.7, 1), (0.6, 0)]
            .into_iter()
            .map(|(s, l)| (emb(vec![s]), Label::Multilabel(vec![l])))
            .collect();
        let rec = eval_classifier(&probe, &eval, Averaging::Macro).unwrap();
        assert!((rec.roc_auc.unwrap() - 0.75).abs() < 1e-12);
        assert!((rec.ap.unwrap() - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn constant_regression_target_is_an_eval_error() {
        let data: Vec<_> = (0..10)
            .map(|i| (emb(vec![i as f64]), Label::Regression(vec![4.0])))
            .collect();
        let spec = ProbeTaskSpec::new(ProbeKind::Regression, 1);
        let probe = train_linear_probe(&data, &spec).unwrap();
        let err = eval_classifier(&probe, &data, Averaging::Macro).unwrap_err();
        assert!(err.to_string().contains("target 0"), "{err}");
    }
}
