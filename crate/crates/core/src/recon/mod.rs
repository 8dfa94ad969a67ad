//! Reconstruction fidelity metrics.

mod fidelity;
mod ingest;
mod stoi;
mod text;

pub use fidelity::{
    cepstrum, cosine, log_mel_frames, mcd, mcd_from_cepstra, si_snr, speaker_embedding, spk_sim,
    N_CEPSTRA, N_MELS, SI_SNR_CAP_DB,
};
pub use ingest::{read_embedding, read_external_pesq, read_transcripts, write_embedding};
pub use stoi::stoi;
pub use text::{align, cer, normalize_text, wer, wer_text, EditCounts};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::signal::Waveform;

/// Per-utterance (or averaged) reconstruction scores.
///
/// `*_gt` error rates compare the reference transcript with a hypothesis
/// transcribed from the original audio, `*_rec` with one from the
/// reconstruction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    pub stoi: f64,
    pub si_snr_db: f64,
    pub mcd: f64,
    pub spk_sim: Option<f64>,
    pub wer_gt: Option<f64>,
    pub wer_rec: Option<f64>,
    pub cer_gt: Option<f64>,
    pub cer_rec: Option<f64>,
    pub external_pesq: Option<f64>,
}

/// Optional side information for one utterance.
#[derive(Debug, Clone, Default)]
pub struct ReconSide<'a> {
    pub reference_text: Option<&'a str>,
    pub gt_hypothesis: Option<&'a str>,
    pub rec_hypothesis: Option<&'a str>,
    pub reference_embedding: Option<&'a [f64]>,
    pub deg_embedding: Option<&'a [f64]>,
    pub external_pesq: Option<f64>,
}

/// Scores `deg` against `reference`. Speaker similarity is skipped for clips
/// shorter than one second unless external embeddings are supplied.
pub fn evaluate(reference: &Waveform, deg: &Waveform, side: &ReconSide) -> Result<ReconMetrics> {
    let deg = if deg.sample_rate() == reference.sample_rate() {
        deg.clone()
    } else {
        crate::signal::resample(deg, reference.sample_rate())?
    };
    let spk = match (side.reference_embedding, side.deg_embedding) {
        (Some(a), Some(b)) => Some(cosine(a, b)?),
        _ if reference.duration_secs() >= 1.0 && deg.duration_secs() >= 1.0 => {
            Some(spk_sim(reference, &deg)?)
        }
        _ => None,
    };
    let rate = |f: fn(&str, &str) -> Result<f64>, hyp: Option<&str>| -> Result<Option<f64>> {
        match (side.reference_text, hyp) {
            (Some(r), Some(h)) => f(r, h).map(Some),
            _ => Ok(None),
        }
    };
    Ok(ReconMetrics {
        stoi: stoi(reference, &deg)?,
        si_snr_db: si_snr(reference, &deg)?,
        mcd: mcd(reference, &deg)?,
        spk_sim: spk,
        wer_gt: rate(wer_text, side.gt_hypothesis)?,
        wer_rec: rate(wer_text, side.rec_hypothesis)?,
        cer_gt: rate(cer, side.gt_hypothesis)?,
        cer_rec: rate(cer, side.rec_hypothesis)?,
        external_pesq: side.external_pesq,
    })
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl ReconMetrics {
    /// Field-wise mean in input order; optional fields average over the utterances that have them.
    pub fn mean(items: &[ReconMetrics]) -> Option<ReconMetrics> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        Some(ReconMetrics {
            stoi: items.iter().map(|m| m.stoi).sum::<f64>() / n,
            si_snr_db: items.iter().map(|m| m.si_snr_db).sum::<f64>() / n,
            mcd: items.iter().map(|m| m.mcd).sum::<f64>() / n,
            spk_sim: mean_of(items.iter().map(|m| m.spk_sim)),
            wer_gt: mean_of(items.iter().map(|m| m.wer_gt)),
            wer_rec: mean_of(items.iter().map(|m| m.wer_rec)),
            cer_gt: mean_of(items.iter().map(|m| m.cer_gt)),
            cer_rec: mean_of(items.iter().map(|m| m.cer_rec)),
            external_pesq: mean_of(items.iter().map(|m| m.external_pesq)),
        })
    }

    /// `(column, value)` pairs in report order; absent values are skipped.
    pub fn columns(&self) -> Vec<(&'static str, f64)> {
        [
            ("pesq", self.external_pesq),
            ("spk_sim", self.spk_sim),
            ("wer_gt", self.wer_gt),
            ("wer_rec", self.wer_rec),
            ("cer_gt", self.cer_gt),
            ("cer_rec", self.cer_rec),
            ("stoi", Some(self.stoi)),
            ("si_snr", Some(self.si_snr_db)),
            ("mcd", Some(self.mcd)),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_skips_missing_optionals() {
        let a = ReconMetrics {
            stoi: 0.8,
            wer_rec: Some(0.2),
            ..Default::default()
        };
        let b = ReconMetrics {
            stoi: 0.6,
            ..Default::default()
        };
        let m = ReconMetrics::mean(&[a, b]).unwrap();
        assert!((m.stoi - 0.7).abs() < 1e-12);
        assert_eq!(m.wer_rec, Some(0.2));
        assert_eq!(m.cer_rec, None);
        assert!(ReconMetrics::mean(&[]).is_none());
    }
}
