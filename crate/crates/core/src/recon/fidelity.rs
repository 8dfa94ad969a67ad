//! Signal-level fidelity: SI-SNR, mel-cepstral distortion and the spectral speaker baseline.

use crate::error::{Error, Result};
use crate::signal::{log_mel, stft, FrameMatrix, Waveform, Window};

pub const SI_SNR_CAP_DB: f64 = 100.0;
pub const N_MELS: usize = 40;
pub const N_CEPSTRA: usize = 13;

fn equal_length(a: &Waveform, b: &Waveform) -> (Waveform, Waveform) {
    let n = a.len().min(b.len());
    (a.truncated(n), b.truncated(n))
}

pub fn si_snr(reference: &Waveform, deg: &Waveform) -> Result<f64> {
    let n = reference.len().min(deg.len());
    let zero_mean = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| v - m).collect::<Vec<_>>()
    };
    let r = zero_mean(&reference.samples()[..n]);
    let d = zero_mean(&deg.samples()[..n]);
    let rr: f64 = r.iter().map(|v| v * v).sum();
    let raw: f64 = reference.samples()[..n].iter().map(|v| v * v).sum();
    // A constant reference leaves only rounding noise after mean removal.
    if rr <= raw * 1e-20 {
        return Err(Error::ZeroReference);
    }
    let alpha = d.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target: f64 = alpha * alpha * rr;
    let noise: f64 = d.iter().zip(&r).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    let db = if noise == 0.0 {
        SI_SNR_CAP_DB
    } else if target == 0.0 {
        -SI_SNR_CAP_DB
    } else {
        10.0 * (target / noise).log10()
    };
    Ok(db.clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}

/// 32 ms frames with an 8 ms hop, rounded to an even sample count.
fn mel_framing(sample_rate: u32) -> (usize, usize) {
    let frame = ((0.032 * sample_rate as f64 / 2.0).round() as usize * 2).max(4);
    let hop = ((0.008 * sample_rate as f64).round() as usize).max(1);
    (frame, hop)
}

/// 40-band log-mel over 32 ms / 8 ms Hann frames spanning 0 Hz to Nyquist.
pub fn log_mel_frames(w: &Waveform) -> Result<FrameMatrix> {
    let (frame, hop) = mel_framing(w.sample_rate());
    let spec = stft(w, frame, hop, Window::Hann)?;
    log_mel(
        &spec,
        N_MELS,
        0.0,
        w.sample_rate() as f64 / 2.0,
        w.sample_rate(),
    )
}

/// Orthonormal DCT-II coefficients `1..=n_out` of `x`.
pub fn cepstrum(x: &[f64], n_out: usize) -> Vec<f64> {
    let m = x.len() as f64;
    let scale = (2.0 / m).sqrt();
    (1..=n_out)
        .map(|k| {
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, v)| {
                        v * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / m).cos()
                    })
                    .sum::<f64>()
        })
        .collect()
}

/// MCD over index-aligned cepstral frames, in dB.
pub fn mcd_from_cepstra(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let n = a.len().min(b.len());
    if n == 0 {
        return Err(Error::InsufficientData("no frames to compare".into()));
    }
    let mean = a[..n]
        .iter()
        .zip(&b[..n])
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / n as f64;
    Ok(10.0 / std::f64::consts::LN_10 * std::f64::consts::SQRT_2 * mean)
}

fn cepstra(w: &Waveform) -> Result<Vec<Vec<f64>>> {
    Ok(log_mel_frames(w)?
        .rows()
        .map(|r| cepstrum(r, N_CEPSTRA))
        .collect())
}

pub fn mcd(reference: &Waveform, deg: &Waveform) -> Result<f64> {
    if reference.sample_rate() != deg.sample_rate() {
        return Err(Error::InvalidParameter(
            "mcd needs equal sample rates".into(),
        ));
    }
    let (r, d) = equal_length(reference, deg);
    mcd_from_cepstra(&cepstra(&r)?, &cepstra(&d)?)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedMetric("cosine of a zero vector".into()));
    }
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    Ok(c.clamp(-1.0, 1.0))
}

/// Per-band mean then population standard deviation of the 40-band log-mel.
pub fn speaker_embedding(w: &Waveform) -> Result<Vec<f64>> {
    if w.duration_secs() < 1.0 {
        return Err(Error::SignalTooShort {
            needed: w.sample_rate() as usize,
            actual: w.len(),
        });
    }
    let lm = log_mel_frames(w)?;
    let t = lm.n_frames() as f64;
    let mut mean = vec![0.0; N_MELS];
    for row in lm.rows() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / t);
    }
    let mut var = vec![0.0; N_MELS];
    for row in lm.rows() {
        var.iter_mut()
            .zip(row.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m).powi(2) / t);
    }
    mean.extend(var.into_iter().map(f64::sqrt));
    Ok(mean)
}

pub fn spk_sim(reference: &Waveform, deg: &Waveform) -> Result<f64> {
    cosine(&speaker_embedding(reference)?, &speaker_embedding(deg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn si_snr_caps_and_scale_invariance() {
        let x = Waveform::new(noise(4000, 1), 16000).unwrap();
        let half = Waveform::new(x.samples().iter().map(|v| 0.5 * v).collect(), 16000).unwrap();
        assert_eq!(si_snr(&x, &half).unwrap(), 100.0);
        assert!(matches!(
            si_snr(&Waveform::new(vec![0.3; 10], 16000).unwrap(), &x),
            Err(Error::ZeroReference)
        ));
    }

    #[test]
    fn si_snr_orthogonal_noise_is_twenty_db() {
        let r = noise(8000, 2);
        let rm = r.iter().sum::<f64>() / r.len() as f64;
        let r: Vec<f64> = r.iter().map(|v| v - rm).collect();
        let mut n = noise(8000, 3);
        // Gram-Schmidt against the reference and the constant vector.
        let nm = n.iter().sum::<f64>() / n.len() as f64;
        n.iter_mut().for_each(|v| *v -= nm);
        let rr: f64 = r.iter().map(|v| v * v).sum();
        let p = n.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
        n.iter_mut().zip(&r).for_each(|(a, b)| *a -= p * b);
        let nn: f64 = n.iter().map(|v| v * v).sum();
        let g = (0.01 * rr / nn).sqrt();
        let deg: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + g * b).collect();
        let v = si_snr(
            &Waveform::new(r, 16000).unwrap(),
            &Waveform::new(deg, 16000).unwrap(),
        )
        .unwrap();
        assert!((v - 20.0).abs() < 0.1, "{v}");
    }

    #[test]
    fn mcd_hand_case_and_symmetry() {
        let a = vec![vec![0.0; 13]];
        let mut b = vec![vec![0.0; 13]];
        b[0][4] = 1.0;
        let v = mcd_from_cepstra(&a, &b).unwrap();
        assert!((v - 6.141_851_463).abs() < 1e-6, "{v}");
        let x = Waveform::new(noise(8000, 4), 16000).unwrap();
        let y = Waveform::new(noise(8000, 5), 16000).unwrap();
        assert_eq!(mcd(&x, &x).unwrap(), 0.0);
        assert_eq!(mcd(&x, &y).unwrap(), mcd(&y, &x).unwrap());
        assert!(mcd(&x, &y).unwrap() > 0.0);
    }

    #[test]
    fn dct_is_orthonormal() {
        // Full orthonormal DCT-II preserves energy once c0 is included.
        let x = noise(40, 6);
        let c = cepstrum(&x, 39);
        let c0 = x.iter().sum::<f64>() / (40f64).sqrt();
        let e: f64 = c.iter().map(|v| v * v).sum::<f64>() + c0 * c0;
        assert!((e - x.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-10);
    }

    #[test]
    fn speaker_similarity_basics() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let x = Waveform::new(noise(16000, 7), 16000).unwrap();
        assert!((spk_sim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let short = Waveform::new(noise(15999, 7), 16000).unwrap();
        assert!(spk_sim(&short, &x).is_err());
        assert_eq!(speaker_embedding(&x).unwrap().len(), 80);
    }
}
