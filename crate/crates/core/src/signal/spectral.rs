use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use super::{FrameKind, FrameMatrix, Rational, Waveform};
use crate::error::{Error, Result};

/// Floor applied to mel power before taking the log.
pub const POWER_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rect,
}

/// Periodic Hann window; two copies at 50% overlap sum to exactly one.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Magnitude STFT over the first `frame_len / 2 + 1` bins.
pub fn stft(w: &Waveform, frame_len: usize, hop: usize, window: Window) -> Result<FrameMatrix> {
    if hop == 0 || hop > frame_len {
        return Err(Error::InvalidParameter(format!(
            "need 0 < hop <= frame_len, got hop {hop}, frame_len {frame_len}"
        )));
    }
    let x = w.samples();
    if x.len() < frame_len {
        return Err(Error::SignalTooShort {
            needed: frame_len,
            actual: x.len(),
        });
    }
    let win = match window {
        Window::Hann => hann_window(frame_len),
        Window::Rect => vec![1.0; frame_len],
    };
    let n_frames = 1 + (x.len() - frame_len) / hop;
    let n_bins = frame_len / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame_len);
    let mut buf = vec![Complex::new(0.0, 0.0); frame_len];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(n_frames * n_bins);
    for t in 0..n_frames {
        let frame = &x[t * hop..t * hop + frame_len];
        for ((b, &s), &g) in buf.iter_mut().zip(frame).zip(&win) {
            *b = Complex::new(s * g, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend(buf[..n_bins].iter().map(|c| c.norm()));
    }
    let rate = Rational::new(w.sample_rate(), hop as u32)?;
    FrameMatrix::new(data, n_frames, n_bins, rate, FrameKind::StftMagnitude)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank over `n_bins` linear bins, each row summing to one.
///
/// A filter too narrow to cover any bin collapses onto the bin nearest its centre.
pub fn mel_filterbank(
    n_mels: usize,
    n_bins: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Result<Vec<Vec<f64>>> {
    if n_mels < 2 {
        return Err(Error::InvalidParameter(format!(
            "n_mels must be >= 2, got {n_mels}"
        )));
    }
    if !(fmin >= 0.0 && fmin < fmax) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= fmin < fmax, got {fmin}..{fmax}"
        )));
    }
    if n_bins < 2 {
        return Err(Error::InvalidParameter(
            "spectrum needs at least two bins".into(),
        ));
    }
    let n_fft = 2 * (n_bins - 1);
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut bank = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut row: Vec<f64> = (0..n_bins)
            .map(|k| {
                let f = k as f64 * bin_hz;
                if f > lo && f <= centre {
                    (f - lo) / (centre - lo)
                } else if f > centre && f < hi {
                    (hi - f) / (hi - centre)
                } else {
                    0.0
                }
            })
            .collect();
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|v| *v /= sum);
        } else {
            let nearest = ((centre / bin_hz).round() as usize).min(n_bins - 1);
            row[nearest] = 1.0;
        }
        bank.push(row);
    }
    Ok(bank)
}

/// Natural-log mel energies from a magnitude spectrogram.
pub fn log_mel(
    spec: &FrameMatrix,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
    sample_rate: u32,
) -> Result<FrameMatrix> {
    if spec.kind() != FrameKind::StftMagnitude {
        return Err(Error::InvalidParameter(
            "log_mel expects an STFT magnitude matrix".into(),
        ));
    }
    let bank = mel_filterbank(n_mels, spec.n_cols(), sample_rate, fmin, fmax)?;
    let mut data = Vec::with_capacity(spec.n_frames() * n_mels);
    let mut power = vec![0.0; spec.n_cols()];
    for row in spec.rows() {
        for (p, m) in power.iter_mut().zip(row) {
            *p = m * m;
        }
        for filt in &bank {
            let e: f64 = filt.iter().zip(&power).map(|(a, b)| a * b).sum();
            data.push(e.max(POWER_FLOOR).ln());
        }
    }
    FrameMatrix::new(
        data,
        spec.n_frames(),
        n_mels,
        spec.frame_rate(),
        FrameKind::LogMel,
    )
}
