//! Short-time objective intelligibility, classic (non-extended) variant.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::{resample, Waveform};

const FS: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = 128;
const NFFT: usize = 512;
const N_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per short-time segment (about 384 ms).
pub const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Symmetric Hann of length `n + 2` with both zero endpoints dropped.
fn inner_hann(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    // Matches the reference convention of stopping one hop short of a perfect fit.
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

/// Drops frames more than `DYN_RANGE_DB` below the loudest reference frame
/// from both signals, then rebuilds each by overlap-add.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = inner_hann(FRAME);
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = x[s..s + FRAME]
                .iter()
                .zip(&w)
                .map(|(v, g)| (v * g).powi(2))
                .sum();
            20.0 * (e.sqrt() + EPS).log10()
        })
        .collect();
    let max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = starts
        .iter()
        .zip(&energy)
        .filter(|(_, &e)| max - DYN_RANGE_DB - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    let rebuild = |sig: &[f64]| {
        if keep.is_empty() {
            return Vec::new();
        }
        let mut out = vec![0.0; (keep.len() - 1) * HOP + FRAME];
        for (i, &s) in keep.iter().enumerate() {
            for (o, (v, g)) in out[i * HOP..]
                .iter_mut()
                .zip(sig[s..s + FRAME].iter().zip(&w))
            {
                *o += v * g;
            }
        }
        out
    };
    (rebuild(x), rebuild(y))
}

/// Band index ranges `[lo, hi)` over the `NFFT / 2 + 1` bins.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let n_bins = NFFT / 2 + 1;
    let nearest = |f: f64| {
        (0..n_bins)
            .min_by(|&a, &b| {
                let fa = a as f64 * FS as f64 / NFFT as f64;
                let fb = b as f64 * FS as f64 / NFFT as f64;
                (fa - f).powi(2).total_cmp(&(fb - f).powi(2))
            })
            .unwrap()
    };
    (0..N_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes, `[band][frame]`.
fn band_envelopes(x: &[f64], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let w = inner_hann(FRAME);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(NFFT);
    let mut out = vec![Vec::new(); bands.len()];
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    for s in frame_starts(x.len()) {
        buf.iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
        for (b, (v, g)) in buf.iter_mut().zip(x[s..s + FRAME].iter().zip(&w)) {
            b.re = v * g;
        }
        fft.process(&mut buf);
        for (env, &(lo, hi)) in out.iter_mut().zip(bands) {
            env.push(buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt());
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Intelligibility of `deg` relative to `reference`, both truncated to the shorter length.
pub fn stoi(reference: &Waveform, deg: &Waveform) -> Result<f64> {
    let len = reference.len().min(deg.len());
    let x = resample(&reference.truncated(len), FS)?;
    let y = resample(&deg.truncated(len), FS)?;
    let (x, y) = remove_silent_frames(x.samples(), y.samples());
    let bands = third_octave_bands();
    let xb = band_envelopes(&x, &bands);
    let yb = band_envelopes(&y, &bands);
    let n_frames = xb[0].len();
    if n_frames < SEGMENT {
        return Err(Error::InsufficientSpeech {
            frames: n_frames,
            needed: SEGMENT,
        });
    }
    let clip = 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let n_segments = n_frames - SEGMENT + 1;
    for m in SEGMENT..=n_frames {
        for (xe, ye) in xb.iter().zip(&yb) {
            let xs = &xe[m - SEGMENT..m];
            let ys = &ye[m - SEGMENT..m];
            let scale = norm(xs) / (norm(ys) + EPS);
            let mut yp: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(&yv, &xv)| (yv * scale).min(xv * (1.0 + clip)))
                .collect();
            let mut xp = xs.to_vec();
            for v in [&mut xp, &mut yp] {
                let mean = v.iter().sum::<f64>() / SEGMENT as f64;
                v.iter_mut().for_each(|a| *a -= mean);
                let n = norm(v) + EPS;
                v.iter_mut().for_each(|a| *a /= n);
            }
            total += xp.iter().zip(&yp).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(total / (n_segments * N_BANDS) as f64)
}
