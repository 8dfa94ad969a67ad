use std::f64::consts::PI;

use super::{gcd, Waveform};
use crate::error::{Error, Result};

const KAISER_BETA: f64 = 14.0;
const ZERO_CROSSINGS: f64 = 64.0;
/// Upper bound on the number of precomputed polyphase coefficients.
const MAX_TABLE: usize = 1 << 22;

/// Band-limited polyphase resampler with a Kaiser-windowed sinc kernel.
///
/// The output has `round(len * target / source)` samples. Each polyphase
/// branch is normalised to unit DC gain; samples outside the input are zero.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidParameter(
            "target rate must be positive".into(),
        ));
    }
    let src_rate = w.sample_rate();
    if target_rate == src_rate {
        return Ok(w.clone());
    }
    let g = gcd(src_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = src_rate as u64 / g;
    let len = w.len() as u64;
    let out_len = ((2 * len * target_rate as u64 + src_rate as u64) / (2 * src_rate as u64)).max(1);

    let cutoff = (target_rate as f64 / src_rate as f64).min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let reach = half_width.ceil() as i64 + 1;
    let n_taps = (2 * reach) as usize;
    let bank = PhaseBank::new(up, cutoff, half_width, reach, n_taps);

    let x = w.samples();
    let mut out = Vec::with_capacity(out_len as usize);
    for n in 0..out_len {
        let pos = n * down;
        let centre = (pos / up) as i64;
        let phase = pos % up;
        let taps = bank.taps(phase);
        let first = centre - reach + 1;
        let mut acc = 0.0;
        for (j, &h) in taps.iter().enumerate() {
            let k = first + j as i64;
            if k >= 0 && (k as usize) < x.len() {
                acc += h * x[k as usize];
            }
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

enum PhaseBank {
    Table {
        n_taps: usize,
        coeffs: Vec<f64>,
    },
    OnTheFly {
        up: u64,
        cutoff: f64,
        half_width: f64,
        reach: i64,
        n_taps: usize,
    },
}

impl PhaseBank {
    fn new(up: u64, cutoff: f64, half_width: f64, reach: i64, n_taps: usize) -> Self {
        if (up as usize).saturating_mul(n_taps) <= MAX_TABLE {
            let mut coeffs = Vec::with_capacity(up as usize * n_taps);
            for p in 0..up {
                coeffs.extend(phase_taps(p, up, cutoff, half_width, reach, n_taps));
            }
            PhaseBank::Table { n_taps, coeffs }
        } else {
            PhaseBank::OnTheFly {
                up,
                cutoff,
                half_width,
                reach,
                n_taps,
            }
        }
    }

    fn taps(&self, phase: u64) -> std::borrow::Cow<'_, [f64]> {
        match self {
            PhaseBank::Table { n_taps, coeffs } => {
                let start = phase as usize * n_taps;
                std::borrow::Cow::Borrowed(&coeffs[start..start + n_taps])
            }
            PhaseBank::OnTheFly {
                up,
                cutoff,
                half_width,
                reach,
                n_taps,
            } => std::borrow::Cow::Owned(phase_taps(
                phase,
                *up,
                *cutoff,
                *half_width,
                *reach,
                *n_taps,
            )),
        }
    }
}

/// Kernel weights for input offsets `-reach+1 ..= reach` around the integer
/// part of the output position, whose fractional part is `phase / up`.
fn phase_taps(
    phase: u64,
    up: u64,
    cutoff: f64,
    half_width: f64,
    reach: i64,
    n_taps: usize,
) -> Vec<f64> {
    let frac = phase as f64 / up as f64;
    let mut taps = Vec::with_capacity(n_taps);
    for j in 0..n_taps as i64 {
        let offset = j - reach + 1;
        let x = frac - offset as f64;
        taps.push(kernel(x, cutoff, half_width));
    }
    let sum: f64 = taps.iter().sum();
    if sum.abs() > 0.0 {
        for t in &mut taps {
            *t /= sum;
        }
    }
    taps
}

fn kernel(x: f64, cutoff: f64, half_width: f64) -> f64 {
    if x.abs() >= half_width {
        return 0.0;
    }
    let r = x / half_width;
    let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / bessel_i0(KAISER_BETA);
    cutoff * sinc(cutoff * x) * window
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}
