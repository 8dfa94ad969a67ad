//! Audio carriers and the DSP primitives shared by every experiment.

mod resample;
mod spectral;
mod wav;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use resample::resample;
pub use spectral::{hann_window, log_mel, mel_filterbank, stft, Window};
pub use wav::{read_wav, write_wav};

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidWaveform(
                "sample rate must be positive".into(),
            ));
        }
        if samples.is_empty() {
            return Err(Error::InvalidWaveform("no samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidWaveform(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// First `len` samples, or the whole waveform if it is shorter.
    pub fn truncated(&self, len: usize) -> Waveform {
        let len = len.clamp(1, self.samples.len());
        Waveform {
            samples: self.samples[..len].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Exact positive rational, used for frame and token rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rational {
    num: u32,
    den: u32,
}

impl Rational {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::InvalidParameter(format!(
                "rate {num}/{den} must be positive"
            )));
        }
        let g = gcd(num as u64, den as u64) as u32;
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn integer(n: u32) -> Result<Self> {
        Self::new(n, 1)
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl std::str::FromStr for Rational {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("cannot parse rate {s:?}"));
        match s.split_once('/') {
            Some((n, d)) => Rational::new(
                n.trim().parse().map_err(|_| bad())?,
                d.trim().parse().map_err(|_| bad())?,
            ),
            None => {
                let v: f64 = s.trim().parse().map_err(|_| bad())?;
                Rational::from_f64(v).ok_or_else(bad)
            }
        }
    }
}

impl Rational {
    /// Accepts integers and decimals with up to three fractional digits (12.5 -> 25/2).
    pub fn from_f64(v: f64) -> Option<Self> {
        if !(v.is_finite() && v > 0.0) {
            return None;
        }
        let scaled = (v * 1000.0).round();
        if (scaled / 1000.0 - v).abs() > 1e-9 || scaled > u32::MAX as f64 {
            return None;
        }
        Rational::new(scaled as u32, 1000).ok()
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Number(f64),
        }
        match Repr::deserialize(d)? {
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::Number(v) => Rational::from_f64(v)
                .ok_or_else(|| serde::de::Error::custom(format!("invalid rate {v}"))),
        }
    }
}

pub(crate) fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    StftMagnitude,
    LogMel,
    TimeDomain,
}

/// A T x F matrix of per-frame features, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    data: Vec<f64>,
    n_frames: usize,
    n_cols: usize,
    frame_rate: Rational,
    kind: FrameKind,
}

impl FrameMatrix {
    pub fn new(
        data: Vec<f64>,
        n_frames: usize,
        n_cols: usize,
        frame_rate: Rational,
        kind: FrameKind,
    ) -> Result<Self> {
        if n_frames == 0 || n_cols == 0 {
            return Err(Error::ShapeMismatch(
                "frame matrix must be non-empty".into(),
            ));
        }
        if data.len() != n_frames * n_cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {n_frames}x{n_cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite frame entry".into()));
        }
        Ok(Self {
            data,
            n_frames,
            n_cols,
            frame_rate,
            kind,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn frame_rate(&self) -> Rational {
        self.frame_rate
    }

    pub fn kind(&self) -> FrameKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_cols..(t + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols)
    }
}

/// Number of samples a `shift_ms` shift removes at `sample_rate`.
pub fn shift_samples(shift_ms: f64, sample_rate: u32) -> usize {
    (shift_ms * sample_rate as f64 / 1000.0).round() as usize
}

/// Left-shifts the signal by dropping its first `shift_ms` milliseconds.
pub fn time_shift(w: &Waveform, shift_ms: f64) -> Result<Waveform> {
    if !(shift_ms.is_finite() && shift_ms >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "shift must be a non-negative number of milliseconds, got {shift_ms}"
        )));
    }
    let drop = shift_samples(shift_ms, w.sample_rate);
    if shift_ms >= w.duration_secs() * 1000.0 || drop >= w.len() {
        return Err(Error::InvalidParameter(format!(
            "shift of {shift_ms} ms is not shorter than the {:.3} ms signal",
            w.duration_secs() * 1000.0
        )));
    }
    Ok(Waveform {
        samples: w.samples[drop..].to_vec(),
        sample_rate: w.sample_rate,
    })
}
