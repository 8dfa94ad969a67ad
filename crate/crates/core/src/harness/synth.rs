//! Seeded synthetic datasets with known ground truth.
//!
//! * `tones`: three classes (sine, linear chirp, uniform noise) of 1 s clips
//!   at 8 kHz, amplitudes in 0.2-0.8. Sines sit on one of eight fixed pitches
//!   and chirps sweep at least an octave, so no chirp passes for a sine. Every third
//!   clip of a class goes to the test split.
//! * `markov-speechlike`: 16 kHz audio built from 32-sample tone segments, one
//!   of four frequencies per segment, with the segment sequence drawn from a
//!   planted four-state Markov chain. Phase resets at each segment, so a
//!   64-sample frame with a 32-sample hop sees one of 16 distinct signals and
//!   a single 16-entry RVQ stage recovers the state pairs exactly. The pair
//!   chain has the same entropy rate as the state chain; it is written to
//!   `markov.json`. Every fifth utterance is validation data.
//! * `ctc-mapped`: token grids at 50 Hz over one 1024-entry codebook, where
//!   token `t` spells character `t mod 27` (`a`-`z`, then space), one token per
//!   character. Grids are stored as an external codec directory `codec/`;
//!   the audio renders each token as a 20 ms tone. Texts never repeat a
//!   character twice in a row. Every fifth utterance is test data.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{Domain, Manifest, ManifestEntry, Split};
use crate::codec::{save_token_grid, CodecDescriptor, FeatureType, TokenGrid};
use crate::error::{Error, Result};
use crate::probe::Label;
use crate::signal::{write_wav, Rational, Waveform};

pub const TONES_RATE: u32 = 8000;
pub const TONE_CLASSES: [&str; 3] = ["sine", "chirp", "noise"];
pub const MARKOV_RATE: u32 = 16000;
pub const MARKOV_SEGMENT: usize = 32;
pub const MARKOV_FREQS: [f64; 4] = [500.0, 1000.0, 1500.0, 2000.0];
const MARKOV_SECS: f64 = 2.0;
pub const CTC_RATE: u32 = 16000;
pub const CTC_TOKEN_RATE: u32 = 50;
pub const CTC_VOCAB: u32 = 1024;
const CTC_ALPHABET: &[u8; 27] = b"abcdefghijklmnopqrstuvwxyz ";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Tones,
    MarkovSpeechlike,
    CtcMapped,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Tones => "tones",
            SynthKind::MarkovSpeechlike => "markov-speechlike",
            SynthKind::CtcMapped => "ctc-mapped",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tones" => Ok(SynthKind::Tones),
            "markov-speechlike" | "markov" => Ok(SynthKind::MarkovSpeechlike),
            "ctc-mapped" | "ctc" => Ok(SynthKind::CtcMapped),
            other => Err(Error::Validation(format!(
                "unknown synthetic dataset {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
    /// `markov.json` for markov-speechlike, the codec directory for ctc-mapped.
    pub extra: Option<PathBuf>,
}

/// Planted chain of the markov-speechlike set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovSidecar {
    pub entropy_rate_nats: f64,
    pub transition: Vec<Vec<f64>>,
    pub stationary: Vec<f64>,
    pub frequencies_hz: Vec<f64>,
    pub segment_samples: usize,
    pub sample_rate: u32,
    /// RVQ framing and codebook size that recover the pair tokens.
    pub frame_len: usize,
    pub hop: usize,
    pub codebook_size: usize,
}

fn utt_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Sine pitches: half-octave steps from 220 Hz.
pub const TONE_PITCHES: [f64; 8] = [
    220.0, 311.13, 440.0, 622.25, 880.0, 1244.51, 1760.0, 2489.02,
];

/// One clip of a tone class: 0 sine on a [`TONE_PITCHES`] pitch, 1 linear chirp
/// sweeping at least an octave up or down, 2 uniform noise.
pub fn tone_waveform(
    class: usize,
    n_samples: usize,
    sample_rate: u32,
    rng: &mut impl Rng,
) -> Waveform {
    let sr = sample_rate as f64;
    let amp: f64 = rng.gen_range(0.2..0.8);
    let (f0, f1) = match class {
        0 => {
            let f = TONE_PITCHES[rng.gen_range(0..TONE_PITCHES.len())];
            (f, f)
        }
        _ => {
            let lo: f64 = rng.gen_range(150.0..1600.0);
            let hi = lo * rng.gen_range(2.0..2.2);
            if rng.gen_bool(0.5) {
                (lo, hi)
            } else {
                (hi, lo)
            }
        }
    };
    let phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let dur = n_samples as f64 / sr;
    let samples = (0..n_samples)
        .map(|i| {
            let t = i as f64 / sr;
            match class {
                0 => amp * (2.0 * PI * f0 * t + phase).sin(),
                1 => amp * (2.0 * PI * (f0 * t + (f1 - f0) * t * t / (2.0 * dur)) + phase).sin(),
                _ => amp * rng.gen_range(-1.0..1.0),
            }
        })
        .collect();
    Waveform::new(samples, sample_rate).expect("finite samples")
}

/// Seeded tone corpus with classes cycling 0, 1, 2, ...
pub fn tone_corpus(n: usize, secs: f64, sample_rate: u32, seed: u64) -> Vec<(usize, Waveform)> {
    let len = (secs * sample_rate as f64).round() as usize;
    (0..n)
        .into_par_iter()
        .map(|i| {
            (
                i % 3,
                tone_waveform(i % 3, len, sample_rate, &mut utt_rng(seed, i)),
            )
        })
        .collect()
}

/// Formant-shaped harmonic voice with a syllabic envelope and pauses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voice {
    pub f0: f64,
    pub formants: [f64; 3],
}

pub const VOICES: [Voice; 3] = [
    Voice {
        f0: 110.0,
        formants: [600.0, 1200.0, 2500.0],
    },
    Voice {
        f0: 210.0,
        formants: [800.0, 1800.0, 2900.0],
    },
    Voice {
        f0: 150.0,
        formants: [400.0, 2100.0, 3100.0],
    },
];

pub fn speechlike_waveform(voice: Voice, secs: f64, sample_rate: u32, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let n = (secs * sr).round() as usize;
    let syllable = (0.25 * sr) as usize;
    let n_syl = n.div_ceil(syllable);
    // Per-syllable formant scaling; roughly one syllable in five is a pause.
    let shapes: Vec<Option<f64>> = (0..n_syl)
        .map(|_| (rng.gen_range(0.0..1.0) > 0.2).then(|| rng.gen_range(0.85..1.15)))
        .collect();
    let n_harm = ((sr / 2.0 - 200.0) / voice.f0) as usize;
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let f0 = voice.f0 * (1.0 + 0.04 * (2.0 * PI * 3.0 * t).sin());
        phase += 2.0 * PI * f0 / sr;
        let s = i / syllable;
        let Some(scale) = shapes[s] else {
            out.push(0.0);
            continue;
        };
        let pos = (i % syllable) as f64 / syllable as f64;
        let env = (PI * pos).sin().powi(2);
        let mut v = 0.0;
        for k in 1..=n_harm {
            let f = k as f64 * f0;
            let gain: f64 = voice
                .formants
                .iter()
                .map(|&fm| (-((f - fm * scale) / 150.0).powi(2)).exp())
                .sum::<f64>()
                + 0.05 / k as f64;
            v += gain * (k as f64 * phase).sin();
        }
        out.push(0.1 * env * v);
    }
    Waveform::new(out, sample_rate).expect("finite samples")
}

/// Row-stochastic matrix with every entry positive, and its stationary law.
fn planted_chain(n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    let p: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let row: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0f64..2.5).exp()).collect();
            let s: f64 = row.iter().sum();
            row.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..10_000 {
        let next: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| pi[i] * p[i][j]).sum())
            .collect();
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    (p, pi)
}

fn entropy_rate(p: &[Vec<f64>], pi: &[f64]) -> f64 {
    p.iter()
        .zip(pi)
        .map(|(row, w)| w * row.iter().map(|&q| -q * q.ln()).sum::<f64>())
        .sum()
}

fn sample_from(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, q) in row.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

fn segment(state: usize) -> impl Iterator<Item = f64> {
    let f = MARKOV_FREQS[state];
    (0..MARKOV_SEGMENT).map(move |n| 0.5 * (2.0 * PI * f * n as f64 / MARKOV_RATE as f64).sin())
}

fn write_entries(dir: &Path, manifest: &Manifest) -> Result<PathBuf> {
    let path = dir.join("manifest.jsonl");
    manifest.write(&path)?;
    Ok(path)
}

fn audio_entry(utt_id: String, split: Split, domain: Domain) -> ManifestEntry {
    ManifestEntry {
        audio: format!("audio/{utt_id}.wav").into(),
        utt_id,
        split,
        transcript: None,
        labels: None,
        domain: Some(domain),
        crop: None,
    }
}

/// Writes `manifest.jsonl`, `audio/` and any sidecar under `out_dir`.
pub fn make_synthetic_dataset(
    kind: SynthKind,
    size: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<SynthDataset> {
    if size == 0 {
        return Err(Error::Validation(
            "synthetic dataset size must be at least 1".into(),
        ));
    }
    let dir = out_dir.as_ref();
    let audio_dir = dir.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    match kind {
        SynthKind::Tones => tones(size, seed, dir),
        SynthKind::MarkovSpeechlike => markov(size, seed, dir),
        SynthKind::CtcMapped => ctc_mapped(size, seed, dir),
    }
}

/// `size` clips per class.
fn tones(size: usize, seed: u64, dir: &Path) -> Result<SynthDataset> {
    let n = 3 * size;
    let clips = tone_corpus(n, 1.0, TONES_RATE, seed);
    let entries: Vec<ManifestEntry> = clips
        .par_iter()
        .enumerate()
        .map(|(i, (class, w))| {
            let split = if (i / 3) % 3 == 2 {
                Split::Test
            } else {
                Split::Train
            };
            let mut e = audio_entry(format!("tones-{i:05}"), split, Domain::Sound);
            e.labels = Some(Label::Class(*class));
            write_wav(w, dir.join(&e.audio))?;
            Ok(e)
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest::new(entries, dir);
    Ok(SynthDataset {
        manifest_path: write_entries(dir, &manifest)?,
        manifest,
        extra: None,
    })
}

fn markov(size: usize, seed: u64, dir: &Path) -> Result<SynthDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, pi) = planted_chain(MARKOV_FREQS.len(), &mut rng);
    let n_seg = (MARKOV_SECS * MARKOV_RATE as f64) as usize / MARKOV_SEGMENT;
    let entries: Vec<ManifestEntry> = (0..size)
        .into_par_iter()
        .map(|i| {
            let mut r = utt_rng(seed, i);
            let mut state = sample_from(&pi, &mut r);
            let mut samples = Vec::with_capacity(n_seg * MARKOV_SEGMENT);
            for _ in 0..n_seg {
                samples.extend(segment(state));
                state = sample_from(&p[state], &mut r);
            }
            let split = if i % 5 == 4 {
                Split::Valid
            } else {
                Split::Train
            };
            let e = audio_entry(format!("markov-{i:05}"), split, Domain::Speech);
            write_wav(&Waveform::new(samples, MARKOV_RATE)?, dir.join(&e.audio))?;
            Ok(e)
        })
        .collect::<Result<_>>()?;
    let sidecar = MarkovSidecar {
        entropy_rate_nats: entropy_rate(&p, &pi),
        transition: p,
        stationary: pi,
        frequencies_hz: MARKOV_FREQS.to_vec(),
        segment_samples: MARKOV_SEGMENT,
        sample_rate: MARKOV_RATE,
        frame_len: 2 * MARKOV_SEGMENT,
        hop: MARKOV_SEGMENT,
        codebook_size: MARKOV_FREQS.len() * MARKOV_FREQS.len(),
    };
    let side_path = dir.join("markov.json");
    let body = serde_json::to_string_pretty(&sidecar).expect("serializable") + "\n";
    std::fs::write(&side_path, body).map_err(|e| Error::io(&side_path, e))?;
    let manifest = Manifest::new(entries, dir);
    Ok(SynthDataset {
        manifest_path: write_entries(dir, &manifest)?,
        manifest,
        extra: Some(side_path),
    })
}

pub fn read_markov_sidecar(path: impl AsRef<Path>) -> Result<MarkovSidecar> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

/// Lowercase words without adjacent repeated letters.
fn random_text(rng: &mut ChaCha8Rng) -> String {
    let n_words = rng.gen_range(3..=6);
    let mut words = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        let len = rng.gen_range(2..=6);
        let mut w: Vec<u8> = Vec::with_capacity(len);
        while w.len() < len {
            let c = CTC_ALPHABET[rng.gen_range(0..26)];
            if w.last() != Some(&c) {
                w.push(c);
            }
        }
        words.push(String::from_utf8(w).expect("ascii"));
    }
    words.join(" ")
}

pub fn ctc_mapped_descriptor() -> CodecDescriptor {
    CodecDescriptor {
        name: "ctc-mapped".into(),
        feature_type: FeatureType::Semantic,
        sample_rate: CTC_RATE,
        token_rate: Rational::integer(CTC_TOKEN_RATE).expect("nonzero"),
        n_codebooks: 1,
        codebook_sizes: vec![CTC_VOCAB],
        bitrate_bps: None,
        semantic_columns: None,
    }
}

fn ctc_mapped(size: usize, seed: u64, dir: &Path) -> Result<SynthDataset> {
    let codec_dir = dir.join("codec");
    std::fs::create_dir_all(&codec_dir).map_err(|e| Error::io(&codec_dir, e))?;
    let desc = ctc_mapped_descriptor();
    let desc_path = codec_dir.join("descriptor.json");
    let body = serde_json::to_string_pretty(&desc).expect("serializable") + "\n";
    std::fs::write(&desc_path, body).map_err(|e| Error::io(&desc_path, e))?;
    let hop = (CTC_RATE / CTC_TOKEN_RATE) as usize;
    let entries: Vec<ManifestEntry> = (0..size)
        .into_par_iter()
        .map(|i| {
            let mut r = utt_rng(seed, i);
            let text = random_text(&mut r);
            let tokens: Vec<u32> = text
                .bytes()
                .map(|b| {
                    let c = CTC_ALPHABET.iter().position(|&a| a == b).expect("alphabet") as u32;
                    let max_k = (CTC_VOCAB - 1 - c) / 27;
                    c + 27 * r.gen_range(0..=max_k)
                })
                .collect();
            let utt_id = format!("ctc-{i:05}");
            let grid = TokenGrid::new(
                tokens.clone(),
                tokens.len(),
                vec![CTC_VOCAB],
                desc.token_rate,
                "ctc-mapped",
            )?;
            save_token_grid(&grid, codec_dir.join(format!("{utt_id}.tokens")))?;
            let samples: Vec<f64> = tokens
                .iter()
                .flat_map(|&t| {
                    let f = 100.0 + 3.5 * t as f64;
                    (0..hop).map(move |n| 0.3 * (2.0 * PI * f * n as f64 / CTC_RATE as f64).sin())
                })
                .collect();
            let split = if i % 5 == 4 {
                Split::Test
            } else {
                Split::Train
            };
            let mut e = audio_entry(utt_id, split, Domain::Speech);
            e.transcript = Some(text);
            write_wav(&Waveform::new(samples, CTC_RATE)?, dir.join(&e.audio))?;
            Ok(e)
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest::new(entries, dir);
    Ok(SynthDataset {
        manifest_path: write_entries(dir, &manifest)?,
        manifest,
        extra: Some(codec_dir),
    })
}
