use std::io::ErrorKind;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

const PCM16_SCALE: f64 = 1.0 / 32768.0;

/// Reads a PCM16 or float32 RIFF/WAVE file, downmixing to mono by averaging channels.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::MalformedContainer("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 * PCM16_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_sample_error(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_sample_error(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{bits}-bit {fmt:?} samples (expected PCM16 or float32)"
            )))
        }
    };
    if interleaved.is_empty() {
        return Err(Error::MalformedContainer("zero-length data chunk".into()));
    }
    if interleaved.len() % channels != 0 {
        return Err(Error::MalformedContainer(
            "data chunk ends mid-frame".into(),
        ));
    }
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a mono IEEE-float32 WAV file.
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in w.samples() {
        writer
            .write_sample(s as f32)
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

/// Any I/O failure after the header parsed means the data chunk is shorter than declared.
fn map_sample_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(_) => Error::MalformedContainer("truncated data chunk".into()),
        other => map_hound(path, other),
    }
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) if io.kind() == ErrorKind::UnexpectedEof => {
            Error::MalformedContainer("truncated data chunk".into())
        }
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(msg) => Error::MalformedContainer(msg.to_string()),
        hound::Error::Unsupported => Error::UnsupportedEncoding("unsupported WAV feature".into()),
        hound::Error::TooWide | hound::Error::InvalidSampleFormat => {
            Error::UnsupportedEncoding(e.to_string())
        }
        other => Error::MalformedContainer(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pcm16(path: &Path, channels: u16, rate: u32, samples: &[i16]) {
        let spec = WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        write_pcm16(&path, 1, 16000, &[16384, -16384, 0]);
        let w = read_wav(&path).unwrap();
        assert_eq!(w.samples(), &[0.5, -0.5, 0.0]);
        assert_eq!(w.sample_rate(), 16000);
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for s in [0.2f32, 0.4, -0.5, 0.5] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let w = read_wav(&path).unwrap();
        assert_eq!(w.len(), 2);
        assert!((w.samples()[0] - 0.3).abs() < 1e-7);
        assert_eq!(w.samples()[1], 0.0);
    }

    #[test]
    fn truncated_file_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        write_pcm16(&path, 1, 16000, &[1, 2, 3, 4, 5, 6, 7, 8]);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.to_string().contains("malformed container"), "{err}");
    }

    #[test]
    fn garbage_header_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.wav");
        std::fs::write(&path, b"RIFX0000WAVEjunkjunkjunk").unwrap();
        assert!(matches!(
            read_wav(&path).unwrap_err(),
            Error::MalformedContainer(_)
        ));
    }

    #[test]
    fn zero_length_data_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.wav");
        write_pcm16(&path, 1, 16000, &[]);
        assert!(matches!(
            read_wav(&path).unwrap_err(),
            Error::MalformedContainer(_)
        ));
    }

    #[test]
    fn other_bit_depths_are_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p8.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(
            read_wav(&path).unwrap_err(),
            Error::UnsupportedEncoding(_)
        ));
    }

    #[test]
    fn float_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.wav");
        let samples: Vec<f64> = (0..1000)
            .map(|i| ((i as f32 * 0.37).sin() * 0.9) as f64)
            .collect();
        let w = Waveform::new(samples, 22050).unwrap();
        write_wav(&w, &path).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 22050);
        assert!(back
            .samples()
            .iter()
            .zip(w.samples())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn unwritable_destination_is_io_error() {
        let w = Waveform::new(vec![0.0; 4], 8000).unwrap();
        let err = write_wav(&w, "/nonexistent-dir/x/y.wav").unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }
}
