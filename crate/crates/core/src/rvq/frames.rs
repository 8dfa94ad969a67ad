use crate::error::{Error, Result};
use crate::signal::{hann_window, FrameKind, FrameMatrix, Rational, Waveform};

/// Hann-windowed 50%-overlap frames plus the window-sum buffer used to
/// normalise the overlap-add on the way back.
#[derive(Debug, Clone)]
pub struct FrameSet {
    pub frames: FrameMatrix,
    pub window_sum: Vec<f64>,
    pub hop: usize,
}

pub fn check_framing(frame_len: usize, hop: usize) -> Result<()> {
    if frame_len < 2 || frame_len % 2 != 0 || hop != frame_len / 2 {
        return Err(Error::InvalidParameter(format!(
            "frames must have even length and hop = frame_len / 2 (got {frame_len}/{hop})"
        )));
    }
    Ok(())
}

pub fn frame_count(len: usize, frame_len: usize, hop: usize) -> usize {
    if len < frame_len {
        0
    } else {
        1 + (len - frame_len) / hop
    }
}

/// Sum of the shifted analysis windows over `(n_frames - 1) * hop + frame_len` samples.
pub fn window_sum(n_frames: usize, frame_len: usize, hop: usize) -> Vec<f64> {
    let win = hann_window(frame_len);
    let mut sum = vec![0.0; (n_frames - 1) * hop + frame_len];
    for t in 0..n_frames {
        for (s, w) in sum[t * hop..].iter_mut().zip(&win) {
            *s += w;
        }
    }
    sum
}

pub fn extract_frames(w: &Waveform, frame_len: usize, hop: usize) -> Result<FrameSet> {
    check_framing(frame_len, hop)?;
    let x = w.samples();
    let n_frames = frame_count(x.len(), frame_len, hop);
    if n_frames == 0 {
        return Err(Error::SignalTooShort {
            needed: frame_len,
            actual: x.len(),
        });
    }
    let win = hann_window(frame_len);
    let mut data = Vec::with_capacity(n_frames * frame_len);
    for t in 0..n_frames {
        data.extend(
            x[t * hop..t * hop + frame_len]
                .iter()
                .zip(&win)
                .map(|(s, g)| s * g),
        );
    }
    let frames = FrameMatrix::new(
        data,
        n_frames,
        frame_len,
        Rational::new(w.sample_rate(), hop as u32)?,
        FrameKind::TimeDomain,
    )?;
    Ok(FrameSet {
        frames,
        window_sum: window_sum(n_frames, frame_len, hop),
        hop,
    })
}

/// Overlap-adds `frames` (rows of `frame_len`) and divides by the window sum.
/// Samples with no window support come out as zero.
pub fn overlap_add(frames: &[f64], frame_len: usize, hop: usize, window_sum: &[f64]) -> Vec<f64> {
    let n_frames = frames.len() / frame_len;
    let mut out = vec![0.0; window_sum.len()];
    for t in 0..n_frames {
        let row = &frames[t * frame_len..(t + 1) * frame_len];
        for (o, v) in out[t * hop..].iter_mut().zip(row) {
            *o += v;
        }
    }
    for (o, &s) in out.iter_mut().zip(window_sum) {
        *o = if s > 1e-12 { *o / s } else { 0.0 };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_signal_frames_equal_window() {
        let w = Waveform::new(vec![1.0; 4096], 24000).unwrap();
        let fs = extract_frames(&w, 1024, 512).unwrap();
        let win = hann_window(1024);
        assert_eq!(fs.frames.n_frames(), 1 + (4096 - 1024) / 512);
        for row in fs.frames.rows() {
            assert_eq!(row, win.as_slice());
        }
        assert_eq!(fs.frames.frame_rate(), Rational::new(24000, 512).unwrap());
    }

    #[test]
    fn framing_preconditions() {
        let w = Waveform::new(vec![0.0; 100], 16000).unwrap();
        assert!(matches!(
            extract_frames(&w, 128, 64),
            Err(Error::SignalTooShort { .. })
        ));
        assert!(extract_frames(&w, 64, 16).is_err());
        assert!(extract_frames(&w, 63, 31).is_err());
        assert_eq!(extract_frames(&w, 64, 32).unwrap().frames.n_frames(), 2);
    }

    #[test]
    fn hann_windows_sum_to_one_in_the_interior() {
        let s = window_sum(10, 256, 128);
        for &v in &s[128..s.len() - 128] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unquantized_overlap_add_is_exact_in_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..5000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Waveform::new(x.clone(), 16000).unwrap();
        let fs = extract_frames(&w, 512, 256).unwrap();
        let y = overlap_add(fs.frames.data(), 512, 256, &fs.window_sum);
        assert_eq!(y.len(), (fs.frames.n_frames() - 1) * 256 + 512);
        assert!(x.len() - y.len() < 512);
        for n in 256..y.len() - 256 {
            assert!((y[n] - x[n]).abs() < 1e-9);
        }
    }
}
