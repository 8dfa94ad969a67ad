//! Token-ID stability under repeated re-encoding and small time shifts.

use serde::{Deserialize, Serialize};

use crate::codec::{CodecAdapter, TokenGrid};
use crate::error::{Error, Result};
use crate::signal::{time_shift, Waveform};

pub const DEFAULT_ROUNDS: usize = 10;
pub const DEFAULT_SHIFT_MS: f64 = 2.0;

/// Same-ID ratios of one codebook for rounds `2..=n` against round 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityCurve {
    pub codebook_index: usize,
    pub ratios: Vec<f64>,
    pub slope: f64,
}

impl StabilityCurve {
    fn from_ratios(codebook_index: usize, ratios: Vec<f64>) -> Self {
        let rounds: Vec<f64> = (0..ratios.len()).map(|i| (i + 2) as f64).collect();
        let slope = ols_slope(&rounds, &ratios);
        Self {
            codebook_index,
            ratios,
            slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftStability {
    pub codebook_index: usize,
    pub ratio: f64,
    pub shift_ms: f64,
}

/// Least-squares slope of `y` on `x`; zero when `x` has no spread.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / sxx
}

/// Matching positions and compared frames for one codebook, over the shorter grid.
pub fn same_id_counts(a: &TokenGrid, b: &TokenGrid, codebook: usize) -> (usize, usize) {
    let t = a.n_frames().min(b.n_frames());
    let same = (0..t)
        .filter(|&f| a.get(f, codebook) == b.get(f, codebook))
        .count();
    (same, t)
}

fn ratio(a: &TokenGrid, b: &TokenGrid, codebook: usize) -> f64 {
    match same_id_counts(a, b, codebook) {
        (_, 0) => 0.0,
        (s, t) => s as f64 / t as f64,
    }
}

fn check_codebooks(a: &TokenGrid, b: &TokenGrid) -> Result<usize> {
    if a.n_codebooks() != b.n_codebooks() {
        return Err(Error::InvalidGrid(format!(
            "re-encoding changed the codebook count from {} to {}",
            a.n_codebooks(),
            b.n_codebooks()
        )));
    }
    Ok(a.n_codebooks())
}

/// All `n` grids of the multi-round protocol: round 1 encodes `w`, each later
/// round encodes the decoded previous round.
pub fn multi_round_grids(
    codec: &dyn CodecAdapter,
    w: &Waveform,
    n: usize,
) -> Result<Vec<TokenGrid>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 rounds, got {n}"
        )));
    }
    if !codec.encodes_arbitrary_audio() {
        return Err(Error::DecodeUnavailable(codec.name().to_string()));
    }
    let mut grids = vec![codec.encode(w, None)?];
    for _ in 1..n {
        let y = codec.decode(grids.last().expect("non-empty"))?;
        grids.push(codec.encode(&y, None)?);
    }
    Ok(grids)
}

pub fn curves_from_grids(grids: &[TokenGrid]) -> Result<Vec<StabilityCurve>> {
    let first = &grids[0];
    for g in &grids[1..] {
        check_codebooks(first, g)?;
    }
    Ok((0..first.n_codebooks())
        .map(|c| {
            StabilityCurve::from_ratios(c, grids[1..].iter().map(|g| ratio(first, g, c)).collect())
        })
        .collect())
}

pub fn multi_round(
    codec: &dyn CodecAdapter,
    w: &Waveform,
    n: usize,
) -> Result<Vec<StabilityCurve>> {
    curves_from_grids(&multi_round_grids(codec, w, n)?)
}

pub fn time_shift_eval(
    codec: &dyn CodecAdapter,
    w: &Waveform,
    shift_ms: Option<f64>,
) -> Result<Vec<ShiftStability>> {
    let shift_ms = shift_ms.unwrap_or(DEFAULT_SHIFT_MS);
    let shifted = time_shift(w, shift_ms)?;
    if !codec.encodes_arbitrary_audio() {
        return Err(Error::DecodeUnavailable(codec.name().to_string()));
    }
    let a = codec.encode(w, None)?;
    let b = codec.encode(&shifted, None)?;
    let n = check_codebooks(&a, &b)?;
    Ok((0..n)
        .map(|c| ShiftStability {
            codebook_index: c,
            ratio: ratio(&a, &b, c),
            shift_ms,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Average the per-utterance ratios.
    #[default]
    UtteranceMean,
    /// Divide total matches by total compared frames.
    TokenPooled,
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::UtteranceMean => "utterance_mean",
            Pooling::TokenPooled => "token_pooled",
        })
    }
}

/// Corpus-level curves with the slope fitted to the averaged ratios.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateStability {
    pub curves: Vec<StabilityCurve>,
    /// Mean of the per-utterance slopes, kept for comparison with `curves[c].slope`.
    pub mean_of_slopes: Vec<f64>,
}

pub fn aggregate_stability(per_utt: &[Vec<StabilityCurve>]) -> Result<AggregateStability> {
    let first = per_utt
        .first()
        .ok_or_else(|| Error::InsufficientData("no utterances to aggregate".into()))?;
    let n_cb = first.len();
    let n_r = first.first().map_or(0, |c| c.ratios.len());
    if per_utt
        .iter()
        .any(|u| u.len() != n_cb || u.iter().any(|c| c.ratios.len() != n_r))
    {
        return Err(Error::ShapeMismatch(
            "curves differ in codebooks or rounds".into(),
        ));
    }
    let n = per_utt.len() as f64;
    let curves = (0..n_cb)
        .map(|c| {
            let ratios = (0..n_r)
                .map(|r| per_utt.iter().map(|u| u[c].ratios[r]).sum::<f64>() / n)
                .collect();
            StabilityCurve::from_ratios(c, ratios)
        })
        .collect();
    let mean_of_slopes = (0..n_cb)
        .map(|c| per_utt.iter().map(|u| u[c].slope).sum::<f64>() / n)
        .collect();
    Ok(AggregateStability {
        curves,
        mean_of_slopes,
    })
}

/// Token-pooled curves straight from per-utterance multi-round grids.
pub fn pooled_curves(per_utt_grids: &[Vec<TokenGrid>]) -> Result<Vec<StabilityCurve>> {
    let first = per_utt_grids
        .first()
        .ok_or_else(|| Error::InsufficientData("no utterances to aggregate".into()))?;
    let n_cb = first[0].n_codebooks();
    let n_r = first.len() - 1;
    let mut curves = Vec::with_capacity(n_cb);
    for c in 0..n_cb {
        let mut ratios = Vec::with_capacity(n_r);
        for r in 1..=n_r {
            let (same, total) = per_utt_grids
                .iter()
                .map(|g| same_id_counts(&g[0], &g[r], c))
                .fold((0, 0), |(s, t), (a, b)| (s + a, t + b));
            ratios.push(if total == 0 {
                0.0
            } else {
                same as f64 / total as f64
            });
        }
        curves.push(StabilityCurve::from_ratios(c, ratios));
    }
    Ok(curves)
}

pub fn aggregate_shift(per_utt: &[Vec<ShiftStability>]) -> Result<Vec<ShiftStability>> {
    let first = per_utt
        .first()
        .ok_or_else(|| Error::InsufficientData("no utterances to aggregate".into()))?;
    let n = per_utt.len() as f64;
    Ok(first
        .iter()
        .enumerate()
        .map(|(c, s)| ShiftStability {
            codebook_index: c,
            ratio: per_utt.iter().map(|u| u[c].ratio).sum::<f64>() / n,
            shift_ms: s.shift_ms,
        })
        .collect())
}

/// `codec,codebook,round,ratio` rows; codebooks and rounds are 1-based.
pub fn curves_csv(codec: &str, curves: &[StabilityCurve]) -> String {
    let mut out = String::from("codec,codebook,round,ratio\n");
    for c in curves {
        for (i, r) in c.ratios.iter().enumerate() {
            out += &format!(
                "{codec},{},{},{}\n",
                c.codebook_index + 1,
                i + 2,
                crate::analysis::fmt_g(*r)
            );
        }
    }
    out
}

pub fn slopes_csv(codec: &str, curves: &[StabilityCurve]) -> String {
    let mut out = String::from("codec,codebook,slope\n");
    for c in curves {
        out += &format!(
            "{codec},{},{}\n",
            c.codebook_index + 1,
            crate::analysis::fmt_g(c.slope)
        );
    }
    out
}

pub fn shift_csv(codec: &str, shifts: &[ShiftStability]) -> String {
    let mut out = String::from("codec,codebook,shift_ms,ratio\n");
    for s in shifts {
        out += &format!(
            "{codec},{},{},{}\n",
            s.codebook_index + 1,
            crate::analysis::fmt_g(s.shift_ms),
            crate::analysis::fmt_g(s.ratio)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{IdentityCodec, RandomCodec};
    use crate::signal::Rational;

    fn wave(n: usize) -> Waveform {
        Waveform::new((0..n).map(|i| (i as f64 * 0.01).sin()).collect(), 16000).unwrap()
    }

    fn curve(ratios: &[f64]) -> StabilityCurve {
        StabilityCurve::from_ratios(0, ratios.to_vec())
    }

    #[test]
    fn identity_codec_is_perfectly_stable() {
        let codec = IdentityCodec::new(320, 16000).unwrap();
        let curves = multi_round(&codec, &wave(16000), DEFAULT_ROUNDS).unwrap();
        assert_eq!(curves.len(), 1);
        assert_eq!(curves[0].ratios, vec![1.0; 9]);
        assert_eq!(curves[0].slope, 0.0);
        let s = time_shift_eval(&codec, &wave(16000), Some(0.0)).unwrap();
        assert_eq!(s[0].ratio, 1.0);
    }

    #[test]
    fn identity_codec_one_frame_shift_never_matches() {
        let codec = IdentityCodec::new(320, 16000).unwrap();
        // 320 samples at 16 kHz is 20 ms: shifted frame t holds original frame t + 1.
        let w = wave(16000);
        let s = time_shift_eval(&codec, &w, Some(20.0)).unwrap();
        let g = codec.encode(&w, None).unwrap().column(0);
        let t = g.len() - 1;
        let expected = (0..t).filter(|&i| g[i + 1] == g[i]).count() as f64 / t as f64;
        assert_eq!(s[0].ratio, expected);
        assert_eq!(expected, 0.0);
        assert_eq!(s[0].shift_ms, 20.0);
    }

    #[test]
    fn default_shift_is_two_ms() {
        let codec = RandomCodec::new(1);
        let s = time_shift_eval(&codec, &wave(8000), None).unwrap();
        assert!(s.iter().all(|x| x.shift_ms == 2.0));
        assert!(time_shift_eval(&codec, &wave(100), Some(10.0)).is_err());
    }

    #[test]
    fn rounds_must_be_at_least_two() {
        let codec = RandomCodec::new(1);
        assert!(multi_round(&codec, &wave(8000), 1).is_err());
    }

    #[test]
    fn ratios_use_min_length() {
        let r = Rational::integer(50).unwrap();
        let a = TokenGrid::new(vec![1, 2, 3, 4], 4, vec![8], r, "a").unwrap();
        let b = TokenGrid::new(vec![1, 2, 0], 3, vec![8], r, "b").unwrap();
        assert_eq!(same_id_counts(&a, &b, 0), (2, 3));
        let c = curves_from_grids(&[a.clone(), b.clone(), a]).unwrap();
        assert!((c[0].ratios[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c[0].ratios[1], 1.0);
    }

    #[test]
    fn ols_slope_on_line() {
        assert!((ols_slope(&[2.0, 3.0, 4.0], &[1.0, 0.5, 0.0]) + 0.5).abs() < 1e-15);
        assert_eq!(ols_slope(&[1.0], &[1.0]), 0.0);
    }

    #[test]
    fn aggregation_means_ratios_then_fits() {
        let one = vec![curve(&[0.4, 0.2])];
        let agg = aggregate_stability(std::slice::from_ref(&one)).unwrap();
        assert_eq!(agg.curves, one);

        let a = vec![curve(&[0.4, 0.4, 0.4])];
        let b = vec![curve(&[0.6, 0.6, 0.6])];
        let agg = aggregate_stability(&[a, b]).unwrap();
        assert!(agg.curves[0].ratios.iter().all(|r| (r - 0.5).abs() < 1e-15));

        // OLS is linear in y, so both routes agree when every utterance spans the same rounds.
        let a = vec![curve(&[0.9, 0.5, 0.4])];
        let b = vec![curve(&[0.7, 0.7, 0.1])];
        let agg = aggregate_stability(&[a, b]).unwrap();
        assert!((agg.curves[0].slope - agg.mean_of_slopes[0]).abs() < 1e-12);
        assert!(aggregate_stability(&[]).is_err());
    }

    #[test]
    fn csv_layouts() {
        let c = vec![curve(&[1.0, 0.5])];
        assert_eq!(
            curves_csv("x", &c),
            "codec,codebook,round,ratio\nx,1,2,1\nx,1,3,0.5\n"
        );
        assert_eq!(slopes_csv("x", &c), "codec,codebook,slope\nx,1,-0.5\n");
    }
}
