//! Cross-metric correlation and report emission.

mod report;
mod svg;

pub use report::{
    correlations_csv, emit_report, ProbeRow, ReportBundle, ReportFormat, TABLE3_COLUMNS,
};
pub use svg::{shift_bar_svg, stability_svg};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `printf("%.6g")` formatting, with `-0` printed as `0`.
pub fn fmt_g(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    const P: i32 = 6;
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let strip = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..P).contains(&exp) {
        strip(&format!("{:.*}", (P - 1 - exp) as usize, v))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip(mantissa), exp.abs())
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(
            "pearson needs at least two pairs".into(),
        ));
    }
    // Exact equality: a rounded mean leaves a tiny spread on a constant series.
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::UndefinedMetric(
            "pearson of a constant series".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric(
            "pearson of a constant series".into(),
        ));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Task, dataset type (domain) and metric name of one table column.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MetricKey {
    pub task: String,
    pub dataset_type: String,
    pub metric: String,
}

impl MetricKey {
    pub const PPL_TASK: &'static str = "ppl";
    pub const PPL_METRIC: &'static str = "overall_ppl";

    pub fn new(
        task: impl Into<String>,
        dataset_type: impl Into<String>,
        metric: impl Into<String>,
    ) -> Self {
        Self {
            task: task.into(),
            dataset_type: dataset_type.into(),
            metric: metric.into(),
        }
    }

    pub fn ppl(dataset_type: impl Into<String>) -> Self {
        Self::new(Self::PPL_TASK, dataset_type, Self::PPL_METRIC)
    }

    pub fn is_ppl(&self) -> bool {
        self.task == Self::PPL_TASK && self.metric == Self::PPL_METRIC
    }
}

impl fmt::Display for MetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.task, self.dataset_type, self.metric)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Internal,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: f64,
    pub provenance: Provenance,
}

/// Codec x metric values; each cell is set at most once.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    cells: BTreeMap<String, BTreeMap<MetricKey, Cell>>,
}

impl MetricTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        codec: &str,
        key: MetricKey,
        value: f64,
        provenance: Provenance,
    ) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite value for {codec} {key}"
            )));
        }
        let row = self.cells.entry(codec.to_string()).or_default();
        if row.contains_key(&key) {
            return Err(Error::Validation(format!("duplicate cell {codec} {key}")));
        }
        row.insert(key, Cell { value, provenance });
        Ok(())
    }

    pub fn get(&self, codec: &str, key: &MetricKey) -> Option<f64> {
        self.cells.get(codec)?.get(key).map(|c| c.value)
    }

    pub fn cell(&self, codec: &str, key: &MetricKey) -> Option<Cell> {
        self.cells.get(codec)?.get(key).copied()
    }

    pub fn codecs(&self) -> impl Iterator<Item = &str> {
        self.cells.keys().map(String::as_str)
    }

    /// Every key present for at least one codec, sorted.
    pub fn keys(&self) -> Vec<MetricKey> {
        let mut keys: Vec<MetricKey> = self
            .cells
            .values()
            .flat_map(|r| r.keys().cloned())
            .collect();
        keys.sort();
        keys.dedup();
        keys
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &BTreeMap<MetricKey, Cell>)> {
        self.cells.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Long format: `codec,task,dataset_type,metric,value,provenance`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("codec,task,dataset_type,metric,value,provenance\n");
        for (codec, row) in self.rows() {
            for (k, c) in row {
                let prov = match c.provenance {
                    Provenance::Internal => "internal",
                    Provenance::External => "external",
                };
                out += &format!(
                    "{codec},{},{},{},{},{prov}\n",
                    k.task,
                    k.dataset_type,
                    k.metric,
                    fmt_g(c.value)
                );
            }
        }
        out
    }

    /// Parses [`MetricTable::to_csv`] output; the provenance column is optional.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut t = MetricTable::new();
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim().starts_with("codec,task,dataset_type,metric,value") => {}
            _ => {
                return Err(Error::Validation(
                    "metric table needs a codec,task,dataset_type,metric,value header".into(),
                ))
            }
        }
        for (i, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 && f.len() != 6 {
                return Err(Error::Validation(format!(
                    "line {}: expected 5 or 6 fields",
                    i + 1
                )));
            }
            let value: f64 = f[4]
                .parse()
                .map_err(|_| Error::Validation(format!("line {}: bad value {:?}", i + 1, f[4])))?;
            let prov = match f.get(5).copied().unwrap_or("internal") {
                "internal" => Provenance::Internal,
                "external" => Provenance::External,
                other => {
                    return Err(Error::Validation(format!(
                        "line {}: bad provenance {other:?}",
                        i + 1
                    )))
                }
            };
            t.insert(f[0], MetricKey::new(f[1], f[2], f[3]), value, prov)?;
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub key: MetricKey,
    /// `None` when fewer than two codecs have both values or a series is constant.
    pub r: Option<f64>,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Pearson r of every metric against the overall PPL of the same dataset type.
///
/// Codecs lacking either value are left out per metric. Rows are sorted by
/// `|r|` descending, then by key; undefined rows come last.
pub fn correlate_against_ppl(table: &MetricTable) -> Result<Vec<Correlation>> {
    let mut out = Vec::new();
    for key in table.keys().into_iter().filter(|k| !k.is_ppl()) {
        let ppl_key = MetricKey::ppl(key.dataset_type.clone());
        let (xs, ys): (Vec<f64>, Vec<f64>) = table
            .codecs()
            .filter_map(|c| Some((table.get(c, &key)?, table.get(c, &ppl_key)?)))
            .unzip();
        let n = xs.len();
        let (r, note) = if n < 2 {
            (None, Some("insufficient pairs".to_string()))
        } else {
            match pearson(&ys, &xs) {
                Ok(r) => (Some(r), None),
                Err(_) => (None, Some("constant series".to_string())),
            }
        };
        out.push(Correlation { key, r, n, note });
    }
    if out.iter().all(|c| c.n == 0) {
        return Err(Error::InsufficientData(
            "no codec has both a metric and its PPL".into(),
        ));
    }
    out.sort_by(|a, b| match (a.r, b.r) {
        (Some(x), Some(y)) => y.abs().total_cmp(&x.abs()).then_with(|| a.key.cmp(&b.key)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.key.cmp(&b.key),
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn metric_csv_round_trip() {
        let mut t = MetricTable::new();
        t.insert("a", MetricKey::ppl("speech"), 812.5, Provenance::Internal)
            .unwrap();
        t.insert(
            "a",
            MetricKey::new("recon", "speech", "pesq"),
            3.25,
            Provenance::External,
        )
        .unwrap();
        t.insert("b", MetricKey::ppl("speech"), 1.0e-7, Provenance::Internal)
            .unwrap();
        let back = MetricTable::from_csv(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert!(MetricTable::from_csv("codec,task\n").is_err());
        assert!(
            MetricTable::from_csv("codec,task,dataset_type,metric,value\na,x,y,z,nan\n").is_err()
        );
    }

    #[test]
    fn g_format_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-0.0, "0"),
            (1024.0, "1024"),
            (0.1, "0.1"),
            (2.0 / 3.0, "0.666667"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (-7.389056099, "-7.38906"),
            (999999.5, "1e+06"),
            (1e100, "1e+100"),
            (6.1415, "6.1415"),
        ];
        for (v, s) in cases {
            assert_eq!(fmt_g(v), s, "{v}");
        }
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &[2.0, 1.0, 4.0, 3.0]).unwrap() - 0.6).abs() < 1e-12);
        assert!((pearson(&x, &x.map(|v| 2.0 * v + 1.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &x.map(|v| -v)).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&x, &[1.0; 4]).is_err());
        // Its mean rounds, so only the equality test catches this one.
        assert!(pearson(&[0.05; 3], &x[..3]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn table_rejects_duplicates() {
        let mut t = MetricTable::new();
        let k = MetricKey::new("recon", "speech", "stoi");
        t.insert("a", k.clone(), 0.9, Provenance::Internal).unwrap();
        assert!(t.insert("a", k.clone(), 0.8, Provenance::Internal).is_err());
        assert!(t.insert("b", k, f64::NAN, Provenance::Internal).is_err());
    }

    #[test]
    fn correlation_pairwise_deletion() {
        let mut t = MetricTable::new();
        let stoi = MetricKey::new("recon", "speech", "stoi");
        let acc = MetricKey::new("probe", "music", "acc");
        for (c, p, s) in [("a", 10.0, 0.9), ("b", 20.0, 0.7)] {
            t.insert(c, MetricKey::ppl("speech"), p, Provenance::Internal)
                .unwrap();
            t.insert(c, stoi.clone(), s, Provenance::Internal).unwrap();
        }
        t.insert("a", acc.clone(), 0.5, Provenance::External)
            .unwrap();
        t.insert("a", MetricKey::ppl("music"), 5.0, Provenance::Internal)
            .unwrap();
        let rows = correlate_against_ppl(&t).unwrap();
        assert_eq!(rows[0].key, stoi);
        assert!((rows[0].r.unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(rows[0].n, 2);
        assert_eq!(rows[1].key, acc);
        assert_eq!(rows[1].r, None);
        assert_eq!(rows[1].n, 1);
        assert_eq!(rows[1].note.as_deref(), Some("insufficient pairs"));

        let mut lonely = MetricTable::new();
        lonely.insert("a", stoi, 0.9, Provenance::Internal).unwrap();
        assert!(correlate_against_ppl(&lonely).is_err());
    }

    proptest! {
        #[test]
        fn pearson_symmetry_and_affine_invariance(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..20),
            a in 0.1f64..10.0,
            b in -50.0f64..50.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            if let Ok(r) = pearson(&x, &y) {
                prop_assert!((r - pearson(&y, &x).unwrap()).abs() < 1e-12);
                let xa: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let xn: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
                prop_assert!((pearson(&xa, &y).unwrap() - r).abs() < 1e-9);
                prop_assert!((pearson(&xn, &y).unwrap() + r).abs() < 1e-9);
            }
        }
    }
}
