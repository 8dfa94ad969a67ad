use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use super::{
    correlate_against_ppl, fmt_g, shift_bar_svg, stability_svg, Correlation, MetricKey,
    MetricTable, Provenance,
};
use crate::error::{Error, Result};
use crate::idsens::{curves_csv, shift_csv, slopes_csv, ShiftStability, StabilityCurve};
use crate::lm::{ppl_csv, PerplexityRecord};
use crate::recon::ReconMetrics;

pub const TABLE3_COLUMNS: [&str; 10] = [
    "codec", "pesq", "spk_sim", "wer_gt", "wer_rec", "cer_gt", "cer_rec", "stoi", "si_snr", "mcd",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            "svg" => Ok(Self::Svg),
            other => Err(Error::Validation(format!(
                "unknown report format {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub codec: String,
    pub task: String,
    pub dataset: String,
    pub dataset_type: String,
    pub metric: String,
    pub value: f64,
}

/// Everything a report is rendered from. Rows keep insertion order.
#[derive(Debug, Clone, Default)]
pub struct ReportBundle {
    /// Free-form header lines: substitutions, seeds, protocol settings.
    pub notes: Vec<String>,
    /// `(codec, dataset type, metrics)`.
    pub recon: Vec<(String, String, ReconMetrics)>,
    /// `(codec, dataset type, record, provenance)`.
    pub ppl: Vec<(String, String, PerplexityRecord, Provenance)>,
    pub probe: Vec<ProbeRow>,
    pub stability: Vec<(String, Vec<StabilityCurve>)>,
    pub shifts: Vec<(String, Vec<ShiftStability>)>,
}

impl ReportBundle {
    pub fn metric_table(&self) -> Result<MetricTable> {
        let mut t = MetricTable::new();
        for (codec, dt, m) in &self.recon {
            for (col, v) in m.columns() {
                let prov = if col == "pesq" {
                    Provenance::External
                } else {
                    Provenance::Internal
                };
                t.insert(codec, MetricKey::new("recon", dt.as_str(), col), v, prov)?;
            }
        }
        for (codec, dt, rec, prov) in &self.ppl {
            t.insert(
                codec,
                MetricKey::ppl(dt.as_str()),
                rec.normalized_ppl,
                *prov,
            )?;
        }
        for p in &self.probe {
            t.insert(
                &p.codec,
                MetricKey::new(
                    format!("{}:{}", p.task, p.dataset),
                    p.dataset_type.as_str(),
                    p.metric.as_str(),
                ),
                p.value,
                Provenance::Internal,
            )?;
        }
        Ok(t)
    }

    /// Correlations against domain-matched PPL, or an empty list when no PPL overlaps.
    pub fn correlations(&self) -> Result<Vec<Correlation>> {
        let t = self.metric_table()?;
        match correlate_against_ppl(&t) {
            Ok(c) => Ok(c),
            Err(Error::InsufficientData(_)) => Ok(Vec::new()),
            Err(e) => Err(e),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_g).unwrap_or_default()
}

pub(crate) fn table3_cells(m: &ReconMetrics) -> [String; 9] {
    [
        opt(m.external_pesq),
        opt(m.spk_sim),
        opt(m.wer_gt),
        opt(m.wer_rec),
        opt(m.cer_gt),
        opt(m.cer_rec),
        fmt_g(m.stoi),
        fmt_g(m.si_snr_db),
        fmt_g(m.mcd),
    ]
}

fn recon_csv(rows: &[(String, String, ReconMetrics)]) -> String {
    let mut out = TABLE3_COLUMNS.join(",") + "\n";
    for (codec, _, m) in rows {
        out += &format!("{codec},{}\n", table3_cells(m).join(","));
    }
    out
}

fn probe_csv(rows: &[ProbeRow]) -> String {
    let mut out = String::from("codec,task,dataset,metric,value\n");
    for p in rows {
        out += &format!(
            "{},{},{},{},{}\n",
            p.codec,
            p.task,
            p.dataset,
            p.metric,
            fmt_g(p.value)
        );
    }
    out
}

pub fn correlations_csv(rows: &[Correlation]) -> String {
    let mut out = String::from("task,dataset_type,metric,r,n\n");
    for c in rows {
        out += &format!(
            "{},{},{},{},{}\n",
            c.key.task,
            c.key.dataset_type,
            c.key.metric,
            opt(c.r),
            c.n
        );
    }
    out
}

fn by_domain(
    rows: &[(String, String, PerplexityRecord, Provenance)],
) -> BTreeMap<&str, Vec<(String, PerplexityRecord)>> {
    let mut m: BTreeMap<&str, Vec<(String, PerplexityRecord)>> = BTreeMap::new();
    for (codec, dt, rec, _) in rows {
        m.entry(dt.as_str())
            .or_default()
            .push((codec.clone(), rec.clone()));
    }
    m
}

fn md_table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

fn markdown(b: &ReportBundle, corr: &[Correlation]) -> String {
    let mut out = String::from("# Codec evaluation report\n\n");
    for n in &b.notes {
        let _ = writeln!(out, "- {n}");
    }
    if !b.notes.is_empty() {
        out.push('\n');
    }
    if !b.recon.is_empty() {
        out += "## Reconstruction\n\n";
        let rows: Vec<Vec<String>> = b
            .recon
            .iter()
            .map(|(c, _, m)| std::iter::once(c.clone()).chain(table3_cells(m)).collect())
            .collect();
        md_table(&mut out, &TABLE3_COLUMNS, &rows);
    }
    for (dt, rows) in by_domain(&b.ppl) {
        let _ = writeln!(out, "## Perplexity ({dt})\n");
        let width = rows
            .iter()
            .map(|r| r.1.per_codebook.len())
            .max()
            .unwrap_or(0);
        let mut header = vec!["codec".to_string(), "overall".to_string()];
        header.extend((1..=width).map(|i| format!("cb{i}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let cells: Vec<Vec<String>> = rows
            .iter()
            .map(|(c, r)| {
                let mut row = vec![c.clone(), fmt_g(r.normalized_ppl)];
                row.extend((0..width).map(|i| {
                    r.per_codebook
                        .get(i)
                        .map(|p| fmt_g(p.ppl))
                        .unwrap_or_default()
                }));
                row
            })
            .collect();
        md_table(&mut out, &header, &cells);
    }
    if !b.probe.is_empty() {
        out += "## Probes\n\n";
        let rows: Vec<Vec<String>> = b
            .probe
            .iter()
            .map(|p| {
                vec![
                    p.codec.clone(),
                    p.task.clone(),
                    p.dataset.clone(),
                    p.metric.clone(),
                    fmt_g(p.value),
                ]
            })
            .collect();
        md_table(
            &mut out,
            &["codec", "task", "dataset", "metric", "value"],
            &rows,
        );
    }
    if !b.stability.is_empty() {
        out += "## Multi-round ID stability (slopes)\n\n";
        let rows: Vec<Vec<String>> = b
            .stability
            .iter()
            .flat_map(|(c, curves)| {
                curves.iter().map(move |k| {
                    let last = k.ratios.last().copied().map(fmt_g).unwrap_or_default();
                    vec![
                        c.clone(),
                        (k.codebook_index + 1).to_string(),
                        last,
                        fmt_g(k.slope),
                    ]
                })
            })
            .collect();
        md_table(
            &mut out,
            &["codec", "codebook", "final ratio", "slope"],
            &rows,
        );
    }
    if !b.shifts.is_empty() {
        out += "## Time-shift ID stability\n\n";
        let rows: Vec<Vec<String>> = b
            .shifts
            .iter()
            .flat_map(|(c, s)| {
                s.iter().map(move |x| {
                    vec![
                        c.clone(),
                        (x.codebook_index + 1).to_string(),
                        fmt_g(x.shift_ms),
                        fmt_g(x.ratio),
                    ]
                })
            })
            .collect();
        md_table(&mut out, &["codec", "codebook", "shift_ms", "ratio"], &rows);
    }
    if !corr.is_empty() {
        out += "## Correlation with PPL\n\n";
        let rows: Vec<Vec<String>> = corr
            .iter()
            .map(|c| {
                vec![
                    c.key.task.clone(),
                    c.key.dataset_type.clone(),
                    c.key.metric.clone(),
                    opt(c.r),
                    c.n.to_string(),
                ]
            })
            .collect();
        md_table(
            &mut out,
            &["task", "dataset_type", "metric", "r", "n"],
            &rows,
        );
    }
    out
}

/// Rounds through the `%.6g` text form so JSON numbers match the tables.
fn num(v: f64) -> Value {
    fmt_g(v)
        .parse::<f64>()
        .ok()
        .and_then(serde_json::Number::from_f64)
        .map_or(Value::Null, Value::Number)
}

fn json_report(b: &ReportBundle, table: &MetricTable, corr: &[Correlation]) -> Result<String> {
    let mut root = Map::new();
    for (codec, row) in table.rows() {
        if codec == "correlations" || codec == "notes" {
            return Err(Error::Validation(format!(
                "codec name {codec:?} is reserved in JSON reports"
            )));
        }
        let cells: Map<String, Value> = row
            .iter()
            .map(|(k, c)| (k.to_string(), num(c.value)))
            .collect();
        root.insert(codec.to_string(), Value::Object(cells));
    }
    root.insert(
        "correlations".into(),
        Value::Array(
            corr.iter()
                .map(|c| {
                    let mut o = json!({ "metric": c.key.to_string(), "n": c.n });
                    o["r"] = c.r.map_or(Value::Null, num);
                    if let Some(note) = &c.note {
                        o["note"] = Value::String(note.clone());
                    }
                    o
                })
                .collect(),
        ),
    );
    root.insert("notes".into(), json!(b.notes));
    let mut s = serde_json::to_string_pretty(&Value::Object(root)).expect("serializable");
    s.push('\n');
    Ok(s)
}

fn write(dir: &Path, name: &str, body: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    written.push(p);
    Ok(())
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes the requested formats into `dir` and returns the files written.
/// Output bytes depend only on the bundle.
pub fn emit_report(
    b: &ReportBundle,
    formats: &[ReportFormat],
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let table = b.metric_table()?;
    let corr = b.correlations()?;
    let mut written = Vec::new();
    let mut formats = formats.to_vec();
    formats.sort_by_key(|f| *f as u8);
    formats.dedup();
    for f in formats {
        match f {
            ReportFormat::Csv => {
                if !b.recon.is_empty() {
                    write(dir, "recon.csv", &recon_csv(&b.recon), &mut written)?;
                }
                for (dt, rows) in by_domain(&b.ppl) {
                    write(
                        dir,
                        &format!("ppl_{}.csv", safe_name(dt)),
                        &ppl_csv(&rows),
                        &mut written,
                    )?;
                }
                if !b.probe.is_empty() {
                    write(dir, "probe.csv", &probe_csv(&b.probe), &mut written)?;
                }
                if !b.stability.is_empty() {
                    let mut rounds = String::new();
                    let mut slopes = String::new();
                    for (i, (c, curves)) in b.stability.iter().enumerate() {
                        let (r, s) = (curves_csv(c, curves), slopes_csv(c, curves));
                        let skip = usize::from(i > 0);
                        rounds.extend(r.lines().skip(skip).map(|l| format!("{l}\n")));
                        slopes.extend(s.lines().skip(skip).map(|l| format!("{l}\n")));
                    }
                    write(dir, "idsens_rounds.csv", &rounds, &mut written)?;
                    write(dir, "idsens_slopes.csv", &slopes, &mut written)?;
                }
                if !b.shifts.is_empty() {
                    let mut out = String::new();
                    for (i, (c, s)) in b.shifts.iter().enumerate() {
                        out.extend(
                            shift_csv(c, s)
                                .lines()
                                .skip(usize::from(i > 0))
                                .map(|l| format!("{l}\n")),
                        );
                    }
                    write(dir, "idsens_shift.csv", &out, &mut written)?;
                }
                if !corr.is_empty() {
                    write(
                        dir,
                        "correlations.csv",
                        &correlations_csv(&corr),
                        &mut written,
                    )?;
                }
                if !table.is_empty() {
                    write(dir, "metrics.csv", &table.to_csv(), &mut written)?;
                }
            }
            ReportFormat::Json => write(
                dir,
                "report.json",
                &json_report(b, &table, &corr)?,
                &mut written,
            )?,
            ReportFormat::Markdown => write(dir, "report.md", &markdown(b, &corr), &mut written)?,
            ReportFormat::Svg => {
                for (c, curves) in &b.stability {
                    write(
                        dir,
                        &format!("idsens_rounds_{}.svg", safe_name(c)),
                        &stability_svg(c, curves),
                        &mut written,
                    )?;
                }
                if !b.shifts.is_empty() {
                    write(
                        dir,
                        "idsens_shift.svg",
                        &shift_bar_svg(&b.shifts),
                        &mut written,
                    )?;
                }
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_names_parse() {
        assert_eq!(
            "md".parse::<ReportFormat>().unwrap(),
            ReportFormat::Markdown
        );
        assert_eq!("CSV".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert!("pdf".parse::<ReportFormat>().is_err());
    }

    #[test]
    fn missing_optionals_leave_empty_cells() {
        let m = ReconMetrics {
            stoi: 0.5,
            si_snr_db: 3.0,
            mcd: 1.25,
            ..Default::default()
        };
        let csv = recon_csv(&[("x".into(), "speech".into(), m)]);
        assert_eq!(csv.lines().nth(1).unwrap(), "x,,,,,,,0.5,3,1.25");
    }
}
