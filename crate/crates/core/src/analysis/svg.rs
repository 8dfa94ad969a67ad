//! Minimal hand-written SVG charts.

use std::fmt::Write as _;

use super::fmt_g;
use crate::idsens::{ShiftStability, StabilityCurve};

const W: f64 = 640.0;
const H: f64 = 400.0;
const M: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#,
        H - M,
        W - M,
        H - M,
        H - M
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{}</text>"#,
            M - 4.0,
            y_of(v) + 3.0,
            fmt_g(v)
        );
    }
    s
}

fn y_of(ratio: f64) -> f64 {
    H - M - ratio.clamp(0.0, 1.0) * (H - 2.0 * M)
}

/// Same-ID ratio against round, one polyline per codebook.
pub fn stability_svg(codec: &str, curves: &[StabilityCurve]) -> String {
    let mut s = open(
        &format!("{codec}: same-ID ratio vs round"),
        "round",
        "same-ID ratio",
    );
    let n_r = curves.iter().map(|c| c.ratios.len()).max().unwrap_or(0);
    let x_of = |i: usize| M + (i as f64 + 0.5) * (W - 2.0 * M) / n_r.max(1) as f64;
    for i in 0..n_r {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            fmt_g(x_of(i)),
            H - M + 14.0,
            i + 2
        );
    }
    for (k, c) in curves.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = c
            .ratios
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{},{}", fmt_g(x_of(i)), fmt_g(y_of(*r))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"><title>codebook {} slope {}</title></polyline>"#,
            pts.join(" "),
            c.codebook_index + 1,
            fmt_g(c.slope)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Same-ID ratio after a time shift, grouped by codec then codebook.
pub fn shift_bar_svg(rows: &[(String, Vec<ShiftStability>)]) -> String {
    let shift = rows
        .first()
        .and_then(|r| r.1.first())
        .map_or(0.0, |s| s.shift_ms);
    let mut s = open(
        &format!("same-ID ratio after {} ms shift", fmt_g(shift)),
        "codec / codebook",
        "same-ID ratio",
    );
    let total: usize = rows.iter().map(|r| r.1.len() + 1).sum();
    let bar = (W - 2.0 * M) / total.max(1) as f64;
    let mut slot = 0usize;
    for (codec, shifts) in rows {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10">{}</text>"#,
            fmt_g(M + slot as f64 * bar),
            H - M + 14.0,
            escape(codec)
        );
        for x in shifts {
            let top = y_of(x.ratio);
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"><title>{} codebook {}: {}</title></rect>"#,
                fmt_g(M + slot as f64 * bar),
                fmt_g(top),
                fmt_g(bar * 0.9),
                fmt_g(H - M - top),
                PALETTE[x.codebook_index % PALETTE.len()],
                escape(codec),
                x.codebook_index + 1,
                fmt_g(x.ratio)
            );
            slot += 1;
        }
        slot += 1;
    }
    s.push_str("</svg>\n");
    s
}
