//! Minimal static SVG line plots. The numbers behind every plot are also
//! written as CSV, so nothing downstream parses these.

use std::fmt::Write;
use std::path::Path;

const W: f64 = 640.0;
const H: f64 = 360.0;
const M: f64 = 48.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub fn line_svg(path: &Path, title: &str, x: &[f64], series: &[(String, Vec<f64>)]) -> std::io::Result<()> {
    let finite = |v: &&f64| v.is_finite();
    let (x0, x1) = bounds(x.iter().filter(finite).copied());
    let (y0, y1) = bounds(series.iter().flat_map(|(_, s)| s.iter().filter(finite).copied()));
    let sx = |v: f64| M + (v - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |v: f64| H - M - (v - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - 2.0 * M, H - 2.0 * M);
    let _ = writeln!(
        s,
        r#"<text x="{M}" y="{}" font-size="10">{x0:.3}</text><text x="{}" y="{}" font-size="10" text-anchor="end">{x1:.3}</text>"#,
        H - M + 14.0,
        W - M,
        H - M + 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{y0:.3}</text><text x="{}" y="{M}" font-size="10" text-anchor="end">{y1:.3}</text>"#,
        M - 4.0,
        H - M,
        M - 4.0
    );
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = x.iter().zip(ys).filter(|(a, b)| a.is_finite() && b.is_finite()).map(|(&a, &b)| format!("{:.2},{:.2}", sx(a), sy(b))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" fill="{color}">{}</text>"#, W - M + 4.0, M + 12.0 * (i as f64 + 1.0), escape(name));
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)
}

fn bounds(it: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
