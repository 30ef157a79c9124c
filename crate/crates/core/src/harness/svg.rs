//! Hand-written SVG scatter plots: theory on the horizontal axis, measured
//! value on the vertical, with the y = x reference line.

use std::fmt::Write;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 56.0;

/// A named group of (theory, measured) points drawn in one colour.
pub struct Series<'a> {
    pub name: &'a str,
    pub points: &'a [(f64, f64)],
}

const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn scatter(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, y)| {
        (lo.min(x).min(y), hi.max(x).max(y))
    });
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo <= 0.0 {
        let pad = lo.abs().max(1.0) * 0.5;
        lo -= pad;
        hi += pad;
    }
    let pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    let span = SIZE - 2.0 * MARGIN;
    let px = |v: f64| MARGIN + (v - lo) / (hi - lo) * span;
    let py = |v: f64| SIZE - MARGIN - (v - lo) / (hi - lo) * span;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
        px(lo),
        py(lo),
        px(hi),
        py(hi)
    );
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.3e}</text>"#,
            px(v),
            SIZE - MARGIN + 16.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3e}</text>"#,
            MARGIN - 4.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        SIZE - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        SIZE / 2.0,
        SIZE / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for &(x, y) in s.points {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}" fill-opacity="0.8"/>"#,
                px(x),
                py(y)
            );
        }
        let ly = MARGIN + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<circle cx="{}" cy="{ly}" r="4" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            MARGIN + 12.0,
            MARGIN + 22.0,
            ly + 4.0,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_points_and_reference_line() {
        let pts = [(0.0, 0.1), (1.0, 0.9)];
        let svg = scatter(
            "a < b",
            "theory",
            "trained",
            &[Series {
                name: "s",
                points: &pts,
            }],
        );
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("a &lt; b"));
        // degenerate input still draws
        let one = [(2.0, 2.0)];
        assert!(scatter(
            "t",
            "x",
            "y",
            &[Series {
                name: "p",
                points: &one
            }]
        )
        .contains("<circle"));
    }
}
