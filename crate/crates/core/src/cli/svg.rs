//! Reliability diagram as a self-contained SVG document.

use std::fmt::Write;

use crate::metrics::ReliabilityData;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 56.0;
const PLOT: f64 = SIZE - 2.0 * MARGIN;

fn x(v: f64) -> f64 {
    MARGIN + v * PLOT
}

fn y(v: f64) -> f64 {
    MARGIN + (1.0 - v) * PLOT
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bars at bin accuracy, gap boxes up or down to bin confidence, the
/// diagonal, and dashed lines at overall mean confidence and accuracy.
pub fn reliability_svg(data: &ReliabilityData, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">{}</text>"#,
        SIZE / 2.0,
        MARGIN / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN:.2}" y="{MARGIN:.2}" width="{PLOT:.2}" height="{PLOT:.2}" fill="none" stroke="#444"/>"##
    );
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"#,
            x(v),
            y(0.0) + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            x(0.0) - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">confidence</text>"#,
        SIZE / 2.0,
        SIZE - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">accuracy</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );

    for b in data.stats.nonempty() {
        let (left, right) = (x(b.lower), x(b.upper));
        let w = right - left;
        let _ = writeln!(
            s,
            r##"<rect class="bar" x="{left:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="#3b6fb6" stroke="#1d3c66"/>"##,
            y(b.accuracy),
            y(0.0) - y(b.accuracy)
        );
        let (top, bottom) = (b.accuracy.max(b.confidence), b.accuracy.min(b.confidence));
        let _ = writeln!(
            s,
            r##"<rect class="gap" x="{left:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="#d9534f" fill-opacity="0.35" stroke="#d9534f"/>"##,
            y(top),
            y(bottom) - y(top)
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="2 2"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let _ = writeln!(
        s,
        r##"<line class="mean-confidence" x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="#2a9d4b" stroke-dasharray="6 4"/>"##,
        x(data.mean_confidence),
        y(0.0),
        y(1.0)
    );
    let _ = writeln!(
        s,
        r##"<line class="accuracy" x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="#e08a1e" stroke-dasharray="6 4"/>"##,
        x(data.accuracy),
        y(0.0),
        y(1.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}">avg confidence {:.3} / accuracy {:.3}</text>"#,
        x(0.03),
        y(0.95),
        data.mean_confidence,
        data.accuracy
    );
    s.push_str("</svg>\n");
    s
}
