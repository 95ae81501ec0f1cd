//! Self-contained SVG output: heatmaps and line charts.
//!
//! Both writers are pure functions of their input, so re-rendering the same
//! data gives byte-identical documents.

use std::fmt::Write as _;

/// Maps a value to an RGB color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ramp {
    /// Piecewise-linear blue, white, red over `[lo, hi]`; white at the midpoint.
    Diverging { lo: f64, hi: f64 },
    /// Linear white to dark blue over `[lo, hi]`; white at `lo`.
    Sequential { lo: f64, hi: f64 },
}

const BLUE: (f64, f64, f64) = (33.0, 102.0, 172.0);
const RED: (f64, f64, f64) = (178.0, 24.0, 43.0);
const WHITE: (f64, f64, f64) = (255.0, 255.0, 255.0);
const NAVY: (f64, f64, f64) = (8.0, 48.0, 107.0);

fn lerp(a: (f64, f64, f64), b: (f64, f64, f64), t: f64) -> (u8, u8, u8) {
    let c = |x: f64, y: f64| (x + (y - x) * t).round().clamp(0.0, 255.0) as u8;
    (c(a.0, b.0), c(a.1, b.1), c(a.2, b.2))
}

impl Ramp {
    pub fn color(&self, v: f64) -> (u8, u8, u8) {
        match *self {
            Ramp::Diverging { lo, hi } => {
                let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                if t < 0.5 {
                    lerp(BLUE, WHITE, t * 2.0)
                } else {
                    lerp(WHITE, RED, (t - 0.5) * 2.0)
                }
            }
            Ramp::Sequential { lo, hi } => lerp(WHITE, NAVY, ((v - lo) / (hi - lo)).clamp(0.0, 1.0)),
        }
    }

    pub fn hex(&self, v: f64) -> String {
        let (r, g, b) = self.color(v);
        format!("#{r:02x}{g:02x}{b:02x}")
    }
}

/// One `<rect>` per cell of a row-major `rows x cols` matrix; the document
/// is exactly `cols * cell_px` wide and `rows * cell_px` high.
pub fn heatmap_svg(values: &[f64], rows: usize, cols: usize, cell_px: usize, ramp: Ramp) -> String {
    assert_eq!(values.len(), rows * cols);
    let (w, h) = (cols * cell_px, rows * cell_px);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" shape-rendering="crispEdges">"#
    );
    for r in 0..rows {
        for c in 0..cols {
            let v = values[r * cols + c];
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{cell_px}" height="{cell_px}" fill="{}"><title>{r},{c}: {v}</title></rect>"#,
                c * cell_px,
                r * cell_px,
                ramp.hex(v)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// A named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn line_chart_svg(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (60.0, 170.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, sx(xv), top + ph + 16.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, sy(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let ly = top + 14.0 + i as f64 * 16.0;
        let lx = left + pw + 10.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 22.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diverging_midpoint_is_white() {
        let r = Ramp::Diverging { lo: -1.0, hi: 1.0 };
        assert_eq!(r.color(0.0), (255, 255, 255));
        assert_eq!(r.hex(-1.0), "#2166ac");
        assert_eq!(r.hex(1.0), "#b2182b");
        // out-of-range values clamp
        assert_eq!(r.color(5.0), r.color(1.0));
    }

    #[test]
    fn sequential_zero_is_background() {
        let r = Ramp::Sequential { lo: 0.0, hi: 1.0 };
        assert_eq!(r.hex(0.0), "#ffffff");
    }

    #[test]
    fn single_cell_heatmap() {
        let svg = heatmap_svg(&[0.0], 1, 1, 10, Ramp::Diverging { lo: -1.0, hi: 1.0 });
        assert_eq!(svg.matches("<rect").count(), 1);
        assert!(svg.contains(r##"fill="#ffffff""##));
        assert!(svg.contains(r#"width="10" height="10""#));
    }

    #[test]
    fn line_chart_is_deterministic() {
        let s = vec![Series { name: "a<b".into(), points: vec![(0.0, 1.0), (1.0, 2.0), (2.0, f64::NAN)] }];
        let a = line_chart_svg(&s, "t", "x", "y");
        assert_eq!(a, line_chart_svg(&s, "t", "x", "y"));
        assert!(a.contains("a&lt;b"));
        assert_eq!(a.matches("<polyline").count(), 1);
    }
}
