//! Minimal static SVG charts.

use std::fmt::Write;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    Circle,
    Triangle,
}

#[derive(Debug, Clone)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub group: usize,
    pub marker: Marker,
    pub label: Option<String>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

const W: f64 = 480.0;
const H: f64 = 400.0;
const PAD: f64 = 48.0;

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let bounds = |it: &mut dyn Iterator<Item = f64>| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in it.filter(|v| v.is_finite()) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let m = 0.05 * (hi - lo);
                (lo - m, hi + m)
            }
        };
        let (x0, x1) = bounds(&mut xs.clone());
        let (y0, y1) = bounds(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let _ = write!(
            out,
            r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"##
        );
        let _ = write!(
            out,
            r##"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        let _ = write!(
            out,
            r##"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"##,
            W / 2.0,
            escape(title)
        );
        let _ = write!(
            out,
            r##"<text x="{}" y="{}" text-anchor="middle">{}</text>"##,
            W / 2.0,
            H - 10.0,
            escape(xlabel)
        );
        let _ = write!(
            out,
            r##"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"##,
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        );
        for (v, anchor) in [(self.x0, "start"), (self.x1, "end")] {
            let _ = write!(
                out,
                r##"<text x="{:.1}" y="{}" text-anchor="{anchor}">{v:.2}</text>"##,
                self.px(v),
                H - PAD + 14.0
            );
        }
        for v in [self.y0, self.y1] {
            let _ = write!(
                out,
                r##"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
                PAD - 4.0,
                self.py(v) + 4.0
            );
        }
    }
}

pub fn scatter(title: &str, points: &[Point]) -> String {
    let f = Frame::new(points.iter().map(|p| p.x), points.iter().map(|p| p.y));
    let mut out = String::new();
    f.axes(&mut out, title, "dimension 1", "dimension 2");
    for p in points {
        let (x, y) = (f.px(p.x), f.py(p.y));
        let c = color(p.group);
        match p.marker {
            Marker::Circle => {
                let _ = write!(out, r##"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{c}" fill-opacity="0.7"/>"##);
            }
            Marker::Triangle => {
                let _ = write!(
                    out,
                    r##"<polygon points="{:.1},{:.1} {:.1},{:.1} {:.1},{:.1}" fill="{c}" stroke="#000" stroke-width="0.6"/>"##,
                    x,
                    y - 6.0,
                    x - 5.0,
                    y + 4.0,
                    x + 5.0,
                    y + 4.0
                );
            }
        }
        if let Some(l) = &p.label {
            let _ = write!(out, r##"<text x="{:.1}" y="{:.1}" font-size="9">{}</text>"##, x + 6.0, y - 4.0, escape(l));
        }
    }
    out.push_str("</svg>");
    out
}

pub struct Series {
    pub points: Vec<(f64, f64)>,
    pub group: usize,
}

pub fn lines(title: &str, xlabel: &str, ylabel: &str, series: &[Series], y_range: Option<(f64, f64)>) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let mut f = Frame::new(xs.clone(), series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    if let Some((lo, hi)) = y_range {
        f.y0 = lo;
        f.y1 = hi;
    }
    let mut out = String::new();
    f.axes(&mut out, title, xlabel, ylabel);
    for s in series {
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y)))
            .collect();
        let _ = write!(
            out,
            r##"<polyline points="{}" fill="none" stroke="{}" stroke-opacity="0.6"/>"##,
            path.join(" "),
            color(s.group)
        );
    }
    out.push_str("</svg>");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed_enough() {
        let pts = vec![
            Point { x: 0.0, y: 0.0, group: 0, marker: Marker::Circle, label: None },
            Point { x: 1.0, y: 2.0, group: 1, marker: Marker::Triangle, label: Some("a<b".into()) },
        ];
        let s = scatter("t", &pts);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>"));
        assert_eq!(s.matches("<circle").count(), 1);
        assert!(s.contains("a&lt;b"));
        let l = lines("c", "x", "y", &[Series { points: vec![(0.0, 1.0), (1.0, 0.5)], group: 0 }], Some((0.0, 1.0)));
        assert_eq!(l.matches("<polyline").count(), 1);
    }
}
