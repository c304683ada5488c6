//! Minimal SVG charts for study outputs.

use std::fmt::Write;

use crate::hydro::{OpenWaterCurve, LABEL_COLUMNS};
use crate::studies::{AugmentationTable, Histogram, StudyReport};

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

#[derive(Debug, Clone, Copy)]
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

fn extent(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) =
        values.into_iter().filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }
}

struct Canvas {
    body: String,
}

impl Canvas {
    fn new(title: &str, frame: &Frame, x_label: &str, y_label: &str) -> Self {
        let mut body = String::new();
        let _ = write!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = write!(body, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = write!(body, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
        let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
        let _ = write!(body, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#);
        for k in 0..=4 {
            let fx = frame.x.0 + (frame.x.1 - frame.x.0) * k as f64 / 4.0;
            let fy = frame.y.0 + (frame.y.1 - frame.y.0) * k as f64 / 4.0;
            let _ = write!(body, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, frame.px(fx), y0 + 14.0, tick(fx));
            let _ = write!(body, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 4.0, frame.py(fy) + 4.0, tick(fy));
        }
        let _ = write!(body, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, escape(x_label));
        let _ = write!(
            body,
            r#"<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(y_label)
        );
        Self { body }
    }

    fn polyline(&mut self, frame: &Frame, pts: &[(f64, f64)], color: &str, dashed: bool) {
        let coords: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.1},{:.1}", frame.px(*x), frame.py(*y)))
            .collect();
        let dash = if dashed { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = write!(self.body, r#"<polyline points="{}" fill="none" stroke="{color}"{dash}/>"#, coords.join(" "));
    }

    fn dots(&mut self, frame: &Frame, pts: &[(f64, f64)], color: &str) {
        for (x, y) in pts.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let _ =
                write!(self.body, r#"<circle cx="{:.1}" cy="{:.1}" r="2" fill="{color}" fill-opacity="0.6"/>"#, frame.px(*x), frame.py(*y));
        }
    }

    fn legend(&mut self, entries: &[(&str, &str)]) {
        for (k, (name, color)) in entries.iter().enumerate() {
            let y = MARGIN + 14.0 * k as f64;
            let _ = write!(self.body, r#"<rect x="{}" y="{}" width="10" height="3" fill="{color}"/>"#, W - MARGIN - 90.0, y - 4.0);
            let _ = write!(self.body, r#"<text x="{}" y="{y}">{}</text>"#, W - MARGIN - 76.0, escape(name));
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// kT, 10 kQ and efficiency against advance ratio.
pub fn open_water_svg(curve: &OpenWaterCurve) -> String {
    let j = curve.grid.advance_ratios();
    let kt: Vec<(f64, f64)> = j.iter().zip(&curve.kt).map(|(a, b)| (*a, *b)).collect();
    let kq: Vec<(f64, f64)> = j.iter().zip(&curve.kq).map(|(a, b)| (*a, 10.0 * b)).collect();
    let eta: Vec<(f64, f64)> =
        j.iter().zip(curve.eta()).filter_map(|(a, e)| e.filter(|e| (0.0..=1.0).contains(e)).map(|e| (*a, e))).collect();
    let (lo, hi) = extent(kt.iter().chain(&kq).chain(&eta).map(|p| p.1));
    let frame = Frame { x: extent(j.iter().copied()), y: (lo.min(0.0), hi.max(1.0)) };
    let mut c = Canvas::new("Open-water diagram", &frame, "J", "kT, 10kQ, eta");
    c.polyline(&frame, &kt, COLORS[0], false);
    c.polyline(&frame, &kq, COLORS[1], false);
    c.polyline(&frame, &eta, COLORS[2], true);
    c.legend(&[("kT", COLORS[0]), ("10kQ", COLORS[1]), ("eta", COLORS[2])]);
    c.finish()
}

/// Achieved against targeted value of one label, with the identity line.
pub fn parity_svg(report: &StudyReport, label: usize) -> String {
    let name = LABEL_COLUMNS[label];
    let pts: Vec<(f64, f64)> = report.parity.iter().map(|p| (p.target.to_array()[label], p.achieved.to_array()[label])).collect();
    let range = extent(pts.iter().flat_map(|(a, b)| [*a, *b]));
    let frame = Frame { x: range, y: range };
    let title = match report.mre[label] {
        Some(m) => format!("{name}: MRE {m:.4}"),
        None => name.to_string(),
    };
    let mut c = Canvas::new(&title, &frame, &format!("target {name}"), &format!("achieved {name}"));
    c.polyline(&frame, &[(range.0, range.0), (range.1, range.1)], "#888888", true);
    c.dots(&frame, &pts, COLORS[0]);
    c.finish()
}

pub fn histogram_svg(h: &Histogram) -> String {
    let frame = Frame { x: extent(h.edges.iter().copied()), y: (0.0, h.counts.iter().copied().max().unwrap_or(0).max(1) as f64) };
    let mut c = Canvas::new(&h.name, &frame, &h.name, "count");
    for (k, n) in h.counts.iter().enumerate() {
        let (x0, x1) = (frame.px(h.edges[k]), frame.px(h.edges[k + 1]));
        let (top, base) = (frame.py(*n as f64), frame.py(0.0));
        let _ = write!(
            c.body,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}" stroke="white"/>"#,
            x0,
            top,
            (x1 - x0).max(0.0),
            base - top,
            COLORS[0]
        );
    }
    c.finish()
}

/// MRE of one label against restricted-set size, one line per training set.
pub fn mre_vs_d_svg(table: &AugmentationTable, label: usize) -> String {
    let name = LABEL_COLUMNS[label];
    let d: Vec<f64> = table.d_list.iter().map(|&v| v as f64).collect();
    let mut series = vec![("restricted".to_string(), d.iter().zip(&table.base_mre).map(|(x, m)| (*x, m[label])).collect::<Vec<_>>())];
    for (j, size) in table.aug_sizes.iter().enumerate() {
        let pts = d.iter().zip(&table.aug_mre).map(|(x, row)| (*x, row[j][label])).collect();
        series.push((format!("aug {size}"), pts));
    }
    let (lo, hi) = extent(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let frame = Frame { x: extent(d.iter().copied()), y: (lo.min(0.0), hi) };
    let mut c = Canvas::new(&format!("MRE of {name}"), &frame, "d", "MRE");
    let mut legend = Vec::new();
    for (k, (label, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        c.polyline(&frame, pts, color, k > 0);
        c.dots(&frame, pts, color);
        legend.push((label.as_str(), color));
    }
    c.legend(&legend);
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydro::{LabelVector, OperatingGrid, PointStatus};
    use crate::studies::ParityPoint;

    fn report() -> StudyReport {
        let l = |a| LabelVector::from_array([a, a, a]);
        StudyReport {
            study: "accuracy".into(),
            requested: 2,
            valid: 2,
            mre: [Some(0.1), None, Some(0.2)],
            parity: vec![ParityPoint { target: l(0.5), achieved: l(0.55) }, ParityPoint { target: l(0.7), achieved: l(0.6) }],
            designs: vec![],
            histograms: vec![],
            seed: 0,
            steps: 10,
            target: None,
        }
    }

    #[test]
    fn parity_plot_has_one_dot_per_point() {
        let s = parity_svg(&report(), 0);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<circle").count(), 2);
        assert!(s.contains("MRE 0.1000"));
        assert!(!parity_svg(&report(), 1).contains("MRE"));
    }

    #[test]
    fn histogram_draws_every_bin() {
        let h = Histogram::of("P", &[0.5, 0.6, 0.6, 1.4], 4);
        let s = histogram_svg(&h);
        assert_eq!(s.matches("<rect").count(), 1 + 4);
        let empty = histogram_svg(&Histogram::of("x", &[], 3));
        assert!(empty.contains("</svg>"));
    }

    #[test]
    fn open_water_plot_skips_undefined_efficiency() {
        let grid = OperatingGrid::new(vec![0.2, 0.6, 1.0]).unwrap();
        let curve = OpenWaterCurve {
            grid,
            kt: vec![0.3, 0.2, -0.01],
            kq: vec![0.04, 0.03, -0.001],
            station_flags: vec![PointStatus::default(); 3],
        };
        let s = open_water_svg(&curve);
        assert_eq!(s.matches("<polyline").count(), 3);
        assert!(!s.contains("NaN"));
    }

    #[test]
    fn mre_plot_has_a_series_per_training_set() {
        let t = AugmentationTable {
            d_list: vec![50, 100],
            aug_sizes: vec![2000],
            base_mre: vec![[0.1; 3], [0.05; 3]],
            aug_mre: vec![vec![[0.08; 3]], vec![[0.06; 3]]],
            improvement: vec![vec![[-20.0; 3]], vec![[20.0; 3]]],
            seed: 1,
        };
        let s = mre_vs_d_svg(&t, 2);
        assert_eq!(s.matches("<polyline").count(), 2);
        assert!(s.contains("aug 2000") && s.contains("MRE of kt_star"));
    }

    #[test]
    fn labels_are_escaped() {
        assert_eq!(escape("a<b & c"), "a&lt;b &amp; c");
        assert_eq!(tick(0.25), "0.25");
        assert_eq!(tick(0.0), "0");
    }
}
