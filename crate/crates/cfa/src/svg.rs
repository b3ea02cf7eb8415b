//! Plain SVG line and scatter charts; just enough to eyeball a run.

use std::fmt::Write;

use cfa_core::evaluate::{Metric, PcaPoint, Summary};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 44.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        let span = |v: &mut dyn Iterator<Item = f64>| {
            v.filter(|x| x.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
        };
        let (mut x0, mut x1) = span(&mut xs.clone());
        let (mut y0, mut y1) = span(&mut ys.clone());
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if !y0.is_finite() {
            (y0, y1) = (0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x1 = x0 + 1.0;
        }
        if y1 - y0 < 1e-12 {
            y1 = y0 + 1.0;
        }
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn open(out: &mut String, frame: &Frame, title: &str, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="16" text-anchor="middle" font-size="13">{title}</text>
<line x1="{LEFT}" y1="{yb}" x2="{xr}" y2="{yb}" stroke="black"/>
<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{yb}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{x_label}</text>
<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>
"#,
        (LEFT + W - RIGHT) / 2.0,
        (LEFT + W - RIGHT) / 2.0,
        H - 8.0,
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        yb = H - BOTTOM,
        xr = W - RIGHT,
    );
    for (v, anchor) in [(frame.x0, "start"), (frame.x1, "end")] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}">{}</text>"#,
            frame.px(v),
            H - BOTTOM + 14.0,
            short(v)
        );
    }
    for v in [frame.y0, frame.y1] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 4.0,
            frame.py(v) + 4.0,
            short(v)
        );
    }
}

fn short(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(out: &mut String, i: usize, label: &str) {
    let y = TOP + 14.0 + 16.0 * i as f64;
    let x = W - RIGHT + 12.0;
    let _ = writeln!(
        out,
        r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
        y - 9.0,
        COLORS[i % COLORS.len()],
        x + 14.0,
        y,
        escape(label)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(out: &mut String, frame: &Frame, pts: &[(f64, f64)], color: &str, dash: bool) {
    let coords: Vec<String> = pts
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| format!("{:.1},{:.1}", frame.px(*x), frame.py(*y)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{} points="{}"/>"#,
        if dash { r#" stroke-dasharray="4 3""# } else { "" },
        coords.join(" ")
    );
}

/// Mean metric against mean samples acquired, with a shaded 95% band.
pub fn curves(summary: &Summary, metric: Metric) -> String {
    let band = |p: &cfa_core::evaluate::CurvePoint| match metric {
        Metric::EpsAte => p.eps_ate,
        Metric::SqrtPehe => p.sqrt_pehe,
    };
    let all = summary.curves.values().flatten();
    let frame = Frame::fit(
        all.clone().map(|p| p.n_acquired),
        all.flat_map(|p| {
            let m = band(p);
            [m.mean - m.half_width, m.mean + m.half_width]
        }),
    );
    let mut out = String::new();
    open(&mut out, &frame, metric.as_str(), "samples acquired", metric.as_str());
    for (i, ((strategy, estimator), pts)) in summary.curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let upper: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.1},{:.1}", frame.px(p.n_acquired), frame.py(band(p).mean + band(p).half_width)))
            .collect();
        let lower: Vec<String> = pts
            .iter()
            .rev()
            .map(|p| format!("{:.1},{:.1}", frame.px(p.n_acquired), frame.py(band(p).mean - band(p).half_width)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polygon fill="{color}" fill-opacity="0.15" stroke="none" points="{} {}"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<(f64, f64)> = pts.iter().map(|p| (p.n_acquired, band(p).mean)).collect();
        polyline(&mut out, &frame, &line, color, false);
        legend(&mut out, i, &format!("{strategy} / {estimator}"));
    }
    out.push_str("</svg>\n");
    out
}

/// Mean treated (solid) and control (dashed) units acquired.
pub fn arm_counts(summary: &Summary) -> String {
    let all = summary.curves.values().flatten();
    let frame = Frame::fit(
        all.clone().map(|p| p.n_acquired),
        all.flat_map(|p| [p.n_treated, p.n_control]),
    );
    let mut out = String::new();
    open(&mut out, &frame, "treated (solid) and control (dashed)", "samples acquired", "count");
    for (i, ((strategy, estimator), pts)) in summary.curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let t: Vec<(f64, f64)> = pts.iter().map(|p| (p.n_acquired, p.n_treated)).collect();
        let c: Vec<(f64, f64)> = pts.iter().map(|p| (p.n_acquired, p.n_control)).collect();
        polyline(&mut out, &frame, &t, color, false);
        polyline(&mut out, &frame, &c, color, true);
        legend(&mut out, i, &format!("{strategy} / {estimator}"));
    }
    out.push_str("</svg>\n");
    out
}

/// Principal-component scatter; `highlight` marks points drawn larger
/// (for instance the units acquired so far).
pub fn pca_scatter(points: &[PcaPoint], highlight: &dyn Fn(&PcaPoint) -> bool, title: &str) -> String {
    let frame = Frame::fit(points.iter().map(|p| p.pc1), points.iter().map(|p| p.pc2));
    let mut out = String::new();
    open(&mut out, &frame, &escape(title), "pc1", "pc2");
    for p in points {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.1}" cy="{:.1}" r="{}" fill="{}" fill-opacity="{}"/>"#,
            frame.px(p.pc1),
            frame.py(p.pc2),
            if highlight(p) { 3.5 } else { 2.0 },
            if p.treated { COLORS[1] } else { COLORS[0] },
            if highlight(p) { 0.9 } else { 0.3 }
        );
    }
    legend(&mut out, 0, "control");
    legend(&mut out, 1, "treated");
    out.push_str("</svg>\n");
    out
}
