//! Minimal SVG charts. Every function is a pure map from data to markup.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD_L: f64 = 64.0;
const PAD_R: f64 = 150.0;
const PAD_T: f64 = 36.0;
const PAD_B: f64 = 48.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        PAD_L + (x - self.x.0) / (self.x.1 - self.x.0) * (W - PAD_L - PAD_R)
    }
    fn py(&self, y: f64) -> f64 {
        H - PAD_B - (y - self.y.0) / (self.y.1 - self.y.0) * (H - PAD_T - PAD_B)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str, x_ticks: bool) {
    let (x0, x1, y0, y1) = (PAD_L, W - PAD_R, H - PAD_B, PAD_T);
    let _ = write!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = write!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let py = f.py(yv);
        let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 6.0, py + 4.0, tick(yv));
        if x_ticks {
            let xv = f.x.0 + t * (f.x.1 - f.x.0);
            let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, f.px(xv), y0 + 16.0, tick(xv));
        }
    }
    let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 10.0, escape(xlabel));
    let _ = write!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = PAD_T + 10.0 + 18.0 * i as f64;
        let x = W - PAD_R + 12.0;
        let _ = write!(out, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/>"#, y - 10.0, PALETTE[i % PALETTE.len()]);
        let _ = write!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 18.0, escape(name));
    }
}

pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let f = Frame {
        x: extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.0))),
        y: extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))),
    };
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, xlabel, ylabel, true);
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = write!(out, r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#, PALETTE[i % PALETTE.len()], pts.join(" "));
    }
    legend(&mut out, &series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Five-number summary `(min, q1, median, q3, max)` with linear interpolation.
pub fn five_numbers(values: &[f64]) -> Option<[f64; 5]> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| specguard_core::attack::quantile(&v, p);
    Some([v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1]])
}

/// One box per group with the individual values overlaid as dots.
pub fn box_plot(title: &str, ylabel: &str, groups: &[(String, Vec<f64>)]) -> String {
    let f = Frame { x: (0.0, groups.len().max(1) as f64), y: extent(groups.iter().flat_map(|g| g.1.iter().copied())) };
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, "", ylabel, false);
    let slot = (W - PAD_L - PAD_R) / groups.len().max(1) as f64;
    for (i, (name, values)) in groups.iter().enumerate() {
        let cx = f.px(i as f64 + 0.5);
        let color = PALETTE[i % PALETTE.len()];
        let _ = write!(out, r#"<text x="{cx}" y="{}" text-anchor="middle">{}</text>"#, H - PAD_B + 16.0, escape(name));
        if let Some([lo, q1, med, q3, hi]) = five_numbers(values) {
            let half = 0.25 * slot;
            let _ = write!(out, r#"<line x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="{color}"/>"#, f.py(lo), f.py(hi));
            let _ = write!(
                out,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}" fill-opacity="0.25" stroke="{color}"/>"#,
                cx - half,
                f.py(q3),
                2.0 * half,
                (f.py(q1) - f.py(q3)).max(0.5)
            );
            let _ = write!(out, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#, cx - half, f.py(med), cx + half, f.py(med));
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let _ = write!(out, r#"<path d="M{} {}l5 5l-5 5l-5 -5z" fill="black"/>"#, cx, f.py(mean) - 5.0);
        }
        for (j, &v) in values.iter().enumerate() {
            let jitter = ((j * 37 % 11) as f64 / 10.0 - 0.5) * 0.2 * slot;
            let _ = write!(out, r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#555" fill-opacity="0.6"/>"##, cx + jitter, f.py(v));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Row 0 of `grid` is drawn at the bottom, matching `y` increasing upwards.
pub fn heatmap(title: &str, rect: [f64; 4], grid: &[Vec<f64>]) -> String {
    let f = Frame { x: (rect[0], rect[1]), y: (rect[2], rect[3]) };
    let (lo, hi) = extent(grid.iter().flatten().copied());
    let mut out = String::new();
    header(&mut out, title);
    let ny = grid.len().max(1);
    let nx = grid.first().map_or(1, |r| r.len().max(1));
    let cw = (W - PAD_L - PAD_R) / nx as f64;
    let ch = (H - PAD_T - PAD_B) / ny as f64;
    for (i, row) in grid.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let t = if v.is_finite() { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
            let _ = write!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                PAD_L + j as f64 * cw,
                H - PAD_B - (i + 1) as f64 * ch,
                cw + 0.3,
                ch + 0.3,
                ramp(t)
            );
        }
    }
    axes(&mut out, &f, "x₁", "x₂", true);
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let y = H - PAD_B - t * (H - PAD_T - PAD_B);
        let x = W - PAD_R + 16.0;
        let _ = write!(out, r#"<rect x="{x}" y="{}" width="14" height="{}" fill="{}"/>"#, y - (H - PAD_T - PAD_B) / 4.0, (H - PAD_T - PAD_B) / 4.0, ramp(t));
        let _ = write!(out, r#"<text x="{}" y="{}">{}</text>"#, x + 20.0, y + 4.0, tick(lo + t * (hi - lo)));
    }
    out.push_str("</svg>\n");
    out
}

/// Dark blue through yellow.
fn ramp(t: f64) -> String {
    let stops = [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let s = t * (stops.len() - 1) as f64;
    let i = (s.floor() as usize).min(stops.len() - 2);
    let u = s - i as f64;
    let mix = |a: f64, b: f64| (a + u * (b - a)).round() as u8;
    let (a, b) = (stops[i], stops[i + 1]);
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}
