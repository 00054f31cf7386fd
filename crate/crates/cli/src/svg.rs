//! Static SVG figures: line, step and heat-map plots with axes.

use std::fmt::Write;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub fn color(k: usize) -> &'static str {
    PALETTE[k % PALETTE.len()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Style {
    Line,
    Step,
    Dotted,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
    pub color: &'static str,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const W: f64 = 560.0;
const H: f64 = 260.0;
const ML: f64 = 70.0;
const MR: f64 = 150.0;
const MT: f64 = 30.0;
const MB: f64 = 45.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

struct Frame {
    x0: f64,
    y0: f64,
    xlo: f64,
    xhi: f64,
    ylo: f64,
    yhi: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.x0 + ML + (x - self.xlo) / (self.xhi - self.xlo) * (W - ML - MR)
    }
    fn py(&self, y: f64) -> f64 {
        self.y0 + H - MB - (y - self.ylo) / (self.yhi - self.ylo) * (H - MT - MB)
    }
}

fn bounds(points: impl Iterator<Item = (f64, f64)>) -> (f64, f64, f64, f64) {
    let (mut xlo, mut xhi, mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        xlo = xlo.min(x);
        xhi = xhi.max(x);
        ylo = ylo.min(y);
        yhi = yhi.max(y);
    }
    if !xlo.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if xhi <= xlo {
        xhi = xlo + 1.0;
    }
    let pad = ((yhi - ylo) * 0.05).max(1e-9);
    (xlo, xhi, ylo - pad, yhi + pad)
}

fn axes(out: &mut String, f: &Frame, title: &str, xl: &str, yl: &str) {
    let (l, r, t, b) = (f.x0 + ML, f.x0 + W - MR, f.y0 + MT, f.y0 + H - MB);
    let _ = writeln!(out, r#"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="rgb(51,51,51)"/>"#, r - l, b - t);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#, (l + r) / 2.0, f.y0 + 18.0, esc(title));
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#, (l + r) / 2.0, b + 35.0, esc(xl));
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
        f.x0 + 16.0,
        (t + b) / 2.0,
        f.x0 + 16.0,
        (t + b) / 2.0,
        esc(yl)
    );
    for x in nice_ticks(f.xlo, f.xhi) {
        let p = f.px(x);
        let _ = writeln!(out, r#"<line x1="{p:.2}" y1="{b:.2}" x2="{p:.2}" y2="{:.2}" stroke="rgb(51,51,51)"/>"#, b + 4.0);
        let _ = writeln!(out, r#"<text x="{p:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#, b + 16.0, tick_label(x));
    }
    for y in nice_ticks(f.ylo, f.yhi) {
        let p = f.py(y);
        let _ = writeln!(out, r#"<line x1="{:.2}" y1="{p:.2}" x2="{l:.2}" y2="{p:.2}" stroke="rgb(51,51,51)"/>"#, l - 4.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{}</text>"#, l - 6.0, p + 3.0, tick_label(y));
    }
}

fn path(f: &Frame, s: &Series) -> String {
    let mut d = String::new();
    let mut pen_up = true;
    let mut prev_y = None;
    for &(x, y) in &s.points {
        if !(x.is_finite() && y.is_finite()) {
            pen_up = true;
            continue;
        }
        if pen_up {
            let _ = write!(d, "M{:.2},{:.2}", f.px(x), f.py(y));
            pen_up = false;
        } else {
            if s.style == Style::Step {
                if let Some(py) = prev_y {
                    let _ = write!(d, " L{:.2},{:.2}", f.px(x), f.py(py));
                }
            }
            let _ = write!(d, " L{:.2},{:.2}", f.px(x), f.py(y));
        }
        prev_y = Some(y);
    }
    let dash = if s.style == Style::Dotted { r#" stroke-dasharray="3,3""# } else { "" };
    format!(r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.4"{dash}/>"#, s.color)
}

fn legend(out: &mut String, f: &Frame, series: &[Series]) {
    let x = f.x0 + W - MR + 10.0;
    for (k, s) in series.iter().enumerate() {
        let y = f.y0 + MT + 8.0 + 16.0 * k as f64;
        let dash = if s.style == Style::Dotted { r#" stroke-dasharray="3,3""# } else { "" };
        let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="1.4"{dash}/>"#, x + 20.0, s.color);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#, x + 25.0, y + 3.0, esc(&s.label));
    }
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// Panels stacked vertically.
pub fn panels(list: &[Panel]) -> String {
    let mut body = String::new();
    for (k, p) in list.iter().enumerate() {
        let (xlo, xhi, ylo, yhi) = bounds(p.series.iter().flat_map(|s| s.points.iter().copied()));
        let f = Frame { x0: 0.0, y0: k as f64 * H, xlo, xhi, ylo, yhi };
        axes(&mut body, &f, &p.title, &p.x_label, &p.y_label);
        for s in &p.series {
            body.push_str(&path(&f, s));
            body.push('\n');
        }
        legend(&mut body, &f, &p.series);
    }
    document(W, H * list.len() as f64, &body)
}

fn ramp(v: f64) -> String {
    const STOPS: [[f64; 3]; 3] = [[68.0, 1.0, 84.0], [33.0, 145.0, 140.0], [253.0, 231.0, 37.0]];
    let v = v.clamp(0.0, 1.0) * 2.0;
    let k = (v.floor() as usize).min(1);
    let s = v - k as f64;
    let c: Vec<u8> = (0..3).map(|j| (STOPS[k][j] + s * (STOPS[k + 1][j] - STOPS[k][j])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Heat map of `z[ix][iy]` with iso-lines at `levels` (marching squares).
pub fn heatmap(title: &str, x_label: &str, y_label: &str, xs: &[f64], ys: &[f64], z: &[Vec<f64>], levels: &[f64]) -> String {
    let mut body = String::new();
    let f = Frame { x0: 0.0, y0: 0.0, xlo: xs[0], xhi: *xs.last().unwrap(), ylo: ys[0], yhi: *ys.last().unwrap() };
    let finite: Vec<f64> = z.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let zmax = finite.iter().copied().fold(0.0, f64::max).max(1e-300);
    for (ix, col) in z.iter().enumerate() {
        for (iy, &v) in col.iter().enumerate() {
            let half = |a: &[f64], k: usize, up: bool| {
                let other = if up { a.get(k + 1) } else { k.checked_sub(1).map(|j| &a[j]) };
                other.map_or(a[k], |&o| (a[k] + o) / 2.0)
            };
            let (x1, x2) = (f.px(half(xs, ix, false).max(f.xlo)), f.px(half(xs, ix, true).min(f.xhi)));
            let (y1, y2) = (f.py(half(ys, iy, true).min(f.yhi)), f.py(half(ys, iy, false).max(f.ylo)));
            let fill = if v.is_finite() { ramp(v / zmax) } else { "#cccccc".into() };
            let _ = writeln!(body, r#"<rect x="{x1:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="{fill}" shape-rendering="crispEdges"/>"#, x2 - x1, y2 - y1);
        }
    }
    for &level in levels {
        let mut d = String::new();
        for ix in 0..xs.len() - 1 {
            for iy in 0..ys.len() - 1 {
                let c = [(ix, iy), (ix + 1, iy), (ix + 1, iy + 1), (ix, iy + 1)];
                let vals: Vec<f64> = c.iter().map(|&(a, b)| z[a][b]).collect();
                if vals.iter().any(|v| !v.is_finite()) {
                    continue;
                }
                let mut pts = Vec::new();
                for e in 0..4 {
                    let (a, b) = (e, (e + 1) % 4);
                    let (va, vb) = (vals[a], vals[b]);
                    if (va < level) != (vb < level) {
                        let s = (level - va) / (vb - va);
                        let (pa, pb) = (c[a], c[b]);
                        let x = xs[pa.0] + s * (xs[pb.0] - xs[pa.0]);
                        let y = ys[pa.1] + s * (ys[pb.1] - ys[pa.1]);
                        pts.push((f.px(x), f.py(y)));
                    }
                }
                for pair in pts.chunks(2).filter(|p| p.len() == 2) {
                    let _ = write!(d, "M{:.2},{:.2} L{:.2},{:.2} ", pair[0].0, pair[0].1, pair[1].0, pair[1].1);
                }
            }
        }
        let _ = writeln!(body, r#"<path d="{}" fill="none" stroke="white" stroke-width="0.8"/>"#, d.trim_end());
    }
    axes(&mut body, &f, title, x_label, y_label);
    let x = W - MR + 20.0;
    for k in 0..=10 {
        let v = k as f64 / 10.0;
        let y = MT + (1.0 - v) * (H - MT - MB) * 0.9;
        let _ = writeln!(body, r#"<rect x="{x:.2}" y="{y:.2}" width="14" height="{:.2}" fill="{}"/>"#, (H - MT - MB) * 0.09 + 0.5, ramp(v));
    }
    let _ = writeln!(body, r#"<text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#, x + 18.0, MT + 8.0, tick_label(zmax));
    let _ = writeln!(body, r#"<text x="{:.2}" y="{:.2}" font-size="10">0</text>"#, x + 18.0, MT + (H - MT - MB) * 0.99);
    document(W, H, &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_range() {
        let t = nice_ticks(0.0, 0.1);
        assert_eq!(t.first().copied(), Some(0.0));
        assert!(t.len() >= 3 && t.len() <= 7);
        assert_eq!(tick_label(0.020000000000000004), "0.02");
    }

    #[test]
    fn step_path_has_corners() {
        let f = Frame { x0: 0.0, y0: 0.0, xlo: 0.0, xhi: 1.0, ylo: 0.0, yhi: 1.0 };
        let s = Series { label: "a".into(), points: vec![(0.0, 0.0), (1.0, 1.0)], style: Style::Step, color: color(0) };
        assert_eq!(path(&f, &s).matches('L').count(), 2);
    }

    #[test]
    fn documents_are_well_formed() {
        let p = Panel { title: "x<1".into(), x_label: "t".into(), y_label: "x".into(), series: vec![] };
        let doc = panels(&[p]);
        assert!(doc.starts_with("<svg") && doc.ends_with("</svg>\n"));
        assert!(doc.contains("x&lt;1"));
        let hm = heatmap("e", "x", "nu", &[0.0, 1.0], &[0.0, 1.0], &[vec![0.0, 1.0], vec![1.0, 2.0]], &[0.5]);
        assert!(hm.contains("<path d=\"M"));
    }
}
