//! Minimal native SVG line plots.
//!
//! Polylines carry their points in data units, formatted exactly as in the
//! CSV, inside a group whose transform maps data to pixels. A plot can
//! therefore be traced back to its source rows by string comparison.

use crate::csv_log::num;
use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const TICKS: usize = 5;

const PALETTE: [&str; 8] = [
    "#c0007a", "#1f4fbf", "#d62728", "#2ca02c", "#ff7f0e", "#6a3d9a", "#17becf", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Scenario geometry drawn behind the data (obstacle, goal region).
#[derive(Debug, Clone, PartialEq)]
pub struct Circle {
    pub label: String,
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub fill: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub circles: Vec<Circle>,
    /// Same scale on both axes, for planar trajectories.
    pub equal_aspect: bool,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Plot {
    fn frame(&self) -> Frame {
        let mut f = Frame {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        let mut add = |x: f64, y: f64| {
            if x.is_finite() && y.is_finite() {
                f.x0 = f.x0.min(x);
                f.x1 = f.x1.max(x);
                f.y0 = f.y0.min(y);
                f.y1 = f.y1.max(y);
            }
        };
        for s in &self.series {
            for &(x, y) in &s.points {
                add(x, y);
            }
        }
        for c in &self.circles {
            add(c.cx - c.r, c.cy - c.r);
            add(c.cx + c.r, c.cy + c.r);
        }
        if !f.x0.is_finite() {
            f = Frame { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        }
        for (lo, hi) in [(&mut f.x0, &mut f.x1), (&mut f.y0, &mut f.y1)] {
            let span = *hi - *lo;
            let pad = if span > 0.0 { 0.05 * span } else { 0.5 * lo.abs().max(1.0) };
            *lo -= pad;
            *hi += pad;
        }
        if self.equal_aspect {
            let (pw, ph) = plot_area();
            let scale = ((f.x1 - f.x0) / pw).max((f.y1 - f.y0) / ph);
            let (cx, cy) = (0.5 * (f.x0 + f.x1), 0.5 * (f.y0 + f.y1));
            f.x0 = cx - 0.5 * scale * pw;
            f.x1 = cx + 0.5 * scale * pw;
            f.y0 = cy - 0.5 * scale * ph;
            f.y1 = cy + 0.5 * scale * ph;
        }
        f
    }

    pub fn render(&self) -> String {
        let f = self.frame();
        let (pw, ph) = plot_area();
        let sx = pw / (f.x1 - f.x0);
        let sy = ph / (f.y1 - f.y0);
        let px = |x: f64| MARGIN_LEFT + (x - f.x0) * sx;
        let py = |y: f64| MARGIN_TOP + ph - (y - f.y0) * sy;

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            MARGIN_LEFT + pw / 2.0,
            escape(&self.title)
        );

        for i in 0..=TICKS {
            let frac = i as f64 / TICKS as f64;
            let xv = f.x0 + frac * (f.x1 - f.x0);
            let yv = f.y0 + frac * (f.y1 - f.y0);
            let (gx, gy) = (px(xv), py(yv));
            let _ = writeln!(
                out,
                r##"<line x1="{gx:.2}" y1="{MARGIN_TOP}" x2="{gx:.2}" y2="{:.2}" stroke="#e5e5e5"/>"##,
                MARGIN_TOP + ph
            );
            let _ = writeln!(
                out,
                r##"<line x1="{MARGIN_LEFT}" y1="{gy:.2}" x2="{:.2}" y2="{gy:.2}" stroke="#e5e5e5"/>"##,
                MARGIN_LEFT + pw
            );
            let _ = writeln!(
                out,
                r#"<text x="{gx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                MARGIN_TOP + ph + 18.0,
                tick(xv)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                MARGIN_LEFT - 6.0,
                gy + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + pw / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            MARGIN_TOP + ph / 2.0,
            MARGIN_TOP + ph / 2.0,
            escape(&self.y_label)
        );

        // data units from here on
        let _ = writeln!(
            out,
            r#"<g transform="matrix({sx} 0 0 {} {} {})">"#,
            -sy,
            MARGIN_LEFT - f.x0 * sx,
            MARGIN_TOP + ph + f.y0 * sy
        );
        for c in &self.circles {
            let _ = writeln!(
                out,
                r#"<circle class="annotation" cx="{}" cy="{}" r="{}" fill="{}" fill-opacity="0.35" stroke="black" vector-effect="non-scaling-stroke"/>"#,
                c.cx, c.cy, c.r, c.fill
            );
        }
        for (i, s) in self.series.iter().enumerate() {
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{},{}", num(x), num(y)))
                .collect();
            if pts.is_empty() {
                continue;
            }
            let _ = writeln!(
                out,
                r#"<polyline data-label="{}" fill="none" stroke="{}" stroke-width="1.8" vector-effect="non-scaling-stroke" points="{}"/>"#,
                escape(&s.label),
                PALETTE[i % PALETTE.len()],
                pts.join(" ")
            );
        }
        out.push_str("</g>\n");

        let lx = MARGIN_LEFT + pw + 12.0;
        let mut ly = MARGIN_TOP + 10.0;
        for (i, s) in self.series.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2.5"/>"#,
                lx + 22.0,
                PALETTE[i % PALETTE.len()]
            );
            let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 28.0, ly + 4.0, escape(&s.label));
            ly += 18.0;
        }
        for c in &self.circles {
            let _ = writeln!(
                out,
                r#"<rect x="{lx}" y="{}" width="22" height="10" fill="{}" fill-opacity="0.35" stroke="black"/>"#,
                ly - 5.0,
                c.fill
            );
            let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 28.0, ly + 4.0, escape(&c.label));
            ly += 18.0;
        }
        out.push_str("</svg>\n");
        out
    }
}

fn plot_area() -> (f64, f64) {
    (WIDTH - MARGIN_LEFT - MARGIN_RIGHT, HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Every `x,y` pair of every polyline in `svg`, as written.
pub fn polyline_points(svg: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for line in svg.lines().filter(|l| l.starts_with("<polyline")) {
        let Some(start) = line.find("points=\"") else { continue };
        let rest = &line[start + 8..];
        let end = rest.find('"').unwrap_or(rest.len());
        for pair in rest[..end].split_whitespace() {
            if let Some((x, y)) = pair.split_once(',') {
                out.push((x.to_string(), y.to_string()));
            }
        }
    }
    out
}
