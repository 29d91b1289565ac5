//! Minimal SVG line charts and floor-plan overlays.

use std::fmt::Write as _;

use ftmlearn_core::geom::Point;
use ftmlearn_core::scenario::SiteConfig;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Plot log10(y); non-positive values are dropped.
    pub log_y: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    w: f64,
    h: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * self.w
    }
    fn py(&self, y: f64) -> f64 {
        TOP + self.h - (y - self.y.0) / (self.y.1 - self.y.0) * self.h
    }
    fn path(&self, pts: impl Iterator<Item = (f64, f64)>) -> String {
        let mut d = String::new();
        for (i, (x, y)) in pts.enumerate() {
            let _ = write!(
                d,
                "{}{:.2},{:.2}",
                if i == 0 { "M" } else { " L" },
                self.px(x),
                self.py(y)
            );
        }
        d
    }
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + (width - LEFT - RIGHT) / 2.0,
        escape(title)
    );
}

fn legend(out: &mut String, x: f64, names: &[(&str, &str, bool)]) {
    for (i, (name, color, dashed)) in names.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let dash = if *dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"{dash}/>"#,
            x,
            x + 22.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            x + 28.0,
            y + 4.0,
            escape(name)
        );
    }
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, y_fmt: impl Fn(f64) -> String) {
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{:.1}" height="{:.1}" fill="none" stroke="#333"/>"##,
        f.w, f.h
    );
    for t in ticks(f.x.0, f.x.1) {
        let x = f.px(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{:.1}" x2="{x:.2}" y2="{:.1}" stroke="#ddd"/><text x="{x:.2}" y="{:.1}" text-anchor="middle">{}</text>"##,
            TOP,
            TOP + f.h,
            TOP + f.h + 16.0,
            fmt_tick(t)
        );
    }
    for t in ticks(f.y.0, f.y.1) {
        let y = f.py(t);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="#ddd"/><text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + f.w,
            LEFT - 6.0,
            y + 4.0,
            y_fmt(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + f.w / 2.0,
        TOP + f.h + 40.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        TOP + f.h / 2.0,
        TOP + f.h / 2.0,
        escape(y_label)
    );
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Polyline chart, one colour per series.
pub fn line_chart(chart: &Chart, series: &[Series]) -> String {
    let tf = |y: f64| if chart.log_y { y.log10() } else { y };
    let keep = |y: f64| y.is_finite() && (!chart.log_y || y > 0.0);
    let all = || {
        series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|p| p.0.is_finite() && keep(p.1))
    };
    let frame = Frame {
        x: bounds(all().map(|p| p.0)),
        y: bounds(all().map(|p| tf(p.1))),
        w: WIDTH - LEFT - RIGHT,
        h: HEIGHT - TOP - BOTTOM,
    };
    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT, &chart.title);
    let y_fmt = |t: f64| {
        if chart.log_y {
            format!("1e{}", fmt_tick(t))
        } else {
            fmt_tick(t)
        }
    };
    axes(&mut out, &frame, &chart.x_label, &chart.y_label, y_fmt);
    let mut names = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let d = frame.path(
            s.points
                .iter()
                .filter(|p| p.0.is_finite() && keep(p.1))
                .map(|&(x, y)| (x, tf(y))),
        );
        if !d.is_empty() {
            let _ = writeln!(
                out,
                r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.6"/>"#
            );
        }
        names.push((s.name.as_str(), color, false));
    }
    legend(&mut out, WIDTH - RIGHT + 15.0, &names);
    out.push_str("</svg>\n");
    out
}

/// Floor plan with walls, APs, the true path (dashed) and estimated tracks.
pub fn trajectory_map(title: &str, site: &SiteConfig, truth: &[Point], tracks: &[Series]) -> String {
    let plot_w = WIDTH - LEFT - RIGHT;
    let scale = (plot_w / site.width).min((HEIGHT - TOP - BOTTOM) / site.height);
    let frame = Frame {
        x: (0.0, site.width),
        y: (0.0, site.height),
        w: site.width * scale,
        h: site.height * scale,
    };
    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT, title);
    axes(&mut out, &frame, "x (m)", "y (m)", fmt_tick);
    for wall in &site.walls {
        let d = frame.path(wall.iter().map(|p| (p.x, p.y)));
        let _ = writeln!(out, r##"<path d="{d}" fill="none" stroke="#555" stroke-width="2.5"/>"##);
    }
    for ap in &site.aps {
        let (x, y) = (frame.px(ap.position.x), frame.py(ap.position.y));
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="#000"/><text x="{:.2}" y="{:.2}" font-size="10">AP{}</text>"##,
            x - 4.0,
            y - 4.0,
            x + 6.0,
            y - 6.0,
            ap.id
        );
    }
    let truth_d = frame.path(truth.iter().map(|p| (p.x, p.y)));
    let _ = writeln!(
        out,
        r##"<path d="{truth_d}" fill="none" stroke="#000" stroke-width="1.4" stroke-dasharray="5,3"/>"##
    );
    let mut names = vec![("truth", "#000", true)];
    for (i, s) in tracks.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let d = frame.path(s.points.iter().copied());
        let _ = writeln!(
            out,
            r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.2" opacity="0.85"/>"#
        );
        names.push((s.name.as_str(), color, false));
    }
    legend(&mut out, WIDTH - RIGHT + 15.0, &names);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_inside() {
        let t = ticks(0.0, 10.0);
        assert_eq!(t, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert!(ticks(0.13, 0.87).iter().all(|&v| (0.13..=0.87).contains(&v)));
    }

    #[test]
    fn chart_is_well_formed_and_deterministic() {
        let s = vec![Series::new("a<b", vec![(0.0, 1.0), (1.0, 10.0), (2.0, 100.0)])];
        let chart = Chart {
            title: "cost".into(),
            log_y: true,
            ..Chart::default()
        };
        let svg = line_chart(&chart, &s);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg, line_chart(&chart, &s));
    }

    #[test]
    fn map_draws_every_ap() {
        let site = SiteConfig::default_office();
        let svg = trajectory_map("t", &site, &[Point::new(1.0, 1.0), Point::new(2.0, 2.0)], &[]);
        assert_eq!(svg.matches("<rect x=").count(), site.aps.len() + 1);
    }
}
