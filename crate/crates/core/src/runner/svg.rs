//! Minimal SVG line charts.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 450.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone)]
pub struct Line {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub y_scale: Scale,
    pub lines: Vec<Line>,
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str, y_scale: Scale) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            y_scale,
            lines: Vec::new(),
        }
    }

    pub fn line(mut self, label: &str, points: Vec<(f64, f64)>) -> Self {
        self.lines.push(Line { label: label.into(), points });
        self
    }

    fn y_value(&self, y: f64) -> Option<f64> {
        match self.y_scale {
            Scale::Linear => y.is_finite().then_some(y),
            Scale::Log => (y > 0.0 && y.is_finite()).then(|| y.log10()),
        }
    }

    pub fn render(&self) -> String {
        let pts = || self.lines.iter().flat_map(|l| l.points.iter());
        let xs: Vec<f64> = pts().map(|p| p.0).filter(|x| x.is_finite()).collect();
        let ys: Vec<f64> = pts().filter_map(|p| self.y_value(p.1)).collect();
        let (x0, x1) = padded_range(&xs, false);
        let (y0, y1) = match self.y_scale {
            Scale::Linear => padded_range(&ys, true),
            Scale::Log => {
                let (lo, hi) = padded_range(&ys, false);
                (lo.floor(), hi.ceil().max(lo.floor() + 1.0))
            }
        };
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(&self.title)).unwrap();
        writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        )
        .unwrap();

        for t in linear_ticks(x0, x1) {
            let x = sx(t);
            writeln!(s, r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#ddd"/>"##, TOP, TOP + ph).unwrap();
            writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, tick_label(t)).unwrap();
        }
        let y_ticks = match self.y_scale {
            Scale::Linear => linear_ticks(y0, y1),
            Scale::Log => (y0 as i32..=y1 as i32).map(f64::from).collect(),
        };
        for t in y_ticks {
            let y = sy(t);
            let label = match self.y_scale {
                Scale::Linear => tick_label(t),
                Scale::Log => format!("1e{}", t as i32),
            };
            writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + pw).unwrap();
            writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, LEFT - 6.0, y + 4.0).unwrap();
        }
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 15.0, escape(&self.x_label)).unwrap();
        writeln!(
            s,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        )
        .unwrap();

        for (n, line) in self.lines.iter().enumerate() {
            let color = PALETTE[n % PALETTE.len()];
            // Points missing on a log axis split the curve.
            let mut segment: Vec<String> = Vec::new();
            let flush = |seg: &mut Vec<String>, s: &mut String| {
                if seg.len() > 1 {
                    writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, seg.join(" ")).unwrap();
                }
                seg.clear();
            };
            for &(x, y) in &line.points {
                match self.y_value(y) {
                    Some(v) if x.is_finite() => segment.push(format!("{:.2},{:.2}", sx(x), sy(v))),
                    _ => flush(&mut segment, &mut s),
                }
            }
            flush(&mut segment, &mut s);
            let ly = TOP + 16.0 + 16.0 * n as f64;
            let lx = LEFT + pw - 150.0;
            writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 24.0).unwrap();
            writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, escape(&line.label)).unwrap();
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn write(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, self.render())
    }
}

fn padded_range(values: &[f64], pad: bool) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        let d = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        return (lo - d, hi + d);
    }
    if pad {
        let d = 0.05 * (hi - lo);
        (lo - d, hi + d)
    } else {
        (lo, hi)
    }
}

/// Roughly five ticks at 1, 2 or 5 times a power of ten.
fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_numbers() {
        assert_eq!(linear_ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        let t = linear_ticks(0.013, 0.051);
        assert!(t.len() >= 3 && t.iter().all(|v| (0.013..=0.051).contains(v)));
    }

    #[test]
    fn renders_polylines_and_labels() {
        let svg = Chart::new("t & psi", "t", "|psi|", Scale::Linear)
            .line("full", vec![(0.0, 1.0), (1.0, 2.0), (2.0, 1.5)])
            .line("linear", vec![(0.0, 1.0), (2.0, 0.5)])
            .render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("t &amp; psi"));
    }

    #[test]
    fn log_axis_skips_non_positive_points() {
        let svg = Chart::new("dF", "t", "dF", Scale::Log)
            .line("full", vec![(0.0, 0.0), (1.0, 1e-9), (2.0, 1e-8), (3.0, 0.0), (4.0, 1e-7), (5.0, 2e-7)])
            .render();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("1e-9") || svg.contains("1e-7"));
    }

    #[test]
    fn degenerate_data_does_not_panic() {
        let svg = Chart::new("flat", "x", "y", Scale::Linear).line("c", vec![(1.0, 3.0)]).render();
        assert!(svg.contains("</svg>"));
        let svg = Chart::new("empty", "x", "y", Scale::Log).render();
        assert!(svg.contains("</svg>"));
    }
}
