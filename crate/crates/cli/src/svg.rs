//! Minimal SVG line charts: axes, ticks, one polyline per series, legend.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Tick positions on the x axis, labelled with their value.
    pub x_ticks: Vec<f64>,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').to_string()
    }
}

impl Chart {
    fn px(&self, x: f64) -> f64 {
        let (lo, hi) = self.x_range;
        let span = if hi > lo { hi - lo } else { 1.0 };
        LEFT + (x - lo) / span * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_range;
        let span = if hi > lo { hi - lo } else { 1.0 };
        HEIGHT - BOTTOM - (y - lo) / span * (HEIGHT - TOP - BOTTOM)
    }

    /// Renders the chart; `comment` lands in an XML comment after the root tag.
    pub fn render(&self, series: &[Series], comment: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(s, "<!-- {} -->", comment.replace("--", "- -"));
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            escape(&self.title)
        );
        let (x0, x1) = (self.px(self.x_range.0), self.px(self.x_range.1));
        let (y0, y1) = (self.py(self.y_range.0), self.py(self.y_range.1));
        let _ = writeln!(
            s,
            r#"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" fill="none" stroke="black"/>"#
        );
        for &t in &self.x_ticks {
            let x = self.px(t);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
                y0 + 5.0,
                y0 + 18.0,
                fmt_tick(t)
            );
        }
        for i in 0..=5 {
            let v = self.y_range.0 + (self.y_range.1 - self.y_range.0) * i as f64 / 5.0;
            let y = self.py(v);
            let _ = writeln!(
                s,
                r##"<line x1="{:.1}" y1="{y:.1}" x2="{x1:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.1}</text>"##,
                x0,
                x0 - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(&self.y_label)
        );
        if series.is_empty() {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">no data</text>"#,
                (x0 + x1) / 2.0,
                (y0 + y1) / 2.0
            );
        }
        for (i, ser) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let dash = if ser.dashed { r#" stroke-dasharray="6,4""# } else { "" };
            let pts: Vec<String> =
                ser.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", self.px(x), self.py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
                pts.join(" ")
            );
            if !ser.dashed {
                for &(x, y) in &ser.points {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#,
                        self.px(x),
                        self.py(y)
                    );
                }
            }
            let ly = TOP + 16.0 * i as f64;
            let lx = WIDTH - RIGHT + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
                lx + 20.0,
                lx + 26.0,
                ly + 4.0,
                escape(&ser.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart() -> Chart {
        Chart {
            title: "Accuracy <by> shots".into(),
            x_label: "shots".into(),
            y_label: "accuracy".into(),
            x_ticks: vec![2.0, 4.0, 16.0],
            x_range: (2.0, 16.0),
            y_range: (0.0, 1.0),
        }
    }

    #[test]
    fn corners_map_to_plot_area() {
        let c = chart();
        assert_eq!(c.px(2.0), LEFT);
        assert_eq!(c.px(16.0), WIDTH - RIGHT);
        assert_eq!(c.py(0.0), HEIGHT - BOTTOM);
        assert_eq!(c.py(1.0), TOP);
    }

    #[test]
    fn render_contents() {
        let series = vec![
            Series { name: "2way".into(), points: vec![(2.0, 0.5), (16.0, 0.9)], dashed: false },
            Series { name: "oracle".into(), points: vec![(2.0, 1.0), (16.0, 1.0)], dashed: true },
        ];
        let svg = chart().render(&series, "config_hash=ab seed=1");
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("<!-- config_hash=ab seed=1 -->"));
        assert!(svg.contains("Accuracy &lt;by&gt; shots"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("stroke-dasharray").count(), 2);
        for tick in [">2</text>", ">4</text>", ">16</text>"] {
            assert!(svg.contains(tick), "{tick}");
        }
        assert_eq!(svg, chart().render(&series, "config_hash=ab seed=1"));
    }

    #[test]
    fn empty_chart_says_so() {
        assert!(chart().render(&[], "x").contains("no data"));
    }

    #[test]
    fn tick_format() {
        assert_eq!(fmt_tick(16.0), "16");
        assert_eq!(fmt_tick(0.25), "0.25");
        assert_eq!(fmt_tick(0.5), "0.5");
    }
}
