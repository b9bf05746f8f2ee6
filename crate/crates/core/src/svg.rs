//! Minimal SVG line charts. Every chart can also dump the exact data it
//! plots as CSV, so a figure can be checked without rendering it.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;
const TICKS: usize = 6;

pub const PALETTE: [&str; 8] = [
    "#c0392b", "#27ae60", "#2c3e50", "#8e44ad", "#d68910", "#1f77b4", "#7f8c8d", "#16a085",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
    pub dashed: bool,
}

/// Shaded region between `lower` and `upper`, both over the same `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub name: String,
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub color: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub lines: Vec<Line>,
    pub bands: Vec<Band>,
    /// Horizontal reference line, e.g. zero excess.
    pub y_rule: Option<f64>,
}

impl Chart {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Chart {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            ..Chart::default()
        }
    }

    pub fn line(mut self, name: impl Into<String>, points: Vec<(f64, f64)>, color: &str) -> Self {
        self.lines.push(Line {
            name: name.into(),
            points,
            color: color.into(),
            dashed: false,
        });
        self
    }

    pub fn dashed(mut self, name: impl Into<String>, points: Vec<(f64, f64)>, color: &str) -> Self {
        self.lines.push(Line {
            name: name.into(),
            points,
            color: color.into(),
            dashed: true,
        });
        self
    }

    pub fn band(mut self, name: impl Into<String>, x: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>, color: &str) -> Self {
        self.bands.push(Band {
            name: name.into(),
            x,
            lower,
            upper,
            color: color.into(),
        });
        self
    }

    pub fn rule(mut self, y: f64) -> Self {
        self.y_rule = Some(y);
        self
    }

    fn extent(&self) -> ((f64, f64), (f64, f64)) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for l in &self.lines {
            for &(x, y) in &l.points {
                xs.push(x);
                ys.push(y);
            }
        }
        for b in &self.bands {
            xs.extend(&b.x);
            ys.extend(&b.lower);
            ys.extend(&b.upper);
        }
        ys.extend(self.y_rule);
        let range = |v: &[f64]| {
            let finite = v.iter().copied().filter(|x| x.is_finite());
            let lo = finite.clone().fold(f64::INFINITY, f64::min);
            let hi = finite.fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if lo == hi {
                (lo - 1.0, hi + 1.0)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = range(&xs);
        let (y0, y1) = range(&ys);
        let pad = (y1 - y0) * 0.05;
        ((x0, x1), (y0 - pad, y1 + pad))
    }

    pub fn render(&self) -> String {
        let ((x0, x1), (y0, y1)) = self.extent();
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<title>{}</title>"#, escape(&self.title));
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            MARGIN_L + pw / 2.0,
            escape(&self.title)
        );

        // axes and ticks
        let _ = writeln!(
            s,
            r##"<g stroke="#333" fill="none"><path d="M{:.2} {:.2}V{:.2}H{:.2}"/></g>"##,
            MARGIN_L,
            MARGIN_T,
            MARGIN_T + ph,
            MARGIN_L + pw
        );
        for i in 0..=TICKS {
            let t = i as f64 / TICKS as f64;
            let xv = x0 + t * (x1 - x0);
            let yv = y0 + t * (y1 - y0);
            let _ = writeln!(
                s,
                r##"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                sx(xv),
                MARGIN_T + ph + 18.0,
                tick_label(xv)
            );
            let _ = writeln!(
                s,
                r##"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                MARGIN_L - 6.0,
                sy(yv) + 4.0,
                tick_label(yv)
            );
            let _ = writeln!(
                s,
                r##"<path d="M{:.2} {:.2}H{:.2}" stroke="#ddd"/>"##,
                MARGIN_L,
                sy(yv),
                MARGIN_L + pw
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_L + pw / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            MARGIN_T + ph / 2.0,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );

        for b in &self.bands {
            let mut d = String::new();
            for (i, (&x, &y)) in b.x.iter().zip(&b.upper).enumerate() {
                let _ = write!(d, "{}{:.2} {:.2}", if i == 0 { "M" } else { "L" }, sx(x), sy(y));
            }
            for (&x, &y) in b.x.iter().zip(&b.lower).rev() {
                let _ = write!(d, "L{:.2} {:.2}", sx(x), sy(y));
            }
            d.push('Z');
            let _ = writeln!(
                s,
                r#"<path d="{d}" fill="{}" fill-opacity="0.2" stroke="none"><title>{}</title></path>"#,
                b.color,
                escape(&b.name)
            );
        }
        if let Some(r) = self.y_rule {
            let _ = writeln!(
                s,
                r##"<path d="M{:.2} {:.2}H{:.2}" stroke="#555" stroke-dasharray="2 3"/>"##,
                MARGIN_L,
                sy(r),
                MARGIN_L + pw
            );
        }
        for l in &self.lines {
            let pts: Vec<String> = l
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let dash = if l.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}><title>{}</title></polyline>"#,
                pts.join(" "),
                l.color,
                escape(&l.name)
            );
        }

        // legend
        let lx = WIDTH - MARGIN_R + 12.0;
        let entries = self
            .lines
            .iter()
            .map(|l| (&l.name, &l.color))
            .chain(self.bands.iter().map(|b| (&b.name, &b.color)));
        for (i, (name, color)) in entries.enumerate() {
            let y = MARGIN_T + 8.0 + 18.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<path d="M{lx:.2} {y:.2}h18" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 24.0,
                y + 4.0,
                escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// Long-format CSV of every plotted value: `series,x,y`; bands emit
    /// `<name> lower` and `<name> upper` rows.
    pub fn write_data<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["series", "x", "y"])?;
        for l in &self.lines {
            for &(x, y) in &l.points {
                w.write_record([l.name.as_str(), &x.to_string(), &y.to_string()])?;
            }
        }
        for b in &self.bands {
            for (suffix, ys) in [("lower", &b.lower), ("upper", &b.upper)] {
                let name = format!("{} {suffix}", b.name);
                for (&x, &y) in b.x.iter().zip(ys) {
                    w.write_record([name.as_str(), &x.to_string(), &y.to_string()])?;
                }
            }
        }
        w.flush().map_err(Error::Write)?;
        Ok(())
    }
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a >= 1e5 {
        format!("{v:.2e}")
    } else if a >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Chart {
        Chart::new("a < b & c", "week", "deaths")
            .line("observed", vec![(1.0, 3.0), (2.0, 5.0), (3.0, 4.0)], PALETTE[0])
            .band("band", vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 3.0], vec![4.0, 6.0, 5.0], PALETTE[1])
            .rule(0.0)
    }

    #[test]
    fn escapes_text() {
        let svg = sample().render();
        assert!(svg.contains("a &lt; b &amp; c"));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn data_rows() {
        let mut buf = Vec::new();
        sample().write_data(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 + 6);
        assert!(text.contains("band upper,3,5"));
    }

    #[test]
    fn flat_or_empty_chart_renders() {
        let svg = Chart::new("t", "x", "y").line("c", vec![(1.0, 2.0), (2.0, 2.0)], "#000").render();
        assert!(!svg.contains("NaN"));
        let svg = Chart::new("t", "x", "y").render();
        assert!(!svg.contains("NaN"));
    }
}
