//! Deterministic SVG emission for the figure-shaped outputs.
//!
//! Charts are plain standalone SVG with fixed float formatting, so a run's
//! outputs are byte-identical across machines and reruns.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 46.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Line,
    Points,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
    pub dashed: bool,
    pub kind: SeriesKind,
    /// Optional per-point colors (iteration shading); overrides `color`.
    pub point_colors: Option<Vec<String>>,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>, color: &str) -> Self {
        Self {
            label: label.into(),
            points,
            color: color.to_string(),
            dashed: false,
            kind: SeriesKind::Line,
            point_colors: None,
        }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }

    pub fn scatter(label: impl Into<String>, points: Vec<(f64, f64)>, colors: Vec<String>) -> Self {
        Self {
            label: label.into(),
            points,
            color: "#333333".to_string(),
            dashed: false,
            kind: SeriesKind::Points,
            point_colors: Some(colors),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 10_000.0 {
        format!("{:.0}", v)
    } else if a >= 10.0 {
        format!("{:.1}", v)
    } else {
        format!("{:.3}", v)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range_of(series: &[Series], axis: usize) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for p in &s.points {
            let v = if axis == 0 { p.0 } else { p.1 };
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn render_panel(out: &mut String, panel: &Panel, origin: (f64, f64), size: (f64, f64)) {
    let (ox, oy) = origin;
    let (w, h) = size;
    let plot_w = w - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = h - MARGIN_TOP - MARGIN_BOTTOM;
    let (x_lo, x_hi) = range_of(&panel.series, 0);
    let (y_lo, y_hi) = range_of(&panel.series, 1);
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        (
            ox + MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w,
            oy + MARGIN_TOP + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h,
        )
    };
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="white" stroke="#888888" stroke-width="1"/>"##,
        fmt(ox + MARGIN_LEFT),
        fmt(oy + MARGIN_TOP),
        fmt(plot_w),
        fmt(plot_h)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="13" font-family="sans-serif" text-anchor="middle">{}</text>"#,
        fmt(ox + MARGIN_LEFT + plot_w / 2.0),
        fmt(oy + 18.0),
        xml_escape(&panel.title)
    );
    // Ticks.
    for k in 0..5 {
        let t = k as f64 / 4.0;
        let xv = x_lo + t * (x_hi - x_lo);
        let yv = y_lo + t * (y_hi - y_lo);
        let (px, _) = to_px(xv, y_lo);
        let (_, py) = to_px(x_lo, yv);
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#cccccc" stroke-width="0.5"/>"##,
            fmt(px),
            fmt(oy + MARGIN_TOP),
            fmt(px),
            fmt(oy + MARGIN_TOP + plot_h)
        );
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#cccccc" stroke-width="0.5"/>"##,
            fmt(ox + MARGIN_LEFT),
            fmt(py),
            fmt(ox + MARGIN_LEFT + plot_w),
            fmt(py)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="10" font-family="sans-serif" text-anchor="middle">{}</text>"#,
            fmt(px),
            fmt(oy + MARGIN_TOP + plot_h + 14.0),
            tick_label(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="10" font-family="sans-serif" text-anchor="end">{}</text>"#,
            fmt(ox + MARGIN_LEFT - 4.0),
            fmt(py + 3.0),
            tick_label(yv)
        );
    }
    // Axis labels.
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11" font-family="sans-serif" text-anchor="middle">{}</text>"#,
        fmt(ox + MARGIN_LEFT + plot_w / 2.0),
        fmt(oy + h - 10.0),
        xml_escape(&panel.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11" font-family="sans-serif" text-anchor="middle" transform="rotate(-90 {} {})">{}</text>"#,
        fmt(ox + 14.0),
        fmt(oy + MARGIN_TOP + plot_h / 2.0),
        fmt(ox + 14.0),
        fmt(oy + MARGIN_TOP + plot_h / 2.0),
        xml_escape(&panel.y_label)
    );
    // Series.
    for s in &panel.series {
        match s.kind {
            SeriesKind::Line => {
                if s.points.is_empty() {
                    continue;
                }
                let mut d = String::new();
                for (i, &(x, y)) in s.points.iter().enumerate() {
                    let (px, py) = to_px(x, y);
                    let _ = write!(d, "{}{},{} ", if i == 0 { "M" } else { "L" }, fmt(px), fmt(py));
                }
                let dash = if s.dashed { r#" stroke-dasharray="4 3""# } else { "" };
                let _ = writeln!(
                    out,
                    r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"{}/>"#,
                    d.trim_end(),
                    s.color,
                    dash
                );
            }
            SeriesKind::Points => {
                for (i, &(x, y)) in s.points.iter().enumerate() {
                    let (px, py) = to_px(x, y);
                    let color = s
                        .point_colors
                        .as_ref()
                        .and_then(|c| c.get(i))
                        .map_or(s.color.as_str(), |c| c.as_str());
                    let _ = writeln!(
                        out,
                        r#"<circle cx="{}" cy="{}" r="2.5" fill="{}"/>"#,
                        fmt(px),
                        fmt(py),
                        color
                    );
                }
            }
        }
    }
    // Legend (top-right corner of the plot area).
    let mut ly = oy + MARGIN_TOP + 12.0;
    for s in panel.series.iter().filter(|s| !s.label.is_empty()) {
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="10" height="3" fill="{}"/>"#,
            fmt(ox + MARGIN_LEFT + plot_w - 110.0),
            fmt(ly - 3.0),
            s.color
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="10" font-family="sans-serif">{}</text>"#,
            fmt(ox + MARGIN_LEFT + plot_w - 96.0),
            fmt(ly),
            xml_escape(&s.label)
        );
        ly += 13.0;
    }
}

/// Renders panels side by side into one standalone SVG document.
pub fn multi_panel_svg(panels: &[Panel], panel_width: f64, panel_height: f64) -> Result<String> {
    if panels.is_empty() {
        return Err(Error::Domain("plot: no panels".into()));
    }
    if panels.iter().any(|p| p.series.iter().all(|s| s.points.is_empty())) {
        return Err(Error::Domain("plot: empty series".into()));
    }
    let total_w = panel_width * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        fmt(total_w),
        fmt(panel_height),
        fmt(total_w),
        fmt(panel_height)
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, panel) in panels.iter().enumerate() {
        render_panel(&mut out, panel, (panel_width * i as f64, 0.0), (panel_width, panel_height));
    }
    let _ = writeln!(out, "</svg>");
    Ok(out)
}

/// Single-panel convenience wrapper.
pub fn line_chart_svg(panel: &Panel) -> Result<String> {
    multi_panel_svg(std::slice::from_ref(panel), 560.0, 360.0)
}

/// Light-to-dark blue shading by iteration index.
pub fn iteration_color(index: usize, total: usize) -> String {
    let t = if total <= 1 { 1.0 } else { index as f64 / (total - 1) as f64 };
    let lerp = |a: f64, b: f64| a + (b - a) * t;
    format!(
        "rgb({},{},{})",
        lerp(198.0, 8.0).round() as u8,
        lerp(219.0, 48.0).round() as u8,
        lerp(239.0, 107.0).round() as u8
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_emission_is_deterministic() {
        let panel = Panel {
            title: "loss".into(),
            x_label: "iteration".into(),
            y_label: "value".into(),
            series: vec![Series::line(
                "loss",
                vec![(0.0, -0.8), (1.0, -1.1), (2.0, -1.3)],
                "#1f77b4",
            )],
        };
        let a = line_chart_svg(&panel).unwrap();
        let b = line_chart_svg(&panel).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.contains("</svg>"));
        assert!(a.contains("iteration"));
    }

    #[test]
    fn empty_series_is_an_error() {
        let panel = Panel {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series::line("s", vec![], "#000000")],
        };
        assert!(line_chart_svg(&panel).is_err());
    }

    #[test]
    fn iteration_shading_darkens() {
        let first = iteration_color(0, 10);
        let last = iteration_color(9, 10);
        assert_eq!(first, "rgb(198,219,239)");
        assert_eq!(last, "rgb(8,48,107)");
        assert_ne!(iteration_color(4, 10), first);
    }

    #[test]
    fn scatter_points_render() {
        let colors: Vec<String> = (0..3).map(|i| iteration_color(i, 3)).collect();
        let panel = Panel {
            title: "trace".into(),
            x_label: "nu".into(),
            y_label: "loss".into(),
            series: vec![Series::scatter(
                "",
                vec![(3.0, -0.9), (3.5, -1.2), (3.8, -1.35)],
                colors,
            )],
        };
        let svg = line_chart_svg(&panel).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
    }
}
