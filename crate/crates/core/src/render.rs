//! SVG scatter plots of point clouds: three orthographic panels (xy, xz, yz).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geom::PointCloud;

/// What drives the point colour.
#[derive(Clone, Debug)]
pub enum Coloring {
    /// Height along z.
    Depth,
    /// One value in `[0, 1]` per point, e.g. a keep mask.
    Values(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct RenderOptions {
    pub panel_size: f64,
    pub point_radius: f64,
    pub title: Option<String>,
    pub coloring: Coloring,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            panel_size: 240.0,
            point_radius: 1.6,
            title: None,
            coloring: Coloring::Depth,
        }
    }
}

const PANELS: [(&str, usize, usize); 3] = [("xy", 0, 1), ("xz", 0, 2), ("yz", 1, 2)];
const MARGIN: f64 = 12.0;
const HEADER: f64 = 22.0;

/// Blue → red ramp.
fn ramp(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let r = (40.0 + 215.0 * t).round() as u8;
    let g = (90.0 + 60.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8;
    let b = (235.0 - 200.0 * t).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders a cloud to a standalone SVG 1.1 document.
pub fn render_svg(cloud: &PointCloud, opts: &RenderOptions) -> Result<String> {
    if !(opts.panel_size > 0.0 && opts.point_radius > 0.0) {
        return Err(Error::invalid("panel size and point radius must be positive"));
    }
    let pts = cloud.points();
    let shade: Vec<f64> = match &opts.coloring {
        Coloring::Values(v) => {
            if v.len() != pts.len() {
                return Err(Error::invalid(format!(
                    "{} colour values for {} points",
                    v.len(),
                    pts.len()
                )));
            }
            v.clone()
        }
        Coloring::Depth => {
            let (lo, hi) = pts
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[2]), b.max(p[2])));
            let span = if hi > lo { hi - lo } else { 1.0 };
            pts.iter().map(|p| (p[2] - lo) / span).collect()
        }
    };
    let extent = pts
        .iter()
        .flat_map(|p| p.iter().map(|v| v.abs()))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let size = opts.panel_size;
    let width = 3.0 * size + 4.0 * MARGIN;
    let height = size + 2.0 * MARGIN + HEADER;
    let half = size / 2.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(t) = &opts.title {
        let _ = writeln!(
            s,
            r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="13">{}</text>"#,
            HEADER - 6.0,
            escape(t)
        );
    }
    for (k, (name, a, b)) in PANELS.iter().enumerate() {
        let x0 = MARGIN + k as f64 * (size + MARGIN);
        let y0 = HEADER + MARGIN;
        let _ = writeln!(s, r#"<g id="panel-{name}">"#);
        let _ = writeln!(
            s,
            r##"<rect x="{x0}" y="{y0}" width="{size}" height="{size}" fill="none" stroke="#bbbbbb"/>"##
        );
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="#666666">{name}</text>"##,
            x0 + 4.0,
            y0 + 13.0
        );
        let mut order: Vec<usize> = (0..pts.len()).collect();
        let depth = 3 - a - b;
        order.sort_by(|&i, &j| pts[i][depth].total_cmp(&pts[j][depth]));
        for i in order {
            let p = pts[i];
            let cx = x0 + half + 0.95 * half * p[*a] / extent;
            let cy = y0 + half - 0.95 * half * p[*b] / extent;
            let _ = writeln!(
                s,
                r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{}" fill="{}"/>"#,
                opts.point_radius,
                ramp(shade[i])
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> PointCloud {
        PointCloud::new(vec![[0.0, 0.0, -1.0], [0.5, -0.5, 0.0], [1.0, 1.0, 1.0]]).unwrap()
    }

    #[test]
    fn three_panels_one_circle_per_point() {
        let svg = render_svg(&cloud(), &RenderOptions::default()).unwrap();
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 9);
        for p in ["panel-xy", "panel-xz", "panel-yz"] {
            assert!(svg.contains(p));
        }
        assert!(svg.contains(&ramp(0.0)) && svg.contains(&ramp(1.0)));
    }

    #[test]
    fn value_coloring_and_errors() {
        let opts = RenderOptions {
            coloring: Coloring::Values(vec![1.0, 1.0, 0.0]),
            title: Some("a<b".into()),
            ..RenderOptions::default()
        };
        let svg = render_svg(&cloud(), &opts).unwrap();
        assert!(svg.contains("a&lt;b"));
        let bad = RenderOptions {
            coloring: Coloring::Values(vec![1.0]),
            ..RenderOptions::default()
        };
        assert!(render_svg(&cloud(), &bad).is_err());
    }
}
