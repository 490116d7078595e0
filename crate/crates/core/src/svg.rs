//! Static SVG plots: eigenvalue bars and a section quiver on an orthographic
//! view of the sphere.

use std::fmt::Write;

use crate::geometry::{UnitTangent, Vec3};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 40.0;

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

/// One bar per eigenvalue, in index order; bars of a cluster share a colour.
pub fn eigenvalue_bars(values: &[f64], cluster_bounds: &[(usize, usize)], title: &str) -> String {
    let mut out = header(WIDTH, HEIGHT);
    let top = values.iter().copied().fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let slot = (WIDTH - 2.0 * MARGIN) / values.len().max(1) as f64;
    let palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];
    let colour = |k: usize| {
        cluster_bounds
            .iter()
            .position(|&(a, b)| (a..b).contains(&k))
            .map_or("#7f7f7f", |c| palette[c % palette.len()])
    };
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    let base = HEIGHT - MARGIN;
    let _ = writeln!(
        out,
        "<line x1=\"{MARGIN}\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"black\"/>",
        WIDTH - MARGIN
    );
    for (k, &v) in values.iter().enumerate() {
        let h = (v.max(0.0) / top) * (HEIGHT - 2.0 * MARGIN - 10.0);
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"><title>{k}: {v:.6e}</title></rect>",
            MARGIN + k as f64 * slot + 0.1 * slot,
            base - h,
            0.8 * slot,
            h,
            colour(k)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{MARGIN}\" y=\"{}\" font-size=\"11\">max {top:.4e}</text>",
        MARGIN - 8.0
    );
    out.push_str("</svg>\n");
    out
}

/// Arrows for the vectors of a section on the hemisphere facing `view`;
/// the far hemisphere is drawn faded.
pub fn section_quiver(vectors: &[UnitTangent], view: Vec3, arrow_length: f64) -> String {
    let size = HEIGHT;
    let radius = 0.5 * size - MARGIN;
    let centre = 0.5 * size;
    let mut out = header(size, size);
    let _ = writeln!(
        out,
        "<circle cx=\"{centre}\" cy=\"{centre}\" r=\"{radius}\" fill=\"none\" stroke=\"#999\"/>"
    );
    let z = view.normalize();
    let helper = if z.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let ex = (helper - z * z.dot(&helper)).normalize();
    let ey = z.cross(&ex);
    let project = |p: &Vec3| (centre + radius * p.dot(&ex), centre - radius * p.dot(&ey));
    for t in vectors {
        let x = t.base().coords();
        let tip = x + t.vector() * arrow_length;
        let (x0, y0) = project(x);
        let (x1, y1) = project(&tip);
        let front = x.dot(&z) >= 0.0;
        let (stroke, opacity) = if front { ("#1f3a93", 1.0) } else { ("#aab", 0.35) };
        let _ = writeln!(
            out,
            "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y1:.2}\" stroke=\"{stroke}\" stroke-opacity=\"{opacity}\" stroke-width=\"1.2\"/>"
        );
        let _ = writeln!(
            out,
            "<circle cx=\"{x1:.2}\" cy=\"{y1:.2}\" r=\"1.5\" fill=\"{stroke}\" fill-opacity=\"{opacity}\"/>"
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AmbientPoint;

    #[test]
    fn bars_have_one_rect_per_value() {
        let svg = eigenvalue_bars(&[0.0, 1.0, 1.0, 2.5], &[(0, 1), (1, 3), (3, 4)], "a < b");
        assert_eq!(svg.matches("<rect x=").count(), 4);
        assert!(svg.contains("a &lt; b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn quiver_draws_every_vector() {
        let vs: Vec<UnitTangent> = [Vec3::z(), -Vec3::z(), Vec3::x()]
            .iter()
            .map(|&p| AmbientPoint::normalize(p).tangent_at_angle(0.3))
            .collect();
        let svg = section_quiver(&vs, Vec3::new(0.2, 0.1, 1.0), 0.1);
        assert_eq!(svg.matches("<line").count(), 3);
        assert_eq!(svg.matches("stroke-opacity=\"0.35\"").count(), 1);
    }
}
