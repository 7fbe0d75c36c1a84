use std::fmt::Write as _;

use crate::encoder::Tower;
use crate::scalar::Scalar;

use super::Projection2D;

/// `x,y,label` rows with a header.
pub fn projection_csv<T: Scalar>(p: &Projection2D<T>) -> String {
    let mut s = String::from("x,y,label\n");
    for (i, label) in p.labels.iter().enumerate() {
        let name = match label {
            Tower::Query => "query",
            Tower::Doc => "doc",
        };
        let _ = writeln!(s, "{},{},{}", p.points[(i, 0)], p.points[(i, 1)], name);
    }
    s
}

/// Standalone SVG scatter: queries as circles, documents as squares.
pub fn projection_svg<T: Scalar>(p: &Projection2D<T>, title: &str) -> String {
    const SIZE: f64 = 600.0;
    const MARGIN: f64 = 40.0;
    let n = p.points.rows();
    let coord = |i: usize, c: usize| p.points[(i, c)].to_f64_lossy();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        xmin = xmin.min(coord(i, 0));
        xmax = xmax.max(coord(i, 0));
        ymin = ymin.min(coord(i, 1));
        ymax = ymax.max(coord(i, 1));
    }
    let span = (xmax - xmin).max(ymax - ymin).max(1e-12);
    let inner = SIZE - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - xmin) / span * inner;
    let sy = |y: f64| SIZE - MARGIN - (y - ymin) / span * inner;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    let (lo, hi) = (MARGIN, SIZE - MARGIN);
    let _ = writeln!(s, r#"<line x1="{lo}" y1="{hi}" x2="{hi}" y2="{hi}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{lo}" y1="{lo}" x2="{lo}" y2="{hi}" stroke="black"/>"#);
    for (i, label) in p.labels.iter().enumerate() {
        let (x, y) = (sx(coord(i, 0)), sy(coord(i, 1)));
        match label {
            Tower::Query => {
                let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="#1f77b4" fill-opacity="0.7"/>"##);
            }
            Tower::Doc => {
                let _ = writeln!(
                    s,
                    r##"<rect x="{:.2}" y="{:.2}" width="7" height="7" fill="#d62728" fill-opacity="0.7"/>"##,
                    x - 3.5,
                    y - 3.5
                );
            }
        }
    }
    let ly = SIZE - 12.0;
    let _ = writeln!(s, r##"<circle cx="{}" cy="{}" r="3.5" fill="#1f77b4"/>"##, MARGIN + 4.0, ly - 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="12">query</text>"#, MARGIN + 12.0);
    let _ = writeln!(s, r##"<rect x="{}" y="{}" width="7" height="7" fill="#d62728"/>"##, MARGIN + 70.0, ly - 8.0);
    let _ = writeln!(s, r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="12">document</text>"#, MARGIN + 82.0);
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
