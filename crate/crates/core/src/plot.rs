//! Minimal self-contained SVG line charts.

use std::fmt::Write;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 48.0;

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

fn panel(svg: &mut String, left: f64, title: &str, xs: &[f64], ys: &[f64]) {
    let (x0, x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (mut y0, mut y1) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if !(y1 > y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let xspan = if x1 > x0 { x1 - x0 } else { 1.0 };
    let w = PANEL_W - 2.0 * MARGIN;
    let h = PANEL_H - 2.0 * MARGIN;
    let px = |x: f64| left + MARGIN + (x - x0) / xspan * w;
    let py = |y: f64| MARGIN + (1.0 - (y - y0) / (y1 - y0)) * h;
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#,
        left + PANEL_W / 2.0
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{}" y="{MARGIN}" width="{w}" height="{h}" fill="none" stroke="#888"/>"##,
        left + MARGIN
    );
    for (v, y) in [(y0, py(y0)), (y1, py(y1))] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{}</text>"#,
            left + MARGIN - 4.0,
            y + 3.0,
            fmt_tick(v)
        );
    }
    for &x in xs {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            px(x),
            MARGIN + h + 14.0,
            fmt_tick(x)
        );
    }
    let points: Vec<String> = xs.iter().zip(ys).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        points.join(" ")
    );
    for (&x, &y) in xs.iter().zip(ys) {
        let _ = writeln!(svg, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##, px(x), py(y));
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">modes</text>"#,
        left + PANEL_W / 2.0,
        PANEL_H - 8.0
    );
}

/// Side-by-side panels, one per `(title, ys)` series, sharing `xs`.
pub fn line_panels_svg(xs: &[f64], series: &[(&str, Vec<f64>)]) -> String {
    let width = PANEL_W * series.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, (title, ys)) in series.iter().enumerate() {
        panel(&mut svg, i as f64 * PANEL_W, title, xs, ys);
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_polyline_per_series() {
        let svg = line_panels_svg(&[6.0, 12.0, 24.0], &[("MR", vec![0.3, 0.2, 0.2]), ("minFDE", vec![2.0, 1.5, 1.2])]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 6);
    }

    #[test]
    fn flat_series_does_not_divide_by_zero() {
        let svg = line_panels_svg(&[6.0], &[("MR", vec![0.0])]);
        assert!(!svg.contains("NaN"));
    }
}
