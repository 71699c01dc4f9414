//! Minimal SVG line plots of traces.

use std::fmt::Write as _;

use crate::trace::Trace;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Render `trace` as a polyline with labelled axes.
pub fn svg_line_plot(trace: &Trace, title: &str) -> String {
    let (x0, x1) = range(trace.axis.iter().copied());
    let (y0, y1) = range(trace.amplitude.iter().copied());
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" fill="none" stroke="black"/>"#
    );
    for (x, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{}</text>"#,
            sx(x),
            bottom + 16.0,
            format_tick(x)
        );
    }
    for y in [y0, y1] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            left - 4.0,
            sy(y) + 4.0,
            format_tick(y)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        trace.kind.label()
    );
    let mut d = String::new();
    for (i, (x, y)) in trace.points().enumerate() {
        let _ = write!(
            d,
            "{}{:.2} {:.2}",
            if i == 0 { "M" } else { " L" },
            sx(x),
            sy(y)
        );
    }
    let _ = writeln!(
        svg,
        r##"<path d="{d}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##
    );
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::AxisKind;

    #[test]
    fn renders_a_path() {
        let t = Trace::new(AxisKind::DelayNs, vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.25]).unwrap();
        let svg = svg_line_plot(&t, "decay <T2>");
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("decay &lt;T2&gt;"));
        assert_eq!(svg.matches(" L").count(), 2 + 2);
        assert_eq!(svg, svg_line_plot(&t, "decay <T2>"));
    }

    #[test]
    fn flat_and_empty_traces_do_not_divide_by_zero() {
        let flat = Trace::new(AxisKind::TimeNs, vec![1.0, 2.0], vec![3.0, 3.0]).unwrap();
        assert!(!svg_line_plot(&flat, "").contains("NaN"));
        let empty = Trace::new(AxisKind::TimeNs, vec![], vec![]).unwrap();
        assert!(!svg_line_plot(&empty, "").contains("NaN"));
    }
}
