use std::fmt::Write;

use crate::stats::quantile;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

/// Boxplots of differences, one `<g class="box">` per method, with a dashed
/// zero line. Whiskers reach the most extreme values within 1.5 IQR.
pub fn boxplot_svg(title: &str, methods: &[String], groups: &[Vec<f64>]) -> String {
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let (mut lo, mut hi) = all
        .iter()
        .fold((0.0f64, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let y = |v: f64| MARGIN_TOP + (hi - v) / (hi - lo) * plot_h;
    let slot = plot_w / methods.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        s,
        r##"<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{:.2}" stroke="#000"/>"##,
        HEIGHT - MARGIN_BOTTOM
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            MARGIN_LEFT - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{MARGIN_LEFT}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
        y(0.0),
        WIDTH - MARGIN_RIGHT
    );
    for (k, (method, values)) in methods.iter().zip(groups).enumerate() {
        let cx = MARGIN_LEFT + slot * (k as f64 + 0.5);
        let half = (slot * 0.3).min(40.0);
        let _ = writeln!(s, r#"<g class="box" data-method="{}">"#, escape(method));
        if !values.is_empty() {
            let q1 = quantile(values, 0.25);
            let q2 = quantile(values, 0.5);
            let q3 = quantile(values, 0.75);
            let iqr = q3 - q1;
            let lo_w = values.iter().copied().filter(|&v| v >= q1 - 1.5 * iqr).fold(f64::INFINITY, f64::min);
            let hi_w = values.iter().copied().filter(|&v| v <= q3 + 1.5 * iqr).fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(
                s,
                r##"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#000"/>"##,
                y(hi_w),
                y(lo_w)
            );
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#cde" stroke="#000"/>"##,
                cx - half,
                y(q3),
                2.0 * half,
                (y(q1) - y(q3)).max(0.5)
            );
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{2:.2}" x2="{:.2}" y2="{2:.2}" stroke="#000" stroke-width="2"/>"##,
                cx - half,
                cx + half,
                y(q2)
            );
            for &v in values.iter().filter(|&&v| v < lo_w || v > hi_w) {
                let _ = writeln!(s, r##"<circle cx="{cx:.2}" cy="{:.2}" r="2" fill="none" stroke="#000"/>"##, y(v));
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN_BOTTOM + 18.0,
            escape(method)
        );
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_group_per_method() {
        let methods = vec!["km".to_string(), "gam".to_string(), "clogit".to_string()];
        let groups = vec![vec![0.1, 0.2, 0.3], vec![-0.1, 0.0, 0.1], vec![]];
        let svg = boxplot_svg("log_hr_xb", &methods, &groups);
        assert_eq!(svg.matches(r#"<g class="box""#).count(), 3);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
