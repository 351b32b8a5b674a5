//! Minimal deterministic SVG rendering: line plots and heatmaps.
//!
//! Output depends only on the input numbers; coordinates are printed with a
//! fixed number of decimals so identical inputs give identical bytes.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 120.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// One named curve.
pub struct Line<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

/// Color scale for heatmaps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ColorMap {
    /// Blue through white to red, white pinned at zero and the range
    /// symmetric about it.
    Diverging,
    /// White to dark blue over [min, max].
    Sequential,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    );
}

fn finite_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        None
    } else if lo == hi {
        Some((lo - 0.5, hi + 0.5))
    } else {
        Some((lo, hi))
    }
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn axes(
    out: &mut String,
    (x0, x1): (f64, f64),
    (y0, y1): (f64, f64),
    x_label: &str,
    y_label: &str,
) {
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let _ = writeln!(
        out,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
    );
    for t in ticks(x0, x1) {
        let px = LEFT + (t - x0) / (x1 - x0) * pw;
        let _ = writeln!(
            out,
            "<line x1=\"{px:.2}\" y1=\"{:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"black\"/><text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            fmt_tick(t)
        );
    }
    for t in ticks(y0, y1) {
        let py = TOP + ph - (t - y0) / (y1 - y0) * ph;
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{LEFT}\" y2=\"{py:.2}\" stroke=\"black\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">{}</text>",
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
}

/// Line plot with one polyline per series.
pub fn line_plot(lines: &[Line<'_>], title: &str, x_label: &str, y_label: &str) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let xr = finite_range(lines.iter().flat_map(|l| l.x.iter().copied())).unwrap_or((0.0, 1.0));
    let yr = finite_range(lines.iter().flat_map(|l| l.y.iter().copied())).unwrap_or((0.0, 1.0));
    axes(&mut out, xr, yr, x_label, y_label);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    for (k, line) in lines.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for (x, y) in line.x.iter().zip(line.y) {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            let px = LEFT + (x - xr.0) / (xr.1 - xr.0) * pw;
            let py = TOP + ph - (y - yr.0) / (yr.1 - yr.0) * ph;
            let _ = write!(pts, "{px:.2},{py:.2} ");
        }
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.trim_end()
        );
        let ly = TOP + 15.0 + 18.0 * k as f64;
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            WIDTH - RIGHT + 8.0,
            WIDTH - RIGHT + 28.0,
            WIDTH - RIGHT + 32.0,
            ly + 4.0,
            escape(line.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn lerp(a: (f64, f64, f64), b: (f64, f64, f64), t: f64) -> (f64, f64, f64) {
    (
        a.0 + (b.0 - a.0) * t,
        a.1 + (b.1 - a.1) * t,
        a.2 + (b.2 - a.2) * t,
    )
}

const BLUE: (f64, f64, f64) = (33.0, 102.0, 172.0);
const WHITE: (f64, f64, f64) = (255.0, 255.0, 255.0);
const RED: (f64, f64, f64) = (178.0, 24.0, 43.0);
const NAVY: (f64, f64, f64) = (8.0, 48.0, 107.0);

/// Hex color of `v` under `map` with range `(lo, hi)`.
pub fn color(map: ColorMap, v: f64, lo: f64, hi: f64) -> String {
    let (r, g, b) = match map {
        ColorMap::Diverging => {
            let m = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
            let t = (v / m).clamp(-1.0, 1.0);
            if t < 0.0 {
                lerp(WHITE, BLUE, -t)
            } else {
                lerp(WHITE, RED, t)
            }
        }
        ColorMap::Sequential => {
            let t = if hi > lo {
                ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                0.5
            };
            lerp(WHITE, NAVY, t)
        }
    };
    format!(
        "#{:02x}{:02x}{:02x}",
        r.round() as u8,
        g.round() as u8,
        b.round() as u8
    )
}

/// Heatmap of `values[i][j]` at `(x[i], y[j])`; `None` cells are drawn grey.
/// An optional marker outlines one cell.
pub fn heatmap(
    x: &[f64],
    y: &[f64],
    values: &[Vec<Option<f64>>],
    map: ColorMap,
    marker: Option<(usize, usize)>,
    title: &str,
    x_label: &str,
    y_label: &str,
) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let half = |axis: &[f64]| {
        if axis.len() > 1 {
            0.5 * (axis[1] - axis[0]).abs()
        } else {
            0.5
        }
    };
    let (hx, hy) = (half(x), half(y));
    let xr = finite_range(x.iter().copied())
        .map(|(a, b)| (a - hx, b + hx))
        .unwrap_or((0.0, 1.0));
    let yr = finite_range(y.iter().copied())
        .map(|(a, b)| (a - hy, b + hy))
        .unwrap_or((0.0, 1.0));
    let xr = if x.len() == 1 {
        (x[0] - hx, x[0] + hx)
    } else {
        xr
    };
    let yr = if y.len() == 1 {
        (y[0] - hy, y[0] + hy)
    } else {
        yr
    };
    let (lo, hi) = finite_range(values.iter().flatten().flatten().copied()).unwrap_or((0.0, 1.0));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |v: f64| LEFT + (v - xr.0) / (xr.1 - xr.0) * pw;
    let sy = |v: f64| TOP + ph - (v - yr.0) / (yr.1 - yr.0) * ph;
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let fill = match v {
                Some(v) if v.is_finite() => color(map, *v, lo, hi),
                _ => "#bbbbbb".to_string(),
            };
            let (x0, x1) = (sx(x[i] - hx), sx(x[i] + hx));
            let (y0, y1) = (sy(y[j] + hy), sy(y[j] - hy));
            let _ = writeln!(
                out,
                "<rect x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\" stroke=\"{fill}\" stroke-width=\"0.3\"/>",
                x1 - x0,
                y1 - y0
            );
        }
    }
    if let Some((i, j)) = marker {
        let (x0, x1) = (sx(x[i] - hx), sx(x[i] + hx));
        let (y0, y1) = (sy(y[j] + hy), sy(y[j] - hy));
        let _ = writeln!(
            out,
            "<rect class=\"marker\" x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"black\" stroke-width=\"2.5\"/>",
            x1 - x0,
            y1 - y0
        );
    }
    axes(&mut out, xr, yr, x_label, y_label);

    // color bar
    let (blo, bhi) = match map {
        ColorMap::Diverging => {
            let m = lo.abs().max(hi.abs());
            (-m, m)
        }
        ColorMap::Sequential => (lo, hi),
    };
    let bx = WIDTH - RIGHT + 20.0;
    let steps = 50;
    for k in 0..steps {
        let v = blo + (bhi - blo) * (k as f64 + 0.5) / steps as f64;
        let y0 = TOP + ph - ph * (k + 1) as f64 / steps as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{bx:.1}\" y=\"{y0:.2}\" width=\"20\" height=\"{:.2}\" fill=\"{}\"/>",
            ph / steps as f64 + 0.2,
            color(map, v, blo, bhi)
        );
    }
    for (v, y0) in [
        (bhi, TOP),
        (0.5 * (blo + bhi), TOP + ph / 2.0),
        (blo, TOP + ph),
    ] {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            bx + 24.0,
            y0 + 4.0,
            fmt_tick(v)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_series_one_polyline() {
        let x = [0.0, 1.0, 2.0];
        let y = [0.1, 0.5, 0.9];
        let svg = line_plot(
            &[Line {
                label: "fidelity",
                x: &x,
                y: &y,
            }],
            "t",
            "time",
            "F",
        );
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(
            svg,
            line_plot(
                &[Line {
                    label: "fidelity",
                    x: &x,
                    y: &y
                }],
                "t",
                "time",
                "F"
            )
        );
    }

    #[test]
    fn diverging_map_is_centered() {
        assert_eq!(color(ColorMap::Diverging, 0.0, -0.2, 0.6), "#ffffff");
        let neg = color(ColorMap::Diverging, -0.2, -0.2, 0.6);
        let pos = color(ColorMap::Diverging, 0.2, -0.2, 0.6);
        assert_ne!(neg, pos);
        // negative values lean blue, positive lean red
        assert!(
            u8::from_str_radix(&neg[5..7], 16).unwrap()
                > u8::from_str_radix(&neg[1..3], 16).unwrap()
        );
        assert!(
            u8::from_str_radix(&pos[1..3], 16).unwrap()
                > u8::from_str_radix(&pos[5..7], 16).unwrap()
        );
    }

    #[test]
    fn heatmap_marker_and_missing_cells() {
        let x = [1.0, 2.0];
        let y = [1.0, 2.0, 3.0];
        let v = vec![
            vec![Some(0.1), None, Some(0.3)],
            vec![Some(0.4), Some(0.9), Some(0.2)],
        ];
        let svg = heatmap(
            &x,
            &y,
            &v,
            ColorMap::Sequential,
            Some((1, 1)),
            "sweep",
            "a",
            "b",
        );
        assert_eq!(svg.matches("class=\"marker\"").count(), 1);
        assert!(svg.contains("#bbbbbb"));
    }
}
