//! Minimal self-contained SVG plots: line charts and heatmaps.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliError;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const INFEASIBLE: &str = "#bdbdbd";

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

/// Row-major `ny x nx` grid; `None` marks an infeasible cell.
#[derive(Clone, Debug)]
pub struct Heatmap {
    pub title: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<Option<f64>>,
    /// Color on `log10` of the values.
    pub log_color: bool,
}

#[derive(Clone, Debug)]
pub enum Plot {
    Line(LinePlot),
    Heatmap(Heatmap),
}

pub fn emit_svg(plot: &Plot, path: &Path) -> Result<(), CliError> {
    let text = match plot {
        Plot::Line(p) => render_line(p),
        Plot::Heatmap(h) => render_heatmap(h),
    };
    std::fs::write(path, text).map_err(CliError::io(path))
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn extent(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn axes(out: &mut String, x: (f64, f64), y: (f64, f64), x_label: &str, y_label: &str, log_y: bool) {
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN / 2.0, H - MARGIN, MARGIN / 2.0 + 10.0);
    let _ = write!(out, r#"<path d="M{x0} {y1}V{y0}H{x1}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (px, py) = (x0 + f * (x1 - x0), y0 - f * (y0 - y1));
        let xv = x.0 + f * (x.1 - x.0);
        let yv = y.0 + f * (y.1 - y.0);
        let ytxt = if log_y { format!("1e{yv:.1}") } else { format!("{yv:.3}") };
        let _ = write!(out, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>"#, y0 + 16.0);
        let _ = write!(out, r#"<text x="{:.1}" y="{py:.1}" text-anchor="end">{ytxt}</text>"#, x0 - 4.0);
    }
    let _ = write!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(x_label));
    let _ = write!(
        out,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// One `<polyline>` per series. Nonpositive values are dropped on a log axis.
pub fn render_line(p: &LinePlot) -> String {
    let ty = |v: f64| if p.log_y { v.log10() } else { v };
    let keep = |&(x, y): &(f64, f64)| x.is_finite() && y.is_finite() && (!p.log_y || y > 0.0);
    let xr = extent(p.series.iter().flat_map(|s| s.points.iter().filter(|q| keep(q)).map(|q| q.0)));
    let yr = extent(p.series.iter().flat_map(|s| s.points.iter().filter(|q| keep(q)).map(|q| ty(q.1))));
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN / 2.0, H - MARGIN, MARGIN / 2.0 + 10.0);
    let mut out = String::new();
    header(&mut out, &p.title);
    axes(&mut out, xr, yr, &p.x_label, &p.y_label, p.log_y);
    for (i, s) in p.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|q| keep(q))
            .map(|&(x, y)| {
                let px = x0 + (x - xr.0) / (xr.1 - xr.0) * (x1 - x0);
                let py = y0 - (ty(y) - yr.0) / (yr.1 - yr.0) * (y0 - y1);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = write!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}" text-anchor="end">{}</text>"#,
            x1,
            y1 + 14.0 * i as f64,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn viridis(t: f64) -> String {
    const STOPS: [(f64, f64, f64); 5] =
        [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let lerp = |a: f64, b: f64| (a + f * (b - a)).round() as u8;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    format!("#{:02x}{:02x}{:02x}", lerp(a.0, b.0), lerp(a.1, b.1), lerp(a.2, b.2))
}

/// One `<rect>` per cell; infeasible cells are grey.
pub fn render_heatmap(h: &Heatmap) -> String {
    let tv = |v: f64| if h.log_color { v.max(f64::MIN_POSITIVE).log10() } else { v };
    let (lo, hi) = extent(h.values.iter().flatten().filter(|v| v.is_finite()).map(|&v| tv(v)));
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN / 2.0, H - MARGIN, MARGIN / 2.0 + 10.0);
    let (cw, ch) = ((x1 - x0) / h.nx as f64, (y0 - y1) / h.ny as f64);
    let mut out = String::new();
    header(&mut out, &h.title);
    axes(&mut out, h.x_range, h.y_range, "k1", "k2", false);
    for r in 0..h.ny {
        for c in 0..h.nx {
            let fill = match h.values[r * h.nx + c] {
                Some(v) if v.is_finite() => viridis((tv(v) - lo) / (hi - lo)),
                _ => INFEASIBLE.to_string(),
            };
            let _ = write!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                x0 + c as f64 * cw,
                y0 - (r + 1) as f64 * ch,
                cw + 0.05,
                ch + 0.05
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_make_one_polyline() {
        let p = LinePlot {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_y: true,
            series: vec![Series { label: "s".into(), points: vec![(0.0, 1.0), (1.0, 10.0)] }],
        };
        let s = render_line(&p);
        assert_eq!(s.matches("<polyline").count(), 1);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn infeasible_cells_are_grey() {
        let h = Heatmap {
            title: "h".into(),
            x_range: (0.0, 1.0),
            y_range: (0.0, 1.0),
            nx: 2,
            ny: 2,
            values: vec![Some(1.0), Some(2.0), None, Some(3.0)],
            log_color: false,
        };
        let s = render_heatmap(&h);
        assert_eq!(s.matches("<rect").count(), 4);
        assert_eq!(s.matches(&format!(r#"fill="{INFEASIBLE}""#)).count(), 1);
    }
}
