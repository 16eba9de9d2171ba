//! Self-contained SVG line charts of experiment results.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::{summarize, Combo, ResultRow, SummaryPoint, SweepAxis};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const Y_MAX: f64 = 1.05;

fn color(combo: Combo) -> &'static str {
    match combo {
        Combo::NaiveNaive => "#444444",
        Combo::NaivePatient => "#d62728",
        Combo::NaiveMyopic => "#ff7f0e",
        Combo::PatientPatient => "#1f77b4",
        Combo::MyopicMyopic => "#2ca02c",
    }
}

fn axis_label(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Eta => "eta",
        SweepAxis::Horizon => "T",
        SweepAxis::StateActionSize => "|S| = |A|",
    }
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Renders mean normalized value against the swept parameter, one line per
/// combination, with min/max whiskers over seeds. Values are clipped to
/// `[0, 1.05]`.
pub fn render_svg(rows: &[ResultRow], axis: SweepAxis, normalize_after_mean: bool) -> Result<String> {
    let points = summarize(rows, axis, normalize_after_mean);
    if points.is_empty() {
        return Err(Error::arg("no finite result rows to plot"));
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.axis_value).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let (x_lo, x_hi) = (xs[0], xs[xs.len() - 1]);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| {
        if x_hi > x_lo {
            LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w
        } else {
            LEFT + plot_w / 2.0
        }
    };
    let py = |y: f64| TOP + (1.0 - y.clamp(0.0, Y_MAX) / Y_MAX) * plot_h;

    let mut svg = String::new();
    let w = &mut svg;
    // writing to a String cannot fail
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let y = 0.2 * k as f64;
        let yy = py(y);
        let _ = writeln!(
            w,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            yy + 4.0,
            fmt_tick(y)
        );
    }
    for &x in &xs {
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(x),
            TOP + plot_h + 18.0,
            fmt_tick(x)
        );
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0,
        axis_label(axis)
    );
    let _ = writeln!(
        w,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">normalized principal utility</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    let mut combos: Vec<Combo> = points.iter().map(|p| p.combo).collect();
    combos.sort();
    combos.dedup();
    for (i, &combo) in combos.iter().enumerate() {
        let col = color(combo);
        let series: Vec<&SummaryPoint> = points
            .iter()
            .filter(|p| p.combo == combo && p.mean.is_finite())
            .collect();
        if series.len() > 1 {
            let path: Vec<String> = series
                .iter()
                .map(|p| format!("{:.2},{:.2}", px(p.axis_value), py(p.mean)))
                .collect();
            let _ = writeln!(
                w,
                r#"<polyline class="series" fill="none" stroke="{col}" stroke-width="2" points="{}"/>"#,
                path.join(" ")
            );
        }
        for p in &series {
            let (x, lo, hi) = (px(p.axis_value), py(p.min), py(p.max));
            let _ = writeln!(
                w,
                r#"<line class="whisker" x1="{x:.2}" y1="{lo:.2}" x2="{x:.2}" y2="{hi:.2}" stroke="{col}"/><circle cx="{x:.2}" cy="{:.2}" r="3" fill="{col}"/>"#,
                py(p.mean)
            );
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + plot_w + 14.0;
        let _ = writeln!(
            w,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{col}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            combo
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(
    rows: &[ResultRow],
    axis: SweepAxis,
    normalize_after_mean: bool,
    path: impl AsRef<Path>,
) -> Result<()> {
    let svg = render_svg(rows, axis, normalize_after_mean)?;
    let path = path.as_ref();
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
