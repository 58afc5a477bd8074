//! Static SVG figures: log-log scaling plots and model visualizations.
//!
//! Output is plain text with fixed float formatting, so the same inputs always
//! give the same bytes. Elements carry a `class` attribute (`knot`, `neuron`,
//! `hinge`, `fit`, ...) that tests and stylesheets can select on.

use std::fmt::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::experiments::{fit_slope, Axis, ScalingRecord, SlopeFit};
use crate::models::{
    cell_boundaries, forward, neuron_decomposition, CellBoundaries, Domain, ModelParams,
};
use crate::target::TargetFunction;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;
const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Maps data coordinates to the plot area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        MARGIN_LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * w
    }

    fn py(&self, y: f64) -> f64 {
        let h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        HEIGHT - MARGIN_BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * h
    }
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn polyline(
    out: &mut String,
    frame: &Frame,
    pts: &[(f64, f64)],
    class: &str,
    stroke: &str,
    width: f64,
) {
    let mut coords = String::new();
    for (x, y) in pts.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
        let _ = write!(coords, "{:.2},{:.2} ", frame.px(*x), frame.py(*y));
    }
    let _ = writeln!(
        out,
        r#"<polyline class="{class}" points="{}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#,
        coords.trim_end()
    );
}

fn legend(out: &mut String, row: usize, stroke: &str, label: &str) {
    let x = WIDTH - MARGIN_RIGHT + 12.0;
    let y = MARGIN_TOP + 10.0 + 18.0 * row as f64;
    let _ = writeln!(
        out,
        r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{stroke}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
        x + 18.0,
        x + 24.0,
        y + 4.0,
        escape(label)
    );
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1) = (frame.px(frame.x.0), frame.px(frame.x.1));
    let (y0, y1) = (frame.py(frame.y.0), frame.py(frame.y.1));
    let _ = writeln!(
        out,
        r#"<rect class="frame" x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// Decade gridlines with `10^k` labels over a log10 range.
fn decade_grid(out: &mut String, frame: &Frame) {
    for k in (frame.x.0.floor() as i32)..=(frame.x.1.ceil() as i32) {
        let v = k as f64;
        if v < frame.x.0 || v > frame.x.1 {
            continue;
        }
        let x = frame.px(v);
        let _ = writeln!(
            out,
            r##"<line class="grid" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ccc"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">10<tspan dy="-5" font-size="9">{k}</tspan></text>"##,
            frame.py(frame.y.0),
            frame.py(frame.y.1),
            frame.py(frame.y.0) + 18.0
        );
    }
    for k in (frame.y.0.floor() as i32)..=(frame.y.1.ceil() as i32) {
        let v = k as f64;
        if v < frame.y.0 || v > frame.y.1 {
            continue;
        }
        let y = frame.py(v);
        let _ = writeln!(
            out,
            r##"<line class="grid" x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ccc"/><text x="{:.2}" y="{:.2}" text-anchor="end">10<tspan dy="-5" font-size="9">{k}</tspan></text>"##,
            frame.px(frame.x.0),
            frame.px(frame.x.1),
            frame.px(frame.x.0) - 6.0,
            y + 4.0
        );
    }
}

/// One labelled set of points on a log-log plot, with an optional fitted line.
#[derive(Clone, Debug)]
pub struct LogLogSeries {
    pub label: String,
    /// `(size, error)` in linear units; non-positive values are skipped.
    pub points: Vec<(f64, f64)>,
    pub fit: Option<SlopeFit>,
}

fn padded(lo: f64, hi: f64, pad: f64) -> (f64, f64) {
    if hi > lo {
        let p = (hi - lo) * pad;
        (lo - p, hi + p)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// The part of `y = slope x + intercept` inside the frame, in data units.
fn fit_segment(frame: &Frame, slope: f64, intercept: f64) -> Vec<(f64, f64)> {
    let at = |x: f64| (x, slope * x + intercept);
    let (mut a, mut b) = (at(frame.x.0), at(frame.x.1));
    if slope != 0.0 {
        // steep fits would otherwise run off the top or bottom
        let clip = |p: (f64, f64)| {
            let y = p.1.clamp(frame.y.0, frame.y.1);
            ((y - intercept) / slope, y)
        };
        a = clip(a);
        b = clip(b);
    }
    vec![a, b]
}

/// Log-log scatter with fitted lines and slope annotations in the legend.
pub fn loglog_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[LogLogSeries],
) -> Result<String> {
    let logs: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    if logs.is_empty() {
        return Err(Error::InvalidConfig(
            "nothing to plot: no positive points".into(),
        ));
    }
    let (xmin, xmax) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.0), b.max(p.0))
        });
    let (ymin, ymax) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.1), b.max(p.1))
        });
    let frame = Frame {
        x: padded(xmin, xmax, 0.05),
        y: padded(ymin, ymax, 0.05),
    };

    let mut out = String::new();
    open(&mut out, title);
    decade_grid(&mut out, &frame);
    axes(&mut out, &frame, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let stroke = color(i);
        for (x, y) in s.points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0) {
            let _ = writeln!(
                out,
                r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3.5" fill="{stroke}"/>"#,
                frame.px(x.log10()),
                frame.py(y.log10())
            );
        }
        let mut label = s.label.clone();
        if let Some(fit) = &s.fit {
            let pts = fit_segment(&frame, fit.slope, fit.intercept);
            let mut coords = String::new();
            for (x, y) in &pts {
                let _ = write!(coords, "{:.2},{:.2} ", frame.px(*x), frame.py(*y));
            }
            let _ = writeln!(
                out,
                r#"<polyline class="fit" points="{}" fill="none" stroke="{stroke}" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
                coords.trim_end()
            );
            label = format!("{label}: slope {:.2}", fit.slope);
        }
        legend(&mut out, i, stroke, &label);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Scaling plot for several sweeps on one axis, each with its own fit.
///
/// A sweep whose fit fails (too few usable points) is drawn without a line.
pub fn sweep_svg(title: &str, sweeps: &[Vec<ScalingRecord>], axis: Axis) -> Result<String> {
    let series: Vec<LogLogSeries> = sweeps
        .iter()
        .filter(|s| !s.is_empty())
        .map(|records| LogLogSeries {
            label: records[0].arch.to_string(),
            points: records
                .iter()
                .map(|r| {
                    let size = match axis {
                        Axis::Neurons => r.n as f64,
                        Axis::Params => r.param_count as f64,
                    };
                    (size, r.rmse)
                })
                .collect(),
            fit: fit_slope(records, axis).ok(),
        })
        .collect();
    let x_label = match axis {
        Axis::Neurons => "neurons n",
        Axis::Params => "parameters P",
    };
    loglog_svg(title, x_label, "RMSE", &series)
}

/// 1D picture of a scalar model: target and model curves, knot verticals and
/// one trace per neuron showing its contribution `D_i h_i(x)`.
pub fn viz_1d(
    params: &ModelParams,
    target: Option<&TargetFunction>,
    domain: (f64, f64),
    samples: usize,
) -> Result<String> {
    if params.arch.dim_x != 1 || params.arch.dim_y != 1 {
        return Err(Error::Unsupported(
            "1D visualization needs a scalar model".into(),
        ));
    }
    if !(domain.1 > domain.0) || samples < 2 {
        return Err(Error::InvalidConfig(
            "need a non-empty domain and at least 2 samples".into(),
        ));
    }
    let xs: Vec<f64> = (0..samples)
        .map(|i| domain.0 + (domain.1 - domain.0) * i as f64 / (samples - 1) as f64)
        .collect();
    let x = DMatrix::from_column_slice(samples, 1, &xs);
    let model = forward(params, &x)?;
    let neurons = neuron_decomposition(params, &x)?;
    let truth: Option<Vec<f64>> = target.map(|f| xs.iter().map(|&v| f.value(v)).collect());

    let all = model
        .iter()
        .copied()
        .chain(neurons.iter().flat_map(|n| n.values.iter().copied()))
        .chain(truth.iter().flatten().copied())
        .filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !lo.is_finite() {
        return Err(Error::NonFinite("model output".into()));
    }
    let frame = Frame {
        x: domain,
        y: padded(lo, hi, 0.05),
    };

    let mut out = String::new();
    open(
        &mut out,
        &format!("{} n={}", params.arch.kind, params.arch.n),
    );
    axes(&mut out, &frame, "x", "y");
    let knots = match cell_boundaries(params, &Domain::interval(domain.0, domain.1))? {
        CellBoundaries::Knots(k) => k,
        CellBoundaries::Segments(_) => unreachable!("scalar model has knots"),
    };
    for k in &knots {
        let px = frame.px(k.x);
        let _ = writeln!(
            out,
            r##"<line class="knot" data-neuron="{}" x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="3 3"/>"##,
            k.neuron,
            frame.py(frame.y.0),
            frame.py(frame.y.1)
        );
    }
    for (i, n) in neurons.iter().enumerate() {
        let pts: Vec<(f64, f64)> = xs.iter().copied().zip(n.values.iter().copied()).collect();
        polyline(&mut out, &frame, &pts, "neuron", color(i + 2), 0.8);
    }
    let mut row = 0;
    if let Some(truth) = &truth {
        let pts: Vec<(f64, f64)> = xs.iter().copied().zip(truth.iter().copied()).collect();
        polyline(&mut out, &frame, &pts, "target", "black", 2.5);
        legend(&mut out, row, "black", "target");
        row += 1;
    }
    let pts: Vec<(f64, f64)> = xs.iter().copied().zip(model.iter().copied()).collect();
    polyline(&mut out, &frame, &pts, "model", color(1), 1.5);
    legend(&mut out, row, color(1), "model");
    legend(&mut out, row + 1, color(2), "neurons");
    out.push_str("</svg>\n");
    Ok(out)
}

/// Blue-white-red ramp for `t` in [-1, 1].
fn diverging(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let (r, g, b) = if t < 0.0 {
        let s = -t;
        (1.0 - s * 0.8, 1.0 - s * 0.6, 1.0)
    } else {
        (1.0, 1.0 - t * 0.8, 1.0 - t * 0.8)
    };
    format!(
        "#{:02x}{:02x}{:02x}",
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8
    )
}

/// Heatmap of a two-input scalar model on `domain` with the hinge lines of
/// every neuron drawn on top.
pub fn viz_2d(params: &ModelParams, domain: &Domain, cells: usize) -> Result<String> {
    if params.arch.dim_x != 2 || params.arch.dim_y != 1 {
        return Err(Error::Unsupported(format!(
            "2D visualization needs a 2->1 model, got {}->{}",
            params.arch.dim_x, params.arch.dim_y
        )));
    }
    if domain.dim() != 2 || cells == 0 {
        return Err(Error::InvalidConfig(
            "need a 2D domain and at least one cell".into(),
        ));
    }
    let (x0, x1) = (domain.lower[0], domain.upper[0]);
    let (y0, y1) = (domain.lower[1], domain.upper[1]);
    let (dx, dy) = ((x1 - x0) / cells as f64, (y1 - y0) / cells as f64);
    let centres = DMatrix::from_fn(cells * cells, 2, |r, c| {
        let (i, j) = (r % cells, r / cells);
        if c == 0 {
            x0 + (i as f64 + 0.5) * dx
        } else {
            y0 + (j as f64 + 0.5) * dy
        }
    });
    let z = forward(params, &centres)?;
    let zmax = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let frame = Frame {
        x: (x0, x1),
        y: (y0, y1),
    };

    let mut out = String::new();
    open(
        &mut out,
        &format!("{} n={}", params.arch.kind, params.arch.n),
    );
    let (w, h) = (
        frame.px(x0 + dx) - frame.px(x0),
        frame.py(y0) - frame.py(y0 + dy),
    );
    for r in 0..cells * cells {
        let (i, j) = (r % cells, r / cells);
        let t = if zmax > 0.0 { z[r] / zmax } else { 0.0 };
        let _ = writeln!(
            out,
            r#"<rect class="cell" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            frame.px(x0 + i as f64 * dx),
            frame.py(y0 + (j + 1) as f64 * dy),
            w + 0.05,
            h + 0.05,
            diverging(t)
        );
    }
    axes(&mut out, &frame, "x1", "x2");
    if let CellBoundaries::Segments(segments) = cell_boundaries(params, domain)? {
        for s in &segments {
            let _ = writeln!(
                out,
                r#"<line class="hinge" data-neuron="{}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="1.2"/>"#,
                s.neuron,
                frame.px(s.start[0]),
                frame.py(s.start[1]),
                frame.px(s.end[0]),
                frame.py(s.end[1])
            );
        }
    }
    legend(&mut out, 0, "black", "hinges");
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}">|f| max {:.3e}</text>"#,
        WIDTH - MARGIN_RIGHT + 12.0,
        MARGIN_TOP + 40.0,
        zmax
    );
    out.push_str("</svg>\n");
    Ok(out)
}
