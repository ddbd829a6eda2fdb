//! Static SVG rendering of information-plane trajectories and probe curves.
//!
//! Hand-rolled writer: deterministic output (fixed-precision coordinates, no
//! timestamps) so identical inputs produce identical bytes.

use infoplane_core::analysis::{EvalSet, InfoPlanePoint, InfoPlaneSettings, Trajectory};

use crate::error::{CliError, Result};

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 48.0;

fn color_for(frac: f64) -> String {
    // Early epochs cold, late epochs warm.
    let lerp = |a: f64, b: f64| a + (b - a) * frac;
    format!(
        "rgb({},{},{})",
        lerp(40.0, 220.0).round() as i64,
        lerp(80.0, 60.0).round() as i64,
        lerp(200.0, 40.0).round() as i64
    )
}

/// Axis range covering all values with a five-percent margin.
fn axis_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let span = (hi - lo).max(1e-9);
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

fn panel_body(points: &[&InfoPlanePoint], title: &str) -> String {
    let (x_lo, x_hi) = axis_range(points.iter().map(|p| p.nhsic_xz));
    let (y_lo, y_hi) = axis_range(points.iter().map(|p| p.nhsic_yz));
    let epoch_lo = points.iter().map(|p| p.epoch).min().unwrap_or(0) as f64;
    let epoch_hi = points.iter().map(|p| p.epoch).max().unwrap_or(1) as f64;
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        let px = MARGIN + (x - x_lo) / (x_hi - x_lo) * (PANEL_W - 2.0 * MARGIN);
        let py = PANEL_H - MARGIN - (y - y_lo) / (y_hi - y_lo) * (PANEL_H - 2.0 * MARGIN);
        (px, py)
    };

    let mut s = String::new();
    s.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" fill=\"white\" stroke=\"none\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-size=\"13\" text-anchor=\"middle\" font-family=\"sans-serif\">{title}</text>\n",
        PANEL_W / 2.0
    ));
    // Axes.
    s.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = PANEL_H - MARGIN,
        r = PANEL_W - MARGIN,
        t = MARGIN
    ));
    // Tick labels at the extremes.
    s.push_str(&format!(
        "<text x=\"{m}\" y=\"{y}\" font-size=\"9\" font-family=\"sans-serif\">{lo}</text>\n<text x=\"{r}\" y=\"{y}\" font-size=\"9\" text-anchor=\"end\" font-family=\"sans-serif\">{hi}</text>\n",
        m = MARGIN,
        r = PANEL_W - MARGIN,
        y = PANEL_H - MARGIN + 14.0,
        lo = fmt(x_lo),
        hi = fmt(x_hi)
    ));
    s.push_str(&format!(
        "<text x=\"{x}\" y=\"{b}\" font-size=\"9\" font-family=\"sans-serif\" text-anchor=\"end\">{lo}</text>\n<text x=\"{x}\" y=\"{t}\" font-size=\"9\" font-family=\"sans-serif\" text-anchor=\"end\">{hi}</text>\n",
        x = MARGIN - 4.0,
        b = PANEL_H - MARGIN,
        t = MARGIN + 8.0,
        lo = fmt(y_lo),
        hi = fmt(y_hi)
    ));
    // Axis names.
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\" font-family=\"sans-serif\">nHSIC(X, Z)</text>\n",
        PANEL_W / 2.0,
        PANEL_H - 8.0
    ));
    s.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\" font-family=\"sans-serif\" transform=\"rotate(-90 14 {})\">nHSIC(Y, Z)</text>\n",
        PANEL_H / 2.0,
        PANEL_H / 2.0
    ));
    // Trajectory polyline, then markers colored by training progress.
    if points.len() > 1 {
        let path: Vec<String> = points
            .iter()
            .map(|p| {
                let (x, y) = to_px(p.nhsic_xz, p.nhsic_yz);
                format!("{},{}", fmt(x), fmt(y))
            })
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#bbbbbb\" stroke-width=\"1\"/>\n",
            path.join(" ")
        ));
    }
    for p in points {
        let (x, y) = to_px(p.nhsic_xz, p.nhsic_yz);
        let frac = if epoch_hi > epoch_lo {
            (p.epoch as f64 - epoch_lo) / (epoch_hi - epoch_lo)
        } else {
            0.0
        };
        s.push_str(&format!(
            "<circle class=\"pt\" cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"><title>epoch {}</title></circle>\n",
            fmt(x),
            fmt(y),
            color_for(frac),
            p.epoch
        ));
    }
    s
}

/// One panel per layer.
pub fn layer_svg(trajectory: &Trajectory, layer: usize) -> Result<String> {
    let points = trajectory.layer_points(layer);
    if points.is_empty() {
        return Err(CliError::Input(format!("no points recorded for layer {layer}")));
    }
    Ok(format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" viewBox=\"0 0 {PANEL_W} {PANEL_H}\">\n{}</svg>\n",
        panel_body(&points, &format!("layer {layer}"))
    ))
}

/// All layers side by side.
pub fn combined_svg(trajectory: &Trajectory) -> Result<String> {
    let layers = trajectory.layer_count();
    if layers == 0 {
        return Err(CliError::Input("trajectory is empty".into()));
    }
    let total_w = PANEL_W * layers as f64;
    let mut body = String::new();
    for layer in 0..layers {
        let points = trajectory.layer_points(layer);
        body.push_str(&format!(
            "<g transform=\"translate({},0)\">\n{}</g>\n",
            fmt(PANEL_W * layer as f64),
            panel_body(&points, &format!("layer {layer}"))
        ));
    }
    Ok(format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total_w}\" height=\"{PANEL_H}\" viewBox=\"0 0 {total_w} {PANEL_H}\">\n{body}</svg>\n"
    ))
}

/// Probe accuracy against layer index, train and test lines.
pub fn probe_svg(train_accuracy: &[f64], test_accuracy: &[f64]) -> Result<String> {
    if train_accuracy.is_empty() || train_accuracy.len() != test_accuracy.len() {
        return Err(CliError::Input("probe series empty or mismatched".into()));
    }
    let n = train_accuracy.len();
    let (y_lo, y_hi) = axis_range(train_accuracy.iter().chain(test_accuracy).copied());
    let to_px = |i: usize, y: f64| -> (f64, f64) {
        let px = MARGIN + i as f64 / (n.max(2) - 1) as f64 * (PANEL_W - 2.0 * MARGIN);
        let py = PANEL_H - MARGIN - (y - y_lo) / (y_hi - y_lo) * (PANEL_H - 2.0 * MARGIN);
        (px, py)
    };
    let line = |series: &[f64], color: &str, class: &str| -> String {
        let pts: Vec<String> = series
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (x, y) = to_px(i, v);
                format!("{},{}", fmt(x), fmt(y))
            })
            .collect();
        format!(
            "<polyline class=\"{class}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            pts.join(" ")
        )
    };
    Ok(format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" viewBox=\"0 0 {PANEL_W} {PANEL_H}\">\n\
         <rect x=\"0\" y=\"0\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" fill=\"white\"/>\n\
         <text x=\"{cx}\" y=\"20\" font-size=\"13\" text-anchor=\"middle\" font-family=\"sans-serif\">linear probe accuracy by layer</text>\n\
         <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         {train}{test}\
         <text x=\"{r}\" y=\"{t}\" font-size=\"10\" text-anchor=\"end\" fill=\"#1f5fbf\" font-family=\"sans-serif\">train</text>\n\
         <text x=\"{r}\" y=\"{t2}\" font-size=\"10\" text-anchor=\"end\" fill=\"#bf3f1f\" font-family=\"sans-serif\">test</text>\n\
         </svg>\n",
        cx = PANEL_W / 2.0,
        m = MARGIN,
        b = PANEL_H - MARGIN,
        r = PANEL_W - MARGIN,
        t = MARGIN,
        t2 = MARGIN + 14.0,
        train = line(train_accuracy, "#1f5fbf", "train"),
        test = line(test_accuracy, "#bf3f1f", "test"),
    ))
}

/// Parses a `epoch,layer,nhsic_xz,nhsic_yz,eval_set` file back into a
/// trajectory (for the standalone plot command).
pub fn parse_trajectory_csv(text: &str) -> Result<Trajectory> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Input("empty trajectory file".into()))?;
    if header.trim() != "epoch,layer,nhsic_xz,nhsic_yz,eval_set" {
        return Err(CliError::Input(format!("unexpected header '{header}'")));
    }
    let mut trajectory = Trajectory::new(InfoPlaneSettings::default(), 0, 0);
    let mut points = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CliError::Input(format!(
                "line {}: expected 5 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse_err = |what: &str| CliError::Input(format!("line {}: bad {what}", lineno + 2));
        points.push(InfoPlanePoint {
            epoch: fields[0].parse().map_err(|_| parse_err("epoch"))?,
            layer: fields[1].parse().map_err(|_| parse_err("layer"))?,
            nhsic_xz: fields[2].parse().map_err(|_| parse_err("nhsic_xz"))?,
            nhsic_yz: fields[3].parse().map_err(|_| parse_err("nhsic_yz"))?,
            eval_set: match fields[4].trim() {
                "train" => EvalSet::TrainSubset,
                "test" => EvalSet::TestSubset,
                other => return Err(CliError::Input(format!("line {}: bad eval_set '{other}'", lineno + 2))),
            },
        });
    }
    trajectory.extend(points).map_err(CliError::Core)?;
    Ok(trajectory)
}
