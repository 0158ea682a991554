//! SVG figures: training curves and distance-sweep curves.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use plotters::prelude::*;

use dist_tse::sweep::{Peak, SweepCurve};
use dist_tse::train::EpochLog;

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.08).max(0.5);
    (lo - pad, hi + pad)
}

fn plot_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("plot: {e:?}")
}

pub fn training_curves(log: &[EpochLog], out: &Path) -> Result<()> {
    if log.is_empty() {
        return Err(anyhow!("training log is empty"));
    }
    let root = SVGBackend::new(out, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let last = log.iter().map(|e| e.epoch).max().unwrap_or(1) as f64;
    let first = log.iter().map(|e| e.epoch).min().unwrap_or(1) as f64;
    let (lo, hi) = bounds(log.iter().flat_map(|e| [e.train_loss, e.val_loss]));
    let mut chart = ChartBuilder::on(&root)
        .caption("Training loss (dB, lower is better)", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(first - 0.5..last + 0.5, lo..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc("signed loss")
        .draw()
        .map_err(plot_err)?;
    let series = [("train", BLUE, log.iter().map(|e| (e.epoch as f64, e.train_loss)).collect::<Vec<_>>()),
        ("validation", RED, log.iter().map(|e| (e.epoch as f64, e.val_loss)).collect())];
    for (name, color, points) in series {
        chart
            .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart
            .draw_series(points.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err).with_context(|| format!("writing {}", out.display()))
}

/// Point iSDR and windowed score against query distance, detected peaks circled.
pub fn sweep_curve(curve: &SweepCurve, peaks: &[Peak], truths: &[f64], out: &Path) -> Result<()> {
    let root = SVGBackend::new(out, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (x0, x1) = (curve.grid[0], curve.grid[curve.grid.len() - 1]);
    let (lo, hi) = bounds(curve.scores.iter().chain(&curve.point_scores).copied());
    let mut chart = ChartBuilder::on(&root)
        .caption("Inactive SDR versus query distance", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(x0 - 0.25..x1 + 0.25, lo..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("query distance (m)")
        .y_desc("dB")
        .draw()
        .map_err(plot_err)?;
    for &d in truths {
        chart
            .draw_series(LineSeries::new([(d, lo), (d, hi)], BLACK.mix(0.3)))
            .map_err(plot_err)?;
    }
    let point: Vec<(f64, f64)> = curve.grid.iter().copied().zip(curve.point_scores.iter().copied()).collect();
    let windowed: Vec<(f64, f64)> = curve.grid.iter().copied().zip(curve.scores.iter().copied()).collect();
    chart
        .draw_series(LineSeries::new(point, BLUE.mix(0.6)))
        .map_err(plot_err)?
        .label("point iSDR")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLUE.mix(0.6)));
    chart
        .draw_series(LineSeries::new(windowed, BLUE.stroke_width(2)))
        .map_err(plot_err)?
        .label("windowed sum")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLUE));
    chart
        .draw_series(peaks.iter().map(|p| Circle::new((p.distance, p.score), 7, RGBColor(230, 120, 0).stroke_width(2))))
        .map_err(plot_err)?;
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err).with_context(|| format!("writing {}", out.display()))
}

/// Parse the `d_q,point_iSDR,windowed_score` CSV written by `sweep`.
pub fn read_curve_csv(text: &str) -> Result<SweepCurve> {
    let mut curve = SweepCurve {
        grid: Vec::new(),
        point_scores: Vec::new(),
        scores: Vec::new(),
    };
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("curve line {}", i + 1))?;
        let [d, p, s] = cols[..] else {
            return Err(anyhow!("curve line {} has {} columns, want 3", i + 1, cols.len()));
        };
        curve.grid.push(d);
        curve.point_scores.push(p);
        curve.scores.push(s);
    }
    if curve.grid.is_empty() {
        return Err(anyhow!("curve has no rows"));
    }
    Ok(curve)
}
