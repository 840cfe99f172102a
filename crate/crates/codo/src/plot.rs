//! SVG figures: loss curve, ablation gap bars, probe accuracy table.
//!
//! Output depends only on the input data; no fonts or clocks are consulted.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::ablate::AblationReport;
use crate::error::{CliError, IoContext, Result};
use crate::evaluate::ProbeReport;
use crate::pretrain::MetricsRecord;

/// Upper bound on plotted points; longer runs are averaged into buckets.
pub const MAX_CURVE_POINTS: usize = 1000;
const SIZE: (u32, u32) = (800, 480);

fn draw_err<E: std::fmt::Debug>(e: E) -> CliError {
    CliError::Runtime(format!("plotting failed: {e:?}"))
}

/// Bucket means of (step, loss). Averaging keeps a monotone input monotone.
pub fn loss_curve_points(records: &[MetricsRecord]) -> Vec<(f64, f64)> {
    if records.is_empty() {
        return Vec::new();
    }
    let bucket = records.len().div_ceil(MAX_CURVE_POINTS);
    records
        .chunks(bucket)
        .map(|c| {
            let n = c.len() as f64;
            (c.iter().map(|r| r.step as f64).sum::<f64>() / n, c.iter().map(|r| r.loss).sum::<f64>() / n)
        })
        .collect()
}

fn bounds(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let lo = v.clone().fold(f64::INFINITY, f64::min);
    let hi = v.fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

pub fn render_loss_curve(records: &[MetricsRecord]) -> Result<String> {
    let pts = loss_curve_points(records);
    let (x0, x1) = bounds(pts.iter().map(|p| p.0));
    let (y0, y1) = bounds(pts.iter().map(|p| p.1));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("pretraining loss", ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(56)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(draw_err)?;
        chart.configure_mesh().x_desc("step").y_desc("loss").draw().map_err(draw_err)?;
        chart.draw_series(LineSeries::new(pts, &BLUE)).map_err(draw_err)?;
    }
    Ok(svg)
}

pub fn render_gap_bars(report: &AblationReport) -> Result<String> {
    let n = report.rows.len();
    let all = report.rows.iter().flat_map(|r| r.seeds.iter().map(|s| s.gap).chain([r.mean_gap]));
    let (lo, hi) = bounds(all.chain([0.0]));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("invariance gap by background-pool setting", ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(56)
            .build_cartesian_2d(-0.5..n as f64 - 0.5, lo.min(0.0)..hi)
            .map_err(draw_err)?;
        let names: Vec<String> = report.rows.iter().map(|r| r.name.clone()).collect();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(n.max(1))
            .x_label_formatter(&|x| {
                let i = x.round();
                if (x - i).abs() < 1e-6 && i >= 0.0 {
                    names.get(i as usize).cloned().unwrap_or_default()
                } else {
                    String::new()
                }
            })
            .y_desc("same-object minus different-object cosine")
            .draw()
            .map_err(draw_err)?;
        chart
            .draw_series(report.rows.iter().enumerate().map(|(i, r)| {
                let x = i as f64;
                Rectangle::new([(x - 0.3, 0.0), (x + 0.3, r.mean_gap)], BLUE.mix(0.5).filled())
            }))
            .map_err(draw_err)?;
        chart
            .draw_series(report.rows.iter().enumerate().flat_map(|(i, r)| {
                r.seeds.iter().map(move |s| Circle::new((i as f64, s.gap), 3, BLACK.filled()))
            }))
            .map_err(draw_err)?;
    }
    Ok(svg)
}

pub fn probe_table_markdown(reports: &[ProbeReport]) -> String {
    let mut s = String::from("| model | train acc | test acc | chance | n train | n test |\n|---|---|---|---|---|---|\n");
    for r in reports {
        let _ = writeln!(
            s,
            "| {} | {:.4} | {:.4} | {:.4} | {} | {} |",
            r.model, r.train_accuracy, r.test_accuracy, r.chance, r.n_train, r.n_test
        );
    }
    s
}

pub fn render_probe_table(reports: &[ProbeReport]) -> Result<String> {
    let row_h = 28;
    let h = (reports.len() as u32 + 2) * row_h as u32;
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (SIZE.0, h)).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let style = ("monospace", 16).into_font().color(&BLACK);
        let header = format!("{:<48} {:>9} {:>9} {:>7}", "model", "train", "test", "chance");
        root.draw(&Text::new(header, (10, row_h / 2), style.clone())).map_err(draw_err)?;
        for (i, r) in reports.iter().enumerate() {
            let model: String = r.model.chars().rev().take(48).collect::<Vec<_>>().into_iter().rev().collect();
            let line = format!("{model:<48} {:>9.4} {:>9.4} {:>7.4}", r.train_accuracy, r.test_accuracy, r.chance);
            root.draw(&Text::new(line, (10, row_h / 2 + (i as i32 + 1) * row_h), style.clone())).map_err(draw_err)?;
        }
    }
    Ok(svg)
}

#[derive(Debug, Default)]
pub struct PlotInputs {
    pub metrics: Vec<MetricsRecord>,
    pub ablation: Option<AblationReport>,
    pub probes: Vec<ProbeReport>,
}

/// Writes every figure the inputs allow. Empty inputs produce a warning
/// and no files.
pub fn write_plots(inputs: &PlotInputs, out: &Path) -> Result<Vec<PathBuf>> {
    let ablation = inputs.ablation.as_ref().filter(|a| !a.rows.is_empty());
    if inputs.metrics.is_empty() && ablation.is_none() && inputs.probes.is_empty() {
        eprintln!("warning: nothing to plot");
        return Ok(Vec::new());
    }
    fs::create_dir_all(out).at(out)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let path = out.join(name);
        fs::write(&path, body).at(&path)?;
        written.push(path);
        Ok(())
    };
    if !inputs.metrics.is_empty() {
        put("loss_curve.svg", render_loss_curve(&inputs.metrics)?)?;
    }
    if let Some(a) = ablation {
        put("invariance_gap.svg", render_gap_bars(a)?)?;
    }
    if !inputs.probes.is_empty() {
        put("probe_table.svg", render_probe_table(&inputs.probes)?)?;
        put("probe_table.md", probe_table_markdown(&inputs.probes))?;
    }
    Ok(written)
}
