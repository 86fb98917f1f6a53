//! Static SVG plots from metrics rows: pass@1 against cumulative fresh
//! rollouts, one curve per run.

use plotters::prelude::*;
use remix_core::error::{Error, Result};
use remix_core::metrics::MetricsRow;
use std::path::Path;

const PALETTE: [RGBColor; 8] = [
    RGBColor(198, 78, 53),
    RGBColor(54, 104, 181),
    RGBColor(61, 145, 88),
    RGBColor(148, 84, 176),
    RGBColor(196, 148, 48),
    RGBColor(64, 151, 164),
    RGBColor(130, 130, 130),
    RGBColor(170, 70, 120),
];

/// One labeled efficiency curve.
pub struct Curve {
    pub label: String,
    /// (cumulative fresh rollouts, pass@1) points.
    pub points: Vec<(f64, f64)>,
}

impl Curve {
    pub fn from_rows(label: &str, rows: &[MetricsRow]) -> Self {
        Curve {
            label: label.to_string(),
            points: rows
                .iter()
                .map(|r| (r.fresh_rollouts_cum as f64, r.pass1))
                .filter(|(_, y)| y.is_finite())
                .collect(),
        }
    }
}

/// Render pass@1 vs fresh-rollout curves into an SVG file.
pub fn render_efficiency_plot(path: &Path, title: &str, curves: &[Curve]) -> Result<()> {
    if curves.iter().all(|c| c.points.is_empty()) {
        return Err(Error::Config("no plottable points in any curve".into()));
    }
    let x_max = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .fold(1.0f64, f64::max);
    let root = SVGBackend::new(path, (960, 600)).into_drawing_area();
    root.fill(&WHITE)
        .map_err(|e| Error::Config(format!("plot backend: {e}")))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 24))
        .margin(12)
        .x_label_area_size(44)
        .y_label_area_size(52)
        .build_cartesian_2d(0.0..x_max * 1.02, 0.0..1.02f64)
        .map_err(|e| Error::Config(format!("plot layout: {e}")))?;
    chart
        .configure_mesh()
        .x_desc("cumulative fresh rollouts")
        .y_desc("pass@1")
        .draw()
        .map_err(|e| Error::Config(format!("plot mesh: {e}")))?;
    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(curve.points.iter().cloned(), &color))
            .map_err(|e| Error::Config(format!("plot series: {e}")))?
            .label(curve.label.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
            });
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(|e| Error::Config(format!("plot legend: {e}")))?;
    root.present()
        .map_err(|e| Error::Config(format!("plot write: {e}")))?;
    Ok(())
}
