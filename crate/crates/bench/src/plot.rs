use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;

use sls_core::bench::Fig2Result;

/// Relative closed-loop differences against controller order.
pub fn fig2(r: &Fig2Result, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let lo = r.rows.iter().map(|e| e.tc).min().unwrap_or(1) as f64;
    let hi = r.rows.iter().map(|e| e.tc).max().unwrap_or(2) as f64;
    let ymax = r
        .rows
        .iter()
        .flat_map(|e| [e.dx, e.du])
        .fold(0.0, f64::max)
        .max(1e-3)
        * 1.1;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .caption("Closed-loop difference (relative H2)", ("sans-serif", 18))
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(lo..hi.max(lo + 1.0), 0.0..ymax)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc("controller order Tc")
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    for (label, color, pick) in [
        ("dx", BLUE, (|e: &sls_core::bench::Evaluation| e.dx) as fn(&_) -> f64),
        ("du", RED, |e| e.du),
    ] {
        chart
            .draw_series(LineSeries::new(
                r.rows.iter().map(|e| (e.tc as f64, pick(e))),
                color.stroke_width(2),
            ))
            .map_err(|e| anyhow!("{e}"))?
            .label(label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}
