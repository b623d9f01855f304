//! Static SVG line charts drawn from the TSV outputs.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use plotters::prelude::*;

pub type Series = (String, Vec<(f64, f64)>);

pub fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let points = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() || !y0.is_finite() {
        return Err(anyhow!("nothing to plot for {}", path.display()));
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    let pad = if y1 > y0 { 0.05 * (y1 - y0) } else { 0.5 };
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))?;
        chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw()?;
        for (k, (name, pts)) in series.iter().enumerate() {
            let color = Palette99::pick(k).to_rgba();
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))?
                .label(name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
            chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()?;
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| anyhow!("{e}")).with_context(|| format!("drawing {}", path.display()))
}

/// Reads `(x, y)` pairs from a TSV, keeping rows where every `filters`
/// column equals its value; one series per distinct `series_col` value.
pub fn series_from_tsv(
    text: &str,
    x_col: &str,
    y_col: &str,
    series_col: &str,
    filters: &[(&str, &str)],
) -> Result<Vec<Series>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split('\t').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| anyhow!("column `{name}` missing"))
    };
    let (xi, yi, si) = (col(x_col)?, col(y_col)?, col(series_col)?);
    let fi: Vec<(usize, &str)> = filters
        .iter()
        .map(|(c, v)| Ok((col(c)?, *v)))
        .collect::<Result<_>>()?;
    let mut out: Vec<Series> = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if fi.iter().any(|&(c, v)| f.get(c) != Some(&v)) {
            continue;
        }
        let x: f64 = f[xi].parse()?;
        let y: f64 = f[yi].parse()?;
        match out.iter_mut().find(|(n, _)| n == f[si]) {
            Some((_, p)) => p.push((x, y)),
            None => out.push((f[si].to_string(), vec![(x, y)])),
        }
    }
    Ok(out)
}
