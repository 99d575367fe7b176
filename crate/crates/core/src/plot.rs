//! Static SVG figures. Plots carry no timestamps, so identical inputs give
//! identical files.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::series::write_atomic;

const SIZE: (u32, u32) = (800, 520);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(90, 90, 90),
];

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(format!("plot: {e}")))
}

/// Named polyline.
pub struct Line<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn bounds<'a>(pts: impl Iterator<Item = &'a (f64, f64)>) -> ((f64, f64), (f64, f64)) {
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        if x.is_finite() && y.is_finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !x0.is_finite() {
        return ((0.0, 1.0), (0.0, 1.0));
    }
    let pad = |a: f64, b: f64| {
        let w = if b > a { 0.05 * (b - a) } else { 0.5 };
        (a - w, b + w)
    };
    (pad(x0, x1), pad(y0, y1))
}

/// Line plot with optional dotted vertical markers.
pub fn lines(
    path: &Path,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Line],
    vlines: &[f64],
) -> Result<()> {
    let mut buf = String::new();
    {
        let root = SVGBackend::with_string(&mut buf, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let ((x0, x1), (y0, y1)) = bounds(series.iter().flat_map(|s| s.points.iter()));
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc(xlabel)
            .y_desc(ylabel)
            .draw()
            .map_err(plot_err)?;
        for &v in vlines {
            chart
                .draw_series(DashedLineSeries::new(
                    vec![(v, y0), (v, y1)],
                    4,
                    4,
                    BLACK.stroke_width(1),
                ))
                .map_err(plot_err)?;
        }
        for (k, s) in series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<(f64, f64)> = s
                .points
                .iter()
                .copied()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .collect();
            chart
                .draw_series(LineSeries::new(pts, color.stroke_width(2)))
                .map_err(plot_err)?
                .label(s.label)
                .legend(move |(x, y)| {
                    PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
                });
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    write_atomic(path, buf.as_bytes())
}

/// Spectrum curves with eigenfrequency markers `(β, weight)` drawn as diamonds.
pub fn spectrum_with_diamonds(
    path: &Path,
    title: &str,
    series: &[Line],
    diamonds: &[(f64, f64)],
) -> Result<()> {
    let mut buf = String::new();
    {
        let root = SVGBackend::with_string(&mut buf, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let ((x0, x1), _) = bounds(
            series
                .iter()
                .flat_map(|s| s.points.iter())
                .chain(diamonds.iter()),
        );
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0.max(0.0)..x1, 0.0..1.1)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("ω/κ")
            .y_desc("normalised amplitude")
            .draw()
            .map_err(plot_err)?;
        for (k, s) in series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(
                    s.points.iter().copied(),
                    color.stroke_width(2),
                ))
                .map_err(plot_err)?
                .label(s.label)
                .legend(move |(x, y)| {
                    PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
                });
        }
        let blue = RGBColor(0, 60, 220);
        chart
            .draw_series(diamonds.iter().map(|&(b, w)| {
                EmptyElement::at((b, w))
                    + Polygon::new(vec![(0, -6), (5, 0), (0, 6), (-5, 0)], blue.filled())
            }))
            .map_err(plot_err)?
            .label("eigenfrequencies")
            .legend(move |(x, y)| Circle::new((x + 9, y), 4, blue.filled()));
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    write_atomic(path, buf.as_bytes())
}

/// Eigenvalue scatter in the complex plane, one colour per group.
pub fn eigenvalues(path: &Path, title: &str, groups: &[(&str, Vec<(f64, f64)>)]) -> Result<()> {
    let mut buf = String::new();
    {
        let root = SVGBackend::with_string(&mut buf, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let ((x0, x1), (y0, y1)) = bounds(groups.iter().flat_map(|g| g.1.iter()));
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("Re λ")
            .y_desc("Im λ")
            .draw()
            .map_err(plot_err)?;
        for (k, (label, pts)) in groups.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            chart
                .draw_series(pts.iter().map(|&p| Circle::new(p, 2, color.filled())))
                .map_err(plot_err)?
                .label(*label)
                .legend(move |(x, y)| Circle::new((x + 9, y), 3, color.filled()));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    write_atomic(path, buf.as_bytes())
}
