use std::path::Path;

use plotters::prelude::*;
use stokes_afem::ConvergenceTable;

/// Estimator and total error against Ndof on log-log axes, with reference
/// slopes -1 and -1/2 through the first estimator value.
pub fn write_svg(table: &ConvergenceTable, path: &Path) -> anyhow::Result<()> {
    anyhow::ensure!(!table.rows.is_empty(), "empty convergence table");
    let est: Vec<(f64, f64)> =
        table.rows.iter().filter(|r| r.estimator > 0.0).map(|r| (r.ndof as f64, r.estimator)).collect();
    let err: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter_map(|r| r.error.filter(|e| e.total > 0.0).map(|e| (r.ndof as f64, e.total)))
        .collect();
    anyhow::ensure!(!est.is_empty(), "estimator vanishes on every row");

    let (n0, q0) = est[0];
    let n1 = table.rows.last().unwrap().ndof as f64;
    let n1 = if n1 > n0 { n1 } else { 2.0 * n0 };
    let slope = |s: f64| vec![(n0, q0), (n1, q0 * (n1 / n0).powf(-s))];
    let (ref1, ref_half) = (slope(1.0), slope(0.5));

    let ys = est.iter().chain(&err).chain(&ref1).chain(&ref_half).map(|p| p.1);
    let (ymin, ymax) = ys.fold((f64::INFINITY, 0.0f64), |(lo, hi), y| (lo.min(y), hi.max(y)));

    let root = SVGBackend::new(path, (720, 540)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d((n0 * 0.9..n1 * 1.1).log_scale(), (ymin * 0.8..ymax * 1.25).log_scale())?;
    chart.configure_mesh().x_desc("Ndof").y_desc("value").draw()?;

    chart.draw_series(LineSeries::new(est.clone(), BLUE.stroke_width(2)))?.label("estimator").legend(|(x, y)| {
        PathElement::new(vec![(x, y), (x + 20, y)], BLUE.stroke_width(2))
    });
    chart.draw_series(est.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))?;
    if !err.is_empty() {
        chart.draw_series(LineSeries::new(err.clone(), RED.stroke_width(2)))?.label("error").legend(|(x, y)| {
            PathElement::new(vec![(x, y), (x + 20, y)], RED.stroke_width(2))
        });
        chart.draw_series(err.iter().map(|&p| TriangleMarker::new(p, 4, RED.filled())))?;
    }
    chart
        .draw_series(LineSeries::new(ref1, BLACK))?
        .label("Ndof^-1")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK));
    let grey = RGBColor(128, 128, 128);
    chart
        .draw_series(LineSeries::new(ref_half, grey))?
        .label("Ndof^-1/2")
        .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], grey));
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}
