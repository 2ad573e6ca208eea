//! Figure emission: render the sweep CSVs to SVG, one file per figure
//! analogue, deterministic names and content.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::MetricsRow;
use crate::sweep::GridRow;

const COLORS: [RGBColor; 4] = [
    RGBColor(214, 69, 65),
    RGBColor(31, 119, 180),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
];

fn combo_label(tx: bool, rx: bool) -> String {
    format!(
        "Tx: {}, Rx: {}",
        if tx { "plug" } else { "unplug" },
        if rx { "plug" } else { "unplug" }
    )
}

fn series<'a>(
    rows: &'a [MetricsRow],
    tx: bool,
    rx: bool,
    value: impl Fn(&MetricsRow) -> Option<f64> + 'a,
    x_of: impl Fn(&MetricsRow) -> Option<f64> + 'a,
) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.tx_plug == tx && r.rx_plug == rx)
        .filter_map(|r| Some((x_of(r)?, value(r)?)))
        .collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pts
}

fn bounds(points: &[(f64, f64)]) -> (f64, f64) {
    let lo = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo).abs() * 0.1).max(1e-3);
    (lo - pad, hi + pad)
}

#[allow(clippy::type_complexity)]
fn panel(
    area: &DrawingArea<SVGBackend, plotters::coord::Shift>,
    title: &str,
    x_label: &str,
    y_label: &str,
    lines: &[(String, Vec<(f64, f64)>)],
) -> Result<()> {
    let all: Vec<(f64, f64)> = lines.iter().flat_map(|(_, pts)| pts.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::invalid(format!("no data for panel '{title}'")));
    }
    let x_lo = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_hi = all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let (y_lo, y_hi) = bounds(&all);
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(8)
        .x_label_area_size(34)
        .y_label_area_size(54)
        .build_cartesian_2d(x_lo..x_hi.max(x_lo + 1e-9), y_lo..y_hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    for (i, (label, pts)) in lines.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), &color))
            .map_err(plot_err)?
            .label(label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart
            .draw_series(pts.iter().map(|&(x, y)| Circle::new((x, y), 3, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(plot_err)?;
    Ok(())
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::format(format!("plotting failed: {e}"))
}

fn three_panel(
    path: &Path,
    rows: &[MetricsRow],
    titles: [&str; 3],
    values: [&dyn Fn(&MetricsRow) -> Option<f64>; 3],
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("no rows to plot"));
    }
    let root = SVGBackend::new(path, (1380, 430)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let areas = root.split_evenly((1, 3));
    for ((area, title), value) in areas.iter().zip(titles).zip(values) {
        let mut lines = Vec::new();
        for &tx in &[true, false] {
            for &rx in &[true, false] {
                let pts = series(rows, tx, rx, value, |r| {
                    r.psr_db.is_none().then_some(r.snr_eve_db)
                });
                if !pts.is_empty() {
                    lines.push((combo_label(tx, rx), pts));
                }
            }
        }
        panel(area, title, "Eve SNR (dB)", title, &lines)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Scenario-I figure: communication MSE, privacy-leakage MI and covertness
/// MSE against the Eve-link SNR, all plug/unplug combinations.
pub fn plot_scenario1(rows: &[MetricsRow], out: &Path) -> Result<()> {
    three_panel(
        out,
        rows,
        ["Communication MSE", "Privacy leakage MI (nats)", "Covertness MSE"],
        [
            &|r: &MetricsRow| Some(r.comm_mse),
            &|r: &MetricsRow| r.mi_upper_nats,
            &|r: &MetricsRow| Some(r.covertness_mse),
        ],
    )
}

/// Scenario-II figure: MSE, Eve accuracy and perturbation power against the
/// Eve-link SNR.
pub fn plot_scenario2(rows: &[MetricsRow], out: &Path) -> Result<()> {
    let eve_rows: Vec<MetricsRow> = rows.iter().filter(|r| r.psr_db.is_none() || !r.tx_plug || r.snr_eve_db != r.snr_bob_db).cloned().collect();
    let use_rows = if eve_rows.is_empty() { rows } else { &eve_rows[..] };
    three_panel(
        out,
        use_rows,
        ["Communication MSE", "Eve accuracy", "Covertness MSE"],
        [
            &|r: &MetricsRow| Some(r.comm_mse),
            &|r: &MetricsRow| r.eve_accuracy,
            &|r: &MetricsRow| Some(r.covertness_mse),
        ],
    )
}

/// Allocator-vs-grid figure: objective values per state, one series pair per
/// Bob SNR.
pub fn plot_ddpg_grid(rows: &[GridRow], out: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("no rows to plot"));
    }
    let root = SVGBackend::new(out, (760, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut bob_values: Vec<f64> = rows.iter().map(|r| r.snr_bob_db).collect();
    bob_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bob_values.dedup();

    let mut lines = Vec::new();
    for &bob in &bob_values {
        let mut grid_pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.snr_bob_db == bob)
            .map(|r| (r.snr_eve_db, r.j_grid))
            .collect();
        grid_pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut actor_pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.snr_bob_db == bob)
            .map(|r| (r.snr_eve_db, r.j_actor))
            .collect();
        actor_pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        lines.push((format!("grid search, Bob {bob} dB"), grid_pts));
        lines.push((format!("DDPG actor, Bob {bob} dB"), actor_pts));
    }
    panel(&root, "Objective value", "Eve SNR (dB)", "J", &lines)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// PSR figures: MSE (and accuracy when present) against perturbation-to-signal
/// ratio.
pub fn plot_psr(rows: &[MetricsRow], out: &Path, with_accuracy: bool) -> Result<()> {
    let psr_rows: Vec<MetricsRow> = rows.iter().filter(|r| r.psr_db.is_some()).cloned().collect();
    if psr_rows.is_empty() {
        return Err(Error::invalid("no PSR rows to plot"));
    }
    let (w, panels) = if with_accuracy { (920, 2) } else { (520, 1) };
    let root = SVGBackend::new(out, (w, 430)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let areas = root.split_evenly((1, panels));

    let mse_lines: Vec<(String, Vec<(f64, f64)>)> = [true, false]
        .iter()
        .filter_map(|&rx| {
            let pts = series(&psr_rows, true, rx, |r| Some(r.comm_mse), |r| r.psr_db);
            (!pts.is_empty()).then(|| (combo_label(true, rx), pts))
        })
        .collect();
    panel(&areas[0], "Communication MSE", "PSR (dB)", "MSE", &mse_lines)?;

    if with_accuracy {
        let acc_lines: Vec<(String, Vec<(f64, f64)>)> = [true, false]
            .iter()
            .filter_map(|&rx| {
                let pts = series(&psr_rows, true, rx, |r| r.eve_accuracy, |r| r.psr_db);
                (!pts.is_empty()).then(|| (combo_label(true, rx), pts))
            })
            .collect();
        panel(&areas[1], "Eve accuracy", "PSR (dB)", "accuracy", &acc_lines)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Render every figure whose CSV exists under `metrics_dir` into `out_dir`.
/// Returns the files written.
pub fn emit_plots(metrics_dir: &Path, out_dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let s1 = metrics_dir.join("scenario1.csv");
    if s1.exists() {
        let rows = crate::metrics::read_rows(&s1)?;
        let out = out_dir.join("fig4_scenario1.svg");
        plot_scenario1(&rows, &out)?;
        written.push(out);
    }
    let grid = metrics_dir.join("ddpg_grid.csv");
    if grid.exists() {
        let rows = crate::sweep::read_grid_rows(&grid)?;
        let out = out_dir.join("fig5_ddpg_vs_grid.svg");
        plot_ddpg_grid(&rows, &out)?;
        written.push(out);
    }
    let s2 = metrics_dir.join("scenario2.csv");
    if s2.exists() {
        let rows = crate::metrics::read_rows(&s2)?;
        let out = out_dir.join("fig6_scenario2.svg");
        plot_scenario2(&rows, &out)?;
        written.push(out);
        let out = out_dir.join("fig8_psr_tradeoff.svg");
        plot_psr(&rows, &out, true)?;
        written.push(out);
    }
    let zn = metrics_dir.join("scenario2_zero_noise.csv");
    if zn.exists() {
        let rows = crate::metrics::read_rows(&zn)?;
        let out = out_dir.join("fig7_zero_noise_psr.svg");
        plot_psr(&rows, &out, false)?;
        written.push(out);
    }
    if written.is_empty() {
        return Err(Error::Missing(format!(
            "no sweep CSV files in {}",
            metrics_dir.display()
        )));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<MetricsRow> {
        let mut out = Vec::new();
        for &snr in &[-5.0, 5.0, 15.0] {
            for &tx in &[true, false] {
                for &rx in &[true, false] {
                    out.push(MetricsRow {
                        scenario: "agn".into(),
                        dataset: "synth".into(),
                        tx_plug: tx,
                        rx_plug: rx,
                        snr_bob_db: 5.0,
                        snr_eve_db: snr,
                        u: tx.then_some(0.5),
                        psr_db: None,
                        comm_mse: 0.02 + snr.abs() * 1e-3,
                        mi_upper_nats: Some(if tx { 1.5 } else { 8.0 + snr }),
                        covertness_mse: if tx { 0.9 } else { 0.0 },
                        eve_accuracy: Some(0.4),
                        seed: 1,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn scenario1_plot_has_three_panels_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.svg");
        let p2 = dir.path().join("b.svg");
        plot_scenario1(&rows(), &p1).unwrap();
        plot_scenario1(&rows(), &p2).unwrap();
        let (b1, b2) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(b1, b2);
        let text = String::from_utf8(b1).unwrap();
        assert!(text.contains("Communication MSE"));
        assert!(text.contains("Privacy leakage MI"));
        assert!(text.contains("Covertness MSE"));
    }

    #[test]
    fn empty_rows_are_an_error_and_no_file_is_left() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fig.svg");
        assert!(plot_scenario1(&[], &p).is_err());
    }

    #[test]
    fn emit_plots_requires_some_csv() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_plots(dir.path(), &dir.path().join("figs")),
            Err(Error::Missing(_))
        ));
    }

    #[test]
    fn emit_plots_renders_present_csvs() {
        let dir = tempfile::tempdir().unwrap();
        crate::metrics::write_rows(&dir.path().join("scenario1.csv"), &rows()).unwrap();
        let written = emit_plots(dir.path(), &dir.path().join("figs")).unwrap();
        assert_eq!(written.len(), 1);
        assert!(written[0].ends_with("fig4_scenario1.svg"));
        assert!(written[0].exists());
    }
}
