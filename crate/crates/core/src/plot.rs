//! Static SVG plots of sweep results: log-tau x-axis, 0-1 loss y-axis,
//! one curve per series (train error, test error, generalization gap, and
//! each risk bound). Output bytes are a pure function of the input rows, so
//! plots can be golden-file tested.

use crate::error::{Error, Result};
use crate::report::BoundReport;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 52.0;

struct Series {
    label: &'static str,
    color: &'static str,
    dashed: bool,
    // (tau, value) points, already clipped to [0, 1].
    points: Vec<(f64, f64)>,
}

// Seed-averaged value of one column at each tau, skipping failed rows.
fn averaged<F: Fn(&BoundReport) -> Option<f64>>(
    rows: &[&BoundReport],
    field: F,
) -> Vec<(f64, f64)> {
    let mut by_tau: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        if let Some(v) = field(row) {
            let entry = by_tau
                .entry(row.tau2.to_bits())
                .or_insert_with(|| (row.tau2, Vec::new()));
            entry.1.push(v);
        }
    }
    let mut points: Vec<(f64, f64)> = by_tau
        .values()
        .map(|(tau, vs)| (*tau, vs.iter().sum::<f64>() / vs.len() as f64))
        .collect();
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    points
        .into_iter()
        .map(|(tau, v)| (tau, v.clamp(0.0, 1.0)))
        .collect()
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn x_of(tau: f64, lo: f64, hi: f64) -> f64 {
    let span = (hi - lo).max(1e-12);
    MARGIN_LEFT + (tau.log10() - lo) / span * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
}

fn y_of(value: f64) -> f64 {
    let inner = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    MARGIN_TOP + (1.0 - value) * inner
}

fn render_figure(title: &str, delta: f64, series: &[Series], lo: f64, hi: f64) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"18\" font-family=\"monospace\" font-size=\"14\">{title} \
         (delta = {delta})</text>",
        MARGIN_LEFT
    );

    // Axes.
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = y_of(0.0);
    let y1 = y_of(1.0);
    let _ = writeln!(
        svg,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    for i in 0..=4 {
        let v = i as f64 * 0.25;
        let y = y_of(v);
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{x0}\" y2=\"{y}\" stroke=\"black\"/>",
            x0 - 4.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" \
             text-anchor=\"end\">{}</text>",
            x0 - 8.0,
            y + 4.0,
            fmt2(v)
        );
    }
    let mut decade = lo.ceil() as i64;
    while (decade as f64) <= hi {
        let x = x_of(10f64.powi(decade as i32), lo, hi);
        let _ = writeln!(
            svg,
            "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>",
            y0 + 4.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" \
             text-anchor=\"middle\">1e{decade}</text>",
            y0 + 18.0
        );
        decade += 1;
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" \
         text-anchor=\"middle\">tau</text>",
        (x0 + x1) / 2.0,
        y0 + 36.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" \
         transform=\"rotate(-90 16 {})\">mean 0-1 loss</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    // Curves and legend.
    let mut legend_y = MARGIN_TOP + 12.0;
    for s in series {
        if s.points.is_empty() {
            continue;
        }
        let dash = if s.dashed {
            " stroke-dasharray=\"6 3\""
        } else {
            ""
        };
        let coords: Vec<String> = s
            .points
            .iter()
            .map(|&(tau, v)| format!("{},{}", fmt2(x_of(tau, lo, hi)), fmt2(y_of(v))))
            .collect();
        if coords.len() > 1 {
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{dash} \
                 points=\"{}\"/>",
                s.color,
                coords.join(" ")
            );
        }
        for &(tau, v) in &s.points {
            let _ = writeln!(
                svg,
                "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"{}\"/>",
                fmt2(x_of(tau, lo, hi)),
                fmt2(y_of(v)),
                s.color
            );
        }
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{lx}\" y1=\"{legend_y}\" x2=\"{}\" y2=\"{legend_y}\" \
             stroke=\"{}\" stroke-width=\"1.5\"{dash}/>",
            lx + 22.0,
            s.color
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{}</text>",
            lx + 28.0,
            legend_y + 4.0,
            s.label
        );
        legend_y += 18.0;
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes one SVG per (dataset, label_mode, procedure) group found in the
/// reports, using only each group's final-epoch rows, averaged across seeds.
/// Returns the written paths in deterministic order.
pub fn emit_plots(reports: &[BoundReport], delta: f64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::domain("no reports to plot"));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut groups: BTreeMap<String, Vec<&BoundReport>> = BTreeMap::new();
    for report in reports {
        if report.is_failed() {
            continue;
        }
        let key = format!(
            "{}_{}_{}",
            report.dataset, report.label_mode, report.procedure
        );
        groups.entry(key).or_default().push(report);
    }
    if groups.is_empty() {
        return Err(Error::domain("all report rows are failed"));
    }

    let mut written = Vec::new();
    for (key, rows) in groups {
        let final_epoch = rows.iter().map(|r| r.epoch).max().unwrap();
        let rows: Vec<&BoundReport> = rows
            .into_iter()
            .filter(|r| r.epoch == final_epoch)
            .collect();
        let taus: Vec<f64> = rows.iter().map(|r| r.tau2).collect();
        let lo = taus
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            .max(1e-12)
            .log10();
        let hi = taus
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            .max(1e-12)
            .log10();

        let series = [
            Series {
                label: "train error",
                color: "#1f77b4",
                dashed: false,
                points: averaged(&rows, |r| r.train_err01),
            },
            Series {
                label: "test error",
                color: "#2ca02c",
                dashed: false,
                points: averaged(&rows, |r| r.test_err01),
            },
            Series {
                label: "gap (test-train)",
                color: "#7f7f7f",
                dashed: false,
                points: averaged(&rows, |r| {
                    Some((r.test_err01? - r.train_err01?).clamp(0.0, 1.0))
                }),
            },
            Series {
                label: "Lever risk bound",
                color: "#d62728",
                dashed: true,
                points: averaged(&rows, |r| r.risk_bound_lever),
            },
            Series {
                label: "DP risk bound",
                color: "#9467bd",
                dashed: true,
                points: averaged(&rows, |r| r.risk_bound_dp),
            },
        ];
        let svg = render_figure(&key, delta, &series, lo, hi);
        let path = out_dir.join(format!("{key}.svg"));
        std::fs::write(&path, svg.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelMode;

    fn row(tau: f64, seed: u64, test: f64) -> BoundReport {
        BoundReport {
            seed,
            dataset: "synth".to_string(),
            label_mode: LabelMode::True,
            procedure: "one-stage".to_string(),
            tau1: None,
            tau2: tau,
            gamma: None,
            epoch: 100,
            train_err01: Some(0.1),
            test_err01: Some(test),
            train_xent: Some(0.5),
            kl_upper_raw: None,
            kl_upper: None,
            epsilon: None,
            rhs_dp: None,
            rhs_lever: Some(0.2),
            risk_bound_dp: None,
            risk_bound_lever: Some(0.4),
            runtime_s: 1.0,
        }
    }

    #[test]
    fn single_row_produces_valid_svg() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_plots(&[row(10.0, 1, 0.2)], 0.05, dir.path()).unwrap();
        assert_eq!(paths.len(), 1);
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.trim_end().ends_with("</svg>"));
        assert!(text.contains("delta = 0.05"));
        assert!(text.contains("circle"));
    }

    #[test]
    fn output_is_deterministic_and_clipped() {
        let dir = tempfile::tempdir().unwrap();
        // A bound far above 1 must be clipped onto the top axis line.
        let mut big = row(100.0, 1, 0.3);
        big.risk_bound_lever = Some(3.5);
        let reports = vec![row(1.0, 1, 0.2), row(1.0, 2, 0.4), big];
        let a = emit_plots(&reports, 0.05, dir.path()).unwrap();
        let bytes_a = std::fs::read(&a[0]).unwrap();
        let b = emit_plots(&reports, 0.05, dir.path()).unwrap();
        let bytes_b = std::fs::read(&b[0]).unwrap();
        assert_eq!(bytes_a, bytes_b);
        let text = String::from_utf8(bytes_a).unwrap();
        // y(1.0) is the top of the plot area; the clipped point sits there.
        let top = format!("cy=\"{:.2}\"", MARGIN_TOP);
        assert!(text.contains(&top));
    }

    #[test]
    fn empty_input_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plots(&[], 0.05, dir.path()).is_err());
    }
}
