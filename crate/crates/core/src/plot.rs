//! Minimal SVG line charts for metrics streams.

use std::fmt::Write as _;
use std::path::Path;

use crate::metrics::MetricsRecord;
use crate::{Error, Result};

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn render(title: &str, series: &[Series]) -> String {
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = write!(
        svg,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">{title}</text>",
        WIDTH / 2.0
    );
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in &s.points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !x_min.is_finite() {
        (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
    }
    if (x_max - x_min).abs() < 1e-12 {
        x_max = x_min + 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x_min) / (x_max - x_min) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_min) / (y_max - y_min) * (HEIGHT - 2.0 * MARGIN);
    // axes
    let _ = write!(
        svg,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\
         <text x=\"{m}\" y=\"{by}\" text-anchor=\"middle\">{x_min:.0}</text>\
         <text x=\"{r}\" y=\"{by}\" text-anchor=\"middle\">{x_max:.0}</text>\
         <text x=\"{ly}\" y=\"{b}\" text-anchor=\"end\">{y_min:.3}</text>\
         <text x=\"{ly}\" y=\"{t}\" text-anchor=\"end\">{y_max:.3}</text>",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN,
        by = HEIGHT - MARGIN + 16.0,
        ly = MARGIN - 6.0,
    );
    for (i, s) in series.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = write!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            s.color,
            path.join(" ")
        );
        let ly = MARGIN + 16.0 * i as f64;
        let _ = write!(
            svg,
            "<rect x=\"{x}\" y=\"{y}\" width=\"10\" height=\"10\" fill=\"{c}\"/>\
             <text x=\"{tx}\" y=\"{ty}\">{l}</text>",
            x = WIDTH - MARGIN - 120.0,
            y = ly,
            c = s.color,
            tx = WIDTH - MARGIN - 106.0,
            ty = ly + 9.0,
            l = s.label
        );
    }
    svg.push_str("</svg>");
    svg
}

/// Renders loss, accuracy, and gate-state figures from a metrics stream.
/// Returns the written file paths.
pub fn plot_metrics(records: &[MetricsRecord], out_dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    if records.is_empty() {
        return Err(Error::Data("metrics stream is empty".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let epochs = |f: &dyn Fn(&MetricsRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        records
            .iter()
            .filter_map(|r| f(r).map(|v| (r.epoch as f64, v)))
            .collect()
    };
    let losses = render(
        "training losses",
        &[
            Series {
                label: "total",
                color: "#1f77b4",
                points: epochs(&|r| Some(r.loss_total)),
            },
            Series {
                label: "recon",
                color: "#ff7f0e",
                points: epochs(&|r| r.loss_recon),
            },
            Series {
                label: "supervised",
                color: "#2ca02c",
                points: epochs(&|r| Some(r.loss_sup)),
            },
            Series {
                label: "pseudo",
                color: "#d62728",
                points: epochs(&|r| Some(r.loss_pseudo)),
            },
        ],
    );
    let accuracy = render(
        "accuracy",
        &[
            Series {
                label: "val_conf_acc",
                color: "#1f77b4",
                points: epochs(&|r| Some(r.gate.val_conf_acc)),
            },
            Series {
                label: "test_acc",
                color: "#d62728",
                points: epochs(&|r| r.test_acc),
            },
        ],
    );
    let gate = render(
        "gate state and accept rate",
        &[
            Series {
                label: "gate",
                color: "#1f77b4",
                points: epochs(&|r| Some(r.gate.g as f64)),
            },
            Series {
                label: "accept_rate",
                color: "#2ca02c",
                points: epochs(&|r| Some(r.filter.accept_rate())),
            },
        ],
    );
    let mut written = Vec::new();
    for (name, svg) in [
        ("losses.svg", losses),
        ("accuracy.svg", accuracy),
        ("gate.svg", gate),
    ] {
        let path = out_dir.join(name);
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{FilterStats, GateTelemetry};

    #[test]
    fn writes_three_well_formed_figures() {
        let records: Vec<MetricsRecord> = (1..=5)
            .map(|epoch| MetricsRecord {
                epoch,
                stage: "pretrain".into(),
                loss_recon: Some(1.0 / epoch as f64),
                loss_sup: 1.5 / epoch as f64,
                loss_pseudo: 0.0,
                loss_total: 2.5 / epoch as f64,
                lambda_p_eff: 0.0,
                gate: GateTelemetry {
                    g: u8::from(epoch > 3),
                    val_conf_acc: 0.2 * epoch as f64,
                    val_accepted_count: epoch,
                    below_count: 0,
                },
                filter: FilterStats::new(4),
                test_acc: if epoch == 5 { Some(0.8) } else { None },
                wall_time_s: 1.0,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let paths = plot_metrics(&records, dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        for p in paths {
            let text = std::fs::read_to_string(p).unwrap();
            assert!(text.starts_with("<svg"));
            assert!(text.ends_with("</svg>"));
        }
    }

    #[test]
    fn empty_stream_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(plot_metrics(&[], dir.path()).is_err());
    }
}
