//! Aggregation of finished runs. Only stored result rows are read; nothing
//! is recomputed.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use gridcast_core::objectives::MetricReport;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::plot::{self, Curve, Panel};
use crate::run::{read_results, ResultRow};

pub const METRICS: [&str; 2] = ["acc", "rmse"];

fn title(metric: &str) -> &'static str {
    match metric {
        "acc" => "Geometric ACC",
        _ => "Geometric RMSE",
    }
}

/// Channel-mean curve of `metric` for every run, in first-seen order.
pub fn metric_curves(rows: &[ResultRow], metric: &str) -> Vec<Curve> {
    let mut runs: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        if !runs.contains(&(&r.run_id, &r.label)) {
            runs.push((&r.run_id, &r.label));
        }
    }
    runs.into_iter()
        .map(|(id, label)| {
            let mut points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| {
                    r.run_id == id && r.metric == metric && r.channel == MetricReport::AGGREGATE
                })
                .map(|r| (r.horizon_steps as f64, r.value))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Curve {
                name: label.to_string(),
                points,
            }
        })
        .filter(|c| !c.points.is_empty())
        .collect()
}

/// ACC and RMSE panels of `rows` written to `path`.
pub fn plot_panels(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let panels: Vec<Panel> = METRICS
        .iter()
        .map(|m| Panel {
            title: title(m).into(),
            y_label: m.to_string(),
            curves: metric_curves(rows, m),
        })
        .filter(|p| !p.curves.is_empty())
        .collect();
    plot::panels(path, &panels)
}

/// Difference of one run's metric from the designated default run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Marginal {
    pub run_id: String,
    pub label: String,
    pub metric: String,
    pub horizon_steps: usize,
    pub value: f64,
    pub default_value: f64,
    pub difference: f64,
}

fn mean_value(rows: &[ResultRow], run_id: &str, metric: &str, horizon: usize) -> Option<f64> {
    rows.iter()
        .find(|r| {
            r.run_id == run_id
                && r.metric == metric
                && r.horizon_steps == horizon
                && r.channel == MetricReport::AGGREGATE
        })
        .map(|r| r.value)
}

/// `metric(run) - metric(default)` at `horizon` for every other run.
pub fn marginal_contributions(
    rows: &[ResultRow],
    default_run: &str,
    horizon: usize,
) -> Result<Vec<Marginal>> {
    let mut out = Vec::new();
    let runs: BTreeSet<(&str, &str)> = rows
        .iter()
        .map(|r| (r.run_id.as_str(), r.label.as_str()))
        .collect();
    for metric in METRICS {
        let Some(base) = mean_value(rows, default_run, metric, horizon) else {
            continue;
        };
        for &(id, label) in runs.iter().filter(|(id, _)| *id != default_run) {
            if let Some(v) = mean_value(rows, id, metric, horizon) {
                out.push(Marginal {
                    run_id: id.into(),
                    label: label.into(),
                    metric: metric.into(),
                    horizon_steps: horizon,
                    value: v,
                    default_value: base,
                    difference: v - base,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Usage(format!(
            "no runs to compare against `{default_run}` at horizon {horizon}"
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct CompareOptions {
    /// Run id (or label) of the reference run for marginal bars.
    pub default_run: Option<String>,
    /// Horizon of the marginal bars; the longest common one when absent.
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<ResultRow>,
    pub marginal: Vec<Marginal>,
    pub files: Vec<PathBuf>,
}

/// Merges the result tables of `run_dirs` into `out`: `comparison.csv`,
/// one figure per metric and, with a default run, marginal bars.
pub fn compare(run_dirs: &[PathBuf], out: &Path, opts: &CompareOptions) -> Result<Comparison> {
    if run_dirs.is_empty() {
        return Err(Error::Usage(
            "compare needs at least one run directory".into(),
        ));
    }
    let mut rows = Vec::new();
    for dir in run_dirs {
        rows.extend(read_results(&dir.join("results.csv"))?);
    }
    rows.sort_by(|a, b| {
        (&a.label, &a.metric, a.horizon_steps, &a.channel).cmp(&(
            &b.label,
            &b.metric,
            b.horizon_steps,
            &b.channel,
        ))
    });
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = Vec::new();

    let merged = out.join("comparison.csv");
    let mut w =
        csv::Writer::from_path(&merged).map_err(|e| Error::format(&merged, e.to_string()))?;
    for r in &rows {
        w.serialize(r)
            .map_err(|e| Error::format(&merged, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&merged, e))?;
    files.push(merged);

    for metric in METRICS {
        let curves = metric_curves(&rows, metric);
        if curves.is_empty() {
            continue;
        }
        let path = out.join(format!("{metric}.svg"));
        plot::panels(
            &path,
            &[Panel {
                title: title(metric).into(),
                y_label: metric.into(),
                curves,
            }],
        )?;
        files.push(path);
    }

    let mut marginal = Vec::new();
    if let Some(default) = &opts.default_run {
        let id = rows
            .iter()
            .find(|r| &r.run_id == default || &r.label == default)
            .map(|r| r.run_id.clone())
            .ok_or_else(|| {
                Error::Usage(format!("default run `{default}` is not among the inputs"))
            })?;
        let horizon = match opts.horizon {
            Some(h) => h,
            None => rows
                .iter()
                .filter(|r| r.run_id == id)
                .map(|r| r.horizon_steps)
                .max()
                .expect("default run has rows"),
        };
        marginal = marginal_contributions(&rows, &id, horizon)?;
        let path = out.join("marginal.csv");
        let mut w =
            csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
        for m in &marginal {
            w.serialize(m)
                .map_err(|e| Error::format(&path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        files.push(path);
        for metric in METRICS {
            let bars: Vec<(String, f64)> = marginal
                .iter()
                .filter(|m| m.metric == metric)
                .map(|m| (m.label.clone(), m.difference))
                .collect();
            if bars.is_empty() {
                continue;
            }
            let path = out.join(format!("marginal_{metric}.svg"));
            plot::bars(
                &path,
                &format!("{} vs. default, horizon {horizon}", title(metric)),
                &format!("{metric} - {metric}(default)"),
                &bars,
            )?;
            files.push(path);
        }
    }
    Ok(Comparison {
        rows,
        marginal,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(run: &str, rmse: [f64; 2]) -> Vec<ResultRow> {
        [1, 2]
            .iter()
            .zip(rmse)
            .flat_map(|(&h, v)| {
                [("rmse", v), ("acc", 1.0 - v)].map(|(metric, value)| ResultRow {
                    run_id: run.into(),
                    label: format!("label_{run}"),
                    horizon_steps: h,
                    metric: metric.into(),
                    channel: "MEAN".into(),
                    value,
                })
            })
            .collect()
    }

    fn write_run(root: &Path, run: &str, rmse: [f64; 2]) -> PathBuf {
        let dir = root.join(run);
        std::fs::create_dir_all(&dir).unwrap();
        let mut w = csv::Writer::from_path(dir.join("results.csv")).unwrap();
        for r in rows(run, rmse) {
            w.serialize(r).unwrap();
        }
        w.flush().unwrap();
        dir
    }

    #[test]
    fn two_runs_two_curves_and_marginal_bars() {
        let tmp = tempfile::tempdir().unwrap();
        let a = write_run(tmp.path(), "a", [0.2, 0.4]);
        let b = write_run(tmp.path(), "b", [0.1, 0.3]);
        let out = tmp.path().join("cmp");
        let opts = CompareOptions {
            default_run: Some("a".into()),
            horizon: Some(2),
        };
        let c = compare(&[a, b], &out, &opts).unwrap();
        let svg = std::fs::read_to_string(out.join("rmse.svg")).unwrap();
        assert!(svg.contains("label_a") && svg.contains("label_b"));
        let m: Vec<_> = c.marginal.iter().filter(|m| m.metric == "rmse").collect();
        assert_eq!(m.len(), 1);
        assert!((m[0].difference - (0.3 - 0.4)).abs() < 1e-15);
        assert!(out.join("marginal_rmse.svg").exists());
        assert_eq!(metric_curves(&c.rows, "rmse").len(), 2);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(compare(&[], tmp.path(), &CompareOptions::default()).is_err());
        let dir = tmp.path().join("odd");
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("results.csv"), "run_id,horizon,score\nx,1,0.5\n").unwrap();
        let err = compare(&[dir], &tmp.path().join("o"), &CompareOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        assert!(err.to_string().contains("score"));
    }
}
