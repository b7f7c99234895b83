use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Curve, CurvePoint, Method};

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("moving-average window must be >= 1")]
    ZeroWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotConfig {
    /// Trailing moving-average window; 1 leaves curves unsmoothed.
    pub window: usize,
    pub width: u32,
    pub height: u32,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            window: 50,
            width: 720,
            height: 420,
        }
    }
}

/// Trailing mean over the last `window` values (fewer at the start).
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|i| {
            let win = &xs[(i + 1).saturating_sub(w)..=i];
            win.iter().sum::<f64>() / win.len() as f64
        })
        .collect()
}

struct Metric {
    key: &'static str,
    file: &'static str,
    label: &'static str,
    get: fn(&CurvePoint) -> f64,
}

const METRICS: [Metric; 4] = [
    Metric {
        key: "expected_final_reward",
        file: "reward.svg",
        label: "expected final reward",
        get: |p| p.expected_final_reward,
    },
    Metric {
        key: "stepwise_accuracy",
        file: "stepwise_accuracy.svg",
        label: "stepwise accuracy",
        get: |p| p.stepwise_accuracy,
    },
    Metric {
        key: "mean_traj_length",
        file: "length.svg",
        label: "mean correct-prefix length",
        get: |p| p.mean_traj_length,
    },
    Metric {
        key: "sampled_final_reward",
        file: "sampled_reward.svg",
        label: "sampled group reward",
        get: |p| p.sampled_final_reward,
    },
];

fn color(m: Method) -> &'static str {
    match m {
        Method::Terminal => "#7f7f7f",
        Method::StepGroup => "#1f77b4",
        Method::Bilevel => "#d62728",
    }
}

/// Writes `curves.csv`, one SVG per metric (raw and smoothed) and
/// `metadata.json` into `dir`. Returns the written paths.
pub fn plot_curves(
    curves: &[Curve],
    dir: &Path,
    cfg: &PlotConfig,
) -> Result<Vec<PathBuf>, PlotError> {
    if cfg.window == 0 {
        return Err(PlotError::ZeroWindow);
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PlotError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();

    let csv_path = dir.join("curves.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut header = vec!["method".to_string(), "seed".into(), "step".into()];
    for m in &METRICS {
        header.push(m.key.into());
        header.push(format!("{}_smoothed", m.key));
    }
    w.write_record(&header)?;
    for c in curves {
        let smoothed: Vec<Vec<f64>> = METRICS
            .iter()
            .map(|m| moving_average(&c.points.iter().map(m.get).collect::<Vec<_>>(), cfg.window))
            .collect();
        for (t, p) in c.points.iter().enumerate() {
            let mut row = vec![c.method.to_string(), c.seed.to_string(), p.step.to_string()];
            for (mi, m) in METRICS.iter().enumerate() {
                row.push((m.get)(p).to_string());
                row.push(smoothed[mi][t].to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(io(&csv_path))?;
    written.push(csv_path);

    for m in &METRICS {
        let path = dir.join(m.file);
        fs::write(&path, svg(curves, m, cfg)).map_err(io(&path))?;
        written.push(path);
    }

    let meta = serde_json::json!({
        "window": cfg.window,
        "smoothing": "trailing moving average",
        "metrics": METRICS.iter().map(|m| m.key).collect::<Vec<_>>(),
        "curves": curves.iter().map(|c| serde_json::json!({
            "method": c.method,
            "seed": c.seed,
            "lambda": c.lambda,
            "steps": c.points.len(),
        })).collect::<Vec<_>>(),
    });
    let meta_path = dir.join("metadata.json");
    let text = serde_json::to_string_pretty(&meta).expect("json value serializes");
    fs::write(&meta_path, text).map_err(io(&meta_path))?;
    written.push(meta_path);
    Ok(written)
}

fn svg(curves: &[Curve], metric: &Metric, cfg: &PlotConfig) -> String {
    let (w, h) = (f64::from(cfg.width), f64::from(cfg.height));
    let (left, right, top, bottom) = (60.0, 130.0, 30.0, 40.0);
    let steps = curves.iter().map(|c| c.points.len()).max().unwrap_or(1).max(2);
    let values = curves.iter().flat_map(|c| c.points.iter().map(metric.get));
    let (lo, hi) = values.fold((0.0f64, 1.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let x = |t: usize| left + (w - left - right) * t as f64 / (steps - 1) as f64;
    let y = |v: f64| top + (h - top - bottom) * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle">{} (window {})</text>"#,
        (w - right + left) / 2.0,
        metric.label,
        cfg.window
    );
    let (x0, x1, y0, y1) = (x(0), x(steps - 1), y(lo), y(hi));
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" stroke="black" fill="none"/>"#
    );
    for (v, anchor) in [(lo, y0), (hi, y1)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            x0 - 6.0,
            anchor + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{x1:.1}" y="{:.1}" text-anchor="end">step {steps}</text>"#,
        y0 + 20.0
    );
    for (ci, c) in curves.iter().enumerate() {
        let raw: Vec<f64> = c.points.iter().map(metric.get).collect();
        let smooth = moving_average(&raw, cfg.window);
        for (series, opacity, width) in [(&raw, 0.25, 1.0), (&smooth, 1.0, 2.0)] {
            let pts: Vec<String> = series
                .iter()
                .enumerate()
                .map(|(t, v)| format!("{:.1},{:.1}", x(t), y(*v)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-opacity="{opacity}" stroke-width="{width}"/>"#,
                pts.join(" "),
                color(c.method)
            );
        }
        let ly = top + 16.0 * ci as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{}">{} seed {}</text>"#,
            w - right + 10.0,
            color(c.method),
            c.method,
            c.seed
        );
    }
    s.push_str("</svg>\n");
    s
}
