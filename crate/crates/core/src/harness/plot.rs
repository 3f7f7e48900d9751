//! Static SVG line charts from a metrics stream. Output bytes are a pure
//! function of the input stream: floats are formatted with fixed precision
//! and no timestamps or ids are embedded.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::harness::metrics::{read_metrics, MetricsRecord};
use crate::{Error, Result};

pub const AVAILABLE_KEYS: [&str; 15] = [
    "mean_reward",
    "reward_compress",
    "reward_compose",
    "reward_edit",
    "reward_cycle",
    "reward_quality",
    "reward_correct",
    "reward_format",
    "kl",
    "clip_fraction_lm",
    "clip_fraction_dm",
    "grad_norm",
    "mean_reasoning_length",
    "judge_accuracy",
    "correction_rate",
];

fn extract(record: &MetricsRecord, key: &str) -> Option<f64> {
    match key {
        "mean_reward" => Some(record.mean_reward),
        "reward_compress" => record.reward_compress,
        "reward_compose" => record.reward_compose,
        "reward_edit" => record.reward_edit,
        "reward_cycle" => record.reward_cycle,
        "reward_quality" => record.reward_quality,
        "reward_correct" => record.reward_correct,
        "reward_format" => record.reward_format,
        "kl" => Some(record.kl),
        "clip_fraction_lm" => Some(record.clip_fraction_lm),
        "clip_fraction_dm" => Some(record.clip_fraction_dm),
        "grad_norm" => Some(record.grad_norm),
        "mean_reasoning_length" => Some(record.mean_reasoning_length),
        "judge_accuracy" => record.judge_accuracy,
        "correction_rate" => record.correction_rate,
        _ => None,
    }
}

/// Render one chart per key into `out_dir` as `<key>.svg`.
pub fn plot_metrics(metrics_path: &Path, keys: &[String], out_dir: &Path) -> Result<Vec<PathBuf>> {
    for key in keys {
        if !AVAILABLE_KEYS.contains(&key.as_str()) {
            return Err(Error::InvalidInput(format!(
                "unknown metrics key {key:?}; available keys: {}",
                AVAILABLE_KEYS.join(", ")
            )));
        }
    }
    let (_, records) = read_metrics(metrics_path)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for key in keys {
        let series: Vec<(f64, f64)> = records
            .iter()
            .filter_map(|r| extract(r, key).map(|v| (r.step as f64, v)))
            .collect();
        let svg = render_line_chart(key, &series);
        let path = out_dir.join(format!("{key}.svg"));
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 40.0;
const MB: f64 = 50.0;

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Deterministic line chart; an empty series draws the axes only.
pub fn render_line_chart(title: &str, series: &[(f64, f64)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"16\" text-anchor=\"middle\">{title}</text>",
        W / 2.0
    );
    // axes
    let x0 = ML;
    let x1 = W - MR;
    let y0 = H - MB;
    let y1 = MT;
    let _ = writeln!(
        s,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        s,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    if !series.is_empty() {
        let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in series {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
        if xmax == xmin {
            xmax = xmin + 1.0;
        }
        if ymax == ymin {
            ymax = ymin + 1.0;
        }
        let sx = |x: f64| x0 + (x - xmin) / (xmax - xmin) * (x1 - x0);
        let sy = |y: f64| y0 - (y - ymin) / (ymax - ymin) * (y0 - y1);
        let mut points = String::new();
        for &(x, y) in series {
            let _ = write!(points, "{},{} ", fmt(sx(x)), fmt(sy(y)));
        }
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.trim_end()
        );
        for (v, anchor, x, y) in [
            (xmin, "middle", sx(xmin), y0 + 20.0),
            (xmax, "middle", sx(xmax), y0 + 20.0),
        ] {
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"{anchor}\">{}</text>",
                fmt(x), fmt(y), fmt(v)
            );
        }
        for (v, y) in [(ymin, y0), (ymax, y1)] {
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">{}</text>",
                fmt(x0 - 6.0), fmt(y + 4.0), fmt(v)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::{MetricsHeader, MetricsWriter, METRICS_SCHEMA};

    fn write_stream(dir: &Path, records: usize) -> PathBuf {
        let path = dir.join("metrics.jsonl");
        let mut w = MetricsWriter::create(
            &path,
            &MetricsHeader {
                schema: METRICS_SCHEMA.into(),
                scenario: "s3_t2i".into(),
                seed: 1,
            },
        )
        .unwrap();
        for step in 0..records {
            w.append(&MetricsRecord {
                step,
                scenario: "s3_t2i".into(),
                mean_reward: step as f64 * 0.1,
                reward_compress: Some(-0.05 * step as f64),
                reward_compose: None,
                reward_edit: None,
                reward_cycle: None,
                reward_quality: None,
                reward_correct: None,
                reward_format: None,
                kl: 0.0,
                clip_fraction_lm: 0.0,
                clip_fraction_dm: 0.0,
                grad_norm: 1.0,
                mean_reasoning_length: 0.0,
                judge_accuracy: None,
                correction_rate: None,
                wall_ms: 0.0,
            })
            .unwrap();
        }
        path
    }

    #[test]
    fn unknown_key_lists_available_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_stream(dir.path(), 3);
        let err = plot_metrics(&path, &["banana".into()], dir.path()).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("banana") && msg.contains("mean_reward"));
    }

    #[test]
    fn empty_stream_renders_axes_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_stream(dir.path(), 0);
        let out = plot_metrics(&path, &["mean_reward".into()], dir.path()).unwrap();
        let svg = std::fs::read_to_string(&out[0]).unwrap();
        assert!(svg.contains("<svg"));
        assert!(!svg.contains("polyline"));
    }

    #[test]
    fn identical_streams_render_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_stream(dir.path(), 5);
        let out1 = dir.path().join("a");
        let out2 = dir.path().join("b");
        plot_metrics(&path, &["mean_reward".into(), "kl".into()], &out1).unwrap();
        plot_metrics(&path, &["mean_reward".into(), "kl".into()], &out2).unwrap();
        for key in ["mean_reward", "kl"] {
            let a = std::fs::read(out1.join(format!("{key}.svg"))).unwrap();
            let b = std::fs::read(out2.join(format!("{key}.svg"))).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn series_with_nulls_skips_missing_points() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_stream(dir.path(), 4);
        let out = plot_metrics(&path, &["reward_compose".into()], dir.path()).unwrap();
        let svg = std::fs::read_to_string(&out[0]).unwrap();
        // all-null series draws axes only
        assert!(!svg.contains("polyline"));
    }
}
