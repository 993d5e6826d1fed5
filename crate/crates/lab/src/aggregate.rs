//! Aggregation across seeds: scan a run directory, group completed runs by
//! config key, and report mean final rewards with 95% Student-t confidence
//! intervals plus diagnostic summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fmt::{sig6, sig6_opt, write_atomic};
use crate::runner::{read_config_echo, read_final, RunStatus, RunnerError};

/// 97.5% Student-t quantiles by degrees of freedom (two-sided 95% CI).
/// Falls back to the normal quantile beyond the table.
pub fn t_quantile_975(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    match df {
        0 => f64::NAN,
        1..=30 => TABLE[df - 1],
        _ => 1.96,
    }
}

/// Mean and 95% CI half-width over per-seed values. Single-seed rows get a
/// zero half-width and are flagged.
pub fn mean_ci95(values: &[f64]) -> (f64, f64, bool) {
    assert!(!values.is_empty());
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0, true);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let stderr = (var / n).sqrt();
    (mean, t_quantile_975(values.len() - 1) * stderr, false)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub key: String,
    pub game: String,
    pub n_agents: usize,
    pub variant: String,
    pub seeds: Vec<u64>,
    /// Final sampled-evaluation reward per completed seed, in seed order.
    pub finals: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
    pub single_seed: bool,
    pub aborted: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_argmax: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_conflict: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_snd_jsd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_embed_distance: Option<f64>,
}

fn mean_opt(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Aggregate every completed run under `out_dir` (layout
/// `<key>/seed_<seed>/final.json`), sorted by config key.
pub fn aggregate_dir(out_dir: &Path) -> Result<Vec<AggregateRow>, RunnerError> {
    let mut groups: BTreeMap<String, Vec<std::path::PathBuf>> = BTreeMap::new();
    let entries = std::fs::read_dir(out_dir).map_err(|e| RunnerError::Io {
        path: out_dir.display().to_string(),
        message: e.to_string(),
    })?;
    for entry in entries {
        let entry = entry.map_err(|e| RunnerError::Io {
            path: out_dir.display().to_string(),
            message: e.to_string(),
        })?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let key = entry.file_name().to_string_lossy().to_string();
        let mut seed_dirs = Vec::new();
        for seed_entry in std::fs::read_dir(&path).map_err(|e| RunnerError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })? {
            let seed_entry = seed_entry.map_err(|e| RunnerError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let seed_path = seed_entry.path();
            if seed_path.is_dir() && seed_path.join("final.json").exists() {
                seed_dirs.push(seed_path);
            }
        }
        if !seed_dirs.is_empty() {
            seed_dirs.sort();
            groups.insert(key, seed_dirs);
        }
    }
    if groups.is_empty() {
        return Err(RunnerError::Artifact(format!(
            "no completed runs found under {}",
            out_dir.display()
        )));
    }

    let mut rows = Vec::new();
    for (key, seed_dirs) in groups {
        let mut seeds = Vec::new();
        let mut finals = Vec::new();
        let mut argmaxes = Vec::new();
        let mut conflicts = Vec::new();
        let mut variances = Vec::new();
        let mut snds = Vec::new();
        let mut embeds = Vec::new();
        let mut aborted = 0usize;
        let mut meta: Option<(String, usize, String)> = None;
        for dir in &seed_dirs {
            let record = read_final(dir)?;
            if meta.is_none() {
                let echo = read_config_echo(dir)?;
                meta = Some((
                    echo.train.game.kind.as_str().to_string(),
                    echo.train.game.n_agents,
                    echo.train.variant.kind.to_string(),
                ));
            }
            if record.status == RunStatus::Aborted {
                aborted += 1;
                continue;
            }
            seeds.push(record.seed);
            finals.push(record.final_eval_sampled.unwrap_or(f64::NAN));
            if let Some(v) = record.final_eval_argmax {
                argmaxes.push(v);
            }
            if let Some(v) = record.grad_conflict_mean {
                conflicts.push(v);
            }
            if let Some(v) = record.grad_variance_mean {
                variances.push(v);
            }
            if let Some(v) = record.snd_jsd {
                snds.push(v);
            }
            if let Some(v) = record.embed_cos_distance {
                embeds.push(v);
            }
        }
        if finals.is_empty() {
            continue; // every seed aborted; nothing to aggregate
        }
        let (mean, ci95, single_seed) = mean_ci95(&finals);
        let (game, n_agents, variant) = meta.expect("at least one record read");
        rows.push(AggregateRow {
            key,
            game,
            n_agents,
            variant,
            seeds,
            finals,
            mean,
            ci95,
            single_seed,
            aborted,
            mean_argmax: mean_opt(&argmaxes),
            mean_conflict: mean_opt(&conflicts),
            mean_variance: mean_opt(&variances),
            mean_snd_jsd: mean_opt(&snds),
            mean_embed_distance: mean_opt(&embeds),
        });
    }
    Ok(rows)
}

pub const AGGREGATE_HEADER: &str = "key,game,n_agents,variant,n_seeds,final_mean,final_ci95,mean_argmax,mean_conflict,mean_variance,mean_snd_jsd,mean_embed_distance,aborted";

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.key,
            row.game,
            row.n_agents,
            row.variant,
            row.seeds.len(),
            sig6(row.mean),
            sig6(row.ci95),
            sig6_opt(row.mean_argmax),
            sig6_opt(row.mean_conflict),
            sig6_opt(row.mean_variance),
            sig6_opt(row.mean_snd_jsd),
            sig6_opt(row.mean_embed_distance),
            row.aborted,
        )
        .expect("string write");
    }
    out
}

/// Write `aggregate.csv` and `aggregate.json` into the run directory.
pub fn write_aggregate(out_dir: &Path, rows: &[AggregateRow]) -> Result<(), RunnerError> {
    let csv_path = out_dir.join("aggregate.csv");
    write_atomic(&csv_path, aggregate_csv(rows).as_bytes()).map_err(|e| RunnerError::Io {
        path: csv_path.display().to_string(),
        message: e.to_string(),
    })?;
    let json_path = out_dir.join("aggregate.json");
    write_atomic(
        &json_path,
        serde_json::to_string_pretty(rows).unwrap().as_bytes(),
    )
    .map_err(|e| RunnerError::Io {
        path: json_path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_t_interval() {
        // Ten equally spaced values: mean 0.55, sample sd sqrt(0.825/9),
        // half-width t_9 * sd / sqrt(10) with t_9 = 2.262.
        let values: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let (mean, ci, single) = mean_ci95(&values);
        assert!(!single);
        assert!((mean - 0.55).abs() < 1e-12);
        let expected = 2.262 * (0.825f64 / 9.0).sqrt() / 10f64.sqrt();
        assert!((ci - expected).abs() < 1e-9, "{ci} vs {expected}");
        assert!((ci - 0.216_570_011_8).abs() < 1e-9);
    }

    #[test]
    fn identical_seeds_have_zero_width() {
        let (mean, ci, single) = mean_ci95(&[0.5; 10]);
        assert_eq!(mean, 0.5);
        assert_eq!(ci, 0.0);
        assert!(!single);
    }

    #[test]
    fn single_seed_flagged() {
        let (mean, ci, single) = mean_ci95(&[0.7]);
        assert_eq!((mean, ci), (0.7, 0.0));
        assert!(single);
    }

    #[test]
    fn t_table_spot_values() {
        assert_eq!(t_quantile_975(9), 2.262);
        assert_eq!(t_quantile_975(1), 12.706);
        assert_eq!(t_quantile_975(200), 1.96);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = std::env::temp_dir().join(format!("agg-empty-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        assert!(aggregate_dir(&dir).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
