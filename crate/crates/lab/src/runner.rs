//! Seeded run matrices: one artifact directory per (config, seed), written
//! atomically, skipped when already complete, executed in parallel across
//! single-threaded runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use hypermarl_core::diag::{self, DiagError, DistanceKind};
use hypermarl_core::train::{self, TrainConfig, TrainError, TrainLog};

use crate::config::NamedConfig;
use crate::fmt::{sig6, sig6_opt, write_atomic};

/// Default master seed; overridable via the `HYPERMARL_LAB_SEED` env var.
pub const DEFAULT_MASTER_SEED: u64 = 1729;

/// Observation-set size for the behavioural-diversity measurement recorded
/// in `final.json` (episodes rolled out / cap on retained observations).
pub const SND_EPISODES: usize = 1000;
pub const SND_CAP: usize = 10_000;

pub const CURVE_HEADER: &str = "update,train_reward_mean,eval_reward_sampled,eval_reward_argmax,grad_conflict_mean,grad_variance_mean,embed_cos_distance";
pub const DIAG_HEADER: &str = "update,pair_i,pair_j,grad_cosine";

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("i/o error at {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Diag(#[from] DiagError),
    #[error("artifact error: {0}")]
    Artifact(String),
}

fn io_err(path: &Path, e: std::io::Error) -> RunnerError {
    RunnerError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// SplitMix64; the documented mixing function for deriving per-run seeds
/// from (master seed, run index).
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive `count` run seeds from a master seed.
pub fn derive_seeds(master: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| mix_seed(master, i)).collect()
}

/// A full experiment: configs x seeds, output directory, parallelism.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub configs: Vec<NamedConfig>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub force: bool,
}

impl ExperimentSpec {
    pub fn new(configs: Vec<NamedConfig>, seeds: Vec<u64>, out_dir: PathBuf) -> Self {
        ExperimentSpec {
            configs,
            seeds,
            out_dir,
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
            force: false,
        }
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.configs.is_empty() {
            return Err(RunnerError::Artifact("no configs in experiment".into()));
        }
        if self.seeds.is_empty() {
            return Err(RunnerError::Artifact("no seeds in experiment".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Aborted,
}

/// Summary line in `final.json`; the machine-readable contract consumed by
/// aggregation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalRecord {
    pub status: RunStatus,
    pub key: String,
    pub seed: u64,
    pub param_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_eval_sampled: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_eval_argmax: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_conflict_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_variance_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_cos_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snd_jsd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snd_tvd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_update: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_statistic: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub key: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub status: RunStatus,
    /// True when a completed artifact was found and training was skipped.
    pub reused: bool,
}

pub fn run_dir(out_dir: &Path, key: &str, seed: u64) -> PathBuf {
    out_dir.join(key).join(format!("seed_{seed}"))
}

/// Execute the experiment. Completed artifacts are skipped unless `force`;
/// runs are independent and scheduled on a pool of `jobs` threads.
pub fn run(spec: &ExperimentSpec) -> Result<Vec<RunOutcome>, RunnerError> {
    spec.validate()?;
    std::fs::create_dir_all(&spec.out_dir).map_err(|e| io_err(&spec.out_dir, e))?;

    let mut jobs_list: Vec<(NamedConfig, u64)> = Vec::new();
    for config in &spec.configs {
        for &seed in &spec.seeds {
            jobs_list.push((config.clone(), seed));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.max(1))
        .build()
        .map_err(|e| RunnerError::Artifact(format!("thread pool: {e}")))?;

    let results: Vec<Result<RunOutcome, RunnerError>> = pool.install(|| {
        use rayon::prelude::*;
        jobs_list
            .par_iter()
            .map(|(config, seed)| execute_one(&spec.out_dir, config, *seed, spec.force))
            .collect()
    });

    results.into_iter().collect()
}

fn execute_one(
    out_dir: &Path,
    config: &NamedConfig,
    seed: u64,
    force: bool,
) -> Result<RunOutcome, RunnerError> {
    let dir = run_dir(out_dir, &config.key, seed);
    let final_path = dir.join("final.json");
    if !force && final_path.exists() {
        let text = std::fs::read_to_string(&final_path).map_err(|e| io_err(&final_path, e))?;
        let record: FinalRecord = serde_json::from_str(&text)
            .map_err(|e| RunnerError::Artifact(format!("corrupt {}: {e}", final_path.display())))?;
        return Ok(RunOutcome {
            key: config.key.clone(),
            seed,
            dir,
            status: record.status,
            reused: true,
        });
    }
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;

    let mut train_config = config.train.clone();
    train_config.seed = seed;

    let config_json = serde_json::json!({
        "key": config.key,
        "seed": seed,
        "train": &train_config,
    });
    write_atomic(
        &dir.join("config.json"),
        serde_json::to_string_pretty(&config_json)
            .expect("config serialises")
            .as_bytes(),
    )
    .map_err(|e| io_err(&dir.join("config.json"), e))?;

    match train::train(&train_config) {
        Ok(log) => {
            write_artifacts(&dir, config, seed, &log)?;
            Ok(RunOutcome {
                key: config.key.clone(),
                seed,
                dir,
                status: RunStatus::Ok,
                reused: false,
            })
        }
        Err(TrainError::NonFinite { update, statistic }) => {
            let record = FinalRecord {
                status: RunStatus::Aborted,
                key: config.key.clone(),
                seed,
                param_count: 0,
                final_eval_sampled: None,
                final_eval_argmax: None,
                grad_conflict_mean: None,
                grad_variance_mean: None,
                embed_cos_distance: None,
                snd_jsd: None,
                snd_tvd: None,
                abort_update: Some(update),
                abort_statistic: Some(statistic.to_string()),
            };
            write_atomic(
                &final_path,
                serde_json::to_string_pretty(&record).unwrap().as_bytes(),
            )
            .map_err(|e| io_err(&final_path, e))?;
            Ok(RunOutcome {
                key: config.key.clone(),
                seed,
                dir,
                status: RunStatus::Aborted,
                reused: false,
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn write_artifacts(
    dir: &Path,
    config: &NamedConfig,
    seed: u64,
    log: &TrainLog,
) -> Result<(), RunnerError> {
    // curve.csv: one row per evaluation record. The train-reward column is
    // the mean over updates since the previous record.
    let mut curve = String::from(CURVE_HEADER);
    curve.push('\n');
    let mut prev_update = 0usize;
    for record in &log.evals {
        let update = record.update as usize;
        let train_mean = if update > prev_update {
            let span = &log.train_reward[prev_update..update];
            Some(span.iter().sum::<f64>() / span.len() as f64)
        } else {
            None
        };
        prev_update = update;
        writeln!(
            curve,
            "{},{},{},{},{},{},{}",
            record.update,
            sig6_opt(train_mean),
            sig6(record.eval_sampled),
            sig6(record.eval_argmax),
            sig6_opt(record.conflict.as_ref().map(|c| c.mean)),
            sig6_opt(record.variance.as_ref().map(|v| v.mean_variance)),
            sig6_opt(record.embed_distance),
        )
        .expect("string write");
    }
    write_atomic(&dir.join("curve.csv"), curve.as_bytes())
        .map_err(|e| io_err(&dir.join("curve.csv"), e))?;

    // diag.csv: long-format pairwise gradient cosines per evaluation record.
    let mut diag_csv = String::from(DIAG_HEADER);
    diag_csv.push('\n');
    for record in &log.evals {
        if let Some(conflict) = &record.conflict {
            for pair in &conflict.pairs {
                writeln!(
                    diag_csv,
                    "{},{},{},{}",
                    record.update,
                    pair.i,
                    pair.j,
                    sig6(pair.cosine)
                )
                .expect("string write");
            }
        }
    }
    write_atomic(&dir.join("diag.csv"), diag_csv.as_bytes())
        .map_err(|e| io_err(&dir.join("diag.csv"), e))?;

    // Parameter snapshot for checkpoint/resume and offline diagnostics.
    let mut snapshot = Vec::new();
    log.final_policy
        .write_snapshot(&mut snapshot)
        .map_err(|e| RunnerError::Artifact(format!("snapshot: {e}")))?;
    write_atomic(&dir.join("params.txt"), &snapshot)
        .map_err(|e| io_err(&dir.join("params.txt"), e))?;

    // Behavioural diversity of the final policy on a fresh observation set.
    let mut snd_rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 0x5D1));
    let obs_set = diag::collect_observation_set(
        &log.config.game,
        &log.final_policy,
        SND_EPISODES,
        SND_CAP,
        &mut snd_rng,
    )?;
    let (snd_jsd, snd_tvd) = if obs_set.is_empty() {
        (None, None)
    } else {
        (
            Some(diag::snd(&log.final_policy, &obs_set, DistanceKind::Jsd)?.value),
            Some(diag::snd(&log.final_policy, &obs_set, DistanceKind::Tvd)?.value),
        )
    };

    let last = log
        .evals
        .last()
        .ok_or_else(|| RunnerError::Artifact("training produced no evaluations".into()))?;
    let record = FinalRecord {
        status: RunStatus::Ok,
        key: config.key.clone(),
        seed,
        param_count: log.final_policy.param_count(),
        final_eval_sampled: Some(last.eval_sampled),
        final_eval_argmax: Some(last.eval_argmax),
        grad_conflict_mean: last.conflict.as_ref().map(|c| c.mean),
        grad_variance_mean: last.variance.as_ref().map(|v| v.mean_variance),
        embed_cos_distance: last.embed_distance,
        snd_jsd,
        snd_tvd,
        abort_update: None,
        abort_statistic: None,
    };
    write_atomic(
        &dir.join("final.json"),
        serde_json::to_string_pretty(&record).unwrap().as_bytes(),
    )
    .map_err(|e| io_err(&dir.join("final.json"), e))?;
    Ok(())
}

/// Convenience: run one config over one seed in-process (used by tests and
/// the verification harness).
pub fn run_single(
    out_dir: &Path,
    config: &NamedConfig,
    seed: u64,
    force: bool,
) -> Result<RunOutcome, RunnerError> {
    execute_one(out_dir, config, seed, force)
}

#[derive(Debug, Clone, Deserialize)]
pub struct ConfigEcho {
    pub key: String,
    pub seed: u64,
    pub train: TrainConfig,
}

pub fn read_config_echo(dir: &Path) -> Result<ConfigEcho, RunnerError> {
    let path = dir.join("config.json");
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| RunnerError::Artifact(format!("corrupt {}: {e}", path.display())))
}

pub fn read_final(dir: &Path) -> Result<FinalRecord, RunnerError> {
    let path = dir.join("final.json");
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| RunnerError::Artifact(format!("corrupt {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hypermarl_core::game::{GameConfig, GameKind};
    use hypermarl_core::policy::{VariantKind, VariantSpec};

    fn quick_config(seed_key: &str) -> NamedConfig {
        let game = GameConfig::new(GameKind::Specialisation, 2).unwrap();
        let mut train = TrainConfig::new(game, VariantSpec::direct(VariantKind::FuPs, 8), 0);
        train.total_steps = 20;
        train.eval_interval = 10;
        train.eval_episodes = 5;
        NamedConfig {
            key: seed_key.to_string(),
            train,
        }
    }

    fn temp_out(tag: &str) -> PathBuf {
        std::env::temp_dir().join(format!("runner-test-{tag}-{}", std::process::id()))
    }

    #[test]
    fn seed_mixing_is_stable_and_spread() {
        let seeds = derive_seeds(DEFAULT_MASTER_SEED, 10);
        assert_eq!(seeds, derive_seeds(DEFAULT_MASTER_SEED, 10));
        let unique: std::collections::HashSet<_> = seeds.iter().collect();
        assert_eq!(unique.len(), 10);
        assert_ne!(derive_seeds(1, 3), derive_seeds(2, 3));
    }

    #[test]
    fn artifacts_written_and_reruns_skip() {
        let out = temp_out("skip");
        let _ = std::fs::remove_dir_all(&out);
        let spec = ExperimentSpec {
            configs: vec![quick_config("quick")],
            seeds: vec![7, 8],
            out_dir: out.clone(),
            jobs: 2,
            force: false,
        };
        let outcomes = run(&spec).unwrap();
        assert_eq!(outcomes.len(), 2);
        assert!(outcomes.iter().all(|o| !o.reused));
        for o in &outcomes {
            for file in ["config.json", "curve.csv", "diag.csv", "final.json", "params.txt"] {
                assert!(o.dir.join(file).exists(), "{file} missing");
            }
            let record = read_final(&o.dir).unwrap();
            assert_eq!(record.status, RunStatus::Ok);
            assert!(record.final_eval_sampled.unwrap() > 0.0);
        }

        // Second run without force reuses everything.
        let outcomes = run(&spec).unwrap();
        assert!(outcomes.iter().all(|o| o.reused));
        std::fs::remove_dir_all(&out).unwrap();
    }

    #[test]
    fn reruns_are_bitwise_identical_under_force() {
        let out = temp_out("bitwise");
        let _ = std::fs::remove_dir_all(&out);
        let mut spec = ExperimentSpec {
            configs: vec![quick_config("det")],
            seeds: vec![3],
            out_dir: out.clone(),
            jobs: 1,
            force: false,
        };
        let first = run(&spec).unwrap();
        let curve1 = std::fs::read(first[0].dir.join("curve.csv")).unwrap();
        let params1 = std::fs::read(first[0].dir.join("params.txt")).unwrap();
        spec.force = true;
        let second = run(&spec).unwrap();
        assert!(!second[0].reused);
        let curve2 = std::fs::read(second[0].dir.join("curve.csv")).unwrap();
        let params2 = std::fs::read(second[0].dir.join("params.txt")).unwrap();
        assert_eq!(curve1, curve2);
        assert_eq!(params1, params2);
        std::fs::remove_dir_all(&out).unwrap();
    }

    #[test]
    fn curve_has_fixed_header_and_row_count() {
        let out = temp_out("curve");
        let _ = std::fs::remove_dir_all(&out);
        let outcome = run_single(&out, &quick_config("hdr"), 5, false).unwrap();
        let text = std::fs::read_to_string(outcome.dir.join("curve.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CURVE_HEADER);
        // Records at updates 0, 10, 20.
        assert_eq!(lines.count(), 3);
        std::fs::remove_dir_all(&out).unwrap();
    }
}
