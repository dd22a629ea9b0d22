use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spec::{Experiment, Strategy};
use super::strategy::run_strategy;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport, Prediction};
use crate::oracle::{CountingCache, LikelihoodProvider};
use crate::prior::PriorDistribution;
use crate::search::{SearchConfig, SearchResult};
use crate::space::SearchSpace;
use crate::synthetic::{brute_force_rank, mix_seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub truth: String,
    pub predicted: String,
    pub predicted_index: usize,
    pub top_raw_index: usize,
    pub distinct_calls: usize,
    /// 1-based rank of the prediction's raw score among all N activities.
    pub oracle_rank: usize,
    pub top_raw_rank: usize,
    /// Informational only; never compared across runs.
    pub wall_clock_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment_id: String,
    pub seed: u64,
    pub strategy: Strategy,
    pub config: SearchConfig,
    pub prior_enabled: bool,
    pub videos: Vec<VideoRecord>,
    pub report: EvalReport,
}

impl RunRecord {
    pub fn mean_oracle_rank(&self) -> f64 {
        self.videos.iter().map(|v| v.oracle_rank as f64).sum::<f64>() / self.videos.len() as f64
    }
}

/// A run's record plus the full per-video search results.
pub struct RunOutcome {
    pub record: RunRecord,
    pub results: Vec<SearchResult>,
}

/// Per-video search seed, independent of scheduling.
pub fn video_seed(seed: u64, video_index: usize) -> u64 {
    mix_seed(seed, video_index as u64)
}

/// Runs one strategy over every video, with the graph prior or a uniform one.
/// Videos run in parallel; each uses its own cache and a seed derived from
/// `(seed, video index)`.
pub fn run_once(
    exp: &Experiment,
    strategy: Strategy,
    cfg: &SearchConfig,
    prior_enabled: bool,
    seed: u64,
) -> Result<RunOutcome> {
    let uniform;
    let prior = if prior_enabled {
        &exp.prior
    } else {
        uniform = PriorDistribution::uniform(exp.space.len());
        &uniform
    };
    let per_video: Vec<(VideoRecord, SearchResult)> = exp
        .videos
        .par_iter()
        .enumerate()
        .map(|(i, video)| {
            let started = Instant::now();
            let cache = CountingCache::new(&exp.provider, video.feature.clone())?;
            let vcfg = SearchConfig {
                seed: video_seed(seed, i),
                ..cfg.clone()
            };
            let result = run_strategy(strategy, &exp.space, prior, &cache, &exp.concepts, &vcfg)?;
            let wall_clock_ms = started.elapsed().as_secs_f64() * 1e3;
            debug_assert_eq!(result.distinct_calls, cache.distinct_calls());
            let scores: Vec<f64> = (0..exp.provider.len())
                .map(|j| exp.provider.score(&video.feature, j))
                .collect();
            let record = VideoRecord {
                video_id: video.id.clone(),
                truth: video.truth.phrase().to_string(),
                predicted: result.predicted.phrase().to_string(),
                predicted_index: result.predicted_index,
                top_raw_index: result.top_raw_index,
                distinct_calls: cache.distinct_calls(),
                oracle_rank: brute_force_rank(&scores, result.predicted_index),
                top_raw_rank: brute_force_rank(&scores, result.top_raw_index),
                wall_clock_ms,
            };
            log::debug!("{} -> {} ({} calls)", record.video_id, record.predicted, record.distinct_calls);
            Ok((record, result))
        })
        .collect::<Result<_>>()?;

    let predictions: Vec<Prediction> = exp
        .videos
        .iter()
        .zip(&per_video)
        .map(|(v, (rec, res))| Prediction {
            video_id: v.id.clone(),
            predicted: res.predicted.clone(),
            truth: v.truth.clone(),
            distinct_calls: rec.distinct_calls,
        })
        .collect();
    let report = evaluate(&predictions, &exp.action_taxonomy, &exp.object_taxonomy)?;
    let (videos, results) = per_video.into_iter().unzip();
    Ok(RunOutcome {
        record: RunRecord {
            experiment_id: exp.spec.id.clone(),
            seed,
            strategy,
            config: cfg.clone(),
            prior_enabled,
            videos,
            report,
        },
        results,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// Trajectory TSV: `t phase index phrase raw_score order_pos dist_to_truth`.
/// `dist_to_truth` is `NA` when the truth is not in the space.
pub fn emit_trajectory_plotdata(
    result: &SearchResult,
    space: &SearchSpace,
    truth_index: Option<usize>,
    path: &Path,
) -> Result<()> {
    if result.trajectory.is_empty() {
        return Err(Error::EmptyInput("trajectory is empty"));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "t\tphase\tindex\tphrase\traw_score\torder_pos\tdist_to_truth")?;
        for s in &result.trajectory {
            let dist = truth_index.map_or("NA".to_string(), |t| format!("{:.6}", space.distance(s.index, t)));
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{:.6}\t{}\t{}",
                s.t,
                s.phase,
                s.index,
                space.activity(s.index).phrase(),
                s.raw_score,
                space.position_of(s.index),
                dist
            )?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `per_video.json`, `aggregate.csv` and optionally
/// one trajectory TSV per video into `dir`.
pub fn write_outcome(exp: &Experiment, outcome: &RunOutcome, dir: &Path) -> Result<()> {
    write_file(&dir.join("aggregate.csv"), &outcome.record.report.aggregate_csv())?;
    write_file(&dir.join("report.json"), &outcome.record.report.to_json()?)?;
    write_file(&dir.join("per_video.json"), &serde_json::to_string_pretty(&outcome.record)?)?;
    if exp.spec.write_trajectories {
        for (video, result) in exp.videos.iter().zip(&outcome.results) {
            let path = dir.join("trajectories").join(format!("{}.tsv", file_safe(&video.id)));
            emit_trajectory_plotdata(result, &exp.space, video.truth_index, &path)?;
        }
    }
    Ok(())
}

fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

/// Runs the spec's strategy once per seed and writes
/// `<output_dir>/<id>/{spec.json, seed-<s>/...}`.
pub fn run_experiment(exp: &Experiment) -> Result<Vec<RunRecord>> {
    let root = exp.spec.experiment_dir();
    write_file(&root.join("spec.json"), &exp.spec.to_json()?)?;
    let mut records = Vec::with_capacity(exp.spec.seeds.len());
    for &seed in &exp.spec.seeds {
        let outcome = run_once(exp, exp.spec.strategy, &exp.spec.search, true, seed)?;
        let dir = seed_dir(&root, seed);
        write_outcome(exp, &outcome, &dir)?;
        log::info!(
            "seed {seed}: wups_activity {:.4}, exact {:.4}, calls {:.1}",
            outcome.record.report.wups_activity,
            outcome.record.report.exact_match,
            outcome.record.report.mean_distinct_calls
        );
        records.push(outcome.record);
    }
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lambda,
    Iterations,
    PriorOnoff,
    RerankOnoff,
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "lambda" => Ok(SweepAxis::Lambda),
            "iterations" => Ok(SweepAxis::Iterations),
            "prior_onoff" | "prior" => Ok(SweepAxis::PriorOnoff),
            "rerank_onoff" | "rerank" => Ok(SweepAxis::RerankOnoff),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep axis {other:?} (lambda, iterations, prior_onoff, rerank_onoff)"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Iterations => "iterations",
            SweepAxis::PriorOnoff => "prior_onoff",
            SweepAxis::RerankOnoff => "rerank_onoff",
        })
    }
}

fn parse_switch(v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(Error::InvalidConfig(format!("expected on/off, got {other:?}"))),
    }
}

/// Applies one sweep value to a copy of `base`; returns the config and
/// whether the graph prior stays on.
pub fn apply_sweep_value(axis: SweepAxis, value: &str, base: &SearchConfig) -> Result<(SearchConfig, bool)> {
    let mut cfg = base.clone();
    let mut prior_on = true;
    match axis {
        SweepAxis::Lambda => cfg.set("explore_lambda", value)?,
        SweepAxis::Iterations => {
            cfg.set("total_iters", value)?;
            // Keep the default T/3 split at every budget.
            cfg.explore_iters = None;
        }
        SweepAxis::PriorOnoff => prior_on = parse_switch(value)?,
        SweepAxis::RerankOnoff => {
            if !parse_switch(value)? {
                cfg.rerank_action_weight = 0.0;
                cfg.rerank_object_weight = 0.0;
            }
        }
    }
    cfg.validate()?;
    Ok((cfg, prior_on))
}

pub const SWEEP_COLUMNS: [&str; 6] = [
    "axis_value",
    "seed",
    "wups_activity",
    "exact_match",
    "mean_distinct_calls",
    "mean_oracle_rank",
];

/// One run per (value, seed), everything else fixed. Writes each run under
/// `<id>/sweep-<axis>/<value>/seed-<s>/` and the plot table to
/// `<id>/sweep-<axis>.csv`.
pub fn run_ablation_sweep(exp: &Experiment, axis: SweepAxis, values: &[String]) -> Result<Vec<RunRecord>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no sweep values"));
    }
    let settings: Vec<(SearchConfig, bool)> = values
        .iter()
        .map(|v| apply_sweep_value(axis, v, &exp.spec.search))
        .collect::<Result<_>>()?;
    let root = exp.spec.experiment_dir();
    write_file(&root.join("spec.json"), &exp.spec.to_json()?)?;
    let mut csv = SWEEP_COLUMNS.join(",") + "\n";
    let mut records = Vec::new();
    for (value, (cfg, prior_on)) in values.iter().zip(&settings) {
        for &seed in &exp.spec.seeds {
            let outcome = run_once(exp, exp.spec.strategy, cfg, *prior_on, seed)?;
            let dir = seed_dir(&root.join(format!("sweep-{axis}")).join(file_safe(value.trim())), seed);
            write_outcome(exp, &outcome, &dir)?;
            let r = &outcome.record;
            csv += &format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                value.trim(),
                seed,
                r.report.wups_activity,
                r.report.exact_match,
                r.report.mean_distinct_calls,
                r.mean_oracle_rank()
            );
            records.push(outcome.record);
        }
    }
    write_file(&root.join(format!("sweep-{axis}.csv")), &csv)?;
    Ok(records)
}
