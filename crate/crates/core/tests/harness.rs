use std::collections::HashSet;
use std::fs;
use std::path::Path;

use probres::harness::{
    run_ablation_sweep, run_experiment, run_once, Experiment, ExperimentSpec, OracleSource, PriorSource,
    SpaceSource, Strategy, SweepAxis,
};
use probres::synthetic::SyntheticConfig;
use probres::{KnowledgeGraph, LikelihoodProvider, Phase, PriorParams, SearchConfig};

fn synthetic_spec(out: &Path, preset: &str, videos: usize) -> ExperimentSpec {
    let (space, t) = SyntheticConfig::preset(preset, 11).unwrap();
    ExperimentSpec {
        id: preset.into(),
        space: SpaceSource::Synthetic(space),
        prior: PriorSource::Synthetic {
            params: PriorParams::default(),
        },
        oracle: OracleSource::Synthetic {
            videos,
            noise_scale: 0.05,
            recall: 0.8,
        },
        concepts: None,
        taxonomies: None,
        strategy: Strategy::Probres,
        search: SearchConfig {
            total_iters: t,
            ..Default::default()
        },
        seeds: vec![0],
        output_dir: out.to_path_buf(),
        write_trajectories: true,
    }
}

fn trajectory_rows(dir: &Path) -> Vec<Vec<Vec<String>>> {
    let mut files: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
        .iter()
        .map(|f| {
            fs::read_to_string(f)
                .unwrap()
                .lines()
                .skip(1)
                .map(|l| l.split('\t').map(String::from).collect())
                .collect()
        })
        .collect()
}

#[test]
fn exhaustive_queries_every_activity() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = Experiment::load(synthetic_spec(tmp.path(), "gaze-l1", 4)).unwrap();
    assert_eq!(exp.space.len(), 380);
    let out = run_once(&exp, Strategy::Exhaustive, &exp.spec.search, true, 0).unwrap();
    assert!(out.record.videos.iter().all(|v| v.distinct_calls == 380));
    assert_eq!(out.record.report.mean_distinct_calls, 380.0);
}

#[test]
fn short_run_writes_one_row_per_step() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = synthetic_spec(tmp.path(), "gaze-l1", 5);
    spec.search.total_iters = 10;
    spec.search.refine_k = 4;
    let exp = Experiment::load(spec).unwrap();
    run_experiment(&exp).unwrap();
    let runs = trajectory_rows(&exp.spec.experiment_dir().join("seed-0/trajectories"));
    assert_eq!(runs.len(), 5);
    for rows in runs {
        assert!((10..=14).contains(&rows.len()), "{} rows", rows.len());
        assert_eq!(rows.iter().filter(|r| r[1] == "refine").count(), 4);
    }
}

#[test]
fn all_explore_schedule_has_no_exploit_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = synthetic_spec(tmp.path(), "gaze-l1", 3);
    spec.search.total_iters = 380;
    spec.search.explore_iters = Some(380);
    let exp = Experiment::load(spec).unwrap();
    let out = run_once(&exp, Strategy::Probres, &exp.spec.search, true, 0).unwrap();
    for r in &out.results {
        let phases: Vec<Phase> = r.trajectory.iter().map(|s| s.phase).collect();
        let first_refine = phases.iter().position(|p| *p == Phase::Refine).unwrap();
        assert!(phases[..first_refine].iter().all(|p| *p == Phase::Explore));
        assert!(phases[first_refine..].iter().all(|p| *p == Phase::Refine));
    }
}

#[test]
fn winner_is_usually_the_closest_visited_activity() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = Experiment::load(synthetic_spec(tmp.path(), "gaze-l1", 100)).unwrap();
    run_experiment(&exp).unwrap();
    let runs = trajectory_rows(&exp.spec.experiment_dir().join("seed-0/trajectories"));
    assert_eq!(runs.len(), 100);
    let closest = runs
        .iter()
        .filter(|rows| {
            let dist = |r: &Vec<String>| r[6].parse::<f64>().unwrap();
            let last = rows.iter().rev().find(|r| r[1] == "refine").unwrap();
            rows.iter().all(|r| dist(last) <= dist(r))
        })
        .count();
    assert!(closest >= 80, "{closest}/100");
}

#[test]
fn exhaustive_top_score_dominates_search() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = Experiment::load(synthetic_spec(tmp.path(), "charades-l1", 30)).unwrap();
    let search = run_once(&exp, Strategy::Probres, &exp.spec.search, true, 3).unwrap();
    let full = run_once(&exp, Strategy::Exhaustive, &exp.spec.search, true, 3).unwrap();
    for (i, v) in exp.videos.iter().enumerate() {
        let score = |idx| exp.provider.score(&v.feature, idx);
        assert!(score(full.results[i].top_raw_index) >= score(search.results[i].top_raw_index));
    }
}

#[test]
fn reported_calls_match_counters() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = Experiment::load(synthetic_spec(tmp.path(), "gaze-l2", 12)).unwrap();
    for strategy in [Strategy::Probres, Strategy::Random, Strategy::Exhaustive] {
        let out = run_once(&exp, strategy, &exp.spec.search, true, 1).unwrap();
        let mut total = 0;
        for (rec, res) in out.record.videos.iter().zip(&out.results) {
            let distinct: HashSet<usize> = res.trajectory.iter().map(|s| s.index).collect();
            assert_eq!(rec.distinct_calls, res.distinct_calls);
            assert_eq!(distinct.len(), res.distinct_calls);
            total += rec.distinct_calls;
        }
        let mean = total as f64 / out.record.videos.len() as f64;
        assert_eq!(out.record.report.mean_distinct_calls, mean, "{strategy}");
    }
}

#[test]
fn replay_reproduces_report() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = Experiment::load(synthetic_spec(tmp.path(), "gaze-l1", 10)).unwrap();
    let a = run_once(&exp, Strategy::Probres, &exp.spec.search, true, 9).unwrap();
    let b = run_once(&exp, Strategy::Probres, &exp.spec.search, true, 9).unwrap();
    assert_eq!(a.record.report.to_json().unwrap(), b.record.report.to_json().unwrap());
    assert_eq!(a.record.report, b.record.report);
}

#[test]
fn spec_round_trips_through_json() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = synthetic_spec(tmp.path(), "gaze-l2", 2);
    let path = tmp.path().join("spec.json");
    fs::write(&path, spec.to_json().unwrap()).unwrap();
    assert_eq!(ExperimentSpec::load(&path).unwrap(), spec);
}

#[test]
fn lambda_sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = Experiment::load(synthetic_spec(tmp.path(), "gaze-l1", 6)).unwrap();
    let values: Vec<String> = ["0.0", "0.2", "0.4", "0.6", "0.8", "1.0"].map(String::from).to_vec();
    let records = run_ablation_sweep(&exp, SweepAxis::Lambda, &values).unwrap();
    assert_eq!(records.len(), 6);
    let csv = fs::read_to_string(exp.spec.experiment_dir().join("sweep-lambda.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "axis_value,seed,wups_activity,exact_match,mean_distinct_calls,mean_oracle_rank");
    assert_eq!(lines.len(), 7);
    for (r, v) in records.iter().zip(&values) {
        assert_eq!(r.config.explore_lambda, v.parse::<f64>().unwrap());
    }
}

#[test]
fn iterations_sweep_mean_rank_does_not_grow() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = synthetic_spec(tmp.path(), "charades-l1", 100);
    spec.seeds = vec![0, 1];
    let exp = Experiment::load(spec).unwrap();
    let values: Vec<String> = ["50", "150", "500"].map(String::from).to_vec();
    let records = run_ablation_sweep(&exp, SweepAxis::Iterations, &values).unwrap();
    let means: Vec<f64> = records
        .chunks(2)
        .map(|runs| runs.iter().map(|r| r.mean_oracle_rank()).sum::<f64>() / runs.len() as f64)
        .collect();
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
}

#[test]
fn uninformative_graph_neither_helps_nor_hurts() {
    let tmp = tempfile::tempdir().unwrap();
    let base = synthetic_spec(tmp.path(), "charades-l1", 200);
    let world = match &base.space {
        SpaceSource::Synthetic(cfg) => probres::synthetic::SyntheticWorld::generate(cfg.clone()).unwrap(),
        _ => unreachable!(),
    };
    // Every action linked to every object with the same weight.
    let mut g = KnowledgeGraph::new();
    for a in &world.action_names {
        for o in &world.object_names {
            g.add_edge(a, "RelatedTo", o, 1.0).unwrap();
        }
    }
    let graph = tmp.path().join("flat.tsv");
    g.write_tsv(&graph).unwrap();
    let spec = ExperimentSpec {
        prior: PriorSource::Graph {
            path: graph,
            relation_weights: None,
            params: PriorParams::default(),
        },
        ..base
    };
    let exp = Experiment::load(spec).unwrap();
    let values: Vec<String> = ["on", "off"].map(String::from).to_vec();
    let records = run_ablation_sweep(&exp, SweepAxis::PriorOnoff, &values).unwrap();
    let diffs: Vec<f64> = records[0]
        .videos
        .iter()
        .zip(&records[1].videos)
        .map(|(on, off)| on.oracle_rank as f64 - off.oracle_rank as f64)
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() <= 3.0 * sd / n.sqrt() + 1e-12, "mean diff {mean}, sd {sd}");
}
