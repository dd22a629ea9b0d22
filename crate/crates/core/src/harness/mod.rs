//! Experiment plumbing: materialize an [`ExperimentSpec`], run a strategy
//! over every video, and write reproducible outputs.
//!
//! Output layout under `<output_dir>/<id>/`:
//!
//! ```text
//! spec.json                     frozen spec
//! seed-<s>/aggregate.csv        deterministic aggregate metrics
//! seed-<s>/report.json          per-video metric rows
//! seed-<s>/per_video.json       run record with ranks and wall-clock
//! seed-<s>/trajectories/*.tsv   plot data, one file per video
//! sweep-<axis>.csv              sweep table (sweeps only)
//! ```

mod runner;
mod spec;
mod strategy;

pub use runner::{
    apply_sweep_value, emit_trajectory_plotdata, run_ablation_sweep, run_experiment, run_once, video_seed,
    write_outcome, RunOutcome, RunRecord, SweepAxis, VideoRecord, SWEEP_COLUMNS,
};
pub use spec::{
    ConceptFiles, ConceptTable, Experiment, ExperimentSpec, OracleSource, PriorSource, SpaceSource, Strategy,
    TaxonomyFiles, Video,
};
pub use strategy::{matched_budget, run_exhaustive, run_random, run_strategy};
