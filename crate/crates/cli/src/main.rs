use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use probres::harness::{
    run_ablation_sweep, run_experiment, ConceptFiles, ConceptTable, Experiment, ExperimentSpec, OracleSource,
    PriorSource, SpaceSource, Strategy, SweepAxis, TaxonomyFiles, VideoRecord,
};
use probres::metrics::{evaluate, Prediction, Taxonomy};
use probres::prior::{import_edge_dump, PriorParams};
use probres::space::{write_embeddings, write_labels, Activity, Embedding};
use probres::synthetic::{SyntheticConfig, SyntheticWorld, BENCHMARK_PRESETS};
use probres::SearchConfig;

#[derive(Parser)]
#[command(name = "probres", version, about = "Prior-guided activity search experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one strategy over every video of an experiment.
    Run {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Run an ablation sweep along one axis.
    Sweep {
        #[command(flatten)]
        spec: SpecArgs,
        /// lambda, iterations, prior_onoff or rerank_onoff.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated axis values, e.g. `0,0.25,0.5` or `on,off`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Write a synthetic instance (space, graph, concepts, taxonomies, videos)
    /// plus a ready-to-run experiment.json.
    Synth(SynthArgs),
    /// Re-score saved predictions.
    Eval(EvalArgs),
    /// Convert a TSV edge dump into the JSON graph format.
    ImportKg {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Experiment fields. `--spec` loads a JSON base; every other flag overrides it.
#[derive(Args, Debug, Default)]
struct SpecArgs {
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    seed: Vec<u64>,
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<Strategy>,

    /// Label file for a file-backed space.
    #[arg(long, requires = "embeddings")]
    labels: Option<PathBuf>,
    #[arg(long, requires = "labels")]
    embeddings: Option<PathBuf>,
    /// Synthetic space: a preset name or `<actions>x<objects>`.
    #[arg(long, conflicts_with = "labels")]
    synthetic: Option<String>,
    #[arg(long, default_value_t = 0)]
    synthetic_seed: u64,

    /// Concept tables; without --labels they also define a Cartesian space.
    #[arg(long, requires_all = ["action_embeddings", "objects", "object_embeddings"])]
    actions: Option<PathBuf>,
    #[arg(long)]
    action_embeddings: Option<PathBuf>,
    #[arg(long)]
    objects: Option<PathBuf>,
    #[arg(long)]
    object_embeddings: Option<PathBuf>,

    #[arg(long, conflicts_with = "uniform_prior")]
    graph: Option<PathBuf>,
    #[arg(long)]
    relation_weights: Option<PathBuf>,
    #[arg(long)]
    uniform_prior: bool,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    max_hops: Option<usize>,
    #[arg(long)]
    floor: Option<f64>,

    /// Video index TSV: id, action, object.
    #[arg(long)]
    videos: Option<PathBuf>,
    #[arg(long, requires = "videos")]
    features: Option<PathBuf>,
    #[arg(long, requires = "videos")]
    activity_embeddings: Option<PathBuf>,
    #[arg(long)]
    synthetic_videos: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    recall: Option<f64>,

    #[arg(long, requires = "object_taxonomy")]
    action_taxonomy: Option<PathBuf>,
    #[arg(long, requires = "action_taxonomy")]
    object_taxonomy: Option<PathBuf>,

    /// key=value search config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Search config override, e.g. `--set lambda=0.6`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    no_trajectories: bool,
}

fn parse_synthetic(name: &str, seed: u64) -> Result<(SyntheticConfig, Option<usize>)> {
    if let Some((cfg, budget)) = SyntheticConfig::preset(name, seed) {
        return Ok((cfg, Some(budget)));
    }
    let Some((a, o)) = name.split_once('x') else {
        let names: Vec<&str> = BENCHMARK_PRESETS.iter().map(|p| p.0).collect();
        bail!("synthetic space {name:?} is neither a preset ({}) nor <actions>x<objects>", names.join(", "));
    };
    let cfg = SyntheticConfig {
        n_actions: a.parse().context("bad action count")?,
        n_objects: o.parse().context("bad object count")?,
        seed,
        ..Default::default()
    };
    Ok((SyntheticConfig { groups: cfg.groups.min(cfg.n_actions).min(cfg.n_objects), ..cfg }, None))
}

impl SpecArgs {
    fn build(&self) -> Result<ExperimentSpec> {
        let mut preset_budget = None;
        let mut spec = match &self.spec {
            Some(path) => ExperimentSpec::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => {
                let space = if let (Some(labels), Some(embeddings)) = (&self.labels, &self.embeddings) {
                    SpaceSource::Files {
                        labels: labels.clone(),
                        embeddings: embeddings.clone(),
                    }
                } else if let Some(name) = &self.synthetic {
                    let (cfg, budget) = parse_synthetic(name, self.synthetic_seed)?;
                    preset_budget = budget;
                    SpaceSource::Synthetic(cfg)
                } else if let Some(tables) = self.concept_files() {
                    SpaceSource::Cartesian {
                        actions: tables.actions,
                        objects: tables.objects,
                    }
                } else {
                    bail!("no space: pass --spec, --labels/--embeddings, --synthetic or the concept tables");
                };
                let synthetic = matches!(space, SpaceSource::Synthetic(_));
                let prior = if synthetic && self.graph.is_none() && !self.uniform_prior {
                    PriorSource::Synthetic {
                        params: PriorParams::default(),
                    }
                } else {
                    PriorSource::Uniform
                };
                let oracle = if synthetic && self.videos.is_none() {
                    OracleSource::Synthetic {
                        videos: 20,
                        noise_scale: 0.05,
                        recall: 0.8,
                    }
                } else {
                    OracleSource::Files {
                        videos: self.videos.clone().context("no videos: pass --videos")?,
                        features: None,
                        activity_embeddings: None,
                    }
                };
                ExperimentSpec {
                    id: "experiment".into(),
                    space,
                    prior,
                    oracle,
                    concepts: None,
                    taxonomies: None,
                    strategy: Strategy::default(),
                    search: SearchConfig::default(),
                    seeds: Vec::new(),
                    output_dir: PathBuf::from("runs"),
                    write_trajectories: true,
                }
            }
        };
        self.apply(&mut spec, preset_budget)?;
        spec.validate()?;
        Ok(spec)
    }

    fn concept_files(&self) -> Option<ConceptFiles> {
        Some(ConceptFiles {
            actions: ConceptTable {
                labels: self.actions.clone()?,
                embeddings: self.action_embeddings.clone()?,
            },
            objects: ConceptTable {
                labels: self.objects.clone()?,
                embeddings: self.object_embeddings.clone()?,
            },
        })
    }

    fn apply(&self, spec: &mut ExperimentSpec, preset_budget: Option<usize>) -> Result<()> {
        spec.seeds = self.seed.clone();
        if let Some(id) = &self.id {
            spec.id = id.clone();
        }
        if let Some(dir) = &self.output_dir {
            spec.output_dir = dir.clone();
        }
        if let Some(s) = self.strategy {
            spec.strategy = s;
        }
        if self.spec.is_some() && (self.labels.is_some() || self.synthetic.is_some()) {
            bail!("--labels/--synthetic cannot override the space of --spec");
        }
        if let Some(t) = self.concept_files() {
            if !matches!(spec.space, SpaceSource::Cartesian { .. }) {
                spec.concepts = Some(t);
            }
        }

        if let Some(path) = &self.graph {
            spec.prior = PriorSource::Graph {
                path: path.clone(),
                relation_weights: None,
                params: PriorParams::default(),
            };
        }
        if self.uniform_prior {
            spec.prior = PriorSource::Uniform;
        }
        match &mut spec.prior {
            PriorSource::Graph {
                relation_weights, params, ..
            } => {
                if let Some(w) = &self.relation_weights {
                    *relation_weights = Some(w.clone());
                }
                apply_params(params, self);
            }
            PriorSource::Synthetic { params } => apply_params(params, self),
            PriorSource::Uniform => {}
        }

        if let Some(videos) = &self.videos {
            spec.oracle = OracleSource::Files {
                videos: videos.clone(),
                features: self.features.clone(),
                activity_embeddings: self.activity_embeddings.clone(),
            };
        }
        if let OracleSource::Synthetic {
            videos,
            noise_scale,
            recall,
        } = &mut spec.oracle
        {
            if let Some(v) = self.synthetic_videos {
                *videos = v;
            }
            if let Some(v) = self.noise {
                *noise_scale = v;
            }
            if let Some(v) = self.recall {
                *recall = v;
            }
        } else if self.synthetic_videos.is_some() || self.noise.is_some() || self.recall.is_some() {
            bail!("--synthetic-videos/--noise/--recall need a synthetic oracle");
        }

        if let (Some(a), Some(o)) = (&self.action_taxonomy, &self.object_taxonomy) {
            spec.taxonomies = Some(TaxonomyFiles {
                actions: a.clone(),
                objects: o.clone(),
            });
        }
        if let Some(t) = preset_budget {
            spec.search.total_iters = t;
        }
        if let Some(path) = &self.config {
            spec.search = SearchConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
        }
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            spec.search.set(k, v)?;
        }
        if self.no_trajectories {
            spec.write_trajectories = false;
        }
        Ok(())
    }
}

fn apply_params(params: &mut PriorParams, args: &SpecArgs) {
    if let Some(d) = args.decay {
        params.decay = d;
    }
    if let Some(h) = args.max_hops {
        params.max_hops = h;
    }
    if let Some(f) = args.floor {
        params.floor = f;
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Preset name or `<actions>x<objects>`.
    #[arg(long, default_value = "gaze-l1")]
    size: String,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long, default_value_t = 20)]
    videos: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0.8)]
    recall: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the activity embeddings in the binary format.
    #[arg(long)]
    binary: bool,
    #[arg(long)]
    out: PathBuf,
}

fn write_concepts(dir: &Path, stem: &str, names: &[String], world: &SyntheticWorld, action: bool) -> Result<()> {
    fs::write(dir.join(format!("{stem}.txt")), names.join("\n") + "\n")?;
    let table = if action { &world.concepts.actions } else { &world.concepts.objects };
    let rows: Vec<Embedding> = names.iter().map(|n| table[n].clone()).collect();
    write_embeddings(&dir.join(format!("{stem}_embeddings.emb")), &rows)?;
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let (mut cfg, budget) = parse_synthetic(&args.size, args.seed)?;
    cfg.dim = args.dim;
    if let Some(g) = args.groups {
        cfg.groups = g;
    }
    let world = SyntheticWorld::generate(cfg)?;
    let dir = &args.out;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    write_labels(&dir.join("labels.txt"), world.space.activities())?;
    let emb_name = if args.binary { "embeddings.bin" } else { "embeddings.emb" };
    write_embeddings(&dir.join(emb_name), world.space.embeddings())?;
    world.affordance_graph(0).write_tsv(&dir.join("graph.tsv"))?;
    write_concepts(dir, "actions", &world.action_names, &world, true)?;
    write_concepts(dir, "objects", &world.object_names, &world, false)?;
    let (action_tax, object_tax) = world.taxonomies()?;
    fs::write(dir.join("action_taxonomy.tsv"), action_tax.to_tsv())?;
    fs::write(dir.join("object_taxonomy.tsv"), object_tax.to_tsv())?;

    let videos = world.videos(args.videos, args.noise, args.recall)?;
    let mut index = String::new();
    let mut features = Vec::with_capacity(videos.len());
    for (i, (truth, feature)) in videos.into_iter().enumerate() {
        let a = world.space.activity(truth);
        index += &format!("video-{i:04}\t{}\t{}\n", a.action(), a.object());
        features.push(feature);
    }
    fs::write(dir.join("videos.tsv"), index)?;
    write_embeddings(&dir.join("features.emb"), &features)?;

    let table = |stem: &str| ConceptTable {
        labels: format!("{stem}.txt").into(),
        embeddings: format!("{stem}_embeddings.emb").into(),
    };
    let mut search = SearchConfig::default();
    if let Some(t) = budget {
        search.total_iters = t;
    }
    search.total_iters = search.total_iters.min(world.len());
    let spec = ExperimentSpec {
        id: format!("synth-{}", args.size),
        space: SpaceSource::Files {
            labels: "labels.txt".into(),
            embeddings: emb_name.into(),
        },
        prior: PriorSource::Graph {
            path: "graph.tsv".into(),
            relation_weights: None,
            params: PriorParams::default(),
        },
        oracle: OracleSource::Files {
            videos: "videos.tsv".into(),
            features: Some("features.emb".into()),
            activity_embeddings: None,
        },
        concepts: Some(ConceptFiles {
            actions: table("actions"),
            objects: table("objects"),
        }),
        taxonomies: Some(TaxonomyFiles {
            actions: "action_taxonomy.tsv".into(),
            objects: "object_taxonomy.tsv".into(),
        }),
        strategy: Strategy::Probres,
        search,
        seeds: vec![0],
        output_dir: "runs".into(),
        write_trajectories: true,
    };
    fs::write(dir.join("experiment.json"), spec.to_json()?)?;
    println!(
        "wrote {} activities, {} videos to {}",
        world.len(),
        args.videos,
        dir.display()
    );
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    /// A `per_video.json` run record, or a TSV of
    /// `id, predicted action, predicted object, truth action, truth object, calls`.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, requires = "object_taxonomy")]
    action_taxonomy: Option<PathBuf>,
    #[arg(long, requires = "action_taxonomy")]
    object_taxonomy: Option<PathBuf>,
    /// Write the full report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        #[derive(serde::Deserialize)]
        struct Saved {
            videos: Vec<VideoRecord>,
        }
        let saved: Saved = serde_json::from_str(&text)?;
        return saved
            .videos
            .into_iter()
            .map(|v| {
                Ok(Prediction {
                    predicted: Activity::parse_label(&v.predicted)?,
                    truth: Activity::parse_label(&v.truth)?,
                    video_id: v.video_id,
                    distinct_calls: v.distinct_calls,
                })
            })
            .collect();
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let c: Vec<&str> = line.split('\t').collect();
        if c.len() != 6 {
            bail!("{}:{}: expected 6 columns, found {}", path.display(), i + 1, c.len());
        }
        out.push(Prediction {
            video_id: c[0].to_string(),
            predicted: Activity::from_parts(c[1], c[2])?,
            truth: Activity::from_parts(c[3], c[4])?,
            distinct_calls: c[5].trim().parse().with_context(|| format!("line {}: bad call count", i + 1))?,
        });
    }
    Ok(out)
}

fn eval(args: &EvalArgs) -> Result<()> {
    let predictions = read_predictions(&args.predictions)?;
    let (actions, objects) = match (&args.action_taxonomy, &args.object_taxonomy) {
        (Some(a), Some(o)) => (Taxonomy::load(a)?, Taxonomy::load(o)?),
        _ => {
            let mut a: Vec<&str> = predictions
                .iter()
                .flat_map(|p| [p.predicted.action().text(), p.truth.action().text()])
                .collect();
            let mut o: Vec<&str> = predictions
                .iter()
                .flat_map(|p| [p.predicted.object().text(), p.truth.object().text()])
                .collect();
            a.sort_unstable();
            a.dedup();
            o.sort_unstable();
            o.dedup();
            (Taxonomy::flat("entity", a)?, Taxonomy::flat("entity", o)?)
        }
    };
    let report = evaluate(&predictions, &actions, &objects)?;
    print!("{}", report.aggregate_csv());
    if let Some(out) = &args.out {
        fs::write(out, report.to_json()?).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { spec } => {
            let spec = spec.build()?;
            let exp = Experiment::load(spec)?;
            let root = exp.spec.experiment_dir();
            for r in run_experiment(&exp)? {
                let v = r.report.aggregate_values();
                println!(
                    "seed {}: wups_object={:.4} wups_action={:.4} wups_activity={:.4} exact_match={:.4} mean_distinct_calls={:.1}",
                    r.seed, v[0], v[1], v[2], v[3], v[4]
                );
            }
            println!("results in {}", root.display());
        }
        Command::Sweep { spec, axis, values } => {
            let spec = spec.build()?;
            let exp = Experiment::load(spec)?;
            let records = run_ablation_sweep(&exp, axis, &values)?;
            let table = exp.spec.experiment_dir().join(format!("sweep-{axis}.csv"));
            print!("{}", fs::read_to_string(&table)?);
            println!("{} runs; table in {}", records.len(), table.display());
        }
        Command::Synth(args) => synth(&args)?,
        Command::Eval(args) => eval(&args)?,
        Command::ImportKg { input, output } => {
            let graph = import_edge_dump(&input)?;
            fs::write(&output, graph.to_json()?).with_context(|| format!("writing {}", output.display()))?;
            println!("{} nodes, {} edges -> {}", graph.node_count(), graph.edges().count(), output.display());
        }
    }
    Ok(())
}
