use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Taxonomy;
use crate::oracle::{DotProductProvider, LikelihoodProvider};
use crate::prior::{build_prior, KnowledgeGraph, PriorDistribution, PriorParams, RelationWeights};
use crate::search::SearchConfig;
use crate::space::{
    build_cartesian_space, load_space, read_concept_table, read_embeddings, Activity, CompositeEmbedder, Concept,
    ConceptEmbeddings, ConceptKind, Embedding, SearchSpace,
};
use crate::synthetic::{SyntheticConfig, SyntheticWorld};

/// One concept per line plus a parallel embedding file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptTable {
    pub labels: PathBuf,
    pub embeddings: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptFiles {
    pub actions: ConceptTable,
    pub objects: ConceptTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceSource {
    /// Every action x object pair; phrase embeddings are normalized concept sums.
    Cartesian { actions: ConceptTable, objects: ConceptTable },
    Files { labels: PathBuf, embeddings: PathBuf },
    Synthetic(SyntheticConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSource {
    Graph {
        path: PathBuf,
        #[serde(default)]
        relation_weights: Option<PathBuf>,
        #[serde(default)]
        params: PriorParams,
    },
    /// Affordance graph of a synthetic space.
    Synthetic {
        #[serde(default)]
        params: PriorParams,
    },
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSource {
    /// `videos` is a TSV index `id<TAB>action<TAB>object`. Features come from
    /// `features` (one row per index line) or from `<id>.emb` / `<id>.bin`
    /// next to the index. The provider scores against `activity_embeddings`,
    /// defaulting to the space embeddings.
    Files {
        videos: PathBuf,
        #[serde(default)]
        features: Option<PathBuf>,
        #[serde(default)]
        activity_embeddings: Option<PathBuf>,
    },
    Synthetic {
        #[serde(default = "default_video_count")]
        videos: usize,
        #[serde(default = "default_noise")]
        noise_scale: f64,
        /// Fraction of truths drawn from graph-plausible activities.
        #[serde(default = "default_recall")]
        recall: f64,
    },
}

fn default_video_count() -> usize {
    20
}
fn default_noise() -> f64 {
    0.05
}
fn default_recall() -> f64 {
    0.8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyFiles {
    pub actions: PathBuf,
    pub objects: PathBuf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Probres,
    Exhaustive,
    Random,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "probres" => Ok(Strategy::Probres),
            "exhaustive" => Ok(Strategy::Exhaustive),
            "random" => Ok(Strategy::Random),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Probres => "probres",
            Strategy::Exhaustive => "exhaustive",
            Strategy::Random => "random",
        })
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: String,
    pub space: SpaceSource,
    pub prior: PriorSource,
    pub oracle: OracleSource,
    /// Re-ranking concept embeddings; defaults to the Cartesian or synthetic tables.
    #[serde(default)]
    pub concepts: Option<ConceptFiles>,
    /// Defaults to the synthetic taxonomies or a flat one over all concepts.
    #[serde(default)]
    pub taxonomies: Option<TaxonomyFiles>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub search: SearchConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub write_trajectories: bool,
}

impl ExperimentSpec {
    /// Reads a JSON spec; relative paths resolve against the spec's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: ExperimentSpec = serde_json::from_str(&text)?;
        if let Some(base) = path.parent() {
            spec.resolve_paths(base);
        }
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_table = |t: &mut ConceptTable| {
            fix(&mut t.labels);
            fix(&mut t.embeddings);
        };
        match &mut self.space {
            SpaceSource::Cartesian { actions, objects } => {
                fix_table(actions);
                fix_table(objects);
            }
            SpaceSource::Files { labels, embeddings } => {
                fix(labels);
                fix(embeddings);
            }
            SpaceSource::Synthetic(_) => {}
        }
        if let PriorSource::Graph {
            path, relation_weights, ..
        } = &mut self.prior
        {
            fix(path);
            if let Some(w) = relation_weights {
                fix(w);
            }
        }
        if let OracleSource::Files {
            videos,
            features,
            activity_embeddings,
        } = &mut self.oracle
        {
            fix(videos);
            features.iter_mut().for_each(fix);
            activity_embeddings.iter_mut().for_each(fix);
        }
        if let Some(c) = &mut self.concepts {
            fix_table(&mut c.actions);
            fix_table(&mut c.objects);
        }
        if let Some(t) = &mut self.taxonomies {
            fix(&mut t.actions);
            fix(&mut t.objects);
        }
        fix(&mut self.output_dir);
    }

    fn referenced_files(&self) -> Vec<&Path> {
        fn table(t: &ConceptTable) -> [&Path; 2] {
            [t.labels.as_path(), t.embeddings.as_path()]
        }
        let mut out: Vec<&Path> = Vec::new();
        match &self.space {
            SpaceSource::Cartesian { actions, objects } => {
                out.extend(table(actions));
                out.extend(table(objects));
            }
            SpaceSource::Files { labels, embeddings } => out.extend([labels.as_path(), embeddings.as_path()]),
            SpaceSource::Synthetic(_) => {}
        }
        if let PriorSource::Graph {
            path, relation_weights, ..
        } = &self.prior
        {
            out.push(path);
            out.extend(relation_weights.as_deref());
        }
        if let OracleSource::Files {
            videos,
            features,
            activity_embeddings,
        } = &self.oracle
        {
            out.push(videos);
            out.extend(features.as_deref());
            out.extend(activity_embeddings.as_deref());
        }
        if let Some(c) = &self.concepts {
            out.extend(table(&c.actions));
            out.extend(table(&c.objects));
        }
        if let Some(t) = &self.taxonomies {
            out.extend([t.actions.as_path(), t.objects.as_path()]);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.id.is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return bad(format!("experiment id {:?} must be non-empty [A-Za-z0-9._-]", self.id));
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        self.search.validate()?;
        let synthetic_space = matches!(self.space, SpaceSource::Synthetic(_));
        if matches!(self.prior, PriorSource::Synthetic { .. }) && !synthetic_space {
            return bad("a synthetic prior needs a synthetic space".into());
        }
        if let OracleSource::Synthetic { videos, noise_scale, recall } = self.oracle {
            if !synthetic_space {
                return bad("a synthetic oracle needs a synthetic space".into());
            }
            if videos == 0 || noise_scale.is_nan() || noise_scale < 0.0 || !(0.0..=1.0).contains(&recall) {
                return bad("synthetic oracle needs videos > 0, noise_scale >= 0, recall in [0, 1]".into());
            }
        }
        if let Some(missing) = self.referenced_files().into_iter().find(|p| !p.exists()) {
            return Err(Error::io(
                missing,
                std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file does not exist"),
            ));
        }
        Ok(())
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output_dir.join(&self.id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub truth: Activity,
    /// Position of the truth in the space, when it is enumerated there.
    pub truth_index: Option<usize>,
    pub feature: Embedding,
}

/// A spec with every input loaded. Immutable and shared by all runs.
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub space: SearchSpace,
    pub prior: PriorDistribution,
    pub provider: DotProductProvider,
    pub concepts: ConceptEmbeddings,
    pub action_taxonomy: Taxonomy,
    pub object_taxonomy: Taxonomy,
    pub videos: Vec<Video>,
}

fn load_table(t: &ConceptTable, kind: ConceptKind) -> Result<std::collections::HashMap<String, Embedding>> {
    read_concept_table(&t.labels, &t.embeddings, kind)
}

fn read_video_index(path: &Path) -> Result<Vec<(String, Activity)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(path, i + 1, format!("expected id, action, object; found {} columns", cols.len())));
        }
        let truth = Activity::from_parts(cols[1], cols[2]).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push((cols[0].trim().to_string(), truth));
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("video index has no entries"));
    }
    Ok(out)
}

fn single_feature(path: &Path) -> Result<Embedding> {
    let mut rows = read_embeddings(path)?;
    if rows.len() != 1 {
        return Err(Error::InvalidEmbedding(format!(
            "{}: expected one feature row, found {}",
            path.display(),
            rows.len()
        )));
    }
    Ok(rows.remove(0))
}

fn video_feature_path(index: &Path, id: &str) -> Result<PathBuf> {
    let dir = index.parent().unwrap_or(Path::new("."));
    ["emb", "bin"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.exists())
        .ok_or_else(|| Error::MissingEmbedding(format!("video {id}")))
}

fn flat_taxonomies(space: &SearchSpace, videos: &[Video]) -> Result<(Taxonomy, Taxonomy)> {
    let mut actions = BTreeSet::new();
    let mut objects = BTreeSet::new();
    for a in space.activities().iter().chain(videos.iter().map(|v| &v.truth)) {
        actions.insert(a.action().text().to_string());
        objects.insert(a.object().text().to_string());
    }
    Ok((Taxonomy::flat("entity", &actions)?, Taxonomy::flat("entity", &objects)?))
}

impl Experiment {
    pub fn load(spec: ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let mut world = None;
        let mut default_concepts = ConceptEmbeddings::default();
        let space = match &spec.space {
            SpaceSource::Cartesian { actions, objects } => {
                default_concepts.actions = load_table(actions, ConceptKind::Action)?;
                default_concepts.objects = load_table(objects, ConceptKind::Object)?;
                let mut a: Vec<Concept> = Vec::new();
                for name in default_concepts.actions.keys() {
                    a.push(Concept::action(name)?);
                }
                let mut o: Vec<Concept> = Vec::new();
                for name in default_concepts.objects.keys() {
                    o.push(Concept::object(name)?);
                }
                a.sort_by(|x, y| x.text().cmp(y.text()));
                o.sort_by(|x, y| x.text().cmp(y.text()));
                build_cartesian_space(&a, &o, &CompositeEmbedder::new(&default_concepts))?
            }
            SpaceSource::Files { labels, embeddings } => load_space(labels, embeddings)?,
            SpaceSource::Synthetic(cfg) => {
                let w = SyntheticWorld::generate(cfg.clone())?;
                default_concepts = w.concepts.clone();
                let space = w.space.clone();
                world = Some(w);
                space
            }
        };
        log::info!("space: {} activities, dim {}", space.len(), space.dim());

        let prior = match &spec.prior {
            PriorSource::Graph {
                path,
                relation_weights,
                params,
            } => {
                let graph = KnowledgeGraph::load(path)?;
                let weights = match relation_weights {
                    Some(p) => RelationWeights::load(p)?,
                    None => RelationWeights::default(),
                };
                build_prior(&space, &graph, &weights, params)?
            }
            PriorSource::Synthetic { params } => {
                let w = world.as_ref().expect("validated synthetic space");
                build_prior(&space, &w.affordance_graph(0), &RelationWeights::default(), params)?
            }
            PriorSource::Uniform => PriorDistribution::uniform(space.len()),
        };

        let (provider, videos) = match &spec.oracle {
            OracleSource::Files {
                videos,
                features,
                activity_embeddings,
            } => {
                let provider = match activity_embeddings {
                    Some(p) => DotProductProvider::from_file(p)?,
                    None => DotProductProvider::from_space(&space),
                };
                let index = read_video_index(videos)?;
                let feats: Vec<Embedding> = match features {
                    Some(p) => {
                        let rows = read_embeddings(p)?;
                        if rows.len() != index.len() {
                            return Err(Error::InvalidEmbedding(format!(
                                "{} feature rows for {} videos",
                                rows.len(),
                                index.len()
                            )));
                        }
                        rows
                    }
                    None => index
                        .iter()
                        .map(|(id, _)| single_feature(&video_feature_path(videos, id)?))
                        .collect::<Result<_>>()?,
                };
                let vids: Vec<Video> = index
                    .into_iter()
                    .zip(feats)
                    .map(|((id, truth), feature)| Video {
                        truth_index: space.index_of(truth.phrase()),
                        id,
                        truth,
                        feature,
                    })
                    .collect();
                (provider, vids)
            }
            OracleSource::Synthetic {
                videos,
                noise_scale,
                recall,
            } => {
                let w = world.as_ref().expect("validated synthetic space");
                let vids: Vec<Video> = w
                    .videos(*videos, *noise_scale, *recall)?
                    .into_iter()
                    .enumerate()
                    .map(|(i, (truth, feature))| Video {
                        id: format!("video-{i:04}"),
                        truth: space.activity(truth).clone(),
                        truth_index: Some(truth),
                        feature,
                    })
                    .collect();
                (DotProductProvider::from_space(&space), vids)
            }
        };
        if provider.len() != space.len() {
            return Err(Error::InvalidConfig(format!(
                "oracle scores {} activities, space has {}",
                provider.len(),
                space.len()
            )));
        }

        let concepts = match &spec.concepts {
            Some(c) => ConceptEmbeddings {
                actions: load_table(&c.actions, ConceptKind::Action)?,
                objects: load_table(&c.objects, ConceptKind::Object)?,
            },
            None => default_concepts,
        };
        let (action_taxonomy, object_taxonomy) = match (&spec.taxonomies, &world) {
            (Some(t), _) => (Taxonomy::load(&t.actions)?, Taxonomy::load(&t.objects)?),
            (None, Some(w)) => w.taxonomies()?,
            (None, None) => flat_taxonomies(&space, &videos)?,
        };
        Ok(Experiment {
            spec,
            space,
            prior,
            provider,
            concepts,
            action_taxonomy,
            object_taxonomy,
            videos,
        })
    }
}
