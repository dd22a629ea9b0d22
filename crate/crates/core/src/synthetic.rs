//! Seeded synthetic worlds for desk-scale verification.
//!
//! Actions and objects are split into `groups` semantic groups. A concept
//! embedding is its group centre plus spread; a phrase embedding is the
//! normalized sum of its two concept embeddings plus jitter. The affordance
//! graph links every action to every object of its own group, so the graph
//! prior marks same-group activities as plausible.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Taxonomy;
use crate::oracle::{DotProductProvider, LikelihoodProvider};
use crate::prior::KnowledgeGraph;
use crate::space::{Activity, ConceptEmbeddings, Embedding, SearchSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_actions: usize,
    pub n_objects: usize,
    /// Truncates the action-major grid to this many activities when set.
    pub n_activities: Option<usize>,
    pub dim: usize,
    pub groups: usize,
    /// Norm of the per-concept offset from its group centre.
    pub concept_spread: f64,
    /// Norm of the per-phrase offset from the concept sum.
    pub phrase_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_actions: 20,
            n_objects: 50,
            n_activities: None,
            dim: 64,
            groups: 12,
            concept_spread: 0.3,
            phrase_jitter: 0.15,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Near-square action x object grid holding at least `n` activities.
    pub fn for_size(n: usize, dim: usize, seed: u64) -> Self {
        let n_actions = (n as f64).sqrt().ceil().max(1.0) as usize;
        let n_objects = n.div_ceil(n_actions);
        SyntheticConfig {
            n_actions,
            n_objects,
            n_activities: (n_actions * n_objects != n).then_some(n),
            dim,
            groups: 12.min(n_actions).min(n_objects).max(1),
            seed,
            ..Default::default()
        }
    }
}

/// Benchmark sizes as `(name, actions, objects, search budget)`.
pub const BENCHMARK_PRESETS: [(&str, usize, usize, usize); 4] = [
    ("gaze-l1", 19, 20, 110),
    ("gaze-l2", 15, 27, 175),
    ("ek100-l1", 97, 300, 3000),
    ("charades-l1", 33, 38, 300),
];

impl SyntheticConfig {
    /// Preset grid from [`BENCHMARK_PRESETS`] plus its search budget.
    pub fn preset(name: &str, seed: u64) -> Option<(Self, usize)> {
        BENCHMARK_PRESETS.iter().find(|p| p.0 == name).map(|&(_, a, o, t)| {
            (
                SyntheticConfig {
                    n_actions: a,
                    n_objects: o,
                    seed,
                    ..Default::default()
                },
                t,
            )
        })
    }
}

/// Isotropic Gaussian vector with expected norm about 1.
fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let s = 1.0 / (dim as f64).sqrt();
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * s).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn add_scaled(base: &[f64], other: &[f64], scale: f64) -> Vec<f64> {
    base.iter().zip(other).map(|(a, b)| a + scale * b).collect()
}

/// Stateless 64-bit mixer used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub config: SyntheticConfig,
    pub space: SearchSpace,
    pub concepts: ConceptEmbeddings,
    pub action_names: Vec<String>,
    pub object_names: Vec<String>,
    pub action_group: Vec<usize>,
    pub object_group: Vec<usize>,
}

impl SyntheticWorld {
    pub fn generate(config: SyntheticConfig) -> Result<Self> {
        let SyntheticConfig {
            n_actions,
            n_objects,
            dim,
            groups,
            ..
        } = config;
        if n_actions == 0 || n_objects == 0 || dim == 0 || groups == 0 {
            return Err(Error::InvalidConfig("synthetic sizes must be positive".into()));
        }
        if groups > n_actions || groups > n_objects {
            return Err(Error::InvalidConfig("more groups than actions or objects".into()));
        }
        let total = n_actions * n_objects;
        let n = config.n_activities.unwrap_or(total);
        if n == 0 || n > total {
            return Err(Error::InvalidConfig(format!("n_activities {n} outside 1..={total}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let assign = |rng: &mut ChaCha8Rng, count: usize| {
            let mut g: Vec<usize> = (0..count).map(|i| i % groups).collect();
            g.shuffle(rng);
            g
        };
        let action_group = assign(&mut rng, n_actions);
        let object_group = assign(&mut rng, n_objects);
        let action_centres: Vec<Vec<f64>> = (0..groups).map(|_| unit(&gaussian(&mut rng, dim))).collect();
        let object_centres: Vec<Vec<f64>> = (0..groups).map(|_| unit(&gaussian(&mut rng, dim))).collect();
        let action_vecs: Vec<Vec<f64>> = action_group
            .iter()
            .map(|&g| unit(&add_scaled(&action_centres[g], &gaussian(&mut rng, dim), config.concept_spread)))
            .collect();
        let object_vecs: Vec<Vec<f64>> = object_group
            .iter()
            .map(|&g| unit(&add_scaled(&object_centres[g], &gaussian(&mut rng, dim), config.concept_spread)))
            .collect();

        let width = |k: usize| k.saturating_sub(1).to_string().len().max(2);
        let action_names: Vec<String> =
            (0..n_actions).map(|i| format!("act{i:0w$}", w = width(n_actions))).collect();
        let object_names: Vec<String> =
            (0..n_objects).map(|i| format!("obj{i:0w$}", w = width(n_objects))).collect();

        let mut activities = Vec::with_capacity(n);
        let mut embeddings = Vec::with_capacity(n);
        for i in 0..n {
            let (a, o) = (i / n_objects, i % n_objects);
            let sum: Vec<f64> = action_vecs[a].iter().zip(&object_vecs[o]).map(|(x, y)| x + y).collect();
            let phrase = add_scaled(&unit(&sum), &gaussian(&mut rng, dim), config.phrase_jitter);
            activities.push(Activity::from_parts(&action_names[a], &object_names[o])?);
            embeddings.push(Embedding::from_f64(&phrase)?);
        }
        let space = SearchSpace::new(activities, embeddings)?;

        let mut concepts = ConceptEmbeddings::default();
        for (name, v) in action_names.iter().zip(&action_vecs) {
            concepts.actions.insert(name.clone(), Embedding::from_f64(v)?);
        }
        for (name, v) in object_names.iter().zip(&object_vecs) {
            concepts.objects.insert(name.clone(), Embedding::from_f64(v)?);
        }
        Ok(SyntheticWorld {
            config,
            space,
            concepts,
            action_names,
            object_names,
            action_group,
            object_group,
        })
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    /// `(action, object)` grid coordinates of an activity index.
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.config.n_objects, index % self.config.n_objects)
    }

    /// Whether the affordance graph links this activity's action and object.
    pub fn is_plausible(&self, index: usize) -> bool {
        let (a, o) = self.coords(index);
        self.action_group[a] == self.object_group[o]
    }

    /// Complete bipartite `UsedFor` edges within each group, weights in [1, 2).
    pub fn affordance_graph(&self, seed: u64) -> KnowledgeGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, seed));
        let mut g = KnowledgeGraph::new();
        for name in self.action_names.iter().chain(&self.object_names) {
            g.add_node(name);
        }
        for (a, name_a) in self.action_names.iter().enumerate() {
            for (o, name_o) in self.object_names.iter().enumerate() {
                if self.action_group[a] == self.object_group[o] {
                    let w = 1.0 + rng.random::<f64>();
                    g.add_edge(name_a, "UsedFor", name_o, w).expect("weights are positive");
                }
            }
        }
        g
    }

    /// Picks a ground-truth index: plausible with probability `recall`,
    /// otherwise uniformly among implausible activities.
    pub fn sample_truth(&self, recall: f64, rng: &mut impl Rng) -> usize {
        let plausible = rng.random_bool(recall.clamp(0.0, 1.0));
        let pool: Vec<usize> = (0..self.len()).filter(|&i| self.is_plausible(i) == plausible).collect();
        if pool.is_empty() {
            return rng.random_range(0..self.len());
        }
        pool[rng.random_range(0..pool.len())]
    }

    /// Truth embedding plus isotropic noise of norm about `noise_scale`, renormalized.
    pub fn video_for(&self, truth_index: usize, noise_scale: f64, seed: u64) -> Result<Embedding> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<f64> = self.space.embedding(truth_index).values().iter().map(|&v| f64::from(v)).collect();
        let noise = gaussian(&mut rng, base.len());
        Embedding::from_f64(&add_scaled(&base, &noise, noise_scale))
    }

    pub fn oracle(&self, truth_index: usize, noise_scale: f64, seed: u64) -> Result<SyntheticOracle> {
        if truth_index >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: truth_index,
                len: self.len(),
            });
        }
        Ok(SyntheticOracle {
            provider: DotProductProvider::from_space(&self.space),
            truth_index,
            noise_scale,
            seed,
        })
    }

    /// `count` planted videos as `(truth index, feature)`. Depends only on
    /// the world seed and the video position.
    pub fn videos(&self, count: usize, noise_scale: f64, recall: f64) -> Result<Vec<(usize, Embedding)>> {
        (0..count as u64)
            .map(|v| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, 0x7275_7468_0000 + v));
                let truth = self.sample_truth(recall, &mut rng);
                let video = self.video_for(truth, noise_scale, mix_seed(self.config.seed, 0x7669_6400_0000 + v))?;
                Ok((truth, video))
            })
            .collect()
    }

    /// Two-level taxonomies: root -> group -> concept.
    pub fn taxonomies(&self) -> Result<(Taxonomy, Taxonomy)> {
        let build = |prefix: &str, names: &[String], groups: &[usize]| {
            let mut pairs: Vec<(String, Option<String>)> = vec![("entity".into(), None)];
            for g in 0..self.config.groups {
                pairs.push((format!("{prefix}-group-{g}"), Some("entity".into())));
            }
            for (n, &g) in names.iter().zip(groups) {
                pairs.push((n.clone(), Some(format!("{prefix}-group-{g}"))));
            }
            Taxonomy::from_pairs(pairs)
        };
        Ok((
            build("action", &self.action_names, &self.action_group)?,
            build("object", &self.object_names, &self.object_group)?,
        ))
    }

    /// Raw oracle score of every activity for `video`.
    pub fn score_table(&self, video: &Embedding) -> Vec<f64> {
        self.space.embeddings().iter().map(|e| video.dot(e)).collect()
    }
}

/// Dot-product oracle over a synthetic world with a planted truth.
#[derive(Clone, Debug)]
pub struct SyntheticOracle {
    provider: DotProductProvider,
    pub truth_index: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl LikelihoodProvider for SyntheticOracle {
    fn dim(&self) -> usize {
        self.provider.dim()
    }

    fn len(&self) -> usize {
        self.provider.len()
    }

    fn score(&self, video: &Embedding, activity_index: usize) -> f64 {
        self.provider.score(video, activity_index)
    }
}

pub struct SyntheticInstance {
    pub world: SyntheticWorld,
    pub video: Embedding,
    pub oracle: SyntheticOracle,
}

/// Clustered world of `n` activities with the video planted at `truth_index`.
pub fn make_synthetic_instance(
    n: usize,
    dim: usize,
    truth_index: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<SyntheticInstance> {
    if n < 2 {
        return Err(Error::InvalidConfig("synthetic instance needs at least 2 activities".into()));
    }
    if truth_index >= n {
        return Err(Error::IndexOutOfRange { index: truth_index, len: n });
    }
    let world = SyntheticWorld::generate(SyntheticConfig::for_size(n, dim, seed))?;
    let video_seed = mix_seed(seed, 0x5EED);
    let video = world.video_for(truth_index, noise_scale, video_seed)?;
    let oracle = world.oracle(truth_index, noise_scale, video_seed)?;
    Ok(SyntheticInstance { world, video, oracle })
}

/// 1-based rank of `index` among all raw scores (ties count in its favour).
pub fn brute_force_rank(scores: &[f64], index: usize) -> usize {
    let s = scores[index];
    1 + scores.iter().filter(|&&x| x > s).count()
}
