//! The three-phase search loop: prior-mixed exploration, likelihood-guided
//! exploitation, then deterministic top-K refinement with concept
//! decomposition re-ranking.
//!
//! Draw order (all draws come from one ChaCha8 stream seeded by `seed`):
//!
//! 1. step 0: one draw from the prior;
//! 2. steps `1..explore_iters`: one draw from the exploration mixture, visited
//!    indices masked;
//! 3. steps `explore_iters..total_iters`: a Bernoulli(`novelty_prob`) coin;
//!    heads draws a fresh index from the exploration mixture, tails draws a
//!    visited pivot from the guided distribution and evaluates the nearest
//!    unvisited neighbour of the pivot in the structured order.
//!
//! The loop stops early once every activity has been visited.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{normalize_likelihood, CountingCache, DEFAULT_TEMPERATURE};
use crate::prior::PriorDistribution;
use crate::sampler::WeightTree;
use crate::space::{rank_desc, Activity, ConceptEmbeddings, Embedding, SearchSpace};

/// Fixed-point scale for guided weights, relative to the current maximum.
const GUIDED_SCALE: f64 = (1u64 << 40) as f64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Prior share of the exploration mixture.
    pub explore_lambda: f64,
    pub total_iters: usize,
    /// Defaults to `total_iters / 3`.
    pub explore_iters: Option<usize>,
    pub refine_k: usize,
    pub rerank_action_weight: f64,
    pub rerank_object_weight: f64,
    pub temperature: f64,
    /// Chance that an exploitation step draws a fresh index instead of a local jump.
    pub novelty_prob: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            explore_lambda: 0.5,
            total_iters: 3000,
            explore_iters: None,
            refine_k: 10,
            rerank_action_weight: 0.5,
            rerank_object_weight: 0.5,
            temperature: DEFAULT_TEMPERATURE,
            novelty_prob: 0.2,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn explore_iters(&self) -> usize {
        self.explore_iters.unwrap_or(self.total_iters / 3)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.explore_lambda) {
            return bad(format!("explore_lambda {} outside [0, 1]", self.explore_lambda));
        }
        if self.total_iters == 0 {
            return bad("total_iters must be positive".into());
        }
        if self.explore_iters() > self.total_iters {
            return bad(format!(
                "explore_iters {} exceeds total_iters {}",
                self.explore_iters(),
                self.total_iters
            ));
        }
        if self.refine_k == 0 {
            return bad("refine_k must be positive".into());
        }
        if !(self.rerank_action_weight >= 0.0 && self.rerank_object_weight >= 0.0) {
            return bad("re-rank weights must be non-negative".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.novelty_prob) {
            return bad(format!("novelty_prob {} outside [0, 1]", self.novelty_prob));
        }
        Ok(())
    }

    /// Applies one `key=value` override. Accepts the field names plus short
    /// aliases (`lambda`, `T`, `t_explore`, `k`, `lambda_a`, `lambda_o`, `tau`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value {v:?} for {key}")))
        }
        match key.trim() {
            "explore_lambda" | "lambda" => self.explore_lambda = num(key, value)?,
            "total_iters" | "T" | "iters" => self.total_iters = num(key, value)?,
            "explore_iters" | "t_explore" | "T_explore" => {
                self.explore_iters = match value.trim() {
                    "" | "auto" => None,
                    v => Some(num(key, v)?),
                }
            }
            "refine_k" | "k" | "K" => self.refine_k = num(key, value)?,
            "rerank_action_weight" | "lambda_a" => self.rerank_action_weight = num(key, value)?,
            "rerank_object_weight" | "lambda_o" => self.rerank_object_weight = num(key, value)?,
            "temperature" | "tau" => self.temperature = num(key, value)?,
            "novelty_prob" => self.novelty_prob = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SearchConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let cfg: SearchConfig = serde_json::from_str(&text)?;
            cfg.validate()?;
            Ok(cfg)
        } else {
            Self::parse(&text)
        }
    }

    pub fn to_kv(&self) -> String {
        format!(
            "explore_lambda={}\ntotal_iters={}\nexplore_iters={}\nrefine_k={}\nrerank_action_weight={}\nrerank_object_weight={}\ntemperature={}\nnovelty_prob={}\nseed={}\n",
            self.explore_lambda,
            self.total_iters,
            self.explore_iters.map_or("auto".to_string(), |v| v.to_string()),
            self.refine_k,
            self.rerank_action_weight,
            self.rerank_object_weight,
            self.temperature,
            self.novelty_prob,
            self.seed,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Explore,
    Exploit,
    Refine,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Explore => "explore",
            Phase::Exploit => "exploit",
            Phase::Refine => "refine",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub index: usize,
    pub phase: Phase,
    pub raw_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub predicted: Activity,
    pub predicted_index: usize,
    /// Highest raw oracle score among evaluated activities, before re-ranking.
    pub top_raw_index: usize,
    /// Refinement set, highest raw score first.
    pub refine: Vec<usize>,
    pub final_scores: BTreeMap<usize, f64>,
    pub distinct_calls: usize,
    /// Search steps, then the refinement set in ascending final score so the
    /// prediction is the last row.
    pub trajectory: Vec<Step>,
}

/// `lambda * prior + (1 - lambda) / N`.
pub fn explore_distribution(prior: &PriorDistribution, lambda: f64) -> Vec<f64> {
    let uniform = (1.0 - lambda) / prior.len() as f64;
    prior.probs().iter().map(|&p| lambda * p + uniform).collect()
}

/// Prior times likelihood over the given (visited) entries, renormalized.
/// Falls back to the likelihood alone, then to uniform, when degenerate.
pub fn guided_distribution(prior: &PriorDistribution, likelihood: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let normalize = |w: Vec<f64>| -> Option<Vec<(usize, f64)>> {
        let total: f64 = w.iter().sum();
        (total > 0.0 && total.is_finite())
            .then(|| likelihood.iter().zip(w).map(|(&(i, _), x)| (i, x / total)).collect())
    };
    let products = likelihood.iter().map(|&(i, l)| prior.probs()[i] * l).collect();
    normalize(products)
        .or_else(|| normalize(likelihood.iter().map(|&(_, l)| l.max(0.0)).collect()))
        .unwrap_or_else(|| {
            let u = 1.0 / likelihood.len() as f64;
            likelihood.iter().map(|&(i, _)| (i, u)).collect()
        })
}

/// `S_final = softmax_K(raw) + action_weight * v.phi(action) + object_weight * v.phi(object)`
/// for each candidate, in candidate order. Concept embeddings are only looked
/// up for components with a nonzero weight.
pub fn decompose_rerank(
    candidates: &[(usize, f64)],
    space: &SearchSpace,
    video: &Embedding,
    concepts: &ConceptEmbeddings,
    action_weight: f64,
    object_weight: f64,
    temperature: f64,
) -> Result<Vec<(usize, f64)>> {
    let phrase = normalize_likelihood(candidates, temperature)?;
    let component = |weight: f64, concept: &crate::space::Concept| -> Result<f64> {
        if weight == 0.0 {
            return Ok(0.0);
        }
        let emb = concepts.get(concept)?;
        if emb.dim() != video.dim() {
            return Err(Error::DimensionMismatch {
                expected: video.dim(),
                got: emb.dim(),
            });
        }
        Ok(weight * video.dot(emb))
    };
    phrase
        .into_iter()
        .map(|(i, p)| {
            let a = space.activity(i);
            Ok((i, p + component(action_weight, a.action())? + component(object_weight, a.object())?))
        })
        .collect()
}

fn argmax_lowest_index(scores: &[(usize, f64)]) -> (usize, f64) {
    let mut best = scores[0];
    for &(i, s) in &scores[1..] {
        if s > best.1 || (s == best.1 && i < best.0) {
            best = (i, s);
        }
    }
    best
}

/// Top-K refinement and re-ranking over an evaluated set, shared by every strategy.
pub(crate) fn refine_and_rerank(
    space: &SearchSpace,
    cache: &CountingCache<'_>,
    concepts: &ConceptEmbeddings,
    cfg: &SearchConfig,
    evaluated: &[(usize, f64)],
    refine_k: usize,
    mut trajectory: Vec<Step>,
) -> Result<SearchResult> {
    let ranked = rank_desc(evaluated);
    let k = refine_k.min(ranked.len());
    let mut refine = Vec::with_capacity(k);
    for &(i, _) in &ranked[..k] {
        // Re-evaluation goes through the cache and costs no new calls.
        refine.push((i, cache.query(i)?));
    }
    let scores = decompose_rerank(
        &refine,
        space,
        cache.video(),
        concepts,
        cfg.rerank_action_weight,
        cfg.rerank_object_weight,
        cfg.temperature,
    )?;
    let (predicted_index, _) = argmax_lowest_index(&scores);

    let raw: HashMap<usize, f64> = refine.iter().copied().collect();
    let mut by_final = scores.clone();
    // Ascending final score; among ties the lower index sorts later.
    by_final.sort_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
    let t0 = trajectory.last().map_or(0, |s| s.t + 1);
    for (offset, &(i, _)) in by_final.iter().enumerate() {
        trajectory.push(Step {
            t: t0 + offset,
            index: i,
            phase: Phase::Refine,
            raw_score: raw[&i],
        });
    }
    Ok(SearchResult {
        predicted: space.activity(predicted_index).clone(),
        predicted_index,
        top_raw_index: ranked[0].0,
        refine: refine.iter().map(|&(i, _)| i).collect(),
        final_scores: scores.into_iter().collect(),
        distinct_calls: cache.distinct_calls(),
        trajectory,
    })
}

/// Guided sampler over the visited set. Weights are
/// `prior * exp(raw / temperature)` quantized relative to the running maximum
/// log-weight, which equals prior times the visited-set softmax up to a constant.
struct GuidedSampler {
    log_weights: Vec<f64>,
    max: f64,
    tree: WeightTree,
}

impl GuidedSampler {
    fn new(capacity: usize) -> Self {
        GuidedSampler {
            log_weights: Vec::with_capacity(capacity),
            max: f64::NEG_INFINITY,
            tree: WeightTree::with_capacity(capacity),
        }
    }

    fn quantized(&self, lw: f64) -> u64 {
        crate::sampler::quantize((lw - self.max).exp(), GUIDED_SCALE)
            .max(u64::from(lw == self.max))
    }

    fn push(&mut self, log_weight: f64) {
        let slot = self.log_weights.len();
        self.log_weights.push(log_weight);
        if log_weight > self.max {
            self.max = log_weight;
            for s in 0..=slot {
                let w = self.quantized(self.log_weights[s]);
                self.tree.set(s, w);
            }
        } else {
            let w = self.quantized(log_weight);
            self.tree.set(slot, w);
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        self.tree.sample(rng).expect("max-weight slot is always positive")
    }
}

/// Nearest unvisited neighbour of `pivot` in the structured order. Equal
/// offsets on both sides resolve by embedding distance, then the left side.
fn nearest_unvisited(space: &SearchSpace, visited: &[bool], pivot: usize) -> Option<usize> {
    let order = space.order();
    let n = order.len();
    let pos = space.position_of(pivot);
    for offset in 1..n {
        let left = pos.checked_sub(offset).map(|p| order[p]).filter(|&i| !visited[i]);
        let right = (pos + offset < n).then(|| order[pos + offset]).filter(|&i| !visited[i]);
        match (left, right) {
            (Some(l), Some(r)) => {
                let (dl, dr) = (space.distance(pivot, l), space.distance(pivot, r));
                return Some(if dr < dl { r } else { l });
            }
            (Some(i), None) | (None, Some(i)) => return Some(i),
            (None, None) if offset > pos && pos + offset >= n => return None,
            _ => {}
        }
    }
    None
}

struct LoopState {
    explore_tree: WeightTree,
    guided: GuidedSampler,
    visited: Vec<bool>,
    evaluated: Vec<(usize, f64)>,
    trajectory: Vec<Step>,
    log_prior: Vec<f64>,
    inv_temperature: f64,
}

impl LoopState {
    fn visit(&mut self, cache: &CountingCache<'_>, index: usize, t: usize, phase: Phase) -> Result<()> {
        let raw = cache.query(index)?;
        self.visited[index] = true;
        self.explore_tree.set(index, 0);
        self.guided.push(self.log_prior[index] + raw * self.inv_temperature);
        self.evaluated.push((index, raw));
        self.trajectory.push(Step {
            t,
            index,
            phase,
            raw_score: raw,
        });
        Ok(())
    }
}

/// Runs the full search for one video. Deterministic given `cfg.seed`.
pub fn run_search(
    space: &SearchSpace,
    prior: &PriorDistribution,
    cache: &CountingCache<'_>,
    concepts: &ConceptEmbeddings,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.validate()?;
    let n = space.len();
    if prior.len() != n {
        return Err(Error::InvalidConfig(format!("prior covers {} activities, space has {n}", prior.len())));
    }
    if cache.len() != n {
        return Err(Error::InvalidConfig(format!("oracle covers {} activities, space has {n}", cache.len())));
    }
    if cache.video().dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            got: cache.video().dim(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.total_iters;
    let explore_iters = cfg.explore_iters();
    let capacity = total.min(n);

    let prior_tree = WeightTree::from_probs(prior.probs());
    let mut st = LoopState {
        explore_tree: WeightTree::from_probs(&explore_distribution(prior, cfg.explore_lambda)),
        guided: GuidedSampler::new(capacity),
        visited: vec![false; n],
        evaluated: Vec::with_capacity(capacity),
        trajectory: Vec::with_capacity(capacity + cfg.refine_k),
        log_prior: prior.probs().iter().map(|p| p.ln()).collect(),
        inv_temperature: 1.0 / cfg.temperature,
    };

    let first = prior_tree.sample(&mut rng).expect("prior is strictly positive");
    st.visit(cache, first, 0, Phase::Explore)?;

    for t in 1..total {
        if st.evaluated.len() == n {
            break;
        }
        let (index, phase) = if t < explore_iters {
            (st.explore_tree.sample(&mut rng), Phase::Explore)
        } else if rng.random_bool(cfg.novelty_prob) {
            (st.explore_tree.sample(&mut rng), Phase::Exploit)
        } else {
            let pivot = st.evaluated[st.guided.sample(&mut rng)].0;
            (nearest_unvisited(space, &st.visited, pivot), Phase::Exploit)
        };
        let index = index.expect("an unvisited activity remains");
        st.visit(cache, index, t, phase)?;
    }

    refine_and_rerank(space, cache, concepts, cfg, &st.evaluated, cfg.refine_k, st.trajectory)
}
