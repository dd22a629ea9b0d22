use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::Strategy;
use crate::error::{Error, Result};
use crate::oracle::CountingCache;
use crate::prior::PriorDistribution;
use crate::search::{refine_and_rerank, run_search, Phase, SearchConfig, SearchResult, Step};
use crate::space::{ConceptEmbeddings, SearchSpace};

/// Raw scores in query order plus the matching explore-phase trajectory.
type Evaluated = (Vec<(usize, f64)>, Vec<Step>);

fn evaluate_all(cache: &CountingCache<'_>, indices: &[usize]) -> Result<Evaluated> {
    let mut evaluated = Vec::with_capacity(indices.len());
    let mut trajectory = Vec::with_capacity(indices.len());
    for (t, &index) in indices.iter().enumerate() {
        let raw = cache.query(index)?;
        evaluated.push((index, raw));
        trajectory.push(Step {
            t,
            index,
            phase: Phase::Explore,
            raw_score: raw,
        });
    }
    Ok((evaluated, trajectory))
}

/// Queries all N activities and re-ranks with K = N.
pub fn run_exhaustive(
    space: &SearchSpace,
    cache: &CountingCache<'_>,
    concepts: &ConceptEmbeddings,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    let all: Vec<usize> = (0..space.len()).collect();
    let (evaluated, trajectory) = evaluate_all(cache, &all)?;
    refine_and_rerank(space, cache, concepts, cfg, &evaluated, space.len(), trajectory)
}

/// Queries `budget` distinct activities drawn uniformly with `cfg.seed`,
/// then refines the top `cfg.refine_k` of them.
pub fn run_random(
    space: &SearchSpace,
    cache: &CountingCache<'_>,
    concepts: &ConceptEmbeddings,
    budget: usize,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    let n = space.len();
    if budget == 0 || budget > n {
        return Err(Error::InvalidConfig(format!("random budget {budget} outside 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picks = rand::seq::index::sample(&mut rng, n, budget).into_vec();
    let (evaluated, trajectory) = evaluate_all(cache, &picks)?;
    refine_and_rerank(space, cache, concepts, cfg, &evaluated, cfg.refine_k, trajectory)
}

/// Random-search budget matched to a search run: `min(N, T + K)`.
pub fn matched_budget(n: usize, cfg: &SearchConfig) -> usize {
    n.min(cfg.total_iters + cfg.refine_k)
}

pub fn run_strategy(
    strategy: Strategy,
    space: &SearchSpace,
    prior: &PriorDistribution,
    cache: &CountingCache<'_>,
    concepts: &ConceptEmbeddings,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    match strategy {
        Strategy::Probres => run_search(space, prior, cache, concepts, cfg),
        Strategy::Exhaustive => run_exhaustive(space, cache, concepts, cfg),
        Strategy::Random => run_random(space, cache, concepts, matched_budget(space.len(), cfg), cfg),
    }
}
