//! Seed-averaged search behaviour on synthetic worlds, checked against a
//! brute-force rank over every activity.

use probres::prior::PriorDistribution;
use probres::synthetic::{brute_force_rank, mix_seed, SyntheticConfig, SyntheticWorld};
use probres::{build_prior, run_search, CountingCache, PriorParams, RelationWeights, SearchConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Case {
    world: SyntheticWorld,
    prior: PriorDistribution,
    truth: usize,
}

fn case(n: usize, seed: u64, recall: f64) -> Case {
    let world = SyntheticWorld::generate(SyntheticConfig::for_size(n, 64, seed)).unwrap();
    let prior = build_prior(
        &world.space,
        &world.affordance_graph(0),
        &RelationWeights::default(),
        &PriorParams::default(),
    )
    .unwrap();
    let truth = world.sample_truth(recall, &mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 1)));
    Case { world, prior, truth }
}

fn rank(c: &Case, prior: &PriorDistribution, cfg: &SearchConfig, seed: u64) -> usize {
    let video = c.world.video_for(c.truth, 0.05, mix_seed(seed, 2)).unwrap();
    let oracle = c.world.oracle(c.truth, 0.05, mix_seed(seed, 2)).unwrap();
    let cache = CountingCache::new(&oracle, video.clone()).unwrap();
    let r = run_search(&c.world.space, prior, &cache, &c.world.concepts, cfg).unwrap();
    brute_force_rank(&c.world.score_table(&video), r.predicted_index)
}

#[test]
fn informative_prior_reaches_top_percent() {
    let cfg = SearchConfig {
        total_iters: 150,
        explore_iters: Some(50),
        refine_k: 10,
        ..Default::default()
    };
    let mut hits = 0;
    for seed in 0..100 {
        let c = case(1000, seed, 1.0);
        assert_eq!(c.world.len(), 1000);
        let cfg = SearchConfig { seed, ..cfg.clone() };
        if rank(&c, &c.prior, &cfg, seed) <= 10 {
            hits += 1;
        }
    }
    assert!(hits >= 90, "top-1% in {hits}/100");
}

#[test]
fn mean_rank_does_not_grow_with_budget() {
    let cases: Vec<Case> = (0..100).map(|s| case(1000, 500 + s, 0.8)).collect();
    let mut means = Vec::new();
    for t in [50, 150, 500] {
        let total: usize = cases
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let cfg = SearchConfig {
                    total_iters: t,
                    seed: i as u64,
                    ..Default::default()
                };
                rank(c, &c.prior, &cfg, 500 + i as u64)
            })
            .sum();
        means.push(total as f64 / cases.len() as f64);
    }
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
}

#[test]
fn prior_only_exploration_suffers_under_adversarial_prior() {
    let mut success = [0usize; 2];
    for seed in 0..100 {
        let c = case(1000, 900 + seed, 1.0);
        // All prior mass on one action group that does not contain the truth.
        let truth_group = c.world.action_group[c.world.coords(c.truth).0];
        let wrong = (truth_group + 1) % c.world.config.groups;
        let scores: Vec<f64> = (0..c.world.len())
            .map(|i| if c.world.action_group[c.world.coords(i).0] == wrong { 1.0 } else { 0.0 })
            .collect();
        let adversarial = PriorDistribution::from_scores(&scores, 1e-6).unwrap();
        for (slot, lambda) in [1.0, 0.5].into_iter().enumerate() {
            let cfg = SearchConfig {
                explore_lambda: lambda,
                total_iters: 150,
                explore_iters: Some(150),
                seed,
                ..Default::default()
            };
            if rank(&c, &adversarial, &cfg, 900 + seed) <= 10 {
                success[slot] += 1;
            }
        }
    }
    assert!(success[0] < success[1], "lambda=1 {} vs lambda=0.5 {}", success[0], success[1]);
}
