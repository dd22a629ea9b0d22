//! Categorical sampling by inverse-CDF walk over integer weights.
//!
//! Probabilities are quantized to `u64` once; every draw is a single
//! `random_range(0..total)` followed by a Fenwick-tree descent, so the index
//! sequence depends only on the RNG stream and integer arithmetic. Setting a
//! weight to zero masks an index (sampling without replacement).

use rand::Rng;

/// Fixed-point scale for quantizing probabilities in `(0, 1]`.
pub const PROB_SCALE: f64 = (1u64 << 52) as f64;

/// Quantizes a probability, keeping any strictly positive input nonzero.
pub fn quantize(p: f64, scale: f64) -> u64 {
    if p <= 0.0 || !p.is_finite() {
        return 0;
    }
    ((p * scale).round() as u64).max(1)
}

#[derive(Clone, Debug)]
pub struct WeightTree {
    tree: Vec<u64>,
    weights: Vec<u64>,
    total: u64,
}

impl WeightTree {
    pub fn new(weights: Vec<u64>) -> Self {
        let n = weights.len();
        let mut tree = vec![0u64; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            tree[i + 1] += w;
            let parent = (i + 1) + lowbit(i + 1);
            if parent <= n {
                tree[parent] += tree[i + 1];
            }
        }
        let total = weights.iter().sum();
        WeightTree { tree, weights, total }
    }

    pub fn from_probs(probs: &[f64]) -> Self {
        Self::new(probs.iter().map(|&p| quantize(p, PROB_SCALE)).collect())
    }

    pub fn with_capacity(n: usize) -> Self {
        Self::new(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn weight(&self, i: usize) -> u64 {
        self.weights[i]
    }

    pub fn set(&mut self, i: usize, w: u64) {
        let old = self.weights[i];
        if old == w {
            return;
        }
        self.weights[i] = w;
        self.total = self.total - old + w;
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] = self.tree[k] - old + w;
            k += lowbit(k);
        }
    }

    /// Smallest index whose cumulative weight exceeds `target`.
    pub fn find(&self, mut target: u64) -> usize {
        debug_assert!(target < self.total);
        let n = self.weights.len();
        let mut pos = 0usize;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos
    }

    /// Draws an index proportional to weight; `None` once every weight is zero.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        if self.total == 0 {
            return None;
        }
        Some(self.find(rng.random_range(0..self.total)))
    }
}

fn lowbit(i: usize) -> usize {
    i & i.wrapping_neg()
}
