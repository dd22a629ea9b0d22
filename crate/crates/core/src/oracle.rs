//! Likelihood providers standing in for a vision-language model, plus the
//! per-run cache that does the distinct-call accounting.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::space::{read_embeddings, Embedding, SearchSpace};

/// Default softmax temperature for turning raw similarities into likelihoods.
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Scores a video feature against an activity. Implementations are pure.
pub trait LikelihoodProvider: Sync {
    fn dim(&self) -> usize;

    /// Number of activities the provider can score.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Raw similarity; callers guarantee `video.dim() == self.dim()`.
    fn score(&self, video: &Embedding, activity_index: usize) -> f64;
}

pub fn dot_product_score(video: &Embedding, activity: &Embedding) -> Result<f64> {
    if video.dim() != activity.dim() {
        return Err(Error::DimensionMismatch {
            expected: activity.dim(),
            got: video.dim(),
        });
    }
    Ok(video.dot(activity))
}

/// Inner product against a table of activity embeddings.
#[derive(Clone, Debug)]
pub struct DotProductProvider {
    embeddings: Vec<Embedding>,
}

impl DotProductProvider {
    pub fn new(embeddings: Vec<Embedding>) -> Result<Self> {
        let dim = embeddings
            .first()
            .ok_or(Error::EmptyInput("provider has no embeddings"))?
            .dim();
        if let Some(e) = embeddings.iter().find(|e| e.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: e.dim(),
            });
        }
        Ok(DotProductProvider { embeddings })
    }

    pub fn from_space(space: &SearchSpace) -> Self {
        DotProductProvider {
            embeddings: space.embeddings().to_vec(),
        }
    }

    /// File-backed provider over an embedding file (text or `.bin`).
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::new(read_embeddings(path)?)
    }
}

impl LikelihoodProvider for DotProductProvider {
    fn dim(&self) -> usize {
        self.embeddings[0].dim()
    }

    fn len(&self) -> usize {
        self.embeddings.len()
    }

    fn score(&self, video: &Embedding, activity_index: usize) -> f64 {
        video.dot(&self.embeddings[activity_index])
    }
}

/// Memoizing wrapper for one (video, provider) run. `distinct_calls` counts
/// first-time queries only.
pub struct CountingCache<'p> {
    provider: &'p dyn LikelihoodProvider,
    video: Embedding,
    seen: Mutex<HashMap<usize, f64>>,
}

impl<'p> CountingCache<'p> {
    pub fn new(provider: &'p dyn LikelihoodProvider, video: Embedding) -> Result<Self> {
        if video.dim() != provider.dim() {
            return Err(Error::DimensionMismatch {
                expected: provider.dim(),
                got: video.dim(),
            });
        }
        Ok(CountingCache {
            provider,
            video,
            seen: Mutex::new(HashMap::new()),
        })
    }

    pub fn query(&self, index: usize) -> Result<f64> {
        let len = self.provider.len();
        if index >= len {
            return Err(Error::IndexOutOfRange { index, len });
        }
        let mut seen = self.seen.lock().expect("cache mutex poisoned");
        Ok(*seen
            .entry(index)
            .or_insert_with(|| self.provider.score(&self.video, index)))
    }

    pub fn distinct_calls(&self) -> usize {
        self.seen.lock().expect("cache mutex poisoned").len()
    }

    pub fn video(&self) -> &Embedding {
        &self.video
    }

    pub fn provider(&self) -> &'p dyn LikelihoodProvider {
        self.provider
    }

    pub fn len(&self) -> usize {
        self.provider.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provider.len() == 0
    }
}

/// Softmax at temperature `temperature` over exactly the given entries,
/// stabilized by subtracting the maximum. Order is preserved.
pub fn normalize_likelihood(raw: &[(usize, f64)], temperature: f64) -> Result<Vec<(usize, f64)>> {
    if raw.is_empty() {
        return Err(Error::EmptyInput("no likelihood entries"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidConfig(format!("temperature {temperature} must be positive")));
    }
    let max = raw.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|&(_, s)| ((s - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(raw
        .iter()
        .zip(exps)
        .map(|(&(i, _), e)| (i, e / total))
        .collect())
}
