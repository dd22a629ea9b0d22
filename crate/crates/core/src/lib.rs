//! Prior-guided search over large compositional activity spaces.
//!
//! A search space is every `(action, object)` phrase with one embedding each.
//! [`prior`] turns a commonsense graph into a distribution over the space,
//! [`search`] spends a bounded budget of likelihood queries against an
//! [`oracle`], and [`metrics`] scores predictions with Wu-Palmer similarity.

pub mod error;
pub mod harness;
pub mod metrics;
pub mod oracle;
pub mod prior;
pub mod sampler;
pub mod search;
pub mod space;
pub mod synthetic;

pub use error::{Error, Result};
pub use metrics::{evaluate, wu_palmer, EvalReport, Prediction, Taxonomy, VideoScore};
pub use oracle::{normalize_likelihood, CountingCache, DotProductProvider, LikelihoodProvider};
pub use prior::{build_prior, KnowledgeGraph, PriorDistribution, PriorParams, RelationWeights};
pub use search::{decompose_rerank, run_search, Phase, SearchConfig, SearchResult, Step};
pub use space::{
    build_cartesian_space, load_space, Activity, Concept, ConceptEmbeddings, ConceptKind, Embedding,
    SearchSpace,
};
