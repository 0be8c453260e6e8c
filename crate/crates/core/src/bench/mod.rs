//! Evaluation harness: a synthetic labeled corpus with known ground truth,
//! the BM25 and flat dense baselines, ranking metrics, the scaling
//! experiment and churn/drift simulations.

mod baselines;
mod churn;
mod corpus;
mod experiment;
mod metrics;

use thiserror::Error;

use crate::codebook::CodebookError;
use crate::continual::ContinualError;
use crate::embed::EmbedError;
use crate::registry::RegistryError;

pub use baselines::{bm25_search, flat_dense_search, Bm25Index, BM25_B, BM25_K1};
pub use churn::{
    churn_simulation, drift_scenario, write_churn_csv, ChurnConfig, ChurnRow, DriftConfig, DriftReport,
};
pub use corpus::{
    generate_corpus, generate_training_queries, AgentSampler, CapabilityTaxonomy, Category, LabeledCorpus,
    LabeledQuery, MAX_CATEGORIES_PER_AGENT, MIN_CATEGORIES_PER_AGENT, MIN_PHRASES_PER_CATEGORY,
};
pub use experiment::{
    run_experiment, write_experiment_csv, ExperimentConfig, ExperimentRow, Method, PipelineConfig,
    BENCH_DIM, REFERENCE_POINTS,
};
pub use metrics::{compute_metrics, MetricsReport};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid taxonomy: {0}")]
    TaxonomyInvalid(String),
    #[error("taxonomy too small: {0}")]
    TaxonomyTooSmall(String),
    #[error("no ranking for query {0}")]
    MissingRanking(usize),
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Continual(#[from] ContinualError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
