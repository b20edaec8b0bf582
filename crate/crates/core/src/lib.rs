//! Perplexity-scaled t-SNE: affinities, optimizer, nested subsampling and
//! the tools for carrying a perplexity tuned on a sample to the full set.

pub mod affinity;
pub mod dataset;
pub mod embedding;
pub mod metrics;
pub mod neighbors;
pub mod optimizer;
pub mod pipeline;
pub mod scaling;
pub mod synthetic;

pub use affinity::{build_affinities, Affinities, AffinityError, AffinityMode};
pub use dataset::{draw_nested_samples, Dataset, DatasetError, MatrixFormat, SamplePlan};
pub use embedding::{Embedding, EmbeddingError};
pub use metrics::{knn_overlap, neighborhood_recall, silhouette, ConsistencyScore, MetricsError};
pub use optimizer::{run_tsne, OptimizationTrace, OptimizerConfig, OptimizerError};
pub use pipeline::{budget_plan, explore_grid, sample_based_embed, Budget, GridSpec, PipelineError, PipelinePlan};
pub use scaling::{mc_report, monte_carlo_perplexities, scale_perplexity, MonteCarloReport, Rounding, ScalingRule};
