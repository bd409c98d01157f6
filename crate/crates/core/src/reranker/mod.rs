//! Second stage: re-ranking candidate lists by relevance and pace-weighted
//! concept diversity.

mod coverage;
mod model;
mod train;

pub use coverage::{
    coverage, coverage_of, distinct_concepts, diversity_gain, marginal_diversities,
    marginal_diversity, split_by_concept,
};
pub use model::{
    pace_features, probabilistic_scores, rerank_loss, rerank_loss_grad, ucb_scores, NetShape,
    PaceTrace, RerankInput, RerankNet, RerankTrace, ScoreMode, SigmaInit,
};
pub use train::{
    label_candidates, prepare, rank_by_score, rerank, rerank_input, train_reranker,
    train_reranker_with, training_instances, write_rerank, LabelRule, Prepared, RankedExercise,
    RerankConfig, RerankEpoch, RerankModel, RerankOutput, TrainingInstance, DEFAULT_TOP_K,
    HEAD_CHOICES,
};
