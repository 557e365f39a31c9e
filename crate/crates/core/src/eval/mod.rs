//! Retrieval evaluation and embedding-quality statistics.

mod pairs;
mod retrieval;
mod stats;

pub use pairs::{sample_close_pairs, ClosePair};
pub use retrieval::{
    build_distractor_sets, evaluate_search, percent3, random_baseline_mrr, reciprocal_rank, DistractorSet,
    EvalReport, QueryResult,
};
pub use stats::{
    correlate_manual_scores, ln_gamma, pearson, pearson_p_value, permutation_p_value,
    regularized_incomplete_beta, student_t_cdf, CorrelationReport,
};
