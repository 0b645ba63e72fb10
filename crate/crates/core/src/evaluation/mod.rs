//! Quantitative evaluation: highlight-detection metrics, precision over rank
//! annotations, correlation meta-evaluation, the evaluation agent and
//! embedding fidelity.

mod agent;
mod correlation;
mod data;
mod fidelity;
mod ranking;
mod report;

pub use agent::{build_eval_request, evaluate_cut, parse_eval_report, AgentEvaluation};
pub use correlation::{average_ranks, correlations, kendall_tau_b, pearson, spearman, Correlations};
pub use data::{
    load_annotations, load_embeddings, load_hd_dataset, load_score_pairs, parse_annotations,
    parse_embeddings, rankings_from_annotations, AnnotationRecord, Embeddings, HdDataset, HdVideo,
    ScorePairs,
};
pub use fidelity::{cosine, fidelity, mean_pool};
pub use ranking::{
    average_precision, average_precision_ids, binarize_top, map_over_videos, top5_map,
    waste_highlight_precision, MapSummary, SaliencyRanking, TOP5_FRACTION,
};
pub use report::{Metric, MetricsReport};
