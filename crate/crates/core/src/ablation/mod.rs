//! Topic lexicons and keyword-ablation feature importance.

mod importance;
mod lexicon;
mod stats;

pub use importance::{
    ablate_and_score, average_ranks, raw_deltas, spearman, F1Mode, ImportanceReport, ImportanceSummary, TopicImportance,
    TopicSummary,
};
pub use lexicon::{remove_topic_words, Lexicon, Topic};
pub use stats::{topic_stats, TopicStats};
