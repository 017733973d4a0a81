//! Config-driven experiment orchestration: staged runs with a resumable
//! manifest, replicate management and report emission.

mod config;
mod manifest;
mod report;
mod run;

pub use config::{
    AblationConfig, ExperimentConfig, HierarchyConfig, ModelKey, Paths, SplitConfig, VocabConfig, ENV_CORPUS, ENV_OUT,
    ENV_SEED, ENV_VOCAB,
};
pub use manifest::{sha256_file, sha256_str, Artifact, RunManifest, StageRecord, StageStatus, MANIFEST_FILE};
pub use report::{
    emit_report, fmt3, format_fixed, radar_csv, render_markdown, render_tsv, ExperimentReport, ReportFormat, TableRow,
    PLACES, REPORT_SCHEMA, REPORT_VERSION, TABLE_HEADER,
};
pub use run::{
    model_dir, predictions_file, read_predictions, row_name, run_experiment, write_predictions, EvalSummary, Experiment,
    CORPUS_FILE, IMPORTANCE_FILE, METRICS_FILE, PRETRAINED_FILE, REPORT_DIR, SPLIT_FILE, TOPIC_STATS_FILE, VOCAB_FILE,
};
