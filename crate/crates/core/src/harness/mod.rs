//! Metrics, significance, random search, experiment runs and reports.

mod experiment;
mod metrics;
mod models;
mod report;
mod search;

pub use experiment::{
    create_run_dir, evaluate_checkpoints, merge, read_predictions, recount, run_experiment, write_predictions,
    EvalReport, ExperimentConfig, ModelRow, PairwiseSignificance, PersonalitySource, RunOutput, StageRecord,
    StageStatus, HUMAN_ACCURACY, SIGNIFICANCE_NOTE,
};
pub use metrics::{accuracy, confusion, f1, significance, ConfusionCounts, DEFAULT_BOOTSTRAP};
pub use models::{gold_labels, score_accuracy, train_model, validation_accuracy, ModelKind, ModelResources, TrainedModel};
pub use report::{render_report, ReportFormat, HUMAN_ROW};
pub use search::{random_search, Distribution, SearchOutcome, SearchParam, SearchSpace, Trial};
