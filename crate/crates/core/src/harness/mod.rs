//! Training loop, evaluation, the augmentation ablation sweep and the
//! architecture comparison, with JSON/CSV persistence.

mod config;
mod run;
mod sweep;

pub use config::{DatasetSource, Hyperparameters, RunConfig};
pub use run::{
    batch_ranges, build_spec, evaluate, evaluate_with, train, train_prepared, AugmentCounters, Checkpoint,
    EpochMetrics, Evaluation, PreparedData, RunRecord, RunStatus, SplitData, TrainOutput,
};
pub use sweep::{
    ablate, ablate_prepared, ablation_config, compare, write_ablation_csv, write_comparison_csv, Ablation,
    AblationRow, ComparisonRow,
};
