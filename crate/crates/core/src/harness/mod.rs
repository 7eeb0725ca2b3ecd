//! Synthetic data, staged pretraining, the RL training loop and run artifacts.

mod config;
mod dataset;
mod stages;
mod train;

pub use config::{OutputConfig, PretrainConfig, RunConfig, TrainingConfig};
pub use dataset::{
    generate_dataset, generate_eval_set, stream, Dataset, DatasetSpec, Sample, Teacher, VocabSource,
};
pub use stages::{
    apply_stage, pretrain, FreezeMask, RegressionTask, StageLog, StageSchedule, StageSpec,
};
pub use train::{
    emit_plot_data, evaluate, run_training, IterationLog, MetricRow, RunReport, RunSummary,
    METRICS_HEADER, PLOT_HEADER,
};
