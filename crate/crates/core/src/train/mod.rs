//! Training objective and loop, evaluation metrics, subject splits, the
//! injection ablation and significance testing.

mod ablation;
mod config;
mod eval;
mod gradcheck;
mod loss;
mod metrics;
mod split;
mod stats;
mod trainer;

use thiserror::Error;

pub use ablation::{run_ablation, Ablation, AblationArm, ABLATION_HEADER};
pub use config::TrainConfig;
pub use eval::{evaluate, parallel_map, recover_baseline, recover_model, score, BaselineOptions, Method, Recovery};
pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
pub use loss::{composite_loss, fold_targets, node_column, record_composite_loss, LossWeights};
pub use metrics::{compute_metrics, offset_corrected, pearson_r, Metrics, MetricsError, Prediction, WindowMetrics};
pub use split::{SplitConfig, SplitError, SplitPlan};
pub use stats::{incomplete_beta, ln_gamma, paired_ttest, student_t_two_sided, StatsError, TTest};
pub use trainer::{
    dataset_topology, fit, mean_objective, train, train_windows_on, EpochRecord, History, Prepared, TrainOutcome,
    HISTORY_HEADER,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("dataset is folded at λ = {dataset} but the configuration asks for {config}")]
    LambdaMismatch { dataset: f64, config: f64 },
    #[error("training loss became non-finite in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Tensor(#[from] crate::autodiff::TensorError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Baseline(#[from] crate::baselines::BaselineError),
}
