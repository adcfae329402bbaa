//! Graph unwrapping network: coarse-state pre-estimator with feature
//! injection, a stack of attention layers over the window graph, and a
//! fold-class head whose expected value reconstructs the signal.

mod config;
mod forward;
mod io;
mod net;

pub use config::ModelConfig;
pub use forward::{ForwardVars, Mode, ModelOutput};
pub use io::{load_model, save_model, sidecar_path, ModelMeta};
pub use net::UnwrapNet;

use ndarray::Array2;
use thiserror::Error;

use crate::autodiff::{CheckpointError, TensorError};
use crate::config::ConfigError;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("parameters do not match the configuration: {0}")]
    ConfigMismatch(String),
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("graph features must have 4 columns, found {0}")]
    BadFeatures(usize),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model sidecar: {0}")]
    Sidecar(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Array2<T>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Most likely fold count per node, in `-z_max..=z_max`.
pub fn predict_fold_class<T: Scalar>(fold_logits: &Array2<T>, z_max: i32) -> Vec<i32> {
    argmax_rows(fold_logits).into_iter().map(|c| c as i32 - z_max).collect()
}
