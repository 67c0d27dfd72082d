//! Fusion, training, evaluation and ablation drivers.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gradsuite;
pub mod optim;
pub mod train;

pub use config::RunConfig;
pub use eval::{evaluate, EvalReport, ScoreRecord};
pub use train::{train_iqa, train_vqa};

use crate::tensor::ops::sigmoid_scalar;

/// Mean of the sigmoid-normalized branch scores.
pub fn fuse(y_iqa: f64, y_vqa: f64) -> f64 {
    0.5 * (sigmoid_scalar(y_iqa) + sigmoid_scalar(y_vqa))
}
