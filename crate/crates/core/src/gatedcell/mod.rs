//! Toy-scale gated convolutional recurrence with a spatial-softmax heatmap
//! head, analytic gradients and a small training demonstration.
//!
//! The recurrent step concatenates the input with the previous hidden state
//! along channels and computes `h = σ(W_z * u) ⊙ tanh(W_c * u)`.

mod cell;
mod data;
mod network;
mod tensor;
mod train;

pub use cell::{
    conv_lstm_step, gated_step, heatmap_loss, heatmap_loss_grad, sigmoid, spatial_softmax, ConvLstmParams, GatedCellParams, Heatmap,
};
pub use data::{render_toy_dataset, toy_camera, ToyDataConfig, ToySequence};
pub use network::{forward_sequence, sequence_loss, sequence_loss_and_grad, CellKind, NetworkParams, RecurrentParams};
pub use tensor::{Conv2d, FeatureMap};
pub use train::{
    chance_rate, detections, evaluate_auc, load_params, params_from_bytes, params_to_bytes, pr_auc, save_params, smooth_curve,
    train_toy_tracker, ParamManifest, ScoredDetection, TensorEntry, TrainConfig, TrainReport,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatedError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("target ({row}, {col}) outside {rows}x{cols} heatmap")]
    OutOfBounds { row: usize, col: usize, rows: usize, cols: usize },
    #[error("training loss became non-finite at step {step}")]
    DivergedLoss { step: usize },
    #[error("bad parameter manifest: {0}")]
    Manifest(String),
    #[error("{0}")]
    Io(String),
}
