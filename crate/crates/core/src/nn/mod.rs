//! Desk-scale view-conditioned diffusion transformer with analytic
//! gradients, parameter storage and checkpoint I/O.

mod checkpoint;
mod config;
mod embed;
pub mod layers;
mod linalg;
mod model;
mod params;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, MLP_RATIO};
pub use embed::{grid_coordinate, interpolate_pos_embed, patchify, sincos_pos_embed, timestep_embedding, unpatchify, POS_EMBED_SPAN};
pub use linalg::Mat;
pub use model::{
    adaln_single, loss_and_grads, vcdit_backward, vcdit_forward, view_condition, ForwardCache, Gradients,
    TrainingSample, Vcdit, MAX_TIMESTEP,
};
pub use params::{ModelParams, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("timestep {0} outside 1..={max}", max = MAX_TIMESTEP)]
    Timestep(usize),
    #[error("parameter {0} missing")]
    MissingParam(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("parameter {name} has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
