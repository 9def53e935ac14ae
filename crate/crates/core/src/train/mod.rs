//! Dataset assembly, the exact latent codec, staged weak-to-strong
//! training and view synthesis from a trained checkpoint.

mod codec;
mod config;
mod dataset;
mod optim;
mod synth;
mod trainer;

use thiserror::Error;

pub use codec::LatentCodec;
pub use config::{ModelSpec, StageConfig, StageInit, TrainConfigFile};
pub use dataset::{build_dataset, DatasetManifest, DATASET_HEADER_FILE, MANIFEST_FILE, PHANTOM_DIMS};
pub use optim::AdamW;
pub use synth::{synthesize_view, synthesize_views, SOLVER_ORDER};
pub use trainer::{
    checkpoint_radius, lr_at, mean_loss, read_loss_csv, train_stage, weak_to_strong_init, with_fresh_pos_embed, write_loss_csv, LossPoint,
    StageResult, TrainingSet,
    LOSS_TRACE_INTERVAL,
};

use crate::diffusion::DiffusionError;
use crate::drr::DrrError;
use crate::nn::ModelError;
use crate::viewgeom::GeometryError;
use crate::voxel::VolumeError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset manifest: {0}")]
    Manifest(String),
    #[error("codec: {0}")]
    Codec(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error(transparent)]
    Drr(#[from] DrrError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

pub(crate) fn io_error(path: &std::path::Path, e: impl ToString) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}
