use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::drr::DrrError;
use crate::metrics::MetricsError;
use crate::nn::ModelError;
use crate::train::TrainError;
use crate::viewgeom::GeometryError;
use crate::voxel::VolumeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error wrapping each module's error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Drr(#[from] DrrError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
