//! Diffusion numerics: noise schedules, forward noising, the epsilon
//! matching loss, classifier-free guidance, DDIM and DPM-Solver sampling.
//!
//! Timesteps are 1-based (`1..=T`); `t = 0` denotes clean data with
//! `alpha_bar = 1` and is only ever used as the final sampling target.

mod condition;
mod gaussian;
mod latent;
mod sampler;
mod schedule;

use thiserror::Error;

pub use condition::ConditionBundle;
pub use gaussian::LinearGaussianDenoiser;
pub use latent::LatentTensor;
pub use sampler::{
    cfg_combine, ClippedGuidance, ddim_step, dpm_solver_sample, dpm_solver_trajectory, guided_noise, q_sample,
    sampling_timesteps, training_loss, NoisePredictor, DEFAULT_GUIDANCE_SCALE, DEFAULT_SAMPLING_STEPS,
};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),
    #[error("latent data length {found} does not match shape {shape:?}")]
    DataLength { shape: [usize; 3], found: usize },
    #[error("timestep {t} outside 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("sampling must move backwards in time: t_prev {t_prev} >= t {t}")]
    NonDecreasingStep { t: usize, t_prev: usize },
    #[error("eta must lie in [0, 1], got {0}")]
    InvalidEta(f64),
    #[error("unsupported solver order {0} (expected 1 or 2)")]
    InvalidOrder(usize),
    #[error("step count {steps} must lie in 1..={max}")]
    InvalidSteps { steps: usize, max: usize },
    #[error("invalid condition bundle: {0}")]
    InvalidCondition(String),
    #[error("noise predictor failed: {0}")]
    Predictor(String),
}
