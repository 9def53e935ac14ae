//! Single-view X-ray novel view synthesis.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! * [`voxel`]: volumes, HU to attenuation conversion, procedural chest phantoms.
//! * [`viewgeom`]: hemisphere view sampling and relative view encodings.
//! * [`drr`]: cone-beam digitally reconstructed radiographs.
//! * [`diffusion`]: noise schedules, the epsilon objective, DDIM and DPM-Solver sampling.
//! * [`nn`]: a small view-conditioned diffusion transformer with an analytic backward pass.
//! * [`train`]: dataset assembly, latent codec, staged weak-to-strong training and synthesis.
//! * [`metrics`]: PSNR / SSIM evaluation reports.

pub mod diffusion;
pub mod drr;
pub mod metrics;
pub mod nn;
pub mod train;
pub mod viewgeom;
pub mod voxel;

mod error;

pub use error::{Error, Result};
