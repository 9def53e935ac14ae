use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::viewgeom::ViewEncoding;

/// MLP hidden width as a multiple of `model_dim`.
pub const MLP_RATIO: usize = 4;

/// Architecture hyperparameters of the view-conditioned diffusion transformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_channels: usize,
    pub patch_size: usize,
    /// Tokens per side.
    pub grid: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Width of raw condition tokens before the shared projection.
    pub cond_dim: usize,
    /// Number of image-embedding tokens; a perfect square.
    pub cond_tokens_count: usize,
    /// Each image token pools its region to `cond_pool x cond_pool` cells.
    pub cond_pool: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("latent_channels", self.latent_channels),
            ("patch_size", self.patch_size),
            ("grid", self.grid),
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("blocks", self.blocks),
            ("cond_dim", self.cond_dim),
            ("cond_tokens_count", self.cond_tokens_count),
            ("cond_pool", self.cond_pool),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.model_dim % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.model_dim % 4 != 0 {
            return Err(ModelError::Config(format!("model_dim {} not divisible by 4", self.model_dim)));
        }
        if self.cond_dim < ViewEncoding::DIM {
            return Err(ModelError::Config(format!("cond_dim must be at least {}", ViewEncoding::DIM)));
        }
        let g = self.cond_grid();
        if g * g != self.cond_tokens_count {
            return Err(ModelError::Config(format!(
                "cond_tokens_count {} is not a perfect square",
                self.cond_tokens_count
            )));
        }
        if self.latent_side() % (g * self.cond_pool) != 0 {
            return Err(ModelError::Config(format!(
                "latent side {} not divisible by cond grid {} x pool {}",
                self.latent_side(),
                g,
                self.cond_pool
            )));
        }
        Ok(())
    }

    pub fn latent_side(&self) -> usize {
        self.grid * self.patch_size
    }

    pub fn tokens(&self) -> usize {
        self.grid * self.grid
    }

    /// Input token width: patches over the target and source latents.
    pub fn patch_in(&self) -> usize {
        self.patch_size * self.patch_size * 2 * self.latent_channels
    }

    pub fn patch_out(&self) -> usize {
        self.patch_size * self.patch_size * self.latent_channels
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn mlp_dim(&self) -> usize {
        self.model_dim * MLP_RATIO
    }

    pub fn cond_grid(&self) -> usize {
        (self.cond_tokens_count as f64).sqrt().round() as usize
    }

    /// Width of one pooled source-latent feature vector.
    pub fn cond_feature_dim(&self) -> usize {
        self.latent_channels * self.cond_pool * self.cond_pool
    }

    /// Same architecture at a different token grid.
    pub fn with_grid(&self, grid: usize) -> Self {
        Self { grid, ..self.clone() }
    }

    /// Every parameter name with its shape, in sorted order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.model_dim;
        let dc = self.cond_dim;
        let mut v: Vec<(String, Vec<usize>)> = vec![
            ("patch_embed.weight".into(), vec![self.patch_in(), d]),
            ("patch_embed.bias".into(), vec![d]),
            ("pos_embed".into(), vec![self.tokens(), d]),
            ("timestep_mlp.fc1.weight".into(), vec![d, d]),
            ("timestep_mlp.fc1.bias".into(), vec![d]),
            ("timestep_mlp.fc2.weight".into(), vec![d, d]),
            ("timestep_mlp.fc2.bias".into(), vec![d]),
            ("adaln_single_global.weight".into(), vec![d, 6 * d]),
            ("adaln_single_global.bias".into(), vec![6 * d]),
            ("cond_encoder.weight".into(), vec![self.cond_feature_dim(), dc]),
            ("cond_encoder.bias".into(), vec![dc]),
            ("cond_encoder.token_embed".into(), vec![self.cond_tokens_count, dc]),
            ("cond_projection.weight".into(), vec![dc, d]),
            ("cond_projection.bias".into(), vec![d]),
            ("null_tokens".into(), vec![self.cond_tokens_count + 1, dc]),
            ("final.adaln_offsets".into(), vec![2 * d]),
            ("final.head.weight".into(), vec![d, self.patch_out()]),
            ("final.head.bias".into(), vec![self.patch_out()]),
        ];
        for i in 0..self.blocks {
            let p = |s: &str| format!("blocks.{i}.{s}");
            v.extend([
                (p("adaln_offsets"), vec![6 * d]),
                (p("self_attn.qkv.weight"), vec![d, 3 * d]),
                (p("self_attn.qkv.bias"), vec![3 * d]),
                (p("self_attn.out.weight"), vec![d, d]),
                (p("self_attn.out.bias"), vec![d]),
                (p("cross_attn.q.weight"), vec![d, d]),
                (p("cross_attn.q.bias"), vec![d]),
                (p("cross_attn.kv.weight"), vec![d, 2 * d]),
                (p("cross_attn.kv.bias"), vec![2 * d]),
                (p("cross_attn.out.weight"), vec![d, d]),
                (p("cross_attn.out.bias"), vec![d]),
                (p("mlp.fc1.weight"), vec![d, self.mlp_dim()]),
                (p("mlp.fc1.bias"), vec![self.mlp_dim()]),
                (p("mlp.fc2.weight"), vec![self.mlp_dim(), d]),
                (p("mlp.fc2.bias"), vec![d]),
            ]);
        }
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }
}
