use super::{DiffusionError, LatentTensor};

/// Conditioning passed to a noise predictor: raw condition token vectors
/// (all of one width), the source-view latent, and whether this is the
/// unconditional pass used by classifier-free guidance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBundle {
    cond_tokens: Vec<Vec<f64>>,
    source_latent: LatentTensor,
    null_flag: bool,
}

impl ConditionBundle {
    pub fn new(
        cond_tokens: Vec<Vec<f64>>,
        source_latent: LatentTensor,
        null_flag: bool,
    ) -> Result<Self, DiffusionError> {
        if let Some(first) = cond_tokens.first() {
            if first.is_empty() {
                return Err(DiffusionError::InvalidCondition("empty condition token".into()));
            }
            if cond_tokens.iter().any(|t| t.len() != first.len()) {
                return Err(DiffusionError::InvalidCondition(
                    "condition tokens differ in width".into(),
                ));
            }
        }
        Ok(Self {
            cond_tokens,
            source_latent,
            null_flag,
        })
    }

    pub fn cond_tokens(&self) -> &[Vec<f64>] {
        &self.cond_tokens
    }

    pub fn token_dim(&self) -> Option<usize> {
        self.cond_tokens.first().map(Vec::len)
    }

    pub fn source_latent(&self) -> &LatentTensor {
        &self.source_latent
    }

    pub fn is_null(&self) -> bool {
        self.null_flag
    }

    /// The unconditional counterpart: same token layout, zeroed source
    /// latent, null flag set. Predictors substitute their learned null
    /// embedding when the flag is set.
    pub fn as_null(&self) -> Self {
        Self {
            cond_tokens: self.cond_tokens.iter().map(|t| vec![0.0; t.len()]).collect(),
            source_latent: self.source_latent.zeros_like(),
            null_flag: true,
        }
    }

    /// Checks that the source latent matches the latent being denoised.
    pub fn check_target(&self, z: &LatentTensor) -> Result<(), DiffusionError> {
        self.source_latent.ensure_same_shape(z)
    }
}
