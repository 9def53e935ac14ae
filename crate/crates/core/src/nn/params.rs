use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{sincos_pos_embed, ModelConfig, ModelError};

/// A shape-tagged real array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }
}

/// Named model parameters (or gradients with the same layout).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arrays: BTreeMap<String, Tensor>,
}

fn round_f32(data: &mut [f64]) {
    for v in data {
        *v = *v as f32 as f64;
    }
}

impl ModelParams {
    /// All-zero arrays with the shapes required by `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            arrays: config
                .param_shapes()
                .into_iter()
                .map(|(name, shape)| (name, Tensor::zeros(shape)))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arrays: self
                .arrays
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape.clone())))
                .collect(),
        }
    }

    /// Training initialisation: Xavier-uniform linear weights, zero biases,
    /// zero-initialised shared modulation and output head (so the untrained
    /// network predicts zero noise), sine-cosine positional embeddings.
    /// Values are rounded to `f32` so checkpoints round-trip exactly.
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let d = config.model_dim as f64;
        for (name, t) in p.arrays.iter_mut() {
            if name == "pos_embed" {
                t.data = sincos_pos_embed(config.grid, config.model_dim)?;
            } else if name.starts_with("adaln_single_global") || name.starts_with("final.head") {
                // zero
            } else if name.ends_with("adaln_offsets") {
                let n = Normal::new(0.0, 1.0 / d.sqrt()).expect("valid std");
                t.data.iter_mut().for_each(|v| *v = n.sample(rng));
            } else if name == "null_tokens" || name == "cond_encoder.token_embed" {
                let n = Normal::new(0.0, 0.02).expect("valid std");
                t.data.iter_mut().for_each(|v| *v = n.sample(rng));
            } else if name.ends_with(".weight") {
                let (fan_in, fan_out) = (t.shape[0] as f64, t.shape[1] as f64);
                let a = (6.0 / (fan_in + fan_out)).sqrt();
                let u = Uniform::new(-a, a).expect("valid bounds");
                t.data.iter_mut().for_each(|v| *v = u.sample(rng));
            }
            round_f32(&mut t.data);
        }
        Ok(p)
    }

    /// Every entry drawn from `N(0, std^2)`; used for gradient checks where
    /// zero-initialised paths would hide errors.
    pub fn random(config: &ModelConfig, std: f64, rng: &mut impl Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let n = Normal::new(0.0, std).map_err(|e| ModelError::Config(e.to_string()))?;
        for t in p.arrays.values_mut() {
            t.data.iter_mut().for_each(|v| *v = n.sample(rng));
        }
        Ok(p)
    }

    pub fn from_arrays(arrays: BTreeMap<String, Tensor>) -> Self {
        Self { arrays }
    }

    pub fn arrays(&self) -> &BTreeMap<String, Tensor> {
        &self.arrays
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    pub fn tensor(&self, name: &str) -> &Tensor {
        self.arrays
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from a validated set"))
    }

    pub fn get(&self, name: &str) -> &[f64] {
        &self.tensor(name).data
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [f64] {
        &mut self
            .arrays
            .get_mut(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from a validated set"))
            .data
    }

    pub(crate) fn data_vec_mut(&mut self, name: &str) -> &mut Vec<f64> {
        &mut self
            .arrays
            .get_mut(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from a validated set"))
            .data
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.arrays.insert(name.into(), tensor);
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.arrays.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.arrays.values().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// Checks names and shapes against `config`.
    pub fn check(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let want = config.param_shapes();
        for (name, shape) in &want {
            match self.arrays.get(name) {
                None => return Err(ModelError::MissingParam(name.clone())),
                Some(t) if &t.shape != shape || t.data.len() != shape.iter().product::<usize>() => {
                    return Err(ModelError::ParamShape {
                        name: name.clone(),
                        expected: shape.clone(),
                        found: t.shape.clone(),
                    })
                }
                Some(_) => {}
            }
        }
        // every wanted name is present, so equal counts leave no extras
        if self.arrays.len() != want.len() {
            if let Some(extra) = self.arrays.keys().find(|k| !want.iter().any(|(n, _)| n == *k)) {
                return Err(ModelError::UnknownParam(extra.clone()));
            }
        }
        Ok(())
    }

    /// `self += other` for identically laid-out sets.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (name, t) in self.arrays.iter_mut() {
            let o = &other.arrays[name].data;
            t.data.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.arrays.values_mut() {
            t.data.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn round_to_f32(&mut self) {
        for t in self.arrays.values_mut() {
            round_f32(&mut t.data);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.values().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Largest absolute entry over all arrays.
    pub fn max_abs(&self) -> f64 {
        self.arrays
            .values()
            .flat_map(|t| t.data.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            latent_channels: 2,
            patch_size: 2,
            grid: 4,
            model_dim: 16,
            heads: 4,
            blocks: 2,
            cond_dim: 8,
            cond_tokens_count: 4,
            cond_pool: 2,
        }
    }

    #[test]
    fn init_shapes_and_zero_paths() {
        let p = ModelParams::init(&cfg(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        p.check(&cfg()).unwrap();
        assert!(p.get("final.head.weight").iter().all(|v| *v == 0.0));
        assert!(p.get("adaln_single_global.bias").iter().all(|v| *v == 0.0));
        assert!(p.get("blocks.0.mlp.fc1.weight").iter().any(|v| *v != 0.0));
        assert!(p
            .arrays()
            .values()
            .all(|t| t.data.iter().all(|v| (*v as f32 as f64) == *v)));
    }

    #[test]
    fn check_reports_problems() {
        let c = cfg();
        let mut p = ModelParams::zeros(&c);
        p.insert("bogus", Tensor::zeros(vec![1]));
        assert!(matches!(p.check(&c), Err(ModelError::UnknownParam(_))));
        let mut p = ModelParams::zeros(&c);
        p.insert("pos_embed", Tensor::zeros(vec![3, 16]));
        assert!(matches!(p.check(&c), Err(ModelError::ParamShape { .. })));
        let p = ModelParams::zeros(&ModelConfig { blocks: 1, ..c.clone() });
        assert!(matches!(p.check(&c), Err(ModelError::MissingParam(_))));
    }
}
