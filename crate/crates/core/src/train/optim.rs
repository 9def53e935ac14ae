//! AdamW: Adam moments with decoupled weight decay.

use crate::nn::ModelParams;

#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    step: u64,
    m: ModelParams,
    v: ModelParams,
}

impl AdamW {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const WEIGHT_DECAY: f64 = 0.01;
    pub const EPS: f64 = 1e-8;

    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            weight_decay: Self::WEIGHT_DECAY,
            eps: Self::EPS,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update in place. Parameters are rounded to `f32` afterwards so
    /// they round-trip through checkpoints exactly.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (lr, b1, b2, wd, eps) = (self.learning_rate, self.beta1, self.beta2, self.weight_decay, self.eps);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name);
            let m = self.m.get_mut(name);
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
            }
            let v = self.v.get_mut(name);
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            }
            let (m, v) = (self.m.get(name), self.v.get(name));
            for ((pi, mi), vi) in p.data.iter_mut().zip(m).zip(v) {
                let update = (mi / bc1) / ((vi / bc2).sqrt() + eps) + wd * *pi;
                *pi -= lr * update;
            }
        }
        params.round_to_f32();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use std::collections::BTreeMap;

    fn single(values: Vec<f64>) -> ModelParams {
        let mut arrays = BTreeMap::new();
        arrays.insert("w".to_string(), Tensor { shape: vec![values.len()], data: values });
        ModelParams::from_arrays(arrays)
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut p = single(vec![1.0, -2.0]);
        let g = single(vec![0.5, -4.0]);
        let mut opt = AdamW::new(&p, 0.1);
        opt.step(&mut p, &g);
        // bias-corrected first step moves each weight by lr * sign(g) (up to eps) plus decay
        let expect = |w: f64, g: f64| w - 0.1 * (g / (g.abs() + 1e-8) + 0.01 * w);
        for (got, want) in p.get("w").iter().zip([expect(1.0, 0.5), expect(-2.0, -4.0)]) {
            assert!((got - want).abs() < 1e-6);
            assert_eq!(*got, *got as f32 as f64);
        }
    }

    #[test]
    fn zero_learning_rate_freezes() {
        let mut p = single(vec![0.25, 3.0]);
        let before = p.clone();
        let mut opt = AdamW::new(&p, 0.0);
        for _ in 0..5 {
            opt.step(&mut p, &single(vec![1.0, -1.0]));
        }
        assert_eq!(p, before);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = single(vec![3.0]);
        let mut opt = AdamW::new(&p, 0.05);
        opt.weight_decay = 0.0;
        for _ in 0..500 {
            let g = single(vec![2.0 * (p.get("w")[0] - 1.0)]);
            opt.step(&mut p, &g);
        }
        assert!((p.get("w")[0] - 1.0).abs() < 1e-2);
    }
}
