use super::{ConditionBundle, DiffusionError, LatentTensor, NoisePredictor, NoiseSchedule};

/// Exact noise predictor for data distributed as independent
/// `N(mean_i, std^2)` per element.
///
/// With `z_t = alpha z_0 + sigma eps`, the posterior mean of `eps` is
/// `sigma (z_t - alpha mean) / (alpha^2 std^2 + sigma^2)`, and the
/// probability-flow ODE has the closed-form solution returned by
/// [`LinearGaussianDenoiser::exact_solution`].
#[derive(Debug, Clone)]
pub struct LinearGaussianDenoiser {
    mean: LatentTensor,
    std: f64,
    schedule: NoiseSchedule,
}

impl LinearGaussianDenoiser {
    pub fn new(mean: LatentTensor, std: f64, schedule: NoiseSchedule) -> Self {
        Self { mean, std, schedule }
    }

    pub fn mean(&self) -> &LatentTensor {
        &self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    fn marginal_std(&self, t: usize) -> f64 {
        let (a, s) = (self.schedule.alpha(t), self.schedule.sigma(t));
        (a * a * self.std * self.std + s * s).sqrt()
    }

    /// Maps `z_t` at timestep `t` along the probability-flow ODE to `t_to`.
    pub fn exact_solution(&self, z: &LatentTensor, t: usize, t_to: usize) -> Result<LatentTensor, DiffusionError> {
        z.ensure_same_shape(&self.mean)?;
        let (a, a_to) = (self.schedule.alpha(t), self.schedule.alpha(t_to));
        let ratio = self.marginal_std(t_to) / self.marginal_std(t);
        let data = z
            .data()
            .iter()
            .zip(self.mean.data())
            .map(|(zi, mi)| a_to * mi + ratio * (zi - a * mi))
            .collect();
        LatentTensor::new(z.channels(), z.height(), z.width(), data)
    }
}

impl NoisePredictor for LinearGaussianDenoiser {
    fn predict_noise(&self, z: &LatentTensor, _cond: &ConditionBundle, t: usize) -> crate::Result<LatentTensor> {
        self.schedule.check_timestep(t)?;
        z.ensure_same_shape(&self.mean)?;
        let (a, s) = (self.schedule.alpha(t), self.schedule.sigma(t));
        let k = s / (a * a * self.std * self.std + s * s);
        let data = z.data().iter().zip(self.mean.data()).map(|(zi, mi)| k * (zi - a * mi)).collect();
        Ok(LatentTensor::new(z.channels(), z.height(), z.width(), data)?)
    }
}
