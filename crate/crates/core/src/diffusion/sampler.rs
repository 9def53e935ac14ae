use rand::Rng;
use rand_distr::StandardNormal;

use super::{ConditionBundle, DiffusionError, LatentTensor, NoiseSchedule};

pub const DEFAULT_SAMPLING_STEPS: usize = 20;
pub const DEFAULT_GUIDANCE_SCALE: f64 = 3.0;

/// An epsilon-prediction network `eps_theta(z_t, c, t)`.
pub trait NoisePredictor {
    fn predict_noise(&self, z: &LatentTensor, cond: &ConditionBundle, t: usize) -> crate::Result<LatentTensor>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict_noise(&self, z: &LatentTensor, cond: &ConditionBundle, t: usize) -> crate::Result<LatentTensor> {
        (**self).predict_noise(z, cond, t)
    }
}

/// `z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps`.
pub fn q_sample(
    z0: &LatentTensor,
    t: usize,
    eps: &LatentTensor,
    schedule: &NoiseSchedule,
) -> Result<LatentTensor, DiffusionError> {
    schedule.check_timestep(t)?;
    z0.lincomb(schedule.alpha(t), eps, schedule.sigma(t))
}

/// Mean squared error over all elements.
pub fn training_loss(eps_hat: &LatentTensor, eps: &LatentTensor) -> Result<f64, DiffusionError> {
    eps_hat.ensure_same_shape(eps)?;
    let sum: f64 = eps_hat.data().iter().zip(eps.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / eps.len() as f64)
}

/// Classifier-free guidance: `u + scale (c - u)`.
pub fn cfg_combine(
    eps_uncond: &LatentTensor,
    eps_cond: &LatentTensor,
    scale: f64,
) -> Result<LatentTensor, DiffusionError> {
    eps_uncond.ensure_same_shape(eps_cond)?;
    let data = eps_uncond
        .data()
        .iter()
        .zip(eps_cond.data())
        .map(|(u, c)| u + scale * (c - u))
        .collect();
    LatentTensor::new(eps_cond.channels(), eps_cond.height(), eps_cond.width(), data)
}

/// One guided prediction. A scale of exactly 1, or an already-null bundle,
/// needs only the single conditional pass.
pub fn guided_noise<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z: &LatentTensor,
    cond: &ConditionBundle,
    t: usize,
    scale: f64,
) -> crate::Result<LatentTensor> {
    let eps_cond = predictor.predict_noise(z, cond, t)?;
    if scale == 1.0 || cond.is_null() {
        return Ok(eps_cond);
    }
    let eps_uncond = predictor.predict_noise(z, &cond.as_null(), t)?;
    Ok(cfg_combine(&eps_uncond, &eps_cond, scale)?)
}

/// Guided predictor whose implied clean latent
/// `x0 = (z - sigma_t eps) / alpha_t` is clipped to `[lo, hi]` after
/// guidance; the returned noise is the one consistent with the clipped
/// `x0`. Run the solver with scale 1 so guidance is not applied twice.
#[derive(Debug, Clone)]
pub struct ClippedGuidance<'a, P: ?Sized> {
    pub predictor: &'a P,
    pub scale: f64,
    pub lo: &'a LatentTensor,
    pub hi: &'a LatentTensor,
    pub schedule: &'a NoiseSchedule,
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for ClippedGuidance<'_, P> {
    fn predict_noise(&self, z: &LatentTensor, cond: &ConditionBundle, t: usize) -> crate::Result<LatentTensor> {
        let eps = guided_noise(self.predictor, z, cond, t, self.scale)?;
        z.ensure_same_shape(self.lo)?;
        z.ensure_same_shape(self.hi)?;
        let (a, s) = (self.schedule.alpha(t), self.schedule.sigma(t));
        let data = z
            .data()
            .iter()
            .zip(eps.data())
            .zip(self.lo.data().iter().zip(self.hi.data()))
            .map(|((zi, ei), (lo, hi))| {
                let x0 = ((zi - s * ei) / a).clamp(*lo, *hi);
                (zi - a * x0) / s
            })
            .collect();
        Ok(LatentTensor::new(z.channels(), z.height(), z.width(), data)?)
    }
}

/// DDIM update from `t` to `t_prev` (`t_prev = 0` lands on clean data).
/// No random draw is made when `eta = 0`.
pub fn ddim_step(
    z_t: &LatentTensor,
    eps_hat: &LatentTensor,
    t: usize,
    t_prev: usize,
    eta: f64,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<LatentTensor, DiffusionError> {
    schedule.check_timestep(t)?;
    if t_prev >= t {
        return Err(DiffusionError::NonDecreasingStep { t, t_prev });
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(DiffusionError::InvalidEta(eta));
    }
    z_t.ensure_same_shape(eps_hat)?;
    let (ab, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t_prev));
    let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt();
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let (sa, sa_prev, s1) = (ab.sqrt(), ab_prev.sqrt(), (1.0 - ab).sqrt());
    let mut out = z_t.zeros_like();
    for ((o, z), e) in out.data_mut().iter_mut().zip(z_t.data()).zip(eps_hat.data()) {
        let z0 = (z - s1 * e) / sa;
        *o = sa_prev * z0 + dir * e;
    }
    if sigma > 0.0 {
        for o in out.data_mut() {
            *o += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(out)
}

/// `steps` timesteps spaced uniformly (rounded) from `T` down to 1,
/// followed by the terminal 0.
pub fn sampling_timesteps(schedule: &NoiseSchedule, steps: usize) -> Result<Vec<usize>, DiffusionError> {
    let t_max = schedule.len();
    if steps == 0 || steps > t_max {
        return Err(DiffusionError::InvalidSteps { steps, max: t_max });
    }
    let mut ts: Vec<usize> = if steps == 1 {
        vec![t_max]
    } else {
        let stride = (t_max - 1) as f64 / (steps - 1) as f64;
        (0..steps).map(|i| t_max - (i as f64 * stride).round() as usize).collect()
    };
    ts.push(0);
    Ok(ts)
}

/// Multistep DPM-Solver in half-log-SNR time with guided noise predictions.
/// Returns every state, starting with `z_t` and ending at `t = 0`.
///
/// Order 2 applies the multistep midpoint correction from the second step
/// onwards; the first step has no history and the final step to `t = 0`
/// has infinite step size in `lambda`, so both fall back to first order.
pub fn dpm_solver_trajectory<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z_t: &LatentTensor,
    cond: &ConditionBundle,
    steps: usize,
    scale: f64,
    schedule: &NoiseSchedule,
    order: usize,
) -> crate::Result<Vec<LatentTensor>> {
    if order != 1 && order != 2 {
        return Err(DiffusionError::InvalidOrder(order).into());
    }
    cond.check_target(z_t)?;
    let ts = sampling_timesteps(schedule, steps)?;
    let mut states = vec![z_t.clone()];
    let mut prev: Option<(LatentTensor, f64)> = None;
    for w in ts.windows(2) {
        let (s, t) = (w[0], w[1]);
        let x = states.last().expect("non-empty");
        let eps = guided_noise(predictor, x, cond, s, scale)?;
        let (a_s, sig_s, a_t, sig_t) = (schedule.alpha(s), schedule.sigma(s), schedule.alpha(t), schedule.sigma(t));
        // sigma_t (e^h - 1) with h = lambda_t - lambda_s, finite at t = 0
        let c_eps = a_t * sig_s / a_s - sig_t;
        let ratio = a_t / a_s;
        let h = schedule.lambda(t) - schedule.lambda(s);
        let correction = match (&prev, order) {
            (Some((eps_prev, h_prev)), 2) if t > 0 => Some((eps_prev, h_prev / h)),
            _ => None,
        };
        let mut next = x.zeros_like();
        match correction {
            Some((eps_prev, r0)) => {
                let k = 0.5 * c_eps / r0;
                for (((o, xi), e), ep) in next.data_mut().iter_mut().zip(x.data()).zip(eps.data()).zip(eps_prev.data()) {
                    *o = ratio * xi - c_eps * e - k * (e - ep);
                }
            }
            None => {
                for ((o, xi), e) in next.data_mut().iter_mut().zip(x.data()).zip(eps.data()) {
                    *o = ratio * xi - c_eps * e;
                }
            }
        }
        prev = Some((eps, h));
        states.push(next);
    }
    Ok(states)
}

/// Terminal state of [`dpm_solver_trajectory`].
pub fn dpm_solver_sample<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z_t: &LatentTensor,
    cond: &ConditionBundle,
    steps: usize,
    scale: f64,
    schedule: &NoiseSchedule,
    order: usize,
) -> crate::Result<LatentTensor> {
    let mut states = dpm_solver_trajectory(predictor, z_t, cond, steps, scale, schedule, order)?;
    Ok(states.pop().expect("at least one step"))
}
