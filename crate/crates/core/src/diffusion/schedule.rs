use serde::{Deserialize, Serialize};

use super::DiffusionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `beta_t` linear in `t`.
    Linear,
    /// `sqrt(beta_t)` linear in `t`.
    ScaledLinear,
}

/// Per-timestep `beta` and cumulative `alpha_bar` tables, indexed `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub const DEFAULT_TIMESTEPS: usize = 1000;
    pub const DEFAULT_BETA_START: f64 = 0.00085;
    pub const DEFAULT_BETA_END: f64 = 0.012;

    /// `T = 1000`, scaled-linear betas from 0.00085 to 0.012.
    pub fn default_latent() -> Self {
        make_schedule(
            ScheduleKind::ScaledLinear,
            Self::DEFAULT_TIMESTEPS,
            Self::DEFAULT_BETA_START,
            Self::DEFAULT_BETA_END,
        )
        .expect("default schedule is valid")
    }

    /// Builds a schedule from explicit betas (each in `(0, 1)`).
    pub fn from_betas(kind: ScheduleKind, betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::InvalidSchedule("at least one timestep required".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(DiffusionError::InvalidSchedule(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self {
            kind,
            betas,
            alpha_bars,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of training timesteps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `alpha_bar_t`, with `alpha_bar_0 = 1`.
    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Signal scale `sqrt(alpha_bar_t)`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bar(t).sqrt()
    }

    /// Noise scale `sqrt(1 - alpha_bar_t)`.
    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t)).sqrt()
    }

    /// Half log-SNR `lambda_t = log(alpha_t / sigma_t)`; `+inf` at `t = 0`.
    pub fn lambda(&self, t: usize) -> f64 {
        if t == 0 {
            return f64::INFINITY;
        }
        let ab = self.alpha_bar(t);
        0.5 * (ab / (1.0 - ab)).ln()
    }

    pub(crate) fn check_timestep(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.len() {
            return Err(DiffusionError::TimestepOutOfRange { t, max: self.len() });
        }
        Ok(())
    }
}

pub fn make_schedule(
    kind: ScheduleKind,
    timesteps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule, DiffusionError> {
    if timesteps == 0 {
        return Err(DiffusionError::InvalidSchedule("T must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0) {
        return Err(DiffusionError::InvalidSchedule(format!(
            "betas must lie in (0, 1), got {beta_start}..{beta_end}"
        )));
    }
    if timesteps > 1 && !(beta_start < beta_end) {
        return Err(DiffusionError::InvalidSchedule(format!(
            "beta_start {beta_start} must be below beta_end {beta_end}"
        )));
    }
    let frac = |i: usize| {
        if timesteps == 1 {
            0.0
        } else {
            i as f64 / (timesteps - 1) as f64
        }
    };
    let betas = (0..timesteps)
        .map(|i| match kind {
            ScheduleKind::Linear => beta_start + (beta_end - beta_start) * frac(i),
            ScheduleKind::ScaledLinear => {
                let (a, b) = (beta_start.sqrt(), beta_end.sqrt());
                (a + (b - a) * frac(i)).powi(2)
            }
        })
        .collect();
    NoiseSchedule::from_betas(kind, betas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::from_betas(ScheduleKind::Linear, vec![0.5]).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
        let s = make_schedule(ScheduleKind::Linear, 1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
    }

    #[test]
    fn default_schedule_ends_near_pure_noise() {
        let s = NoiseSchedule::default_latent();
        // cumulative product oracle computed independently in log space
        let log_ab: f64 = (0..1000)
            .map(|i| {
                let r = 0.00085f64.sqrt() + (0.012f64.sqrt() - 0.00085f64.sqrt()) * i as f64 / 999.0;
                (1.0 - r * r).ln()
            })
            .sum();
        assert!((s.alpha_bar(1000) - log_ab.exp()).abs() < 1e-12);
        assert!(s.alpha_bar(1000) < 0.01);
        assert!((s.beta(1) - 0.00085).abs() < 1e-15);
        assert!((s.beta(1000) - 0.012).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert_eq!(s.lambda(0), f64::INFINITY);
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(make_schedule(ScheduleKind::Linear, 10, 0.0, 0.1).is_err());
        assert!(make_schedule(ScheduleKind::Linear, 10, 0.2, 0.1).is_err());
        assert!(make_schedule(ScheduleKind::Linear, 10, 0.1, 1.0).is_err());
        assert!(make_schedule(ScheduleKind::Linear, 0, 0.1, 0.2).is_err());
    }

    proptest! {
        #[test]
        fn alpha_bar_strictly_decreasing(
            start in 1e-5f64..0.2, span in 1e-4f64..0.7, t in 2usize..300, scaled in any::<bool>()
        ) {
            let kind = if scaled { ScheduleKind::ScaledLinear } else { ScheduleKind::Linear };
            let s = make_schedule(kind, t, start, start + span).unwrap();
            prop_assert!(s.alpha_bar(1) < 1.0);
            for w in s.alpha_bars().windows(2) {
                prop_assert!(w[1] < w[0]);
            }
            prop_assert!(s.betas().iter().all(|b| *b > 0.0 && *b < 1.0));
        }
    }
}
