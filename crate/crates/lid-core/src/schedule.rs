//! Diffusion noise schedules.
//!
//! A schedule exposes the mean scaling `psi(t)`, the noise level `sigma(t)`,
//! the noise-to-signal ratio `lambda(t) = sigma(t) / psi(t)` and its left
//! inverse, plus `t_of_delta(delta) = lambda^{-1}(exp(delta))`, which maps a
//! convolution scale `exp(delta)` to diffusion time.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("delta {delta} out of schedule range; admissible interval is [{lo}, {hi}]")]
    DeltaOutOfRange { delta: f64, lo: f64, hi: f64 },
    #[error("invalid schedule parameters: {0}")]
    InvalidParams(String),
}

/// Variance-exploding or variance-preserving noise schedule on t in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleSpec {
    /// psi = 1, sigma(t) = sigma_min (sigma_max / sigma_min)^t.
    /// sigma(0) = 0 is adopted as a limit convention; `lambda` uses the
    /// continuous extension so that round trips through `t_of_delta` are
    /// exact at the lower endpoint.
    Ve { sigma_min: f64, sigma_max: f64 },
    /// beta(t) = beta_min + t (beta_max - beta_min),
    /// psi(t) = exp(-1/2 int_0^t beta), sigma^2 = 1 - psi^2.
    Vp { beta_min: f64, beta_max: f64 },
}

impl ScheduleSpec {
    pub fn ve(sigma_min: f64, sigma_max: f64) -> Result<Self, ScheduleError> {
        if !(sigma_min > 0.0 && sigma_max > sigma_min) {
            return Err(ScheduleError::InvalidParams(format!(
                "VE requires 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
            )));
        }
        Ok(ScheduleSpec::Ve {
            sigma_min,
            sigma_max,
        })
    }

    pub fn vp(beta_min: f64, beta_max: f64) -> Result<Self, ScheduleError> {
        if !(beta_min >= 0.0 && beta_max > beta_min) {
            return Err(ScheduleError::InvalidParams(format!(
                "VP requires 0 <= beta_min < beta_max, got ({beta_min}, {beta_max})"
            )));
        }
        Ok(ScheduleSpec::Vp { beta_min, beta_max })
    }

    fn check_time(t: f64) -> Result<(), ScheduleError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(ScheduleError::TimeOutOfRange(t));
        }
        Ok(())
    }

    /// Mean scaling of the transition kernel.
    pub fn psi(&self, t: f64) -> Result<f64, ScheduleError> {
        Self::check_time(t)?;
        Ok(match *self {
            ScheduleSpec::Ve { .. } => 1.0,
            ScheduleSpec::Vp { beta_min, beta_max } => {
                (-0.5 * (beta_min * t + 0.5 * (beta_max - beta_min) * t * t)).exp()
            }
        })
    }

    /// Noise standard deviation of the transition kernel.
    pub fn sigma(&self, t: f64) -> Result<f64, ScheduleError> {
        Self::check_time(t)?;
        Ok(match *self {
            ScheduleSpec::Ve {
                sigma_min,
                sigma_max,
            } => {
                if t == 0.0 {
                    0.0
                } else {
                    sigma_min * (sigma_max / sigma_min).powf(t)
                }
            }
            ScheduleSpec::Vp { beta_min, beta_max } => {
                // 1 - psi^2 = -expm1(-B(t)); expm1 avoids the catastrophic
                // cancellation at small t where psi is within 1e-6 of 1.
                let b = beta_min * t + 0.5 * (beta_max - beta_min) * t * t;
                (-(-b).exp_m1()).max(0.0).sqrt()
            }
        })
    }

    /// Noise-to-signal ratio sigma(t) / psi(t), using the continuous
    /// extension of sigma at t = 0 for VE schedules.
    pub fn lambda(&self, t: f64) -> Result<f64, ScheduleError> {
        Self::check_time(t)?;
        Ok(match *self {
            ScheduleSpec::Ve {
                sigma_min,
                sigma_max,
            } => sigma_min * (sigma_max / sigma_min).powf(t),
            ScheduleSpec::Vp { .. } => self.sigma(t)? / self.psi(t)?,
        })
    }

    /// The admissible interval of delta for `t_of_delta`, i.e. the values
    /// with exp(delta) in the range of lambda.
    pub fn delta_range(&self) -> (f64, f64) {
        match *self {
            ScheduleSpec::Ve {
                sigma_min,
                sigma_max,
            } => (sigma_min.ln(), sigma_max.ln()),
            ScheduleSpec::Vp { .. } => {
                let hi = self.lambda(1.0).expect("t=1 in range");
                (f64::NEG_INFINITY, hi.ln())
            }
        }
    }

    /// Left inverse of lambda composed with exp: t such that
    /// lambda(t) = exp(delta).
    pub fn t_of_delta(&self, delta: f64) -> Result<f64, ScheduleError> {
        let (lo, hi) = self.delta_range();
        if delta < lo - 1e-12 || delta > hi + 1e-12 {
            return Err(ScheduleError::DeltaOutOfRange { delta, lo, hi });
        }
        match *self {
            ScheduleSpec::Ve {
                sigma_min,
                sigma_max,
            } => {
                let t = (delta - sigma_min.ln()) / (sigma_max.ln() - sigma_min.ln());
                Ok(t.clamp(0.0, 1.0))
            }
            ScheduleSpec::Vp { .. } => {
                // lambda is strictly increasing on [0, 1]; monotone bisection
                // run down to the last representable midpoint. Full float
                // precision matters: lambda ~ sqrt(beta_min t) near 0, so
                // slack in t is amplified into the recovered delta.
                let target = delta.exp();
                let (mut a, mut b) = (0.0f64, 1.0f64);
                loop {
                    let mid = 0.5 * (a + b);
                    if mid <= a || mid >= b {
                        break;
                    }
                    if self.lambda(mid)? < target {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                Ok(0.5 * (a + b))
            }
        }
    }

    /// Drift coefficient gamma(t) in the forward SDE drift gamma(t) x.
    pub fn drift_coeff(&self, t: f64) -> Result<f64, ScheduleError> {
        Self::check_time(t)?;
        Ok(match *self {
            ScheduleSpec::Ve { .. } => 0.0,
            ScheduleSpec::Vp { beta_min, beta_max } => {
                -0.5 * (beta_min + t * (beta_max - beta_min))
            }
        })
    }

    /// Squared diffusion coefficient g^2(t) of the forward SDE.
    pub fn diffusion_sq(&self, t: f64) -> Result<f64, ScheduleError> {
        Self::check_time(t)?;
        Ok(match *self {
            ScheduleSpec::Ve {
                sigma_min,
                sigma_max,
            } => {
                // d sigma^2 / dt = 2 ln(sigma_max / sigma_min) sigma^2(t)
                let s = self.lambda(t)?;
                2.0 * (sigma_max / sigma_min).ln() * s * s
            }
            ScheduleSpec::Vp { beta_min, beta_max } => beta_min + t * (beta_max - beta_min),
        })
    }
}
