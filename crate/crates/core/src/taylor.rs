//! One-step Gaussian schemes for the unit-diffusion process.
//!
//! Each scheme produces a drift `beta` and a squared diffusion `alpha`; a step
//! of length `dt` from `x` is then Gaussian with mean `x + beta * dt` and
//! variance `alpha * dt`.

use std::fmt;
use std::str::FromStr;

use crate::error::{BcpError, Result};
use crate::model::UnitDiffusion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SchemeKind {
    /// Second-order weak Taylor scheme.
    #[default]
    Taylor2,
    /// Euler-Maruyama.
    Euler,
    /// Exact Gaussian transition (Brownian and OU models only).
    ExactGaussian,
}

impl SchemeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SchemeKind::Taylor2 => "taylor2",
            SchemeKind::Euler => "euler",
            SchemeKind::ExactGaussian => "exact_gaussian",
        }
    }

    /// Fails for `ExactGaussian` on models without a closed-form transition.
    pub fn check(&self, u: &UnitDiffusion) -> Result<()> {
        if *self == SchemeKind::ExactGaussian && u.exact_transition().is_none() {
            return Err(BcpError::NoExactTransition(self.as_str()));
        }
        Ok(())
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "taylor2" => Ok(SchemeKind::Taylor2),
            "euler" => Ok(SchemeKind::Euler),
            "exact_gaussian" => Ok(SchemeKind::ExactGaussian),
            other => Err(format!("unknown scheme '{other}' (taylor2 | euler | exact_gaussian)")),
        }
    }
}

/// Mean shift and variance of one scheme step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMoments {
    pub mean_shift: f64,
    pub variance: f64,
}

impl StepMoments {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(BcpError::invalid("taylor", format!("step length must be positive, got {dt}")))
    }
}

/// Scheme drift at `(t, x)` for a step of length `dt`.
pub fn beta(u: &UnitDiffusion, t: f64, dt: f64, x: f64, scheme: SchemeKind) -> Result<f64> {
    check_dt(dt)?;
    match scheme {
        SchemeKind::Euler => u.mu(t, x),
        SchemeKind::Taylor2 => {
            let mu = u.mu(t, x)?;
            let correction = u.mu_dt(t, x)? + mu * u.mu_dx(t, x)? + 0.5 * u.mu_dxx(t, x)?;
            Ok(mu + 0.5 * dt * correction)
        }
        SchemeKind::ExactGaussian => {
            let exact = u.exact_transition().ok_or(BcpError::NoExactTransition(scheme.as_str()))?;
            Ok((exact.mean(x, dt) - x) / dt)
        }
    }
}

/// Scheme squared diffusion at `(t, x)`. For `Taylor2` this is
/// `(1 + dt * mu_x / 2)^2`, and a non-positive base is an error.
pub fn alpha(u: &UnitDiffusion, t: f64, dt: f64, x: f64, scheme: SchemeKind) -> Result<f64> {
    check_dt(dt)?;
    match scheme {
        SchemeKind::Euler => Ok(1.0),
        SchemeKind::Taylor2 => {
            let factor = 1.0 + 0.5 * dt * u.mu_dx(t, x)?;
            if factor > 0.0 {
                Ok(factor * factor)
            } else {
                Err(BcpError::NonPositiveVariance { t, x, dt, factor })
            }
        }
        SchemeKind::ExactGaussian => {
            let exact = u.exact_transition().ok_or(BcpError::NoExactTransition(scheme.as_str()))?;
            Ok(exact.variance(dt) / dt)
        }
    }
}

pub fn step_moments(u: &UnitDiffusion, t: f64, dt: f64, x: f64, scheme: SchemeKind) -> Result<StepMoments> {
    let mean_shift = match (scheme, u.exact_transition()) {
        // direct form avoids the divide-then-multiply round trip through beta
        (SchemeKind::ExactGaussian, Some(exact)) => exact.mean(x, dt) - x,
        _ => beta(u, t, dt, x, scheme)? * dt,
    };
    let variance = match (scheme, u.exact_transition()) {
        (SchemeKind::ExactGaussian, Some(exact)) => exact.variance(dt),
        _ => alpha(u, t, dt, x, scheme)? * dt,
    };
    Ok(StepMoments { mean_shift, variance })
}
