//! Crossing probabilities of a Brownian bridge against linear boundaries.
//!
//! A bridge of duration `dt` pinned at `x` and `y` is compared against
//! boundaries interpolated linearly between their values at the two ends of
//! the step.

use std::fmt;
use std::str::FromStr;

use crate::error::{BcpError, Result};

/// Linear boundaries over one time step. Missing boundaries are infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeSegment {
    pub dt: f64,
    pub f_minus_start: f64,
    pub f_minus_end: f64,
    pub f_plus_start: f64,
    pub f_plus_end: f64,
}

impl BridgeSegment {
    pub fn new(dt: f64, lower: (f64, f64), upper: (f64, f64)) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(BcpError::invalid("bridge", format!("duration must be positive, got {dt}")));
        }
        if !(lower.0 < upper.0 && lower.1 < upper.1) {
            return Err(BcpError::invalid(
                "bridge",
                format!("lower boundary {lower:?} must lie below upper boundary {upper:?}"),
            ));
        }
        Ok(BridgeSegment {
            dt,
            f_minus_start: lower.0,
            f_minus_end: lower.1,
            f_plus_start: upper.0,
            f_plus_end: upper.1,
        })
    }

    pub fn upper_only(dt: f64, upper: (f64, f64)) -> Result<Self> {
        Self::new(dt, (f64::NEG_INFINITY, f64::NEG_INFINITY), upper)
    }

    pub fn lower_only(dt: f64, lower: (f64, f64)) -> Result<Self> {
        Self::new(dt, lower, (f64::INFINITY, f64::INFINITY))
    }

    fn check_pins(&self, x: f64, y: f64) -> Result<()> {
        if x > self.f_minus_start && x < self.f_plus_start && y > self.f_minus_end && y < self.f_plus_end {
            Ok(())
        } else {
            Err(BcpError::DomainViolation(format!(
                "pins ({x}, {y}) against lower ({}, {}) and upper ({}, {})",
                self.f_minus_start, self.f_minus_end, self.f_plus_start, self.f_plus_end
            )))
        }
    }
}

/// How the two-sided probability is formed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BridgeMethod {
    /// `min(1, p_lower + p_upper)`.
    #[default]
    Sum,
    /// Image series with at most `terms` correction pairs, stopping once a
    /// round of corrections falls below `tol`.
    Series { terms: usize, tol: f64 },
}

impl BridgeMethod {
    pub fn series() -> Self {
        BridgeMethod::Series { terms: 10, tol: 1e-16 }
    }
}

impl fmt::Display for BridgeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BridgeMethod::Sum => f.write_str("sum"),
            BridgeMethod::Series { .. } => f.write_str("series"),
        }
    }
}

impl FromStr for BridgeMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sum" => Ok(BridgeMethod::Sum),
            "series" => Ok(BridgeMethod::series()),
            other => Err(format!("unknown bridge method '{other}' (sum | series)")),
        }
    }
}

/// Probability that the bridge touches the upper boundary:
/// `exp(-2 (u0 - x)(u1 - y) / dt)`.
pub fn one_sided_upper(x: f64, y: f64, seg: &BridgeSegment) -> Result<f64> {
    if !(x < seg.f_plus_start && y < seg.f_plus_end) {
        return Err(BcpError::DomainViolation(format!(
            "pins ({x}, {y}) not below upper boundary ({}, {})",
            seg.f_plus_start, seg.f_plus_end
        )));
    }
    Ok(upper_unchecked(x, y, seg))
}

/// Mirror image of [`one_sided_upper`].
pub fn one_sided_lower(x: f64, y: f64, seg: &BridgeSegment) -> Result<f64> {
    if !(x > seg.f_minus_start && y > seg.f_minus_end) {
        return Err(BcpError::DomainViolation(format!(
            "pins ({x}, {y}) not above lower boundary ({}, {})",
            seg.f_minus_start, seg.f_minus_end
        )));
    }
    Ok(lower_unchecked(x, y, seg))
}

#[inline]
fn upper_unchecked(x: f64, y: f64, seg: &BridgeSegment) -> f64 {
    (-2.0 * (seg.f_plus_start - x) * (seg.f_plus_end - y) / seg.dt).exp()
}

#[inline]
fn lower_unchecked(x: f64, y: f64, seg: &BridgeSegment) -> f64 {
    (-2.0 * (x - seg.f_minus_start) * (y - seg.f_minus_end) / seg.dt).exp()
}

/// Probability that the bridge leaves the strip through either boundary.
pub fn two_sided(x: f64, y: f64, seg: &BridgeSegment, method: BridgeMethod) -> Result<f64> {
    seg.check_pins(x, y)?;
    let low = lower_unchecked(x, y, seg);
    let up = upper_unchecked(x, y, seg);
    let lower_finite = seg.f_minus_start.is_finite();
    let upper_finite = seg.f_plus_start.is_finite();
    if !(lower_finite && upper_finite) {
        return Ok(low + up);
    }
    match method {
        BridgeMethod::Sum => Ok((low + up).min(1.0)),
        BridgeMethod::Series { terms, tol } => Ok(series(x, y, seg, low, up, terms, tol).clamp(0.0, 1.0)),
    }
}

// With a = x - f-(start), b = y - f-(end) and strip widths c0, c1 the
// non-crossing probability is
//   sum over integer m of exp(-2 m (m c0 c1 - d) / dt) - exp(-2 (a - m c0)(b - m c1) / dt),
// d = c0 b - c1 a. The m = 0 and m = 1 negative terms are the one-sided
// probabilities; everything else is the correction.
fn series(x: f64, y: f64, seg: &BridgeSegment, low: f64, up: f64, terms: usize, tol: f64) -> f64 {
    let a = x - seg.f_minus_start;
    let b = y - seg.f_minus_end;
    let c0 = seg.f_plus_start - seg.f_minus_start;
    let c1 = seg.f_plus_end - seg.f_minus_end;
    let d = c0 * b - c1 * a;
    let scale = -2.0 / seg.dt;
    let mut crossing = low + up;
    for m in 1..=terms {
        let mf = m as f64;
        let positive = (scale * mf * (mf * c0 * c1 - d)).exp() + (scale * mf * (mf * c0 * c1 + d)).exp();
        let negative = (scale * (a + mf * c0) * (b + mf * c1)).exp()
            + (scale * (a - (mf + 1.0) * c0) * (b - (mf + 1.0) * c1)).exp();
        crossing += negative - positive;
        if positive.max(negative) < tol {
            break;
        }
    }
    crossing
}

/// Upper bound on `|sum - series|` for pins inside a two-sided segment.
pub fn sum_series_gap_bound(x: f64, y: f64, seg: &BridgeSegment) -> f64 {
    let a = x - seg.f_minus_start;
    let b = y - seg.f_minus_end;
    let c0 = seg.f_plus_start - seg.f_minus_start;
    let c1 = seg.f_plus_end - seg.f_minus_end;
    let d = (c0 * b - c1 * a).abs();
    let cc = c0 * c1 / seg.dt;
    let positive = 2.0 * (-2.0 * (c0 * c1 - d) / seg.dt).exp() / -(-4.0 * cc).exp_m1();
    let negative = 2.0 * (-2.0 * cc).exp() / -(-2.0 * cc).exp_m1();
    positive + negative
}
