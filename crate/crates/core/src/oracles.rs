//! Reference values, boundary families with known answers, and a
//! bridge-corrected Monte Carlo estimator.

use std::f64::consts::SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bridge::{self, BridgeMethod, BridgeSegment};
use crate::error::{BcpError, Result};
use crate::grid::TimeGrid;
use crate::model::{BoundaryFn, BoundaryPair, UnitDiffusion};
use crate::taylor::{step_moments, SchemeKind};

/// Probability that standard Brownian motion started at 0 crosses the
/// Daniels boundary before time 1, to the eight printed digits.
pub fn daniels_reference() -> f64 {
    0.47974935
}

/// `1/2 - t ln((1 + sqrt(1 + 8 exp(-1/t))) / 4)`, equal to 1/2 at `t = 0`.
pub fn daniels_boundary(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.5;
    }
    0.5 - t * (0.25 * (1.0 + (1.0 + 8.0 * (-1.0 / t).exp()).sqrt())).ln()
}

/// Probability that the unit OU process started at 0 leaves the strip
/// between the `g_psi` boundaries before time 1, to the eight printed digits.
pub fn ou_psi_reference() -> f64 {
    0.75050288
}

/// Time change `(exp(2t) - 1) / 2` taking OU time to Brownian time.
pub fn ou_time_change(t: f64) -> f64 {
    0.5 * (2.0 * t).exp_m1()
}

/// `s/2 * acosh(exp(a/s))`, rewritten as `a/2 + s/2 ln(1 + sqrt(1 - exp(-2a/s)))`
/// so that small `s` neither overflows nor loses digits. Equals `a/2` at `s = 0`.
pub fn psi_family(a: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.5 * a;
    }
    0.5 * a + 0.5 * s * (1.0 + (-(-2.0 * a / s).exp_m1()).sqrt()).ln()
}

/// Level used by the OU boundaries. With `a = 2` the strip `|x| < psi(s)` is
/// the zero set of `phi_s(x) - (phi_s(x - 2) + phi_s(x + 2)) / 2`, which is
/// the family the reference value belongs to.
pub const PSI_LEVEL: f64 = 2.0;

pub fn psi_plus(s: f64) -> f64 {
    psi_family(PSI_LEVEL, s)
}

/// Upper OU boundary `exp(-t) psi_+(theta(t))`; the lower one is its negative.
pub fn ou_psi_upper(t: f64) -> f64 {
    (-t).exp() * psi_plus(ou_time_change(t))
}

pub fn ou_psi_lower(t: f64) -> f64 {
    -ou_psi_upper(t)
}

/// `(t/3) acosh(2 exp(9/(2t)))`, rewritten as `3/2 + (t/3) ln(2 + sqrt(4 - exp(-9/t)))`.
pub fn gpm_upper(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.5;
    }
    1.5 + t / 3.0 * (2.0 + (4.0 - (-9.0 / t).exp()).sqrt()).ln()
}

pub fn gpm_lower(t: f64) -> f64 {
    -gpm_upper(t)
}

pub fn daniels_bounds(n_max: usize) -> Result<BoundaryPair> {
    BoundaryPair::one_sided(std::sync::Arc::new(daniels_boundary), 0.0, n_max)
}

pub fn ou_psi_bounds(n_max: usize) -> Result<BoundaryPair> {
    BoundaryPair::two_sided(std::sync::Arc::new(ou_psi_lower), std::sync::Arc::new(ou_psi_upper), 0.0, n_max)
}

pub fn gpm_bounds(n_max: usize) -> Result<BoundaryPair> {
    BoundaryPair::two_sided(std::sync::Arc::new(gpm_lower), std::sync::Arc::new(gpm_upper), 0.0, n_max)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

fn normal_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

/// `Phi(b) - Phi(a)` for `a <= b` without cancellation in either tail.
pub fn normal_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        normal_tail(a) - normal_tail(b)
    } else if b <= 0.0 {
        normal_cdf(b) - normal_cdf(a)
    } else {
        1.0 - normal_cdf(a) - normal_tail(b)
    }
}

/// Truncated reflection series for `P(sup_{t <= T} |W(t)| < c)`:
/// `sum_{|k| <= terms} (-1)^k (Phi((2k+1)c/sqrt T) - Phi((2k-1)c/sqrt T))`.
pub fn flat_barrier_series(c: f64, horizon: f64, terms: usize) -> Result<f64> {
    if !(c > 0.0) || !(horizon > 0.0) {
        return Err(BcpError::invalid("oracles", format!("need c > 0 and T > 0 (c = {c}, T = {horizon})")));
    }
    let z = c / horizon.sqrt();
    let term = |k: i64| {
        let kf = k as f64;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sign * normal_interval((2.0 * kf - 1.0) * z, (2.0 * kf + 1.0) * z)
    };
    let t = terms as i64;
    // pair symmetric terms so the sum runs from the smallest contributions up
    let mut total = 0.0;
    for k in (1..=t).rev() {
        total += term(k) + term(-k);
    }
    Ok((total + term(0)).clamp(0.0, 1.0))
}

/// Size of the first term left out of [`flat_barrier_series`].
pub fn flat_barrier_truncation(c: f64, horizon: f64, terms: usize) -> f64 {
    let z = c / horizon.sqrt();
    let k = (terms + 1) as f64;
    2.0 * normal_interval((2.0 * k - 1.0) * z, (2.0 * k + 1.0) * z)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub paths: u64,
    pub seed: u64,
}

impl McEstimate {
    pub fn z_score(&self, reference: f64) -> f64 {
        (self.mean - reference) / self.stderr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    /// Each path contributes `prod_k (1 - pi_k)`.
    #[default]
    Conditional,
    /// Each step kills the path with probability `pi_k`; paths score 0 or 1.
    Indicator,
}

const BLOCK: u64 = 4096;

#[derive(Debug, Clone, Copy)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn merge(self, other: Moments) -> Moments {
        if self.count == 0.0 {
            return other;
        }
        if other.count == 0.0 {
            return self;
        }
        let count = self.count + other.count;
        let d = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + d * other.count / count,
            m2: self.m2 + other.m2 + d * d * self.count * other.count / count,
        }
    }
}

fn pairwise(mut parts: Vec<Moments>) -> Moments {
    while parts.len() > 1 {
        parts = parts.chunks(2).map(|c| if c.len() == 2 { c[0].merge(c[1]) } else { c[0] }).collect();
    }
    parts.pop().unwrap_or(Moments { count: 0.0, mean: 0.0, m2: 0.0 })
}

struct PathSetup<'a> {
    u: &'a UnitDiffusion,
    grid: TimeGrid,
    upper: Vec<f64>,
    lower: Vec<f64>,
    scheme: SchemeKind,
    estimator: Estimator,
    seed: u64,
    x0: f64,
}

impl PathSetup<'_> {
    fn path(&self, index: u64) -> Result<f64> {
        let mut normals = ChaCha8Rng::seed_from_u64(self.seed);
        normals.set_stream(2 * index);
        let mut uniforms = ChaCha8Rng::seed_from_u64(self.seed);
        uniforms.set_stream(2 * index + 1);
        let mut x = self.x0;
        let mut weight = 1.0;
        for k in 1..=self.grid.n() {
            let dt = self.grid.dt(k);
            let m = step_moments(self.u, self.grid.t(k - 1), dt, x, self.scheme)?;
            let z: f64 = normals.sample(StandardNormal);
            let y = x + m.mean_shift + m.std_dev() * z;
            if !(y > self.lower[k] && y < self.upper[k]) {
                return Ok(0.0);
            }
            let seg = BridgeSegment::new(dt, (self.lower[k - 1], self.lower[k]), (self.upper[k - 1], self.upper[k]))?;
            let pi = bridge::two_sided(x, y, &seg, BridgeMethod::Sum)?;
            match self.estimator {
                Estimator::Conditional => weight *= 1.0 - pi,
                Estimator::Indicator => {
                    if uniforms.gen::<f64>() < pi {
                        return Ok(0.0);
                    }
                }
            }
            x = y;
        }
        Ok(weight)
    }
}

/// Bridge-corrected Monte Carlo estimate of the non-crossing probability on
/// a uniform grid of `n_steps`. Path `i` draws its normals from stream `2i`
/// of a ChaCha generator keyed by `seed`, so the result does not depend on
/// the number of worker threads.
pub fn mc_bcp(
    u: &UnitDiffusion,
    bounds: &BoundaryPair,
    n_steps: usize,
    paths: u64,
    seed: u64,
    scheme: SchemeKind,
) -> Result<McEstimate> {
    mc_bcp_with(u, bounds, n_steps, paths, seed, scheme, Estimator::Conditional)
}

pub fn mc_bcp_with(
    u: &UnitDiffusion,
    bounds: &BoundaryPair,
    n_steps: usize,
    paths: u64,
    seed: u64,
    scheme: SchemeKind,
    estimator: Estimator,
) -> Result<McEstimate> {
    if paths == 0 {
        return Err(BcpError::invalid("oracles", "paths must be at least 1"));
    }
    scheme.check(u)?;
    let grid = TimeGrid::uniform(n_steps)?;
    let setup = PathSetup {
        u,
        upper: grid.times().iter().map(|&t| bounds.upper(t)).collect(),
        lower: grid.times().iter().map(|&t| bounds.lower(t)).collect(),
        grid,
        scheme,
        estimator,
        seed,
        x0: bounds.x0(),
    };
    let blocks = paths.div_ceil(BLOCK);
    let parts = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = Moments { count: 0.0, mean: 0.0, m2: 0.0 };
            for i in b * BLOCK..((b + 1) * BLOCK).min(paths) {
                let v = setup.path(i)?;
                acc = acc.merge(Moments { count: 1.0, mean: v, m2: 0.0 });
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let total = pairwise(parts);
    let variance = if paths > 1 { total.m2 / (total.count - 1.0) } else { 0.0 };
    Ok(McEstimate { mean: total.mean, stderr: (variance / total.count).sqrt(), paths, seed })
}

/// Boundary function by builtin name.
pub fn builtin_boundary(name: &str) -> Option<(Option<BoundaryFn>, BoundaryFn)> {
    use std::sync::Arc;
    match name {
        "daniels" => Some((None, Arc::new(daniels_boundary))),
        "ou_psi" => Some((Some(Arc::new(ou_psi_lower)), Arc::new(ou_psi_upper))),
        "gpm" => Some((Some(Arc::new(gpm_lower)), Arc::new(gpm_upper))),
        _ => None,
    }
}
