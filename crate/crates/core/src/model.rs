//! Diffusion models and the unit-diffusion (Lamperti) transform.
//!
//! A [`DiffusionModel`] describes `dY = mu_Y(t, Y) dt + sigma_Y(t, Y) dW` on
//! `[0, 1]`. The transform `psi_t(y) = int_0^y du / sigma_Y(t, u)` maps it to a
//! process with unit diffusion coefficient, described by [`UnitDiffusion`],
//! and maps boundaries `g0(t)` to `psi_t(g0(t))`.

use std::cell::Cell;
use std::fmt;
use std::sync::Arc;

use crate::error::{BcpError, Result};

/// Coefficient function `(t, y) -> value`.
pub type Coefficient = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Boundary function `t -> value` on `[0, 1]`.
pub type BoundaryFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// Fallible drift of the transformed process.
pub type DriftFn = Arc<dyn Fn(f64, f64) -> Result<f64> + Send + Sync>;

const LAMPERTI_TOL: f64 = 1e-12;
const MAX_BRACKET_EXPANSIONS: usize = 60;
const MAX_QUADRATURE_SPLITS: u32 = 14;

/// How partial derivatives of model coefficients are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivativeMode {
    /// User-supplied closures, used verbatim.
    Exact,
    /// Symmetric differences with step `step_scale * max(1, |x|)`.
    CentralDifference { step_scale: f64 },
}

impl DerivativeMode {
    /// Central differences with the default step scale `eps^(1/3)`.
    pub fn central() -> Self {
        DerivativeMode::CentralDifference { step_scale: f64::EPSILON.cbrt() }
    }
}

/// First derivative by a symmetric difference.
pub(crate) fn central_first<F>(f: F, x: f64, step_scale: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let h = step_scale * x.abs().max(1.0);
    let (up, down) = (x + h, x - h);
    Ok((f(up)? - f(down)?) / (up - down))
}

/// Second derivative by the 3-point symmetric stencil. The step is
/// `step_scale^(3/4)` relative, i.e. `eps^(1/4)` for the default scale, which
/// balances truncation against the `eps / h^2` rounding term.
pub(crate) fn central_second<F>(f: F, x: f64, step_scale: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let h = step_scale.powf(0.75) * x.abs().max(1.0);
    let h = (x + h) - x;
    Ok((f(x + h)? - 2.0 * f(x)? + f(x - h)?) / (h * h))
}

/// Models whose transition law over a step is Gaussian in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactTransition {
    /// `dX = dW`.
    Brownian,
    /// `dX = -theta X dt + dW`.
    OrnsteinUhlenbeck { theta: f64 },
}

impl ExactTransition {
    /// `E[X(t + dt) | X(t) = x]`.
    pub fn mean(&self, x: f64, dt: f64) -> f64 {
        match *self {
            ExactTransition::Brownian => x,
            ExactTransition::OrnsteinUhlenbeck { theta } => x * (-theta * dt).exp(),
        }
    }

    /// `Var[X(t + dt) | X(t) = x]`.
    pub fn variance(&self, dt: f64) -> f64 {
        match *self {
            ExactTransition::Brownian => dt,
            ExactTransition::OrnsteinUhlenbeck { theta } => {
                if theta == 0.0 {
                    dt
                } else {
                    -(-2.0 * theta * dt).exp_m1() / (2.0 * theta)
                }
            }
        }
    }
}

#[derive(Clone)]
struct ClosedTransform {
    psi: Coefficient,
    inverse: Coefficient,
}

/// The user's SDE `dY = mu_Y dt + sigma_Y dW`, `Y(0) = y0`.
#[derive(Clone)]
pub struct DiffusionModel {
    name: String,
    drift: Coefficient,
    diffusion: Coefficient,
    diffusion_dt: Option<Coefficient>,
    diffusion_dy: Option<Coefficient>,
    y0: f64,
    derivative_mode: DerivativeMode,
    closed: Option<ClosedTransform>,
    unit: bool,
    exact: Option<ExactTransition>,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("name", &self.name)
            .field("y0", &self.y0)
            .field("derivative_mode", &self.derivative_mode)
            .field("unit", &self.unit)
            .field("exact", &self.exact)
            .finish_non_exhaustive()
    }
}

impl DiffusionModel {
    /// Standard Brownian motion started at 0.
    pub fn brownian() -> Self {
        let mut model = Self::custom("brownian", Arc::new(|_, _| 0.0), Arc::new(|_, _| 1.0))
            .with_diffusion_derivatives(Arc::new(|_, _| 0.0), Arc::new(|_, _| 0.0));
        model.unit = true;
        model.exact = Some(ExactTransition::Brownian);
        model
    }

    /// Ornstein-Uhlenbeck process `dY = -theta Y dt + dW` started at 0.
    pub fn ou(theta: f64) -> Self {
        let mut model = Self::custom("ou", Arc::new(move |_, y| -theta * y), Arc::new(|_, _| 1.0))
            .with_diffusion_derivatives(Arc::new(|_, _| 0.0), Arc::new(|_, _| 0.0));
        model.unit = true;
        model.exact = Some(ExactTransition::OrnsteinUhlenbeck { theta });
        model
    }

    /// A model given by arbitrary coefficient closures. Derivatives of
    /// `sigma_Y` default to central differences.
    pub fn custom(name: impl Into<String>, drift: Coefficient, diffusion: Coefficient) -> Self {
        DiffusionModel {
            name: name.into(),
            drift,
            diffusion,
            diffusion_dt: None,
            diffusion_dy: None,
            y0: 0.0,
            derivative_mode: DerivativeMode::central(),
            closed: None,
            unit: false,
            exact: None,
        }
    }

    pub fn with_y0(mut self, y0: f64) -> Self {
        self.y0 = y0;
        self
    }

    /// Supply exact partials `d sigma_Y / dt` and `d sigma_Y / dy`.
    pub fn with_diffusion_derivatives(mut self, dt: Coefficient, dy: Coefficient) -> Self {
        self.diffusion_dt = Some(dt);
        self.diffusion_dy = Some(dy);
        self.derivative_mode = DerivativeMode::Exact;
        self
    }

    pub fn with_central_differences(mut self, step_scale: f64) -> Self {
        self.derivative_mode = DerivativeMode::CentralDifference { step_scale };
        self
    }

    /// Register closed forms of `psi_t(y)` and its inverse in `y`.
    pub fn with_closed_transform(mut self, psi: Coefficient, inverse: Coefficient) -> Self {
        self.closed = Some(ClosedTransform { psi, inverse });
        self
    }

    /// Declare `sigma_Y == 1`, so the transform is the identity.
    pub fn with_unit_diffusion(mut self) -> Self {
        self.unit = true;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn y0(&self) -> f64 {
        self.y0
    }

    pub fn derivative_mode(&self) -> DerivativeMode {
        self.derivative_mode
    }

    pub fn exact_transition(&self) -> Option<ExactTransition> {
        self.exact
    }

    pub fn is_unit(&self) -> bool {
        self.unit
    }

    pub fn drift(&self, t: f64, y: f64) -> f64 {
        (self.drift)(t, y)
    }

    /// `sigma_Y(t, y)`, rejecting non-positive values.
    pub fn sigma(&self, t: f64, y: f64) -> Result<f64> {
        let value = (self.diffusion)(t, y);
        if value > 0.0 && value.is_finite() {
            Ok(value)
        } else {
            Err(BcpError::NonPositiveDiffusion { t, y, value })
        }
    }

    fn step_scale(&self) -> f64 {
        match self.derivative_mode {
            DerivativeMode::CentralDifference { step_scale } => step_scale,
            DerivativeMode::Exact => f64::EPSILON.cbrt(),
        }
    }

    pub fn sigma_dt(&self, t: f64, y: f64) -> Result<f64> {
        match (&self.derivative_mode, &self.diffusion_dt) {
            (DerivativeMode::Exact, Some(f)) => Ok(f(t, y)),
            _ => central_first(|s| self.sigma(s, y), t, self.step_scale()),
        }
    }

    pub fn sigma_dy(&self, t: f64, y: f64) -> Result<f64> {
        match (&self.derivative_mode, &self.diffusion_dy) {
            (DerivativeMode::Exact, Some(f)) => Ok(f(t, y)),
            _ => central_first(|u| self.sigma(t, u), y, self.step_scale()),
        }
    }

    /// Check `sigma_Y > 0` and finiteness of the drift on the given sample points.
    pub fn check_regularity(&self, points: &[(f64, f64)]) -> Result<()> {
        for &(t, y) in points {
            self.sigma(t, y)?;
            let mu = self.drift(t, y);
            if !mu.is_finite() {
                return Err(BcpError::invalid("model", format!("drift not finite at t = {t}, y = {y}")));
            }
        }
        Ok(())
    }

    /// `psi_t(y) = int_0^y du / sigma_Y(t, u)`.
    pub fn lamperti(&self, t: f64, y: f64) -> Result<f64> {
        if self.unit {
            return Ok(y);
        }
        if let Some(closed) = &self.closed {
            return Ok((closed.psi)(t, y));
        }
        integrate_signed(t, y, |u| self.sigma(t, u).map(f64::recip))
    }

    /// `d/dt psi_t(y) = -int_0^y sigma_t(t, u) / sigma_Y(t, u)^2 du`.
    pub fn lamperti_dt(&self, t: f64, y: f64) -> Result<f64> {
        if self.unit {
            return Ok(0.0);
        }
        if self.closed.is_some() {
            return central_first(|s| self.lamperti(s, y), t, self.step_scale());
        }
        integrate_signed(t, y, |u| {
            let s = self.sigma(t, u)?;
            Ok(-self.sigma_dt(t, u)? / (s * s))
        })
    }

    /// Solve `psi_t(y) = x` for `y`.
    pub fn inverse_lamperti(&self, t: f64, x: f64) -> Result<f64> {
        if self.unit {
            return Ok(x);
        }
        if let Some(closed) = &self.closed {
            return Ok((closed.inverse)(t, x));
        }
        invert_increasing(|y| self.lamperti(t, y), x).ok_or(BcpError::InversionFailure { t, x })?
    }

    /// Drift of the unit-diffusion process,
    /// `(d_t psi_t + mu_Y / sigma_Y - sigma_y / 2)` evaluated at `psi_t^{-1}(x)`.
    pub fn transformed_drift(&self, t: f64, x: f64) -> Result<f64> {
        if self.unit {
            return Ok(self.drift(t, x));
        }
        let y = self.inverse_lamperti(t, x)?;
        let sigma = self.sigma(t, y)?;
        Ok(self.lamperti_dt(t, y)? + self.drift(t, y) / sigma - 0.5 * self.sigma_dy(t, y)?)
    }

    /// The transformed process `X = psi_t(Y)`.
    pub fn unit_diffusion(&self) -> Result<UnitDiffusion> {
        let x0 = self.lamperti(0.0, self.y0)?;
        let unit = if self.unit {
            match self.exact {
                Some(ExactTransition::Brownian) => UnitDiffusion::brownian(),
                Some(ExactTransition::OrnsteinUhlenbeck { theta }) => UnitDiffusion::ou(theta),
                None => {
                    let drift = self.drift.clone();
                    UnitDiffusion::new(Arc::new(move |t, x| Ok(drift(t, x)))).with_step_scale(self.step_scale())
                }
            }
        } else {
            let model = self.clone();
            UnitDiffusion::new(Arc::new(move |t, x| model.transformed_drift(t, x))).with_step_scale(self.step_scale())
        };
        Ok(unit.with_x0(x0))
    }

    /// Map boundaries of `Y` to boundaries of `X = psi_t(Y)` and validate the
    /// image pair on `10 * n_max + 1` points. `lower = None` means `-inf`.
    pub fn transform_boundaries(
        &self,
        lower: Option<BoundaryFn>,
        upper: BoundaryFn,
        n_max: usize,
    ) -> Result<BoundaryPair> {
        let x0 = self.lamperti(0.0, self.y0)?;
        if self.unit {
            return BoundaryPair::new(lower, upper, x0, n_max);
        }
        let map = |g: BoundaryFn| -> BoundaryFn {
            let model = self.clone();
            Arc::new(move |t| model.lamperti(t, g(t)).unwrap_or(f64::NAN))
        };
        BoundaryPair::new(lower.map(map), map(upper), x0, n_max)
    }
}

/// Signed integral `int_0^y f` (negative for `y < 0`).
fn integrate_signed<F>(t: f64, y: f64, f: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if y == 0.0 {
        return Ok(0.0);
    }
    let (a, b, sign) = if y > 0.0 { (0.0, y, 1.0) } else { (y, 0.0, -1.0) };
    let failure: Cell<Option<BcpError>> = Cell::new(None);
    let integrand = |u: f64| match f(u) {
        Ok(v) => v,
        Err(e) => {
            failure.set(Some(e));
            f64::NAN
        }
    };
    let mut worst = 0.0_f64;
    let value = adaptive(&integrand, a, b, LAMPERTI_TOL, 0, &mut worst);
    if let Some(e) = failure.take() {
        return Err(e);
    }
    match value {
        Some(v) => Ok(sign * v),
        None => Err(BcpError::QuadratureFailure { t, y, tolerance: LAMPERTI_TOL, estimate: worst }),
    }
}

fn adaptive<F>(f: &F, a: f64, b: f64, tol: f64, depth: u32, worst: &mut f64) -> Option<f64>
where
    F: Fn(f64) -> f64,
{
    let out = quadrature::double_exponential::integrate(f, a, b, tol);
    if out.error_estimate <= tol && out.integral.is_finite() {
        return Some(out.integral);
    }
    *worst = worst.max(out.error_estimate);
    if depth >= MAX_QUADRATURE_SPLITS {
        return None;
    }
    let mid = 0.5 * (a + b);
    let left = adaptive(f, a, mid, 0.5 * tol, depth + 1, worst)?;
    let right = adaptive(f, mid, b, 0.5 * tol, depth + 1, worst)?;
    Some(left + right)
}

/// Root of a strictly increasing `f(y) = x`: geometric bracketing from `y = 0`,
/// bisection to a coarse bracket, then safeguarded secant steps. Returns
/// `None` if no bracket is found.
fn invert_increasing<F>(f: F, x: f64) -> Option<Result<f64>>
where
    F: Fn(f64) -> Result<f64>,
{
    let g = |y: f64| f(y).map(|v| v - x);
    let at_zero = match g(0.0) {
        Ok(v) => v,
        Err(e) => return Some(Err(e)),
    };
    if at_zero == 0.0 {
        return Some(Ok(0.0));
    }
    let direction = if at_zero < 0.0 { 1.0 } else { -1.0 };
    let mut near = (0.0, at_zero);
    let mut span = 1.0;
    let mut far = None;
    for _ in 0..MAX_BRACKET_EXPANSIONS {
        let y = direction * span;
        let v = match g(y) {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };
        if v == 0.0 {
            return Some(Ok(y));
        }
        if v.signum() != at_zero.signum() {
            far = Some((y, v));
            break;
        }
        near = (y, v);
        span *= 2.0;
    }
    let far = far?;
    let (mut lo, mut hi) = if near.0 < far.0 { (near, far) } else { (far, near) };

    let scale = |y: f64| 1.0 + y.abs();
    while hi.0 - lo.0 > 1e-3 * scale(lo.0) {
        let mid = 0.5 * (lo.0 + hi.0);
        let v = match g(mid) {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };
        if v == 0.0 {
            return Some(Ok(mid));
        }
        if v < 0.0 {
            lo = (mid, v);
        } else {
            hi = (mid, v);
        }
    }
    for _ in 0..200 {
        let width = hi.0 - lo.0;
        if width <= 4.0 * f64::EPSILON * scale(lo.0) {
            break;
        }
        let mut y = lo.0 - lo.1 * width / (hi.1 - lo.1);
        if !(y > lo.0 && y < hi.0) {
            y = 0.5 * (lo.0 + hi.0);
        }
        let v = match g(y) {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };
        if v == 0.0 || v.abs() <= 1e-15 * scale(x) {
            return Some(Ok(y));
        }
        if v < 0.0 {
            lo = (y, v);
        } else {
            hi = (y, v);
        }
        // keep the bracket shrinking when the secant stalls on one side
        if hi.0 - lo.0 > 0.5 * width {
            let mid = 0.5 * (lo.0 + hi.0);
            match g(mid) {
                Ok(v) if v < 0.0 => lo = (mid, v),
                Ok(v) => hi = (mid, v),
                Err(e) => return Some(Err(e)),
            }
        }
    }
    Some(Ok(if lo.1.abs() < hi.1.abs() { lo.0 } else { hi.0 }))
}

/// A process `dX = mu(t, X) dt + dW`, `X(0) = x0`.
#[derive(Clone)]
pub struct UnitDiffusion {
    mu: DriftFn,
    partials: Option<[Coefficient; 3]>,
    step_scale: f64,
    x0: f64,
    exact: Option<ExactTransition>,
}

impl fmt::Debug for UnitDiffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UnitDiffusion")
            .field("x0", &self.x0)
            .field("exact_partials", &self.partials.is_some())
            .field("exact", &self.exact)
            .finish_non_exhaustive()
    }
}

impl UnitDiffusion {
    pub fn new(mu: DriftFn) -> Self {
        UnitDiffusion { mu, partials: None, step_scale: f64::EPSILON.cbrt(), x0: 0.0, exact: None }
    }

    pub fn brownian() -> Self {
        let zero: Coefficient = Arc::new(|_, _| 0.0);
        let mut u = Self::new(Arc::new(|_, _| Ok(0.0))).with_partials(zero.clone(), zero.clone(), zero);
        u.exact = Some(ExactTransition::Brownian);
        u
    }

    /// `dX = -theta X dt + dW`.
    pub fn ou(theta: f64) -> Self {
        let zero: Coefficient = Arc::new(|_, _| 0.0);
        let mut u = Self::new(Arc::new(move |_, x| Ok(-theta * x))).with_partials(
            zero.clone(),
            Arc::new(move |_, _| -theta),
            zero,
        );
        u.exact = Some(ExactTransition::OrnsteinUhlenbeck { theta });
        u
    }

    /// Exact partials `(d_t mu, d_x mu, d_xx mu)`.
    pub fn with_partials(mut self, dt: Coefficient, dx: Coefficient, dxx: Coefficient) -> Self {
        self.partials = Some([dt, dx, dxx]);
        self
    }

    pub fn with_step_scale(mut self, step_scale: f64) -> Self {
        self.step_scale = step_scale;
        self
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn exact_transition(&self) -> Option<ExactTransition> {
        self.exact
    }

    pub fn has_exact_partials(&self) -> bool {
        self.partials.is_some()
    }

    pub fn mu(&self, t: f64, x: f64) -> Result<f64> {
        (self.mu)(t, x)
    }

    pub fn mu_dt(&self, t: f64, x: f64) -> Result<f64> {
        match &self.partials {
            Some(p) => Ok(p[0](t, x)),
            None => central_first(|s| self.mu(s, x), t, self.step_scale),
        }
    }

    pub fn mu_dx(&self, t: f64, x: f64) -> Result<f64> {
        match &self.partials {
            Some(p) => Ok(p[1](t, x)),
            None => central_first(|u| self.mu(t, u), x, self.step_scale),
        }
    }

    pub fn mu_dxx(&self, t: f64, x: f64) -> Result<f64> {
        match &self.partials {
            Some(p) => Ok(p[2](t, x)),
            None => central_second(|u| self.mu(t, u), x, self.step_scale),
        }
    }

    /// Same drift with partials forced to central differences.
    pub fn finite_difference(&self) -> Self {
        UnitDiffusion { partials: None, ..self.clone() }
    }
}

/// Transformed boundaries `g-` and `g+` of the unit-diffusion process.
#[derive(Clone)]
pub struct BoundaryPair {
    lower: Option<BoundaryFn>,
    upper: BoundaryFn,
    gap_inf: f64,
    x0: f64,
}

impl fmt::Debug for BoundaryPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryPair")
            .field("two_sided", &self.lower.is_some())
            .field("gap_inf", &self.gap_inf)
            .field("x0", &self.x0)
            .finish_non_exhaustive()
    }
}

impl BoundaryPair {
    /// Validate `(lower, upper)` for a process started at `x0` on a grid of
    /// `10 * n_max + 1` points of `[0, 1]`.
    pub fn new(lower: Option<BoundaryFn>, upper: BoundaryFn, x0: f64, n_max: usize) -> Result<Self> {
        let upper0 = upper(0.0);
        if !(upper0 > x0) {
            return Err(BcpError::BoundaryClassViolation(format!(
                "upper boundary at t = 0 is {upper0}, must exceed x0 = {x0}"
            )));
        }
        if let Some(lower) = &lower {
            let lower0 = lower(0.0);
            if !(lower0 < x0) {
                return Err(BcpError::BoundaryClassViolation(format!(
                    "lower boundary at t = 0 is {lower0}, must lie below x0 = {x0}"
                )));
            }
        }
        let points = 10 * n_max.max(1);
        let mut gap_inf = f64::INFINITY;
        for i in 0..=points {
            let t = i as f64 / points as f64;
            let up = upper(t);
            if !up.is_finite() {
                return Err(BcpError::BoundaryClassViolation(format!("upper boundary not finite at t = {t}")));
            }
            if let Some(lower) = &lower {
                let low = lower(t);
                if !low.is_finite() {
                    return Err(BcpError::BoundaryClassViolation(format!("lower boundary not finite at t = {t}")));
                }
                gap_inf = gap_inf.min(up - low);
            }
        }
        if !(gap_inf > 0.0) {
            return Err(BcpError::BoundaryClassViolation(format!("estimated inf of the gap is {gap_inf}")));
        }
        Ok(BoundaryPair { lower, upper, gap_inf, x0 })
    }

    pub fn two_sided(lower: BoundaryFn, upper: BoundaryFn, x0: f64, n_max: usize) -> Result<Self> {
        Self::new(Some(lower), upper, x0, n_max)
    }

    pub fn one_sided(upper: BoundaryFn, x0: f64, n_max: usize) -> Result<Self> {
        Self::new(None, upper, x0, n_max)
    }

    /// Constant boundaries `lower < x0 < upper`.
    pub fn flat(lower: f64, upper: f64, x0: f64) -> Result<Self> {
        Self::two_sided(Arc::new(move |_| lower), Arc::new(move |_| upper), x0, 1)
    }

    pub fn upper(&self, t: f64) -> f64 {
        (self.upper)(t)
    }

    /// Lower boundary, `-inf` for one-sided pairs.
    pub fn lower(&self, t: f64) -> f64 {
        self.lower.as_ref().map_or(f64::NEG_INFINITY, |g| g(t))
    }

    pub fn is_two_sided(&self) -> bool {
        self.lower.is_some()
    }

    /// Estimated `inf (g+ - g-)`; `+inf` for one-sided pairs.
    pub fn gap_inf(&self) -> f64 {
        self.gap_inf
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }
}
