//! Time partitions and boundary-anchored space lattices.
//!
//! At step `k` the lattice is `{ g+(t_k) - j h_k : j integer }`, where `h_k`
//! divides the boundary gap exactly so that both boundaries are lattice
//! points. Only interior states (strictly between the boundaries) are stored,
//! as an index range on `j`.

use crate::error::{BcpError, Result};
use crate::model::BoundaryPair;

/// Partition `0 = t_0 < t_1 < ... < t_n = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    dt: Vec<f64>,
    eta1: f64,
    eta2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridKind {
    Uniform,
    Custom(Vec<f64>),
}

impl TimeGrid {
    /// Uniform grid with `n >= 2` steps.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::build(n, GridKind::Uniform)
    }

    /// Build a partition; for `Custom` the times must run strictly
    /// increasing from 0 to 1 and `n` must equal the number of intervals.
    pub fn build(n: usize, kind: GridKind) -> Result<Self> {
        if n < 2 {
            return Err(BcpError::GridRegularityViolation(format!("need n >= 2 steps, got {n}")));
        }
        match kind {
            GridKind::Uniform => {
                let times = (0..=n).map(|k| k as f64 / n as f64).collect();
                Ok(TimeGrid { times, dt: vec![1.0 / n as f64; n], eta1: 1.0, eta2: 1.0 })
            }
            GridKind::Custom(times) => {
                if times.len() != n + 1 {
                    return Err(BcpError::GridRegularityViolation(format!(
                        "expected {} time points for n = {n}, got {}",
                        n + 1,
                        times.len()
                    )));
                }
                if times[0] != 0.0 || times[n] != 1.0 {
                    return Err(BcpError::GridRegularityViolation("custom grid must start at 0 and end at 1".into()));
                }
                let dt: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
                if dt.iter().any(|&d| !(d > 0.0)) {
                    return Err(BcpError::GridRegularityViolation(
                        "custom grid times must be strictly increasing".into(),
                    ));
                }
                let nf = n as f64;
                let eta1 = nf * dt.iter().cloned().fold(f64::INFINITY, f64::min);
                let eta2 = nf * dt.iter().cloned().fold(0.0, f64::max);
                if !(eta1 > 0.0 && eta1 <= 1.0 + 1e-12 && eta2 >= 1.0 - 1e-12) {
                    return Err(BcpError::GridRegularityViolation(format!(
                        "regularity constants eta1 = {eta1}, eta2 = {eta2} out of range"
                    )));
                }
                let total: f64 = dt.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(BcpError::GridRegularityViolation(format!("steps sum to {total}")));
                }
                Ok(TimeGrid { times, dt, eta1, eta2 })
            }
        }
    }

    pub fn n(&self) -> usize {
        self.dt.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `t_k` for `k = 0..=n`.
    pub fn t(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// `dt_k = t_k - t_{k-1}` for `k = 1..=n`.
    pub fn dt(&self, k: usize) -> f64 {
        self.dt[k - 1]
    }

    pub fn eta1(&self) -> f64 {
        self.eta1
    }

    pub fn eta2(&self) -> f64 {
        self.eta2
    }
}

/// Density multiplier `gamma` and exponent `delta` of the lattice steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeParams {
    pub gamma: f64,
    pub delta: f64,
}

impl LatticeParams {
    pub fn new(gamma: f64, delta: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(BcpError::invalid("grid", format!("gamma must be positive, got {gamma}")));
        }
        if !(0.0..=0.5).contains(&delta) {
            return Err(BcpError::invalid("grid", format!("delta must lie in [0, 1/2], got {delta}")));
        }
        Ok(LatticeParams { gamma, delta })
    }
}

/// Result of [`lattice_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSize {
    pub w: f64,
    pub h: f64,
    /// `gap / h`, an exact integer.
    pub count: usize,
}

/// Lattice step for step `k` of `n`: with `e = 1/2 + delta` for `k < n` and
/// `e = 1` at `k = n`, `v = gap / dt^e`, `w = v / floor(gamma v)` and
/// `h = w dt^e = gap / floor(gamma v)`.
pub fn lattice_step(k: usize, n: usize, gap: f64, dt: f64, params: LatticeParams) -> Result<StepSize> {
    if !(gap > 0.0) || !(dt > 0.0) {
        return Err(BcpError::invalid("grid", format!("need gap > 0 and dt > 0 (gap = {gap}, dt = {dt})")));
    }
    let exponent = if k < n { 0.5 + params.delta } else { 1.0 };
    let v = gap / dt.powf(exponent);
    let scaled = params.gamma * v;
    let count = scaled.floor();
    if count < 1.0 {
        return Err(BcpError::LatticeTooCoarse { step: k, scaled });
    }
    Ok(StepSize { w: v / count, h: gap / count, count: count as usize })
}

/// Which state space the ladder builds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LadderMode {
    /// States strictly between `g-` and `g+`.
    TwoSided,
    /// No lower boundary; states truncated to `(floor, g+)` with an absorbing
    /// state collecting everything at or below `floor`.
    OneSided { floor: f64 },
    /// Two-sided, with the final grid replaced by an equally spaced grid on `[a, b]`.
    Terminal { a: f64, b: f64 },
}

/// Interior states of one step: `anchor - (first + i) h` for `i < len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLattice {
    pub anchor: f64,
    pub h: f64,
    pub w: f64,
    /// Number of lattice steps between the anchor and the lower end of the strip.
    pub count: usize,
    pub first: usize,
    pub len: usize,
}

impl StepLattice {
    pub fn state(&self, i: usize) -> f64 {
        self.anchor - (self.first + i) as f64 * self.h
    }

    pub fn states(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.state(i)).collect()
    }

    /// Lattice index `j` of interior state `i`.
    pub fn index(&self, i: usize) -> usize {
        self.first + i
    }
}

/// Per-step lattices for a whole time grid.
#[derive(Debug, Clone)]
pub struct LatticeLadder {
    grid: TimeGrid,
    params: LatticeParams,
    mode: LadderMode,
    x0: f64,
    upper: Vec<f64>,
    lower: Vec<f64>,
    steps: Vec<StepLattice>,
}

fn same_point(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

impl LatticeLadder {
    pub fn build(grid: &TimeGrid, bounds: &BoundaryPair, params: LatticeParams, mode: LadderMode) -> Result<Self> {
        let n = grid.n();
        let x0 = bounds.x0();
        match mode {
            LadderMode::TwoSided | LadderMode::Terminal { .. } if !bounds.is_two_sided() => {
                return Err(BcpError::invalid("grid", "two-sided and terminal modes need a lower boundary"));
            }
            LadderMode::OneSided { floor } => {
                if bounds.is_two_sided() {
                    return Err(BcpError::invalid("grid", "one-sided mode needs g- = -inf"));
                }
                if !(floor < x0) {
                    return Err(BcpError::invalid("grid", format!("absorbing level {floor} must lie below x0 = {x0}")));
                }
            }
            _ => {}
        }

        let upper: Vec<f64> = grid.times().iter().map(|&t| bounds.upper(t)).collect();
        let lower: Vec<f64> = match mode {
            LadderMode::OneSided { .. } => vec![f64::NEG_INFINITY; n + 1],
            _ => grid.times().iter().map(|&t| bounds.lower(t)).collect(),
        };

        if let LadderMode::Terminal { a, b } = mode {
            let tol = 1e-12 * upper[n].abs().max(lower[n].abs()).max(1.0);
            if !(a < b && a >= lower[n] - tol && b <= upper[n] + tol) {
                return Err(BcpError::invalid(
                    "grid",
                    format!("terminal interval [{a}, {b}] must lie within [{}, {}]", lower[n], upper[n]),
                ));
            }
        }

        let mut steps = Vec::with_capacity(n);
        for k in 1..=n {
            let top = upper[k];
            let bottom = match mode {
                LadderMode::OneSided { floor } => floor,
                _ => lower[k],
            };
            let gap = top - bottom;
            if !(gap > 0.0) || !gap.is_finite() {
                return Err(BcpError::BoundaryClassViolation(format!(
                    "strip is empty at t = {} (upper {top}, lower {bottom})",
                    grid.t(k)
                )));
            }
            let size = lattice_step(k, n, gap, grid.dt(k), params)?;
            let step = match mode {
                LadderMode::Terminal { a, b } if k == n => {
                    let scaled = params.gamma * (b - a) / grid.dt(n);
                    let count = scaled.floor();
                    if count < 1.0 {
                        return Err(BcpError::LatticeTooCoarse { step: k, scaled });
                    }
                    let count = count as usize;
                    // grid points on the boundary itself carry no taboo mass
                    let first = usize::from(same_point(b, top));
                    let last = if same_point(a, bottom) { count - 1 } else { count };
                    if last < first {
                        return Err(BcpError::EmptyInterior(k));
                    }
                    StepLattice { anchor: b, h: (b - a) / count as f64, w: size.w, count, first, len: last - first + 1 }
                }
                _ => {
                    if size.count < 2 {
                        return Err(BcpError::EmptyInterior(k));
                    }
                    StepLattice { anchor: top, h: size.h, w: size.w, count: size.count, first: 1, len: size.count - 1 }
                }
            };
            steps.push(step);
        }
        Ok(LatticeLadder { grid: grid.clone(), params, mode, x0, upper, lower, steps })
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn params(&self) -> LatticeParams {
        self.params
    }

    pub fn mode(&self) -> LadderMode {
        self.mode
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    /// Absorbing level in one-sided mode.
    pub fn floor(&self) -> Option<f64> {
        match self.mode {
            LadderMode::OneSided { floor } => Some(floor),
            _ => None,
        }
    }

    /// `g+(t_k)`, `k = 0..=n`.
    pub fn upper(&self, k: usize) -> f64 {
        self.upper[k]
    }

    /// `g-(t_k)`, `-inf` in one-sided mode.
    pub fn lower(&self, k: usize) -> f64 {
        self.lower[k]
    }

    /// Lattice of step `k = 1..=n`.
    pub fn step(&self, k: usize) -> &StepLattice {
        &self.steps[k - 1]
    }

    /// Interior states at step `k`; step 0 is `{x0}`.
    pub fn interior(&self, k: usize) -> Vec<f64> {
        if k == 0 {
            vec![self.x0]
        } else {
            self.step(k).states()
        }
    }

    pub fn interior_len(&self, k: usize) -> usize {
        if k == 0 {
            1
        } else {
            self.step(k).len
        }
    }
}
