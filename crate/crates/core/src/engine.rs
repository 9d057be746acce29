//! Taboo transition matrices and the forward sweep.
//!
//! Stage `k` maps mass on the interior states of step `k - 1` to the interior
//! states of step `k`. Entry `(x, y)` is the Gaussian scheme density at `y`
//! times the lattice step, damped by the probability that a Brownian bridge
//! between `x` and `y` stays inside the linearly interpolated boundaries.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::bridge::{self, BridgeMethod, BridgeSegment};
use crate::error::{BcpError, Result};
use crate::grid::{LadderMode, LatticeLadder, StepLattice};
use crate::model::UnitDiffusion;
use crate::taylor::{step_moments, SchemeKind};

/// Largest `(y - m)^2 / (2 s^2)` for which the Gaussian density is not zero in `f64`.
const DENSITY_EXPONENT_LIMIT: f64 = 746.0;

/// Lattice sums are truncated at this many standard deviations from the mean.
const TRUNCATION_SIGMAS: f64 = 10.0;

/// Below this value of `2 pi^2 s^2 / h^2` the normalizer is summed on the lattice directly.
const DUAL_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineOptions {
    pub scheme: SchemeKind,
    /// Divide each row by its normalizer `C(x)`.
    pub normalized: bool,
    /// Apply the Brownian bridge correction.
    pub bridge: bool,
    pub bridge_method: BridgeMethod,
    /// Drop entries whose Gaussian weight falls below this value.
    pub cutoff: Option<f64>,
    pub keep_surfaces: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            scheme: SchemeKind::Taylor2,
            normalized: false,
            bridge: true,
            bridge_method: BridgeMethod::Sum,
            cutoff: None,
            keep_surfaces: false,
        }
    }
}

/// What the final mass vector is integrated against.
#[derive(Clone, Default)]
pub enum Terminal {
    #[default]
    Ones,
    /// `1{a <= y <= b}`.
    Indicator {
        a: f64,
        b: f64,
    },
    Payoff(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Terminal {
    fn value(&self, y: f64) -> f64 {
        match self {
            Terminal::Ones => 1.0,
            Terminal::Indicator { a, b } => f64::from(*a <= y && y <= *b),
            Terminal::Payoff(f) => f(y),
        }
    }
}

impl fmt::Debug for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::Ones => f.write_str("Ones"),
            Terminal::Indicator { a, b } => write!(f, "Indicator[{a}, {b}]"),
            Terminal::Payoff(_) => f.write_str("Payoff(..)"),
        }
    }
}

/// One row of a stage: nonzero entries start at column `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRow {
    pub start: usize,
    pub values: Vec<f64>,
    /// Entry in the absorbing column (one-sided mode).
    pub absorbed: f64,
    /// `C(x)` for this row; 1 for the absorbing row.
    pub normalizer: f64,
    pub normalizer_deviation: f64,
}

impl StageRow {
    pub fn sum(&self) -> f64 {
        self.values.iter().sum::<f64>() + self.absorbed
    }
}

/// Banded taboo transition matrix for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionStage {
    pub k: usize,
    /// Interior states of step `k` (columns, excluding the absorbing one).
    pub cols: usize,
    pub rows: Vec<StageRow>,
    /// Whether the last row and an extra column form an absorbing state.
    pub absorbing: bool,
    pub normalized: bool,
}

impl TransitionStage {
    /// Number of rows, counting the absorbing row.
    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    /// Number of columns, counting the absorbing column.
    pub fn col_count(&self) -> usize {
        self.cols + usize::from(self.absorbing)
    }

    /// Dense entry lookup; column `cols` is the absorbing column.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let row = &self.rows[i];
        if self.absorbing && j == self.cols {
            return row.absorbed;
        }
        if j < row.start {
            return 0.0;
        }
        row.values.get(j - row.start).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub k: usize,
    pub t: f64,
    pub h: f64,
    pub states: Vec<f64>,
    pub mass: Vec<f64>,
    /// Mass held in the absorbing state (one-sided mode).
    pub absorbed: Option<f64>,
}

impl Surface {
    pub fn density(&self) -> Vec<f64> {
        self.mass.iter().map(|m| m / self.h).collect()
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum::<f64>() + self.absorbed.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Largest `|C(x) - 1|` over all rows.
    pub max_normalizer_deviation: f64,
    /// `max(1, max C(x))`.
    pub rho: f64,
    pub lemma_bound: f64,
    pub drop_bound: f64,
    /// Total mass after each step, `k = 0..=n`.
    pub total_mass: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub probability: f64,
    pub surfaces: Option<Vec<Surface>>,
    pub diagnostics: Diagnostics,
}

/// `(M, c0)` with `M = gamma^2 pi^2 / (4 eta2^(2 delta))` and `c0 = 2 / (1 - exp(-M))`.
pub fn lemma_constants(gamma: f64, delta: f64, eta2: f64) -> (f64, f64) {
    let m = gamma * gamma * PI * PI / (4.0 * eta2.powf(2.0 * delta));
    (m, 2.0 / -(-m).exp_m1())
}

/// `c0 exp(-M n^(2 delta))`, the bound on `|C(x) - 1|`.
pub fn normalizer_lemma_bound(n: usize, delta: f64, gamma: f64, eta2: f64) -> f64 {
    log_normalizer_lemma_bound(n, delta, gamma, eta2).exp()
}

pub fn log_normalizer_lemma_bound(n: usize, delta: f64, gamma: f64, eta2: f64) -> f64 {
    let (m, c0) = lemma_constants(gamma, delta, eta2);
    c0.ln() - m * (n as f64).powf(2.0 * delta)
}

/// `c0 n rho^(n-1) exp(-M n^(2 delta))`, the bound on the effect of dropping
/// the normalizers from the sweep.
pub fn drop_normalizer_bound(n: usize, delta: f64, gamma: f64, eta2: f64, rho: f64) -> f64 {
    log_drop_normalizer_bound(n, delta, gamma, eta2, rho).exp()
}

pub fn log_drop_normalizer_bound(n: usize, delta: f64, gamma: f64, eta2: f64, rho: f64) -> f64 {
    let nf = n as f64;
    log_normalizer_lemma_bound(n, delta, gamma, eta2) + nf.ln() + (nf - 1.0) * rho.max(1.0).ln()
}

/// Leading error of the unnormalized sweep when `delta = 0`: `2 n exp(-2 pi^2 gamma^2)`.
pub fn leading_drop_error(n: usize, gamma: f64) -> f64 {
    2.0 * n as f64 * (-2.0 * PI * PI * gamma * gamma).exp()
}

#[inline]
fn gaussian(y: f64, mean: f64, sd: f64) -> f64 {
    let z = (y - mean) / sd;
    let e = 0.5 * z * z;
    if e > DENSITY_EXPONENT_LIMIT {
        0.0
    } else {
        (-e).exp() / (sd * (2.0 * PI).sqrt())
    }
}

/// `C - 1` for the lattice `anchor - j h`, `j` over all integers, and a
/// Gaussian with the given mean and standard deviation.
///
/// For fine lattices the deviation is far below rounding of the lattice sum,
/// so it is evaluated from the dual series
/// `2 sum_l exp(-2 pi^2 l^2 s^2 / h^2) cos(2 pi l (m - anchor) / h)`.
pub fn lattice_deviation(mean: f64, sd: f64, anchor: f64, h: f64) -> f64 {
    let a = 2.0 * PI * PI * sd * sd / (h * h);
    if a < DUAL_THRESHOLD {
        return lattice_sum(mean, sd, anchor, h) - 1.0;
    }
    let phase = 2.0 * PI * ((mean - anchor) / h).rem_euclid(1.0);
    let mut total = 0.0;
    for l in 1.. {
        let lf = l as f64;
        let e = a * lf * lf;
        if e > DENSITY_EXPONENT_LIMIT {
            break;
        }
        total += 2.0 * (-e).exp() * (lf * phase).cos();
    }
    total
}

/// `ln |C - 1|`, accurate even where `C - 1` underflows.
pub fn lattice_log_deviation(mean: f64, sd: f64, anchor: f64, h: f64) -> f64 {
    let a = 2.0 * PI * PI * sd * sd / (h * h);
    if a < DUAL_THRESHOLD {
        return (lattice_sum(mean, sd, anchor, h) - 1.0).abs().ln();
    }
    let phase = 2.0 * PI * ((mean - anchor) / h).rem_euclid(1.0);
    // factor out the leading exp(-a)
    let mut bracket = phase.cos();
    for l in 2.. {
        let lf = l as f64;
        let e = a * (lf * lf - 1.0);
        if e > DENSITY_EXPONENT_LIMIT {
            break;
        }
        bracket += (-e).exp() * (lf * phase).cos();
    }
    -a + (2.0 * bracket.abs()).ln()
}

/// Direct trapezoidal sum `sum_j phi(anchor - j h) h` over `mean +- 10 sd`.
pub fn lattice_sum(mean: f64, sd: f64, anchor: f64, h: f64) -> f64 {
    let r = TRUNCATION_SIGMAS * sd;
    let j_lo = ((anchor - mean - r) / h).ceil() as i64;
    let j_hi = ((anchor - mean + r) / h).floor() as i64;
    (j_lo..=j_hi).map(|j| gaussian(anchor - j as f64 * h, mean, sd) * h).sum()
}

/// Gaussian moments of the scheme step from `x` into step `k`.
fn moments(u: &UnitDiffusion, ladder: &LatticeLadder, k: usize, x: f64, scheme: SchemeKind) -> Result<(f64, f64)> {
    let grid = ladder.grid();
    let m = step_moments(u, grid.t(k - 1), grid.dt(k), x, scheme)?;
    Ok((x + m.mean_shift, m.std_dev()))
}

fn check_step(ladder: &LatticeLadder, k: usize) -> Result<()> {
    if k == 0 || k > ladder.n() {
        return Err(BcpError::invalid("engine", format!("step {k} outside 1..={}", ladder.n())));
    }
    Ok(())
}

/// Normalizer `C(x)` of the step-`k` lattice for a move from `x`.
pub fn normalizer(u: &UnitDiffusion, ladder: &LatticeLadder, k: usize, x: f64, scheme: SchemeKind) -> Result<f64> {
    Ok(1.0 + normalizer_deviation(u, ladder, k, x, scheme)?)
}

pub fn normalizer_deviation(
    u: &UnitDiffusion,
    ladder: &LatticeLadder,
    k: usize,
    x: f64,
    scheme: SchemeKind,
) -> Result<f64> {
    check_step(ladder, k)?;
    let (mean, sd) = moments(u, ladder, k, x, scheme)?;
    let s = ladder.step(k);
    Ok(lattice_deviation(mean, sd, s.anchor, s.h))
}

pub fn normalizer_log_deviation(
    u: &UnitDiffusion,
    ladder: &LatticeLadder,
    k: usize,
    x: f64,
    scheme: SchemeKind,
) -> Result<f64> {
    check_step(ladder, k)?;
    let (mean, sd) = moments(u, ladder, k, x, scheme)?;
    let s = ladder.step(k);
    Ok(lattice_log_deviation(mean, sd, s.anchor, s.h))
}

/// `C(x)` by direct summation over the lattice.
pub fn normalizer_lattice_sum(
    u: &UnitDiffusion,
    ladder: &LatticeLadder,
    k: usize,
    x: f64,
    scheme: SchemeKind,
) -> Result<f64> {
    check_step(ladder, k)?;
    let (mean, sd) = moments(u, ladder, k, x, scheme)?;
    let s = ladder.step(k);
    Ok(lattice_sum(mean, sd, s.anchor, s.h))
}

struct StageContext<'a> {
    u: &'a UnitDiffusion,
    ladder: &'a LatticeLadder,
    k: usize,
    step: &'a StepLattice,
    segment: BridgeSegment,
    one_sided: bool,
    options: &'a EngineOptions,
}

impl StageContext<'_> {
    fn kill(&self, x: f64, y: f64) -> Result<f64> {
        if !self.options.bridge {
            return Ok(1.0);
        }
        let pi = if self.one_sided {
            bridge::one_sided_upper(x, y, &self.segment)?
        } else {
            bridge::two_sided(x, y, &self.segment, self.options.bridge_method)?
        };
        Ok(1.0 - pi)
    }

    /// Half-width of the band of columns kept around the mean.
    fn radius(&self, sd: f64) -> f64 {
        let mut e = DENSITY_EXPONENT_LIMIT;
        if let Some(cut) = self.options.cutoff {
            e = e.min((self.step.h / (sd * (2.0 * PI).sqrt() * cut)).ln());
        }
        if e <= 0.0 {
            0.0
        } else {
            sd * (2.0 * e).sqrt()
        }
    }

    fn row(&self, x: f64) -> Result<StageRow> {
        let (mean, sd) = moments(self.u, self.ladder, self.k, x, self.options.scheme)?;
        let s = self.step;
        let deviation = lattice_deviation(mean, sd, s.anchor, s.h);
        let c = 1.0 + deviation;
        let scale = if self.options.normalized { s.h / c } else { s.h };

        let r = self.radius(sd);
        let lo = ((s.anchor - mean - r) / s.h).ceil().max(s.first as f64);
        let hi = ((s.anchor - mean + r) / s.h).floor().min((s.first + s.len) as f64 - 1.0);
        let (start, values) = if lo > hi {
            (0, Vec::new())
        } else {
            let (lo, hi) = (lo as usize, hi as usize);
            let mut values = Vec::with_capacity(hi - lo + 1);
            for j in lo..=hi {
                let y = s.anchor - j as f64 * s.h;
                let p = gaussian(y, mean, sd);
                values.push(if p == 0.0 { 0.0 } else { p * scale * self.kill(x, y)? });
            }
            (lo - s.first, values)
        };

        let mut absorbed = 0.0;
        if self.one_sided {
            let floor_j = s.count;
            let bottom = mean - TRUNCATION_SIGMAS * sd;
            let last = ((s.anchor - bottom) / s.h).floor();
            if last >= floor_j as f64 {
                for j in floor_j..=last as usize {
                    let y = s.anchor - j as f64 * s.h;
                    let p = gaussian(y, mean, sd);
                    if p > 0.0 {
                        absorbed += p * scale * self.kill(x, y)?;
                    }
                }
            }
        }
        Ok(StageRow { start, values, absorbed, normalizer: c, normalizer_deviation: deviation })
    }
}

/// Transition matrix from step `k - 1` to step `k`.
pub fn build_stage(
    u: &UnitDiffusion,
    ladder: &LatticeLadder,
    k: usize,
    options: &EngineOptions,
) -> Result<TransitionStage> {
    check_step(ladder, k)?;
    options.scheme.check(u)?;
    let one_sided = matches!(ladder.mode(), LadderMode::OneSided { .. });
    let dt = ladder.grid().dt(k);
    let segment = if one_sided {
        BridgeSegment::upper_only(dt, (ladder.upper(k - 1), ladder.upper(k)))?
    } else {
        BridgeSegment::new(dt, (ladder.lower(k - 1), ladder.lower(k)), (ladder.upper(k - 1), ladder.upper(k)))?
    };
    let ctx = StageContext { u, ladder, k, step: ladder.step(k), segment, one_sided, options };
    let states = ladder.interior(k - 1);
    let mut rows = states.par_iter().map(|&x| ctx.row(x)).collect::<Result<Vec<_>>>()?;
    if one_sided {
        rows.push(StageRow { start: 0, values: Vec::new(), absorbed: 1.0, normalizer: 1.0, normalizer_deviation: 0.0 });
    }
    Ok(TransitionStage { k, cols: ctx.step.len, rows, absorbing: one_sided, normalized: options.normalized })
}

struct Sweeper<'a> {
    ladder: &'a LatticeLadder,
    mass: Vec<f64>,
    absorbed: Option<f64>,
    surfaces: Option<Vec<Surface>>,
    total_mass: Vec<f64>,
    max_deviation: f64,
    max_normalizer: f64,
}

impl<'a> Sweeper<'a> {
    fn new(ladder: &'a LatticeLadder, keep_surfaces: bool) -> Self {
        let absorbed = ladder.floor().map(|_| 0.0);
        Sweeper {
            ladder,
            mass: vec![1.0],
            absorbed,
            surfaces: keep_surfaces.then(Vec::new),
            total_mass: vec![1.0],
            max_deviation: 0.0,
            max_normalizer: 1.0,
        }
    }

    fn apply(&mut self, stage: &TransitionStage) -> Result<()> {
        let k = self.total_mass.len();
        if stage.k != k {
            return Err(BcpError::DimensionMismatch(format!("expected stage {k}, got stage {}", stage.k)));
        }
        let expected_rows = self.mass.len() + usize::from(self.absorbed.is_some());
        if stage.row_count() != expected_rows || stage.absorbing != self.absorbed.is_some() {
            return Err(BcpError::DimensionMismatch(format!(
                "stage {k} has {} rows, mass vector has {expected_rows} states",
                stage.row_count()
            )));
        }
        let mut next = vec![0.0; stage.cols];
        let mut absorbed = 0.0;
        for (i, row) in stage.rows.iter().enumerate() {
            let v = if i < self.mass.len() { self.mass[i] } else { self.absorbed.unwrap_or(0.0) };
            if row.start + row.values.len() > stage.cols {
                return Err(BcpError::DimensionMismatch(format!(
                    "row {i} of stage {k} overruns {} columns",
                    stage.cols
                )));
            }
            if i < self.mass.len() {
                self.max_deviation = self.max_deviation.max(row.normalizer_deviation.abs());
                self.max_normalizer = self.max_normalizer.max(row.normalizer);
            }
            if v == 0.0 {
                continue;
            }
            for (slot, p) in next[row.start..row.start + row.values.len()].iter_mut().zip(&row.values) {
                *slot += v * p;
            }
            absorbed += v * row.absorbed;
        }
        self.mass = next;
        if self.absorbed.is_some() {
            self.absorbed = Some(absorbed);
        }
        self.total_mass.push(self.mass.iter().sum::<f64>() + self.absorbed.unwrap_or(0.0));
        if let Some(surfaces) = self.surfaces.as_mut() {
            let step = self.ladder.step(k);
            surfaces.push(Surface {
                k,
                t: self.ladder.grid().t(k),
                h: step.h,
                states: step.states(),
                mass: self.mass.clone(),
                absorbed: self.absorbed,
            });
        }
        Ok(())
    }

    fn finish(self, terminal: &Terminal, started: Instant) -> Result<SweepResult> {
        let n = self.ladder.n();
        if self.total_mass.len() != n + 1 {
            return Err(BcpError::DimensionMismatch(format!(
                "{} stages applied for {n} steps",
                self.total_mass.len() - 1
            )));
        }
        let step = self.ladder.step(n);
        let mut probability: f64 = self.mass.iter().enumerate().map(|(i, m)| m * terminal.value(step.state(i))).sum();
        if let (Some(mass), Some(floor)) = (self.absorbed, self.ladder.floor()) {
            probability += mass * terminal.value(floor);
        }
        let params = self.ladder.params();
        let eta2 = self.ladder.grid().eta2();
        let diagnostics = Diagnostics {
            max_normalizer_deviation: self.max_deviation,
            rho: self.max_normalizer,
            lemma_bound: normalizer_lemma_bound(n, params.delta, params.gamma, eta2),
            drop_bound: drop_normalizer_bound(n, params.delta, params.gamma, eta2, self.max_normalizer),
            total_mass: self.total_mass,
            seconds: started.elapsed().as_secs_f64(),
        };
        Ok(SweepResult { probability, surfaces: self.surfaces, diagnostics })
    }
}

/// Forward sweep over prebuilt stages, starting from unit mass at `x0`.
pub fn sweep(
    ladder: &LatticeLadder,
    stages: &[TransitionStage],
    terminal: &Terminal,
    keep_surfaces: bool,
) -> Result<SweepResult> {
    let started = Instant::now();
    let mut sweeper = Sweeper::new(ladder, keep_surfaces);
    for stage in stages {
        sweeper.apply(stage)?;
    }
    sweeper.finish(terminal, started)
}

/// Build each stage and apply it immediately, keeping one stage in memory.
pub fn run(
    u: &UnitDiffusion,
    ladder: &LatticeLadder,
    options: &EngineOptions,
    terminal: &Terminal,
) -> Result<SweepResult> {
    let started = Instant::now();
    let mut sweeper = Sweeper::new(ladder, options.keep_surfaces);
    for k in 1..=ladder.n() {
        let stage = build_stage(u, ladder, k, options)?;
        sweeper.apply(&stage)?;
    }
    sweeper.finish(terminal, started)
}
