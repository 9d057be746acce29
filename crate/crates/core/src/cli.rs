//! Command-line front end: configuration, commands and CSV output.
//!
//! Configuration is a flat `key = value` file; every key can also be given
//! as a `--key value` flag, and flags win.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::bridge::BridgeMethod;
use crate::engine::{self, EngineOptions, SweepResult, Terminal};
use crate::error::BcpError;
use crate::grid::{LadderMode, LatticeLadder, LatticeParams, TimeGrid};
use crate::model::{BoundaryFn, BoundaryPair, UnitDiffusion};
use crate::oracles::{self, McEstimate};
use crate::taylor::SchemeKind;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Computation(BcpError),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Computation(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Computation(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "io: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<BcpError> for CliError {
    fn from(e: BcpError) -> Self {
        CliError::Computation(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Format with 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

macro_rules! config_keys {
    ($( $field:ident : $help:literal ),* $(,)?) => {
        /// Every recognised configuration key.
        pub const KEYS: &[&str] = &[$(stringify!($field)),*];

        #[derive(Debug, Clone, Default, Args)]
        pub struct KeyArgs {
            $(
                #[arg(long = stringify!($field), value_name = "VALUE", help = $help)]
                pub $field: Option<String>,
            )*
        }

        impl KeyArgs {
            fn pairs(&self) -> Vec<(&'static str, String)> {
                let mut out = Vec::new();
                $( if let Some(v) = &self.$field { out.push((stringify!($field), v.clone())); } )*
                out
            }
        }
    };
}

config_keys! {
    model: "brownian | ou",
    theta: "OU mean-reversion rate",
    boundary: "daniels | ou_psi | gpm | flat",
    c: "half-width of the flat strip",
    x0: "starting point",
    mode: "two_sided | one_sided | terminal | payoff",
    floor: "absorbing level for one_sided mode",
    a: "lower end of the terminal interval",
    b: "upper end of the terminal interval",
    payoff: "identity | call | put | digital",
    strike: "payoff strike",
    n: "number of time steps",
    gamma: "lattice density multiplier",
    delta: "lattice exponent in [0, 1/2]",
    scheme: "taylor2 | euler | exact_gaussian",
    normalized: "divide rows by their normalizers (true | false)",
    bridge: "Brownian bridge correction (true | false)",
    bridge_method: "sum | series",
    cutoff: "drop entries below this weight",
    seed: "Monte Carlo seed",
    paths: "Monte Carlo paths",
    mc_steps: "time steps per Monte Carlo path",
    n_list: "comma-separated step counts for study",
    reference: "paper_constant | self_richardson | mc",
    rho: "normalizer ceiling for the bound command",
}

#[derive(Debug, Parser)]
#[command(name = "bcp", version, about = "Boundary crossing probabilities of diffusions by Markov chain approximation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Non-crossing probability for one configuration.
    Compute(CommonArgs),
    /// Convergence study over a list of step counts.
    Study(CommonArgs),
    /// Taboo density surface as CSV.
    Surface(CommonArgs),
    /// Bridge-corrected Monte Carlo estimate.
    Mc(CommonArgs),
    /// Normalizer error bounds.
    Bound(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker thread cap (default: BCP_THREADS or all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// CSV output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub keys: KeyArgs,
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| config_err(format!("line {}: expected key = value", i + 1)))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(config_err(format!("line {}: unknown key '{key}'", i + 1)));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn read_config(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    parse_config_text(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Brownian,
    Ou,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunMode {
    TwoSided,
    OneSided,
    Terminal,
    Payoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    PaperConstant,
    SelfRichardson,
    Mc,
}

/// Validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub theta: f64,
    pub boundary: String,
    pub c: f64,
    pub x0: f64,
    pub mode: RunMode,
    pub floor: f64,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub payoff: Option<String>,
    pub strike: f64,
    pub n: usize,
    pub gamma: f64,
    pub delta: f64,
    pub scheme: SchemeKind,
    pub normalized: bool,
    pub bridge: bool,
    pub bridge_method: BridgeMethod,
    pub cutoff: Option<f64>,
    pub seed: u64,
    pub paths: u64,
    pub mc_steps: Option<usize>,
    pub n_list: Vec<usize>,
    pub reference: Reference,
    pub rho: f64,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| config_err(format!("{key} = '{value}': {e}")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(config_err(format!("{key} = '{value}': expected true or false"))),
    }
}

impl RunConfig {
    pub fn from_map(map: &BTreeMap<String, String>) -> CliResult<Self> {
        if let Some(key) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(config_err(format!("unknown key '{key}'")));
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let num = |k: &str, default: f64| -> CliResult<f64> {
            match get(k) {
                Some(v) => {
                    let x: f64 = parse_value(k, v)?;
                    if x.is_finite() {
                        Ok(x)
                    } else {
                        Err(config_err(format!("{k} must be finite")))
                    }
                }
                None => Ok(default),
            }
        };
        let opt_num = |k: &str| -> CliResult<Option<f64>> { get(k).map(|v| parse_value::<f64>(k, v)).transpose() };

        let boundary = get("boundary").unwrap_or("daniels").to_string();
        if !["daniels", "ou_psi", "gpm", "flat"].contains(&boundary.as_str()) {
            return Err(config_err(format!("unknown boundary '{boundary}' (daniels | ou_psi | gpm | flat)")));
        }
        let model = match get("model").unwrap_or(if boundary == "ou_psi" { "ou" } else { "brownian" }) {
            "brownian" => ModelKind::Brownian,
            "ou" => ModelKind::Ou,
            other => return Err(config_err(format!("unknown model '{other}' (brownian | ou)"))),
        };
        let mode = match get("mode").unwrap_or(if boundary == "daniels" { "one_sided" } else { "two_sided" }) {
            "two_sided" => RunMode::TwoSided,
            "one_sided" => RunMode::OneSided,
            "terminal" => RunMode::Terminal,
            "payoff" => RunMode::Payoff,
            other => return Err(config_err(format!("unknown mode '{other}'"))),
        };
        let one_sided_boundary = boundary == "daniels";
        if one_sided_boundary != (mode == RunMode::OneSided) {
            return Err(config_err(format!("boundary '{boundary}' is not compatible with this mode")));
        }

        let n: usize = parse_value("n", get("n").unwrap_or("256"))?;
        if n < 2 {
            return Err(config_err("n must be at least 2"));
        }
        let gamma = num("gamma", 2.0)?;
        if gamma <= 0.0 {
            return Err(config_err("gamma must be positive"));
        }
        let delta = num("delta", 0.0)?;
        if !(0.0..=0.5).contains(&delta) {
            return Err(config_err(format!("delta must lie in [0, 1/2], got {delta}")));
        }
        let c = num("c", 1.0)?;
        if c <= 0.0 {
            return Err(config_err("c must be positive"));
        }
        let cutoff = opt_num("cutoff")?;
        if let Some(cut) = cutoff {
            if !(cut > 0.0 && cut < 1.0) {
                return Err(config_err("cutoff must lie in (0, 1)"));
            }
        }
        let n_list: Vec<usize> = match get("n_list") {
            Some(v) => v.split(',').map(|s| parse_value("n_list", s.trim())).collect::<CliResult<_>>()?,
            None => vec![16, 32, 64, 128, 256],
        };
        if n_list.iter().any(|&m| m < 2) {
            return Err(config_err("n_list entries must be at least 2"));
        }
        let reference = match get("reference").unwrap_or("paper_constant") {
            "paper_constant" => Reference::PaperConstant,
            "self_richardson" => Reference::SelfRichardson,
            "mc" => Reference::Mc,
            other => return Err(config_err(format!("unknown reference '{other}'"))),
        };
        let payoff = get("payoff").map(str::to_string);
        if let Some(p) = &payoff {
            if !["identity", "call", "put", "digital"].contains(&p.as_str()) {
                return Err(config_err(format!("unknown payoff '{p}'")));
            }
        }
        if mode == RunMode::Payoff && payoff.is_none() {
            return Err(config_err("mode = payoff needs a payoff key"));
        }
        let mc_steps = get("mc_steps").map(|v| parse_value::<usize>("mc_steps", v)).transpose()?;
        let config = RunConfig {
            model,
            theta: num("theta", 1.0)?,
            boundary,
            c,
            x0: num("x0", 0.0)?,
            mode,
            floor: num("floor", -3.0)?,
            a: opt_num("a")?,
            b: opt_num("b")?,
            payoff,
            strike: num("strike", 0.0)?,
            n,
            gamma,
            delta,
            scheme: parse_value("scheme", get("scheme").unwrap_or("taylor2"))?,
            normalized: parse_bool("normalized", get("normalized").unwrap_or("false"))?,
            bridge: parse_bool("bridge", get("bridge").unwrap_or("true"))?,
            bridge_method: parse_value("bridge_method", get("bridge_method").unwrap_or("sum"))?,
            cutoff,
            seed: parse_value("seed", get("seed").unwrap_or("1"))?,
            paths: parse_value("paths", get("paths").unwrap_or("100000"))?,
            mc_steps,
            n_list,
            reference,
            rho: num("rho", 1.0)?,
        };
        if config.mode == RunMode::Terminal && (config.a.is_none() || config.b.is_none()) {
            return Err(config_err("mode = terminal needs a and b"));
        }
        Ok(config)
    }

    pub fn unit_diffusion(&self) -> CliResult<UnitDiffusion> {
        let u = match self.model {
            ModelKind::Brownian => UnitDiffusion::brownian(),
            ModelKind::Ou => UnitDiffusion::ou(self.theta),
        };
        self.scheme.check(&u).map_err(|e| config_err(e.to_string()))?;
        Ok(u.with_x0(self.x0))
    }

    pub fn boundary_functions(&self) -> (Option<BoundaryFn>, BoundaryFn) {
        if self.boundary == "flat" {
            let c = self.c;
            return (Some(Arc::new(move |_| -c)), Arc::new(move |_| c));
        }
        oracles::builtin_boundary(&self.boundary).unwrap_or_else(|| unreachable!("boundary validated on load"))
    }

    pub fn bounds(&self, n_max: usize) -> CliResult<BoundaryPair> {
        let (lower, upper) = self.boundary_functions();
        Ok(BoundaryPair::new(lower, upper, self.x0, n_max)?)
    }

    pub fn ladder_mode(&self) -> LadderMode {
        match self.mode {
            RunMode::OneSided => LadderMode::OneSided { floor: self.floor },
            RunMode::Terminal => LadderMode::Terminal { a: self.a.unwrap_or(0.0), b: self.b.unwrap_or(0.0) },
            RunMode::TwoSided | RunMode::Payoff => LadderMode::TwoSided,
        }
    }

    pub fn terminal(&self) -> Terminal {
        if self.mode != RunMode::Payoff {
            return Terminal::Ones;
        }
        let k = self.strike;
        match self.payoff.as_deref() {
            Some("call") => Terminal::Payoff(Arc::new(move |y| (y - k).max(0.0))),
            Some("put") => Terminal::Payoff(Arc::new(move |y| (k - y).max(0.0))),
            Some("digital") => Terminal::Payoff(Arc::new(move |y| f64::from(y > k))),
            _ => Terminal::Payoff(Arc::new(|y| y)),
        }
    }

    pub fn options(&self) -> EngineOptions {
        EngineOptions {
            scheme: self.scheme,
            normalized: self.normalized,
            bridge: self.bridge,
            bridge_method: self.bridge_method,
            cutoff: self.cutoff,
            keep_surfaces: false,
        }
    }

    /// Exact or published non-crossing probability for this configuration, if one exists.
    pub fn reference_non_crossing(&self) -> Option<f64> {
        let plain = self.x0 == 0.0 && matches!(self.mode, RunMode::TwoSided | RunMode::OneSided);
        if !plain {
            return None;
        }
        match (self.boundary.as_str(), self.model) {
            ("daniels", ModelKind::Brownian) => Some(1.0 - oracles::daniels_reference()),
            ("ou_psi", ModelKind::Ou) if self.theta == 1.0 => Some(1.0 - oracles::ou_psi_reference()),
            ("flat", ModelKind::Brownian) => oracles::flat_barrier_series(self.c, 1.0, 50).ok(),
            _ => None,
        }
    }

    /// Run the engine at `n` steps.
    pub fn sweep(&self, n: usize, options: &EngineOptions) -> CliResult<SweepResult> {
        let u = self.unit_diffusion()?;
        let bounds = self.bounds(n)?;
        let grid = TimeGrid::uniform(n)?;
        let params = LatticeParams::new(self.gamma, self.delta)?;
        let ladder = LatticeLadder::build(&grid, &bounds, params, self.ladder_mode())?;
        Ok(engine::run(&u, &ladder, options, &self.terminal())?)
    }

    pub fn monte_carlo(&self, n_steps: usize) -> CliResult<McEstimate> {
        if self.paths == 0 {
            return Err(config_err("paths must be at least 1"));
        }
        if !matches!(self.mode, RunMode::TwoSided | RunMode::OneSided) {
            return Err(config_err("Monte Carlo supports two_sided and one_sided modes only"));
        }
        let u = self.unit_diffusion()?;
        let bounds = self.bounds(n_steps)?;
        Ok(oracles::mc_bcp(&u, &bounds, n_steps, self.paths, self.seed, self.scheme)?)
    }
}

/// Ordinary least-squares fit `y = intercept + slope x`; returns `(slope, intercept)`.
pub fn ols(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Slope and intercept of `log |error|` against `log n`, skipping zero errors.
pub fn log_log_slope(ns: &[usize], errors: &[f64]) -> Option<(f64, f64)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = ns
        .iter()
        .zip(errors)
        .filter(|(_, e)| **e != 0.0 && e.is_finite())
        .map(|(&n, e)| ((n as f64).ln(), e.abs().ln()))
        .unzip();
    ols(&xs, &ys)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub n: usize,
    pub probability: f64,
    pub abs_error: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub reference: f64,
    pub rows: Vec<StudyRow>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

/// Reference value for a study, according to `config.reference`.
pub fn study_reference(config: &RunConfig) -> CliResult<f64> {
    match config.reference {
        Reference::PaperConstant => config.reference_non_crossing().ok_or_else(|| {
            config_err(format!("no reference value for boundary '{}' with this model", config.boundary))
        }),
        Reference::SelfRichardson => {
            let n_max = config.n_list.iter().copied().max().unwrap_or(2) * 4;
            let options =
                EngineOptions { normalized: true, cutoff: Some(config.cutoff.unwrap_or(1e-18)), ..config.options() };
            Ok(config.sweep(n_max, &options)?.probability)
        }
        Reference::Mc => {
            let steps = config.mc_steps.unwrap_or_else(|| config.n_list.iter().copied().max().unwrap_or(2));
            Ok(config.monte_carlo(steps)?.mean)
        }
    }
}

pub fn run_study(config: &RunConfig) -> CliResult<StudyReport> {
    if config.n_list.len() < 3 {
        return Err(config_err("study needs at least three values in n_list"));
    }
    let reference = study_reference(config)?;
    let options = config.options();
    let mut rows = Vec::with_capacity(config.n_list.len());
    for &n in &config.n_list {
        let started = Instant::now();
        let result = config.sweep(n, &options)?;
        rows.push(StudyRow {
            n,
            probability: result.probability,
            abs_error: (result.probability - reference).abs(),
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.abs_error).collect();
    let fit = log_log_slope(&ns, &errors);
    Ok(StudyReport { reference, rows, slope: fit.map(|f| f.0), intercept: fit.map(|f| f.1) })
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

fn kv(out: &mut dyn Write, key: &str, value: f64) -> CliResult<()> {
    writeln!(out, "{key} = {}", fmt_num(value))?;
    Ok(())
}

fn cmd_compute(config: &RunConfig, out_path: Option<&Path>, out: &mut dyn Write) -> CliResult<()> {
    let result = config.sweep(config.n, &config.options())?;
    let d = &result.diagnostics;
    kv(out, "probability", result.probability)?;
    if config.mode != RunMode::Payoff {
        kv(out, "crossing", 1.0 - result.probability)?;
    }
    let reference = config.reference_non_crossing();
    if let Some(r) = reference {
        kv(out, "reference", r)?;
        kv(out, "abs_error", (result.probability - r).abs())?;
    }
    kv(out, "max_normalizer_deviation", d.max_normalizer_deviation)?;
    kv(out, "rho", d.rho)?;
    kv(out, "lemma_bound", d.lemma_bound)?;
    kv(out, "drop_bound", d.drop_bound)?;
    kv(out, "seconds", d.seconds)?;
    if let Some(path) = out_path {
        let mut w = csv_writer(path)?;
        w.write_record([
            "n",
            "probability",
            "max_normalizer_deviation",
            "rho",
            "lemma_bound",
            "drop_bound",
            "seconds",
        ])?;
        w.write_record([
            config.n.to_string(),
            fmt_num(result.probability),
            fmt_num(d.max_normalizer_deviation),
            fmt_num(d.rho),
            fmt_num(d.lemma_bound),
            fmt_num(d.drop_bound),
            fmt_num(d.seconds),
        ])?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_study(config: &RunConfig, out_path: Option<&Path>, out: &mut dyn Write) -> CliResult<()> {
    let report = run_study(config)?;
    kv(out, "reference", report.reference)?;
    for row in &report.rows {
        writeln!(
            out,
            "n = {} probability = {} abs_error = {} seconds = {}",
            row.n,
            fmt_num(row.probability),
            fmt_num(row.abs_error),
            fmt_num(row.seconds)
        )?;
    }
    match (report.slope, report.intercept) {
        (Some(s), Some(i)) => {
            kv(out, "slope", s)?;
            kv(out, "intercept", i)?;
        }
        _ => writeln!(out, "slope = undefined")?,
    }
    if let Some(path) = out_path {
        let mut w = csv_writer(path)?;
        w.write_record(["n", "probability", "abs_error", "seconds"])?;
        for row in &report.rows {
            w.write_record([
                row.n.to_string(),
                fmt_num(row.probability),
                fmt_num(row.abs_error),
                fmt_num(row.seconds),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_surface(config: &RunConfig, out_path: Option<&Path>, out: &mut dyn Write) -> CliResult<()> {
    let options = EngineOptions { keep_surfaces: true, ..config.options() };
    let result = config.sweep(config.n, &options)?;
    let surfaces = result.surfaces.unwrap_or_default();
    let mut w = match out_path {
        Some(path) => csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Box::new(std::fs::File::create(path)?) as Box<dyn Write + '_>),
        None => csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Box::new(&mut *out) as Box<dyn Write + '_>),
    };
    w.write_record(["k", "t", "state", "density"])?;
    for s in &surfaces {
        for (x, d) in s.states.iter().zip(s.density()) {
            w.write_record([s.k.to_string(), fmt_num(s.t), fmt_num(*x), fmt_num(d)])?;
        }
    }
    w.flush()?;
    drop(w);
    if out_path.is_some() {
        kv(out, "probability", result.probability)?;
    }
    Ok(())
}

fn cmd_mc(config: &RunConfig, out_path: Option<&Path>, out: &mut dyn Write) -> CliResult<()> {
    let steps = config.mc_steps.unwrap_or(config.n);
    let est = config.monte_carlo(steps)?;
    kv(out, "estimate", est.mean)?;
    kv(out, "stderr", est.stderr)?;
    writeln!(out, "paths = {}", est.paths)?;
    writeln!(out, "seed = {}", est.seed)?;
    if let Some(r) = config.reference_non_crossing() {
        kv(out, "reference", r)?;
        kv(out, "z", est.z_score(r))?;
    }
    if let Some(path) = out_path {
        let mut w = csv_writer(path)?;
        w.write_record(["n_steps", "paths", "seed", "estimate", "stderr"])?;
        w.write_record([
            steps.to_string(),
            est.paths.to_string(),
            est.seed.to_string(),
            fmt_num(est.mean),
            fmt_num(est.stderr),
        ])?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_bound(config: &RunConfig, out_path: Option<&Path>, out: &mut dyn Write) -> CliResult<()> {
    let eta2 = 1.0;
    let (m, c0) = engine::lemma_constants(config.gamma, config.delta, eta2);
    let lemma = engine::normalizer_lemma_bound(config.n, config.delta, config.gamma, eta2);
    let drop = engine::drop_normalizer_bound(config.n, config.delta, config.gamma, eta2, config.rho);
    kv(out, "M", m)?;
    kv(out, "c0", c0)?;
    kv(out, "lemma_bound", lemma)?;
    kv(out, "drop_bound", drop)?;
    kv(
        out,
        "log_drop_bound",
        engine::log_drop_normalizer_bound(config.n, config.delta, config.gamma, eta2, config.rho),
    )?;
    if config.delta == 0.0 {
        kv(out, "leading_error", engine::leading_drop_error(config.n, config.gamma))?;
    }
    if let Some(path) = out_path {
        let mut w = csv_writer(path)?;
        w.write_record(["n", "gamma", "delta", "M", "c0", "lemma_bound", "drop_bound"])?;
        w.write_record([
            config.n.to_string(),
            fmt_num(config.gamma),
            fmt_num(config.delta),
            fmt_num(m),
            fmt_num(c0),
            fmt_num(lemma),
            fmt_num(drop),
        ])?;
        w.flush()?;
    }
    Ok(())
}

/// Merge the config file with flag overrides and validate.
pub fn resolve_config(args: &CommonArgs) -> CliResult<RunConfig> {
    let mut map = match &args.config {
        Some(path) => read_config(path)?,
        None => BTreeMap::new(),
    };
    for (k, v) in args.keys.pairs() {
        map.insert(k.to_string(), v);
    }
    RunConfig::from_map(&map)
}

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    if let Some(t) = flag {
        return if t == 0 { Err(config_err("--threads must be at least 1")) } else { Ok(Some(t)) };
    }
    match std::env::var("BCP_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(config_err(format!("BCP_THREADS = '{v}' is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

type CommandFn = fn(&RunConfig, Option<&Path>, &mut dyn Write) -> CliResult<()>;

/// Execute a parsed command, writing results to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    let (args, command): (CommonArgs, CommandFn) = match cli.command {
        Command::Compute(a) => (a, cmd_compute),
        Command::Study(a) => (a, cmd_study),
        Command::Surface(a) => (a, cmd_surface),
        Command::Mc(a) => (a, cmd_mc),
        Command::Bound(a) => (a, cmd_bound),
    };
    let config = resolve_config(&args)?;
    let out_path = args.out.clone();
    match thread_count(args.threads)? {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| config_err(format!("thread pool: {e}")))?;
            let mut buffer = Vec::new();
            let result = pool.install(|| command(&config, out_path.as_deref(), &mut buffer));
            out.write_all(&buffer)?;
            result
        }
        None => command(&config, out_path.as_deref(), out),
    }
}

/// Entry point shared by the binary and tests; returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 2;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
