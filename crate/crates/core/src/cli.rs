//! Command-line front end: configuration, dispatch and result records.
//!
//! Values come from three layers, later ones winning: built-in defaults, an
//! optional `--config` file, and command-line flags. The file is either flat
//! `key = value` text (`#` starts a comment) or a single JSON object; keys may
//! use `-` or `_`. Keys that the chosen command does not take are rejected.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::conventions;
use crate::grid::{GridError, GridSpec};
use crate::linalg::{tolerances, LinalgError};
use crate::scattering::{self as sc, Mat2, ScatteringError};
use crate::toeplitz::{self as tp, CircleSymbol, HalfInteger, ToeplitzError};
use crate::witten::{self as wt, PerturbationProfile, PlateauRule, ThetaProfile, WittenError};

pub const EXIT_ACCEPTED: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

const CSV_HELP: &str = "\
Exit codes: 0 accepted, 1 verification failed, 2 usage error, 3 inconclusive.

CSV output (all commands): header `record,key,x,value_re,value_im`, then
  meta,<command|status|exit_code|message|wall_time_seconds>,,<value>,
  param,<name>,,<value>,
  scalar,<name>,,<value>,
  residual,<name>,,<value>,
  curve,<curve name>,<x>,<re>,<im>
  convention,tag,,<tag>,
Floats carry 17 significant digits. Curve names per command:
  toeplitz-example   left_defect_diagonal (x = lattice index)
  toeplitz-winding   symbol (x = θ)
  witten-estimate    rhs (x = t)
  ptf-check          rhs, lhs_logistic, lhs_scaled_arctan (x = t)
  compose-check      rhs_12, rhs_23, rhs_13 (x = t)
  levinson           phase, s11, s12, s21, s22 (x = k)
  sigma-index        det_sigma (x = λ)
  corrected-index    product_phase, det_s (x = λ)
  scan               n_bound, levinson_residual, resonance_flag, corrected_index,
                     decomposition_residual (x = well depth)";

#[derive(Debug, Parser)]
#[command(name = "opindex", version, about = "Index computations for Toeplitz, Dirac and scattering problems", after_help = CSV_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
    /// Output format [default: table]
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    /// Write the record to this file instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Reserved; every computation is deterministic
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Configuration file (`key = value` lines or a JSON object)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Commands {
    /// Fedosov index of the two-lattice Toeplitz example (expected -1)
    ToeplitzExample(ToeplitzExampleArgs),
    /// Index of T_a for a(θ) = e^{ikθ}(1 + ε cos θ) by winding and SVD
    ToeplitzWinding(ToeplitzWindingArgs),
    /// Heat-trace Witten index of D + μ/(1+x²) against the closed form μ/2
    WittenEstimate(WittenArgs),
    /// Windowed heat-trace difference of the suspension against the heat-trace formula
    PtfCheck(PtfArgs),
    /// Additivity of the Witten index along B₁, B₁ + B₂
    ComposeCheck(ComposeArgs),
    /// Levinson's theorem for a square well
    Levinson(WellArgs),
    /// Witten index of the σ correction
    SigmaIndex(SigmaArgs),
    /// Index of the σ-corrected scattering Toeplitz operator
    CorrectedIndex(WellArgs),
    /// Levinson and corrected index over a list of well depths plus a resonant depth
    Scan(ScanArgs),
}

#[derive(Debug, Args)]
struct ToeplitzExampleArgs {
    /// Interior size N, 8..=4096 [default: 64]
    #[arg(long)]
    n: Option<i64>,
}

#[derive(Debug, Args)]
struct ToeplitzWindingArgs {
    /// Winding k of the symbol, |k| <= 16 [default: 1]
    #[arg(long, allow_hyphen_values = true)]
    degree: Option<i64>,
    /// Modulation ε, |ε| < 1 [default: 0.3]
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<f64>,
    /// SVD truncation, 16..=512 [default: 64]
    #[arg(long)]
    truncation: Option<usize>,
    /// SVD guard band, at most truncation/4 [default: 8]
    #[arg(long)]
    guard: Option<usize>,
}

#[derive(Debug, Args)]
struct WittenArgs {
    /// Strength μ of B = μ/(1+x²), |μ| <= 10 [default: 1.0]
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    /// Half-width L of the periodic grid [default: 40]
    #[arg(long)]
    half_width: Option<f64>,
    /// Grid points n, even, 16..=4096 [default: 1024]
    #[arg(long)]
    points: Option<usize>,
    /// First heat time of the schedule t0·2^j [default: 1]
    #[arg(long)]
    t0: Option<f64>,
    /// Doublings j = 0..=levels, 7..=16 [default: 7]
    #[arg(long)]
    levels: Option<usize>,
    /// Gauss-Legendre nodes in s ∈ [1, 2], 1..=64 [default: 8]
    #[arg(long)]
    s_nodes: Option<usize>,
}

#[derive(Debug, Args)]
struct PtfArgs {
    /// Strength μ of B = μ/(1+x²) [default: 1.0]
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    /// Half-width of the x-grid [default: 12]
    #[arg(long)]
    x_half_width: Option<f64>,
    /// Points of the x-grid, even, 16..=64 [default: 48]
    #[arg(long)]
    x_points: Option<usize>,
    /// Half-width T of the t-grid; θ is compared with its limits at ±T/2 [default: 16]
    #[arg(long)]
    t_half_width: Option<f64>,
    /// Points of the t-grid, even, 16..=64 [default: 48]
    #[arg(long)]
    t_points: Option<usize>,
    /// Heat times, comma separated [default: 0.5,1,2]
    #[arg(long)]
    times: Option<FloatList>,
    /// Gauss-Legendre nodes in s [default: 8]
    #[arg(long)]
    s_nodes: Option<usize>,
}

#[derive(Debug, Args)]
struct ComposeArgs {
    /// Strength of B₁ = b1/(1+x²) [default: 0.7]
    #[arg(long, allow_hyphen_values = true)]
    b1: Option<f64>,
    /// Strength of B₂ = b2/(1+x²) [default: 0.9]
    #[arg(long, allow_hyphen_values = true)]
    b2: Option<f64>,
    /// [default: 40]
    #[arg(long)]
    half_width: Option<f64>,
    /// [default: 1024]
    #[arg(long)]
    points: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    t0: Option<f64>,
    /// [default: 7]
    #[arg(long)]
    levels: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    s_nodes: Option<usize>,
    /// Heat time of the path-splitting check [default: 2]
    #[arg(long)]
    t_split: Option<f64>,
}

#[derive(Debug, Args)]
struct WellArgs {
    /// Depth V₀ of the well V = -V₀ on |x| < a, 0 < V₀ <= 1000 [default: 2]
    #[arg(long)]
    well_depth: Option<f64>,
    /// Half-width a of the well, 0 < a <= 50 [default: 1]
    #[arg(long)]
    well_width: Option<f64>,
}

#[derive(Debug, Args)]
struct SigmaArgs {
    /// Source of S(-∞): a square well, or a fixed limit per σ branch [default: well]
    #[arg(long, value_enum)]
    branch: Option<SigmaSource>,
    /// Angle θ ∈ (0, π] of the `general` limit diag(e^{-iθ}, e^{iθ}) [default: π/3]
    #[arg(long)]
    theta: Option<f64>,
    #[command(flatten)]
    well: WellArgs,
}

#[derive(Debug, Args)]
struct ScanArgs {
    /// Well depths, comma separated [default: 0.5,1,2,5,10,25]
    #[arg(long)]
    depths: Option<FloatList>,
    /// Half-width a of every well [default: 1]
    #[arg(long)]
    well_width: Option<f64>,
    /// Also scan the m-th resonant depth near (mπ/2a)²; 0 disables, <= 4 [default: 1]
    #[arg(long)]
    resonance_order: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Table,
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaSource {
    Well,
    Trivial,
    Antidiagonal,
    General,
}

impl FromStr for SigmaSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, false)
    }
}

/// Comma-separated list of floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(FloatList)
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WittenParams {
    pub half_width: f64,
    pub points: usize,
    pub t0: f64,
    pub levels: usize,
    pub s_nodes: usize,
}

impl WittenParams {
    pub fn schedule(&self) -> Vec<f64> {
        wt::geometric_schedule(self.t0, self.levels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum CommandConfig {
    ToeplitzExample {
        n: i64,
    },
    ToeplitzWinding {
        degree: i64,
        epsilon: f64,
        truncation: usize,
        guard: usize,
    },
    WittenEstimate {
        mu: f64,
        grid: WittenParams,
    },
    PtfCheck {
        mu: f64,
        x_half_width: f64,
        x_points: usize,
        t_half_width: f64,
        t_points: usize,
        times: Vec<f64>,
        s_nodes: usize,
    },
    ComposeCheck {
        b1: f64,
        b2: f64,
        grid: WittenParams,
        t_split: f64,
    },
    Levinson {
        well_depth: f64,
        well_width: f64,
    },
    SigmaIndex {
        branch: SigmaSource,
        theta: f64,
        well_depth: f64,
        well_width: f64,
    },
    CorrectedIndex {
        well_depth: f64,
        well_width: f64,
    },
    Scan {
        depths: Vec<f64>,
        well_width: f64,
        resonance_order: u32,
    },
}

impl CommandConfig {
    pub fn name(&self) -> &'static str {
        match self {
            CommandConfig::ToeplitzExample { .. } => "toeplitz-example",
            CommandConfig::ToeplitzWinding { .. } => "toeplitz-winding",
            CommandConfig::WittenEstimate { .. } => "witten-estimate",
            CommandConfig::PtfCheck { .. } => "ptf-check",
            CommandConfig::ComposeCheck { .. } => "compose-check",
            CommandConfig::Levinson { .. } => "levinson",
            CommandConfig::SigmaIndex { .. } => "sigma-index",
            CommandConfig::CorrectedIndex { .. } => "corrected-index",
            CommandConfig::Scan { .. } => "scan",
        }
    }

    /// Effective parameters as `name → value` strings.
    pub fn params(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        if let Ok(serde_json::Value::Object(map)) = serde_json::to_value(self) {
            flatten_params("", &map, &mut out);
        }
        out.remove("command");
        out
    }
}

fn flatten_params(prefix: &str, map: &serde_json::Map<String, serde_json::Value>, out: &mut BTreeMap<String, String>) {
    for (k, v) in map {
        let key = format!("{prefix}{}", k.replace('_', "-"));
        match v {
            serde_json::Value::Object(inner) => flatten_params("", inner, out),
            serde_json::Value::Array(items) => {
                let joined: Vec<String> = items.iter().map(|x| x.to_string()).collect();
                out.insert(key, joined.join(","));
            }
            serde_json::Value::String(s) => {
                out.insert(key, s.clone());
            }
            other => {
                out.insert(key, other.to_string());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandConfig,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
    /// Reserved; no computation draws random numbers.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UsageError {
    /// `--help` or `--version`; the text goes to stdout and the exit code is 0.
    Display(String),
    Invalid(String),
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UsageError::Display(s) | UsageError::Invalid(s) => f.write_str(s),
        }
    }
}

fn invalid(msg: impl Into<String>) -> UsageError {
    UsageError::Invalid(msg.into())
}

/// Parses a configuration file into normalized `key → raw value` pairs.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, UsageError> {
    let mut out = BTreeMap::new();
    let mut insert = |k: &str, v: String| -> Result<(), UsageError> {
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(invalid("config file: empty key"));
        }
        if out.insert(key.clone(), v).is_some() {
            return Err(invalid(format!("config file: duplicate key `{key}`")));
        }
        Ok(())
    };
    if text.trim_start().starts_with('{') {
        let map: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(text).map_err(|e| invalid(format!("config file: malformed JSON: {e}")))?;
        for (k, v) in map {
            let raw = match v {
                serde_json::Value::String(s) => s,
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|x| match x {
                        serde_json::Value::Number(n) => Ok(n.to_string()),
                        _ => Err(invalid(format!("config file: `{k}` must be a list of numbers"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?
                    .join(","),
                _ => return Err(invalid(format!("config file: `{k}` has an unsupported value"))),
            };
            insert(&k, raw)?;
        }
        return Ok(out);
    }
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("config file line {}: expected `key = value`", lineno + 1)))?;
        let v = v.trim();
        let v = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
        insert(k, v.to_string())?;
    }
    Ok(out)
}

struct Layers {
    file: BTreeMap<String, String>,
}

impl Layers {
    fn get<T: FromStr>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, UsageError>
    where
        T::Err: std::fmt::Display,
    {
        let from_file = self.file.remove(key);
        if let Some(v) = flag {
            return Ok(v);
        }
        match from_file {
            Some(raw) => raw
                .parse()
                .map_err(|e| invalid(format!("config key `{key}`: cannot parse `{raw}`: {e}"))),
            None => Ok(default),
        }
    }

    fn finish(self, command: &str) -> Result<(), UsageError> {
        match self.file.keys().next() {
            Some(k) => Err(invalid(format!("config key `{k}` is not accepted by `{command}`"))),
            None => Ok(()),
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), UsageError> {
    if cond {
        Ok(())
    } else {
        Err(UsageError::Invalid(msg()))
    }
}

fn witten_params(
    l: &mut Layers,
    half_width: Option<f64>,
    points: Option<usize>,
    t0: Option<f64>,
    levels: Option<usize>,
    s_nodes: Option<usize>,
) -> Result<WittenParams, UsageError> {
    let p = WittenParams {
        half_width: l.get("half-width", half_width, 40.0)?,
        points: l.get("points", points, 1024)?,
        t0: l.get("t0", t0, 1.0)?,
        levels: l.get("levels", levels, 7)?,
        s_nodes: l.get("s-nodes", s_nodes, 8)?,
    };
    check_grid(p.half_width, p.points, 4096)?;
    ensure(p.t0 > 0.0 && p.t0.is_finite(), || "t0 must be positive".into())?;
    ensure((7..=16).contains(&p.levels), || "levels must lie in 7..=16".into())?;
    ensure((1..=64).contains(&p.s_nodes), || "s-nodes must lie in 1..=64".into())?;
    Ok(p)
}

fn check_grid(half_width: f64, points: usize, max_points: usize) -> Result<(), UsageError> {
    ensure(half_width > 0.0 && half_width <= 1000.0, || {
        format!("half-width must lie in (0, 1000], got {half_width}")
    })?;
    ensure((16..=max_points).contains(&points) && points % 2 == 0, || {
        format!("points must be even and in 16..={max_points}, got {points}")
    })?;
    GridSpec::new(half_width, points).map(|_| ()).map_err(|e| invalid(e.to_string()))
}

fn check_well(depth: f64, width: f64) -> Result<(), UsageError> {
    ensure(depth > 0.0 && depth <= 1000.0, || format!("well-depth must lie in (0, 1000], got {depth}"))?;
    ensure(width > 0.0 && width <= 50.0, || format!("well-width must lie in (0, 50], got {width}"))
}

fn well_params(l: &mut Layers, a: &WellArgs) -> Result<(f64, f64), UsageError> {
    let depth = l.get("well-depth", a.well_depth, 2.0)?;
    let width = l.get("well-width", a.well_width, 1.0)?;
    check_well(depth, width)?;
    Ok((depth, width))
}

fn resolve_command(cmd: Commands, l: &mut Layers) -> Result<CommandConfig, UsageError> {
    Ok(match cmd {
        Commands::ToeplitzExample(a) => {
            let n = l.get("n", a.n, 64)?;
            ensure((8..=4096).contains(&n), || format!("n must lie in 8..=4096, got {n}"))?;
            CommandConfig::ToeplitzExample { n }
        }
        Commands::ToeplitzWinding(a) => {
            let degree = l.get("degree", a.degree, 1)?;
            let epsilon = l.get("epsilon", a.epsilon, 0.3)?;
            let truncation = l.get("truncation", a.truncation, 64)?;
            let guard = l.get("guard", a.guard, 8)?;
            ensure(degree.abs() <= 16, || "degree must satisfy |k| <= 16".into())?;
            ensure(epsilon.abs() < 1.0, || "epsilon must satisfy |ε| < 1".into())?;
            ensure((16..=512).contains(&truncation), || "truncation must lie in 16..=512".into())?;
            ensure(guard >= 1 && 4 * guard <= truncation, || {
                "guard must be at least 1 and at most truncation/4".into()
            })?;
            ensure(truncation > 4 * degree.unsigned_abs() as usize, || {
                "truncation must exceed 4|degree|".into()
            })?;
            CommandConfig::ToeplitzWinding {
                degree,
                epsilon,
                truncation,
                guard,
            }
        }
        Commands::WittenEstimate(a) => {
            let mu = l.get("mu", a.mu, 1.0)?;
            ensure(mu.is_finite() && mu.abs() <= 10.0, || "mu must lie in [-10, 10]".into())?;
            let grid = witten_params(l, a.half_width, a.points, a.t0, a.levels, a.s_nodes)?;
            CommandConfig::WittenEstimate { mu, grid }
        }
        Commands::PtfCheck(a) => {
            let mu = l.get("mu", a.mu, 1.0)?;
            let x_half_width = l.get("x-half-width", a.x_half_width, 12.0)?;
            let x_points = l.get("x-points", a.x_points, 48)?;
            let t_half_width = l.get("t-half-width", a.t_half_width, 16.0)?;
            let t_points = l.get("t-points", a.t_points, 48)?;
            let times = l.get("times", a.times, FloatList(vec![0.5, 1.0, 2.0]))?.0;
            let s_nodes = l.get("s-nodes", a.s_nodes, 8)?;
            ensure(mu.is_finite() && mu.abs() <= 10.0, || "mu must lie in [-10, 10]".into())?;
            check_grid(x_half_width, x_points, 64)?;
            check_grid(t_half_width, t_points, 64)?;
            ensure(!times.is_empty() && times.iter().all(|&t| t > 0.0 && t.is_finite()), || {
                "times must be positive".into()
            })?;
            ensure((1..=64).contains(&s_nodes), || "s-nodes must lie in 1..=64".into())?;
            CommandConfig::PtfCheck {
                mu,
                x_half_width,
                x_points,
                t_half_width,
                t_points,
                times,
                s_nodes,
            }
        }
        Commands::ComposeCheck(a) => {
            let b1 = l.get("b1", a.b1, 0.7)?;
            let b2 = l.get("b2", a.b2, 0.9)?;
            let grid = witten_params(l, a.half_width, a.points, a.t0, a.levels, a.s_nodes)?;
            let t_split = l.get("t-split", a.t_split, 2.0)?;
            for (name, b) in [("b1", b1), ("b2", b2)] {
                ensure(b.is_finite() && b.abs() <= 10.0, || format!("{name} must lie in [-10, 10]"))?;
            }
            ensure(t_split > 0.0 && t_split.is_finite(), || "t-split must be positive".into())?;
            CommandConfig::ComposeCheck { b1, b2, grid, t_split }
        }
        Commands::Levinson(a) => {
            let (well_depth, well_width) = well_params(l, &a)?;
            CommandConfig::Levinson { well_depth, well_width }
        }
        Commands::SigmaIndex(a) => {
            let branch = l.get("branch", a.branch, SigmaSource::Well)?;
            let theta = l.get("theta", a.theta, PI / 3.0)?;
            ensure(theta > 0.0 && theta <= PI, || "theta must lie in (0, π]".into())?;
            let (well_depth, well_width) = well_params(l, &a.well)?;
            CommandConfig::SigmaIndex {
                branch,
                theta,
                well_depth,
                well_width,
            }
        }
        Commands::CorrectedIndex(a) => {
            let (well_depth, well_width) = well_params(l, &a)?;
            CommandConfig::CorrectedIndex { well_depth, well_width }
        }
        Commands::Scan(a) => {
            let depths = l.get("depths", a.depths, FloatList(vec![0.5, 1.0, 2.0, 5.0, 10.0, 25.0]))?.0;
            let well_width = l.get("well-width", a.well_width, 1.0)?;
            let resonance_order = l.get("resonance-order", a.resonance_order, 1)?;
            ensure(!depths.is_empty() && depths.len() <= 64, || "depths must list 1..=64 values".into())?;
            for &d in &depths {
                check_well(d, well_width)?;
            }
            ensure(resonance_order <= 4, || "resonance-order must lie in 0..=4".into())?;
            CommandConfig::Scan {
                depths,
                well_width,
                resonance_order,
            }
        }
    })
}

/// Parses command-line arguments (including the program name) and the
/// contents of the configuration file, if any. The file named by `--config`
/// is not read here; pass its text as `file_text`.
pub fn parse_config_with<I, T>(argv: I, file_text: Option<&str>) -> Result<RunConfig, UsageError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            UsageError::Display(e.to_string())
        }
        _ => UsageError::Invalid(e.to_string()),
    })?;
    let file = match file_text {
        Some(text) => parse_config_text(text)?,
        None => BTreeMap::new(),
    };
    let mut layers = Layers { file };
    let format = layers.get("format", cli.format, OutputFormat::Table)?;
    let out = layers.get::<PathBuf>("out", cli.out, PathBuf::new())?;
    let out = (!out.as_os_str().is_empty()).then_some(out);
    let seed = layers.file.remove("seed").map(|s| s.parse::<u64>());
    let seed = match (cli.seed, seed) {
        (Some(s), _) => Some(s),
        (None, Some(Ok(s))) => Some(s),
        (None, Some(Err(e))) => return Err(invalid(format!("config key `seed`: {e}"))),
        (None, None) => None,
    };
    let command = resolve_command(cli.command, &mut layers)?;
    layers.finish(command.name())?;
    Ok(RunConfig {
        command,
        format,
        out,
        seed,
    })
}

/// Parses arguments, reading the file named by `--config` if present.
pub fn parse_config<I, T>(argv: I) -> Result<RunConfig, UsageError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let path = args
        .iter()
        .position(|a| a == "--config")
        .and_then(|i| args.get(i + 1).cloned())
        .or_else(|| {
            args.iter()
                .find_map(|a| a.to_str().and_then(|s| s.strip_prefix("--config=")).map(OsString::from))
        });
    let text = match path {
        Some(p) => Some(
            std::fs::read_to_string(&p)
                .map_err(|e| invalid(format!("cannot read config file {}: {e}", PathBuf::from(&p).display())))?,
        ),
        None => None,
    };
    parse_config_with(args, text.as_deref())
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Accepted,
    Failed,
    UsageError,
    Inconclusive,
}

impl Status {
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Accepted => EXIT_ACCEPTED,
            Status::Failed => EXIT_FAILED,
            Status::UsageError => EXIT_USAGE,
            Status::Inconclusive => EXIT_INCONCLUSIVE,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Status::Accepted => "accepted",
            Status::Failed => "failed",
            Status::UsageError => "usage-error",
            Status::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub x: Vec<f64>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Curve {
    pub fn real(name: &str, x: Vec<f64>, y: Vec<f64>) -> Self {
        let im = vec![0.0; y.len()];
        Self {
            name: name.to_string(),
            x,
            re: y,
            im,
        }
    }

    pub fn complex(name: &str, x: Vec<f64>, y: &[Complex64]) -> Self {
        Self {
            name: name.to_string(),
            x,
            re: y.iter().map(|z| z.re).collect(),
            im: y.iter().map(|z| z.im).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub command: String,
    pub status: Status,
    pub exit_code: i32,
    pub message: Option<String>,
    pub params: BTreeMap<String, String>,
    pub scalars: BTreeMap<String, f64>,
    pub residuals: BTreeMap<String, f64>,
    pub curves: Vec<Curve>,
    pub conventions: Vec<String>,
    pub wall_time_seconds: f64,
}

impl ResultRecord {
    fn new(command: &str, params: BTreeMap<String, String>) -> Self {
        Self {
            command: command.to_string(),
            status: Status::Accepted,
            exit_code: EXIT_ACCEPTED,
            message: None,
            params,
            scalars: BTreeMap::new(),
            residuals: BTreeMap::new(),
            curves: Vec::new(),
            conventions: conventions::all_tags(),
            wall_time_seconds: 0.0,
        }
    }

    pub fn usage_error(message: &str) -> Self {
        let mut r = Self::new("", BTreeMap::new());
        r.set_status(Status::UsageError, Some(message.to_string()));
        r
    }

    fn set_status(&mut self, status: Status, message: Option<String>) {
        self.status = status;
        self.exit_code = status.exit_code();
        if message.is_some() {
            self.message = message;
        }
    }

    /// The record with wall time zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_seconds: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let f = |v: f64| format!("{v:.16e}");
        let mut row = |a: &str, b: &str, c: &str, d: &str, e: &str| {
            w.write_record([a, b, c, d, e]).expect("in-memory write");
        };
        row("record", "key", "x", "value_re", "value_im");
        row("meta", "command", "", &self.command, "");
        row("meta", "status", "", self.status.label(), "");
        row("meta", "exit_code", "", &self.exit_code.to_string(), "");
        if let Some(m) = &self.message {
            row("meta", "message", "", m, "");
        }
        row("meta", "wall_time_seconds", "", &f(self.wall_time_seconds), "");
        for (k, v) in &self.params {
            row("param", k, "", v, "");
        }
        for (k, v) in &self.scalars {
            row("scalar", k, "", &f(*v), "");
        }
        for (k, v) in &self.residuals {
            row("residual", k, "", &f(*v), "");
        }
        for c in &self.curves {
            for i in 0..c.x.len() {
                row("curve", &c.name, &f(c.x[i]), &f(c.re[i]), &f(c.im[i]));
            }
        }
        for t in &self.conventions {
            row("convention", "tag", "", t, "");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command: {}", self.command);
        let _ = writeln!(s, "status:  {} (exit {})", self.status.label(), self.exit_code);
        if let Some(m) = &self.message {
            let _ = writeln!(s, "message: {m}");
        }
        let section = |s: &mut String, title: &str, items: Vec<(String, String)>| {
            if items.is_empty() {
                return;
            }
            let _ = writeln!(s, "{title}:");
            let width = items.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            for (k, v) in items {
                let _ = writeln!(s, "  {k:<width$}  {v}");
            }
        };
        section(&mut s, "parameters", self.params.iter().map(|(k, v)| (k.clone(), v.clone())).collect());
        section(&mut s, "results", self.scalars.iter().map(|(k, v)| (k.clone(), format!("{v:.10}"))).collect());
        section(&mut s, "residuals", self.residuals.iter().map(|(k, v)| (k.clone(), format!("{v:.3e}"))).collect());
        for c in &self.curves {
            let _ = writeln!(s, "curve {} ({} points)", c.name, c.x.len());
            if c.x.len() <= 16 {
                for i in 0..c.x.len() {
                    let _ = writeln!(s, "  {:>14.6e}  {:>16.10} {:>16.10}", c.x[i], c.re[i], c.im[i]);
                }
            }
        }
        let _ = writeln!(s, "conventions:");
        for t in &self.conventions {
            let _ = writeln!(s, "  {t}");
        }
        let _ = writeln!(s, "wall time: {:.3} s", self.wall_time_seconds);
        s
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Table => self.to_table(),
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json() + "\n",
        }
    }
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

struct RunError {
    status: Status,
    message: String,
    curves: Vec<Curve>,
}

impl RunError {
    fn new(status: Status, message: String) -> Self {
        Self {
            status,
            message,
            curves: Vec::new(),
        }
    }
}

impl From<LinalgError> for RunError {
    fn from(e: LinalgError) -> Self {
        let status = match e {
            LinalgError::NoConvergence { .. } => Status::Inconclusive,
            _ => Status::UsageError,
        };
        RunError::new(status, e.to_string())
    }
}

impl From<GridError> for RunError {
    fn from(e: GridError) -> Self {
        RunError::new(Status::UsageError, e.to_string())
    }
}

impl From<ToeplitzError> for RunError {
    fn from(e: ToeplitzError) -> Self {
        let status = match &e {
            ToeplitzError::Sizing(_)
            | ToeplitzError::LatticeMismatch(_)
            | ToeplitzError::SymbolVanishing { .. }
            | ToeplitzError::Discontinuity(_)
            | ToeplitzError::NotAntiperiodic(_) => Status::UsageError,
            ToeplitzError::Linalg(l) => return RunError::from(l.clone()),
            _ => Status::Inconclusive,
        };
        RunError::new(status, e.to_string())
    }
}

impl From<WittenError> for RunError {
    fn from(e: WittenError) -> Self {
        match e {
            WittenError::NoPlateau {
                ref t_samples,
                ref rhs_values,
                ..
            } => RunError {
                status: Status::Inconclusive,
                message: e.to_string(),
                curves: vec![Curve::real("rhs", t_samples.clone(), rhs_values.clone())],
            },
            WittenError::Linalg(l) => RunError::from(l),
            WittenError::Grid(g) => RunError::from(g),
            WittenError::AssemblyInconsistency(_) => RunError::new(Status::Failed, e.to_string()),
            _ => RunError::new(Status::UsageError, e.to_string()),
        }
    }
}

impl From<ScatteringError> for RunError {
    fn from(e: ScatteringError) -> Self {
        let status = match &e {
            ScatteringError::Domain(_) => Status::UsageError,
            ScatteringError::Linalg(l) => return RunError::from(l.clone()),
            _ => Status::Inconclusive,
        };
        RunError::new(status, e.to_string())
    }
}

type Outcome = Result<(), RunError>;

/// Runs the configured command. The exit code is `record.exit_code`.
pub fn run(config: &RunConfig) -> ResultRecord {
    let start = Instant::now();
    let mut rec = ResultRecord::new(config.command.name(), config.command.params());
    let outcome = match &config.command {
        CommandConfig::ToeplitzExample { n } => run_toeplitz_example(*n, &mut rec),
        CommandConfig::ToeplitzWinding {
            degree,
            epsilon,
            truncation,
            guard,
        } => run_toeplitz_winding(*degree, *epsilon, *truncation, *guard, &mut rec),
        CommandConfig::WittenEstimate { mu, grid } => run_witten_estimate(*mu, grid, &mut rec),
        CommandConfig::PtfCheck {
            mu,
            x_half_width,
            x_points,
            t_half_width,
            t_points,
            times,
            s_nodes,
        } => run_ptf_check(
            *mu,
            GridSpec::new(*x_half_width, *x_points),
            GridSpec::new(*t_half_width, *t_points),
            times,
            *s_nodes,
            &mut rec,
        ),
        CommandConfig::ComposeCheck { b1, b2, grid, t_split } => run_compose_check(*b1, *b2, grid, *t_split, &mut rec),
        CommandConfig::Levinson { well_depth, well_width } => run_levinson(*well_depth, *well_width, &mut rec),
        CommandConfig::SigmaIndex {
            branch,
            theta,
            well_depth,
            well_width,
        } => run_sigma_index(*branch, *theta, *well_depth, *well_width, &mut rec),
        CommandConfig::CorrectedIndex { well_depth, well_width } => {
            run_corrected_index(*well_depth, *well_width, &mut rec)
        }
        CommandConfig::Scan {
            depths,
            well_width,
            resonance_order,
        } => run_scan(depths, *well_width, *resonance_order, &mut rec),
    };
    if let Err(e) = outcome {
        rec.curves.extend(e.curves);
        rec.set_status(e.status, Some(e.message));
    }
    // JSON has no representation for NaN or infinities
    let dropped: Vec<String> = rec
        .scalars
        .iter()
        .chain(rec.residuals.iter())
        .filter(|(_, v)| !v.is_finite())
        .map(|(k, _)| k.clone())
        .collect();
    if !dropped.is_empty() {
        rec.scalars.retain(|_, v| v.is_finite());
        rec.residuals.retain(|_, v| v.is_finite());
        let note = format!("non-finite values dropped: {}", dropped.join(", "));
        rec.message = Some(match rec.message.take() {
            Some(m) => format!("{m}; {note}"),
            None => note,
        });
    }
    for c in &mut rec.curves {
        for v in c.x.iter_mut().chain(c.re.iter_mut()).chain(c.im.iter_mut()) {
            if !v.is_finite() {
                *v = 0.0;
            }
        }
    }
    rec.wall_time_seconds = start.elapsed().as_secs_f64();
    rec
}

fn fail_unless(rec: &mut ResultRecord, ok: bool, message: impl FnOnce() -> String) {
    if !ok {
        rec.set_status(Status::Failed, Some(message()));
    }
}

pub const TOEPLITZ_EXAMPLE_TOL: f64 = 1e-10;

fn run_toeplitz_example(n: i64, rec: &mut ResultRecord) -> Outcome {
    let pair = tp::build_paper_example(n)?;
    let report = tp::fedosov_index(&pair.t_op, &pair.parametrix, n)?;
    let (left, right) = tp::example_defect_violations(&pair)?;
    let defects = tp::parametrix_defects(&pair.t_op, &pair.parametrix)?;
    let value = report.fedosov_value;
    rec.scalars.insert("index".into(), value.re);
    rec.scalars.insert("index_imag".into(), value.im);
    rec.scalars.insert("verdict_index".into(), report.verdict.index as f64);
    rec.scalars.insert("left_defect_trace".into(), defects.left.trace_interior(n).re);
    rec.scalars.insert("right_defect_trace".into(), defects.right.trace_interior(n).re);
    rec.residuals.insert("index_deviation".into(), (value - Complex64::new(-1.0, 0.0)).norm());
    rec.residuals.insert("left_defect_violations".into(), left as f64);
    rec.residuals.insert("right_defect_violations".into(), right as f64);
    let sites: Vec<i64> = (-2 * n..=2 * n + 1).collect();
    let diag: Vec<Complex64> = sites.iter().map(|&s| defects.left.entry(s, s)).collect();
    rec.curves
        .push(Curve::complex("left_defect_diagonal", sites.iter().map(|&s| s as f64 / 2.0).collect(), &diag));
    let dev = (value - Complex64::new(-1.0, 0.0)).norm();
    fail_unless(rec, dev <= TOEPLITZ_EXAMPLE_TOL && left == 0 && right == 0 && report.verdict.certain, || {
        format!("index {value} (deviation {dev:e}); defect violations left {left}, right {right}")
    });
    Ok(())
}

fn run_toeplitz_winding(degree: i64, epsilon: f64, truncation: usize, guard: usize, rec: &mut ResultRecord) -> Outcome {
    let samples = 8 * (degree.unsigned_abs() as usize + 4);
    let symbol = CircleSymbol::new(
        move |t| Complex64::from_polar(1.0 + epsilon * t.cos(), degree as f64 * t),
        HalfInteger::ZERO,
        samples,
    )?;
    let report = tp::symbol_index_report(&symbol, truncation, guard, tolerances::SVD_ZERO)?;
    let winding = report.winding.unwrap_or(0);
    let kernel = report.svd_kernel_dim.unwrap_or(0) as f64;
    let cokernel = report.svd_cokernel_dim.unwrap_or(0) as f64;
    rec.scalars.insert("winding".into(), winding as f64);
    rec.scalars.insert("svd_kernel_dim".into(), kernel);
    rec.scalars.insert("svd_cokernel_dim".into(), cokernel);
    rec.scalars.insert("fedosov_or_svd_index".into(), report.fedosov_value.re);
    rec.scalars.insert("index".into(), report.verdict.index as f64);
    let expected = conventions::INDEX_WINDING_SIGN * winding;
    rec.residuals
        .insert("svd_vs_winding".into(), (kernel - cokernel - expected as f64).abs());
    let theta: Vec<f64> = (0..samples).map(|j| -PI + 2.0 * PI * j as f64 / samples as f64).collect();
    let values: Vec<Complex64> = theta.iter().map(|&t| symbol.eval(t)).collect();
    rec.curves.push(Curve::complex("symbol", theta, &values));
    fail_unless(rec, report.verdict.certain && report.verdict.index == expected, || {
        format!(
            "routes disagree: winding {winding}, kernel {kernel}, cokernel {cokernel}, value {}",
            report.fedosov_value
        )
    });
    Ok(())
}

pub const WITTEN_TOL: f64 = 0.02;

fn run_witten_estimate(mu: f64, p: &WittenParams, rec: &mut ResultRecord) -> Outcome {
    let grid = GridSpec::new(p.half_width, p.points)?;
    let a1 = wt::discretize_dirac(&grid);
    let b = PerturbationProfile::lorentzian(mu);
    let closed = wt::witten_index_closed_form(&b)?;
    rec.scalars.insert("closed_form".into(), closed.value);
    let est = wt::witten_index_estimate(&a1, &b, &p.schedule(), p.s_nodes, &PlateauRule::default())?;
    rec.scalars.insert("plateau".into(), est.plateau_value);
    rec.scalars.insert("plateau_uncertainty".into(), est.uncertainty);
    rec.scalars.insert("plateau_t_min".into(), est.plateau_window.0);
    rec.scalars.insert("plateau_t_max".into(), est.plateau_window.1);
    rec.scalars.insert("validity_ceiling".into(), est.validity_ceiling);
    let residual = (est.plateau_value - closed.value).abs();
    rec.residuals.insert("plateau_vs_closed_form".into(), residual);
    rec.curves.push(Curve::real("rhs", est.t_samples.clone(), est.rhs_values.clone()));
    fail_unless(rec, residual <= WITTEN_TOL, || {
        format!("plateau {} differs from {} by {residual:.4}", est.plateau_value, closed.value)
    });
    Ok(())
}

pub const PTF_REL_TOL: f64 = 0.1;
pub const PTF_FLOOR: f64 = 0.1;
pub const THETA_SPREAD_TOL: f64 = 0.02;

fn run_ptf_check(
    mu: f64,
    x_grid: Result<GridSpec, GridError>,
    t_grid: Result<GridSpec, GridError>,
    times: &[f64],
    s_nodes: usize,
    rec: &mut ResultRecord,
) -> Outcome {
    let (x_grid, t_grid) = (x_grid?, t_grid?);
    let a1 = wt::discretize_dirac(&x_grid);
    let b = PerturbationProfile::lorentzian(mu);
    let heat = wt::HeatTrace::new(&a1, &b.multiplication(&x_grid), s_nodes)?;
    let rhs: Vec<f64> = times.iter().map(|&t| heat.rhs(t)).collect();
    rec.curves.push(Curve::real("rhs", times.to_vec(), rhs.clone()));
    let mut lhs_all = Vec::new();
    let mut worst = 0.0f64;
    for theta in [ThetaProfile::Logistic, ThetaProfile::ScaledArctan] {
        let d = wt::build_suspension(&a1, &b, theta, &t_grid, &x_grid)?;
        let hd = d.heat_difference()?;
        let lhs: Vec<f64> = times.iter().map(|&t| hd.oriented(t)).collect();
        let rel = lhs
            .iter()
            .zip(&rhs)
            .map(|(l, r)| (l - r).abs() / r.abs().max(PTF_FLOOR))
            .fold(0.0, f64::max);
        let name = match theta {
            ThetaProfile::Logistic => "logistic",
            ThetaProfile::ScaledArctan => "scaled_arctan",
        };
        rec.residuals.insert(format!("ptf_{name}"), rel);
        rec.curves.push(Curve::real(&format!("lhs_{name}"), times.to_vec(), lhs.clone()));
        worst = worst.max(rel);
        lhs_all.push(lhs);
    }
    let spread = lhs_all[0]
        .iter()
        .zip(&lhs_all[1])
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(PTF_FLOOR))
        .fold(0.0, f64::max);
    rec.residuals.insert("theta_spread".into(), spread);
    fail_unless(rec, worst <= PTF_REL_TOL && spread <= THETA_SPREAD_TOL, || {
        format!("relative residual {worst:.4}, θ spread {spread:.4}")
    });
    Ok(())
}

pub const CLOSED_ADDITIVITY_TOL: f64 = 1e-12;
pub const PATH_SPLITTING_REL_TOL: f64 = 1e-3;

fn run_compose_check(b1: f64, b2: f64, p: &WittenParams, t_split: f64, rec: &mut ResultRecord) -> Outcome {
    let grid = GridSpec::new(p.half_width, p.points)?;
    let a1 = wt::discretize_dirac(&grid);
    let (pb1, pb2) = (PerturbationProfile::lorentzian(b1), PerturbationProfile::lorentzian(b2));
    let report = wt::check_composition(&a1, &pb1, &pb2, &p.schedule(), p.s_nodes, &PlateauRule::default())?;
    let split = wt::path_splitting_check(&a1, &pb1, &pb2, t_split, p.s_nodes)?;
    for (name, v) in [
        ("closed_12", report.closed_12),
        ("closed_23", report.closed_23),
        ("closed_13", report.closed_13),
        ("plateau_12", report.w12.plateau_value),
        ("plateau_23", report.w23.plateau_value),
        ("plateau_13", report.w13.plateau_value),
        ("split_direct", split.direct),
        ("split_first_leg", split.first_leg),
        ("split_second_leg", split.second_leg),
    ] {
        rec.scalars.insert(name.into(), v);
    }
    let split_rel = split.residual / split.magnitude().max(f64::MIN_POSITIVE);
    rec.residuals.insert("closed_additivity".into(), report.closed_residual);
    rec.residuals.insert("heat_additivity".into(), report.heat_residual);
    rec.residuals.insert("path_splitting_relative".into(), split_rel);
    for (name, w) in [("rhs_12", &report.w12), ("rhs_23", &report.w23), ("rhs_13", &report.w13)] {
        rec.curves.push(Curve::real(name, w.t_samples.clone(), w.rhs_values.clone()));
    }
    fail_unless(
        rec,
        report.closed_residual <= CLOSED_ADDITIVITY_TOL
            && report.heat_residual <= WITTEN_TOL
            && split_rel <= PATH_SPLITTING_REL_TOL,
        || {
            format!(
                "closed {:e}, heat {:.4}, path splitting {split_rel:e}",
                report.closed_residual, report.heat_residual
            )
        },
    );
    Ok(())
}

fn push_s_curves(rec: &mut ResultRecord, x: &[f64], s: &[Mat2]) {
    for (e, name) in ["s11", "s12", "s21", "s22"].iter().enumerate() {
        let v: Vec<Complex64> = s.iter().map(|m| m[e]).collect();
        rec.curves.push(Curve::complex(name, x.to_vec(), &v));
    }
}

fn run_levinson(depth: f64, width: f64, rec: &mut ResultRecord) -> Outcome {
    let v = sc::Potential::square_well(depth, width)?;
    let r = sc::levinson_check(&v)?;
    rec.scalars.insert("n_bound".into(), r.n_bound as f64);
    rec.scalars.insert("phase_winding".into(), r.phase_winding);
    rec.scalars.insert("resonance_flag".into(), r.resonance_flag as f64);
    rec.scalars.insert("resonance_evidence".into(), r.resonance_evidence);
    rec.scalars.insert("levinson_value".into(), r.levinson_value);
    let unitarity = r.curve.unitarity_residuals.iter().copied().fold(0.0, f64::max);
    rec.residuals.insert("levinson".into(), r.residual);
    rec.residuals.insert("unitarity".into(), unitarity);
    rec.curves
        .push(Curve::real("phase", r.curve.k_samples.clone(), r.unwrapped_phase.clone()));
    push_s_curves(rec, &r.curve.k_samples, &r.curve.s_matrices);
    fail_unless(rec, r.accepted && unitarity <= sc::UNITARITY_TOL, || {
        format!("Levinson residual {:.4}, unitarity {unitarity:e}", r.residual)
    });
    Ok(())
}

pub const SIGMA_TOL: f64 = 1e-6;

fn run_sigma_index(source: SigmaSource, theta: f64, depth: f64, width: f64, rec: &mut ResultRecord) -> Outcome {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let limit: Mat2 = match source {
        SigmaSource::Well => {
            let v = sc::Potential::square_well(depth, width)?;
            sc::exp_resample(&sc::default_curve(&v)?)?.s_minus_infinity
        }
        SigmaSource::Trivial => sc::IDENTITY2,
        SigmaSource::Antidiagonal => [c(0.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0), c(0.0, 0.0)],
        SigmaSource::General => {
            let e = Complex64::from_polar(1.0, theta);
            sc::to_parity_basis(&[e.conj(), c(0.0, 0.0), c(0.0, 0.0), e])
        }
    };
    let sigma = sc::build_sigma(&limit)?;
    let w = sc::witten_index_sigma(&sigma)?;
    let expected = match sigma.branch {
        sc::SigmaBranch::AntidiagonalLimit => 0.5,
        _ => 0.0,
    };
    rec.scalars.insert("witten_index_sigma".into(), w.value);
    rec.scalars.insert("quadrature_error".into(), w.quadrature_error);
    rec.scalars.insert("theta_angle".into(), sigma.theta_angle);
    rec.scalars.insert(
        "branch".into(),
        match sigma.branch {
            sc::SigmaBranch::Trivial => 0.0,
            sc::SigmaBranch::AntidiagonalLimit => 1.0,
            sc::SigmaBranch::GeneralUnitary => 2.0,
        },
    );
    rec.scalars.insert("det_limit_re".into(), sc::mat2_det(&limit).re);
    rec.scalars.insert("det_limit_im".into(), sc::mat2_det(&limit).im);
    rec.residuals.insert("sigma_index".into(), (w.value - expected).abs());
    let lambda: Vec<f64> = (-40..=40).map(|j| j as f64 * 0.5).collect();
    let dets: Vec<Complex64> = lambda.iter().map(|&l| sc::mat2_det(&sigma.eval(l))).collect();
    rec.curves.push(Curve::complex("det_sigma", lambda, &dets));
    fail_unless(rec, (w.value - expected).abs() <= SIGMA_TOL, || {
        format!("W(σ) = {} but the branch gives {expected}", w.value)
    });
    Ok(())
}

struct WellAnalysis {
    levinson: sc::LevinsonReport,
    corrected: sc::CorrectedIndex,
    line: sc::LineCurve,
}

fn analyse_well(depth: f64, width: f64) -> Result<WellAnalysis, RunError> {
    let v = sc::Potential::square_well(depth, width)?;
    let n_bound = sc::bound_states(&v, &sc::default_bound_state_grid(&v))?;
    let curve = sc::default_curve(&v)?;
    let line = sc::exp_resample(&curve)?;
    let sigma = sc::build_sigma(&line.s_minus_infinity)?;
    let corrected = sc::corrected_index(&line, &sigma)?;
    let levinson = sc::levinson_from_parts(&v, n_bound, curve)?;
    Ok(WellAnalysis {
        levinson,
        corrected,
        line,
    })
}

fn run_corrected_index(depth: f64, width: f64, rec: &mut ResultRecord) -> Outcome {
    let a = analyse_well(depth, width)?;
    let c = &a.corrected;
    rec.scalars.insert("fredholm_index".into(), c.fredholm_index as f64);
    rec.scalars.insert("n_bound".into(), a.levinson.n_bound as f64);
    rec.scalars.insert("w_scattering".into(), c.w_scattering);
    rec.scalars.insert("w_sigma".into(), c.w_sigma);
    rec.scalars.insert("resonance_flag".into(), a.levinson.resonance_flag as f64);
    rec.residuals.insert("decomposition".into(), c.decomposition_residual);
    rec.residuals.insert("end_limits".into(), c.end_residual);
    rec.residuals
        .insert("index_vs_bound_states".into(), (c.fredholm_index - a.levinson.n_bound as i64).abs() as f64);
    // product_phase carries the two limit points at its ends
    let inner = c.product_phase[1..c.product_phase.len() - 1].to_vec();
    rec.curves.push(Curve::real("product_phase", a.line.lambda.clone(), inner));
    let dets: Vec<Complex64> = a.line.s_matrices.iter().map(sc::mat2_det).collect();
    rec.curves.push(Curve::complex("det_s", a.line.lambda.clone(), &dets));
    fail_unless(
        rec,
        c.fredholm_index == a.levinson.n_bound as i64 && c.decomposition_residual <= sc::DECOMPOSITION_TOL,
        || {
            format!(
                "index {} vs {} bound states, decomposition residual {:.4}",
                c.fredholm_index, a.levinson.n_bound, c.decomposition_residual
            )
        },
    );
    Ok(())
}

fn run_scan(depths: &[f64], width: f64, order: u32, rec: &mut ResultRecord) -> Outcome {
    let mut all: Vec<(f64, bool)> = depths.iter().map(|&d| (d, false)).collect();
    if order > 0 {
        let d = sc::resonance_depth(width, order)?;
        rec.scalars.insert("resonance_depth".into(), d);
        all.push((d, true));
    }
    let mut cols: [Vec<f64>; 5] = Default::default();
    let mut problems = Vec::new();
    for &(depth, resonant) in &all {
        let a = analyse_well(depth, width).map_err(|mut e| {
            e.message = format!("V0 = {depth}: {}", e.message);
            e
        })?;
        let l = &a.levinson;
        let c = &a.corrected;
        cols[0].push(l.n_bound as f64);
        cols[1].push(l.residual);
        cols[2].push(l.resonance_flag as f64);
        cols[3].push(c.fredholm_index as f64);
        cols[4].push(c.decomposition_residual);
        if !l.accepted {
            problems.push(format!("V0 = {depth}: Levinson residual {:.4}", l.residual));
        }
        if (l.resonance_flag == 1) != resonant {
            problems.push(format!("V0 = {depth}: resonance flag {}", l.resonance_flag));
        }
        if c.fredholm_index != l.n_bound as i64 || c.decomposition_residual > sc::DECOMPOSITION_TOL {
            problems.push(format!(
                "V0 = {depth}: index {} vs N = {}, decomposition {:.4}",
                c.fredholm_index, l.n_bound, c.decomposition_residual
            ));
        }
    }
    let x: Vec<f64> = all.iter().map(|p| p.0).collect();
    let names = ["n_bound", "levinson_residual", "resonance_flag", "corrected_index", "decomposition_residual"];
    for (name, col) in names.iter().zip(&cols) {
        rec.curves.push(Curve::real(name, x.clone(), col.clone()));
    }
    rec.residuals.insert("max_levinson".into(), cols[1].iter().copied().fold(0.0, f64::max));
    rec.residuals.insert("max_decomposition".into(), cols[4].iter().copied().fold(0.0, f64::max));
    fail_unless(rec, problems.is_empty(), || problems.join("; "));
    Ok(())
}

// a closed pipe (`| head`) is not an error worth a panic
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().write_all(text.as_bytes());
}

/// Entry point of the `opindex` binary. Returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let config = match parse_config(args.clone()) {
        Ok(c) => c,
        Err(UsageError::Display(text)) => {
            emit(&text);
            return EXIT_ACCEPTED;
        }
        Err(UsageError::Invalid(msg)) => {
            eprintln!("{msg}");
            let json = args.windows(2).any(|w| w[0] == "--format" && w[1] == "json")
                || args.iter().any(|a| a == "--format=json");
            let rec = ResultRecord::usage_error(msg.trim());
            emit(&rec.render(if json { OutputFormat::Json } else { OutputFormat::Table }));
            return EXIT_USAGE;
        }
    };
    let rec = run(&config);
    let text = rec.render(config.format);
    match &config.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                eprintln!("cannot write {}: {e}", path.display());
                return EXIT_USAGE;
            }
        }
        None => emit(&text),
    }
    rec.exit_code
}
