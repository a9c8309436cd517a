//! Witten indices of pairs `(A₁, A₁ + B)` with `A₁ = d/(i dx)` on a periodic
//! grid, computed from heat traces, the suspension operator built from a
//! connection profile `θ`, and the closed form `(1/2π)∫ tr Φ`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conventions;
use crate::grid::{GridError, GridSpec};
use crate::linalg::{self, herm_eig, DenseMatrix, EigenSystem, LinalgError};
use crate::quadrature;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WittenError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("profile has no decay certificate; cannot bound the tails of the integral")]
    InsufficientDecay,
    #[error("decay certificate violated: |Φ(x)|(1+x²) = {observed:e} > {bound:e} at x = {x}")]
    CertificateViolated { x: f64, observed: f64, bound: f64 },
    #[error("no plateau of {min_samples} samples found in the heat curve")]
    NoPlateau {
        min_samples: usize,
        t_samples: Vec<f64>,
        rhs_values: Vec<f64>,
    },
    #[error("trace has imaginary part {0:e}; operators assembled inconsistently")]
    AssemblyInconsistency(f64),
}

pub type Result<T> = std::result::Result<T, WittenError>;

// ---------------------------------------------------------------------------
// Grid operators
// ---------------------------------------------------------------------------

/// A matrix acting on `C^d`-valued functions sampled on a grid. Site `j`,
/// component `α` sits at row `j·d + α`.
#[derive(Debug, Clone)]
pub struct LatticeOperator {
    pub matrix: DenseMatrix,
    pub grid: GridSpec,
    pub components: usize,
}

impl LatticeOperator {
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.matrix.is_hermitian()
    }

    /// Same grid and component count.
    pub fn check_compatible(&self, other: &LatticeOperator) -> Result<()> {
        if self.grid != other.grid || self.components != other.components {
            return Err(WittenError::Domain(format!(
                "incompatible lattice operators: {:?}/{} vs {:?}/{}",
                self.grid, self.components, other.grid, other.components
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &LatticeOperator) -> Result<LatticeOperator> {
        self.check_compatible(other)?;
        let m = self.matrix.add(&other.matrix)?;
        let m = if self.is_hermitian() && other.is_hermitian() {
            m.symmetrize()?
        } else {
            m
        };
        Ok(LatticeOperator {
            matrix: m,
            grid: self.grid,
            components: self.components,
        })
    }

    /// `A₁ ⊗ 1_d`.
    pub fn with_components(&self, d: usize) -> Result<LatticeOperator> {
        if self.components != 1 {
            return Err(WittenError::Domain("component lifting needs a scalar operator".into()));
        }
        if d == 1 {
            return Ok(self.clone());
        }
        let m = self.matrix.kron(&DenseMatrix::identity(d));
        Ok(LatticeOperator {
            matrix: m,
            grid: self.grid,
            components: d,
        })
    }
}

/// Symbol of the periodic spectral derivative: `kπ/L` for
/// `k = -n/2 .. n/2-1`.
pub fn dirac_frequencies(grid: &GridSpec) -> Vec<f64> {
    let n = grid.points() as i64;
    let scale = PI / grid.half_width();
    (-n / 2..n / 2).map(|k| k as f64 * scale).collect()
}

/// `A₁ = d/(i dx)` by Fourier spectral differentiation on the periodic grid.
///
/// `A₁ = F† diag(kπ/L) F`, so entry `(j, l)` depends only on `j - l` and is
/// `c_m = (1/n) Σ_k (kπ/L) e^{2πi k m / n}`.
pub fn discretize_dirac(grid: &GridSpec) -> LatticeOperator {
    let n = grid.points();
    let freqs = dirac_frequencies(grid);
    let kmin = -(n as i64) / 2;
    let c: Vec<Complex64> = (0..n)
        .map(|m| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (idx, &f) in freqs.iter().enumerate() {
                let k = kmin + idx as i64;
                // reduce k·m mod n before forming the phase
                let r = (k * m as i64).rem_euclid(n as i64) as f64;
                acc += Complex64::from_polar(f, 2.0 * PI * r / n as f64);
            }
            acc / n as f64
        })
        .collect();
    let matrix = DenseMatrix::from_fn(n, n, |j, l| c[(j + n - l) % n])
        .symmetrize()
        .expect("square");
    LatticeOperator {
        matrix,
        grid: *grid,
        components: 1,
    }
}

// ---------------------------------------------------------------------------
// Perturbation profiles
// ---------------------------------------------------------------------------

type MatrixFn = dyn Fn(f64) -> Vec<Complex64> + Send + Sync;

/// `x ↦ Φ(x)`, a Hermitian `d×d` matrix function (row-major values), with an
/// optional certified bound `C ≥ sup |Φ(x)|(1+x²)` (Frobenius norm).
#[derive(Clone)]
pub struct PerturbationProfile {
    evaluator: Arc<MatrixFn>,
    components: usize,
    decay_bound: Option<f64>,
    label: String,
}

impl fmt::Debug for PerturbationProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PerturbationProfile")
            .field("label", &self.label)
            .field("components", &self.components)
            .field("decay_bound", &self.decay_bound)
            .finish()
    }
}

/// Sample points for certificate checks: dense near the origin, reaching far
/// into the tails.
fn certificate_samples() -> impl Iterator<Item = f64> {
    let m = 4000;
    (1..m).map(move |i| (PI * (i as f64 / m as f64 - 0.5)).tan())
}

impl PerturbationProfile {
    /// General constructor. If `decay_bound` is given it is checked on a
    /// sample set and against Hermiticity.
    pub fn new(
        components: usize,
        evaluator: impl Fn(f64) -> Vec<Complex64> + Send + Sync + 'static,
        decay_bound: Option<f64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        if components == 0 || components > 4 {
            return Err(WittenError::Domain(format!(
                "profiles support 1 <= d <= 4 components, got {components}"
            )));
        }
        let p = Self {
            evaluator: Arc::new(evaluator),
            components,
            decay_bound,
            label: label.into(),
        };
        for x in certificate_samples().step_by(37).chain([0.0]) {
            let v = p.eval(x);
            if v.len() != components * components {
                return Err(WittenError::Domain(format!(
                    "profile returned {} entries for d = {components}",
                    v.len()
                )));
            }
            let dev = hermitian_deviation(&v, components);
            let scale = v.iter().fold(0.0f64, |m, z| m.max(z.norm()));
            if dev > 1e-12 * scale.max(1e-300) {
                return Err(WittenError::Domain(format!("profile value at x = {x} is not Hermitian")));
            }
        }
        if let Some(bound) = decay_bound {
            if !(bound >= 0.0 && bound.is_finite()) {
                return Err(WittenError::Domain(format!("decay bound must be finite, got {bound}")));
            }
            for x in certificate_samples().chain([0.0]) {
                let observed = frobenius(&p.eval(x)) * (1.0 + x * x);
                if observed > bound * (1.0 + 1e-12) + 1e-300 {
                    return Err(WittenError::CertificateViolated { x, observed, bound });
                }
            }
        }
        Ok(p)
    }

    /// Scalar profile from a real function.
    pub fn scalar(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        decay_bound: Option<f64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        Self::new(1, move |x| vec![Complex64::new(f(x), 0.0)], decay_bound, label)
    }

    /// `Φ(x) = μ/(1+x²)`.
    pub fn lorentzian(mu: f64) -> Self {
        Self::scalar(move |x| mu / (1.0 + x * x), Some(mu.abs()), format!("lorentzian(mu={mu})"))
            .expect("lorentzian certificate holds")
    }

    /// `Φ(x) = μ e^{-x²/w²}`.
    pub fn gaussian(mu: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(WittenError::Domain(format!("gaussian width must be positive, got {width}")));
        }
        let w2 = width * width;
        // max of (1+x²)e^{-x²/w²}
        let peak = if w2 <= 1.0 { 1.0 } else { w2 * (-(w2 - 1.0) / w2).exp() };
        Self::scalar(
            move |x| mu * (-x * x / w2).exp(),
            Some(mu.abs() * peak),
            format!("gaussian(mu={mu},width={width})"),
        )
    }

    /// `Φ ≡ c`; carries no decay certificate.
    pub fn constant(c: f64) -> Self {
        Self::scalar(move |_| c, None, format!("constant({c})")).expect("constant profile")
    }

    pub fn zero() -> Self {
        Self::scalar(|_| 0.0, Some(0.0), "zero").expect("zero profile")
    }

    /// Pointwise sum; certificates add.
    pub fn sum(&self, other: &PerturbationProfile) -> Result<Self> {
        if self.components != other.components {
            return Err(WittenError::Domain("cannot add profiles with different component counts".into()));
        }
        let (a, b) = (self.evaluator.clone(), other.evaluator.clone());
        let bound = match (self.decay_bound, other.decay_bound) {
            (Some(x), Some(y)) => Some(x + y),
            _ => None,
        };
        Ok(Self {
            evaluator: Arc::new(move |x| a(x).into_iter().zip(b(x)).map(|(p, q)| p + q).collect()),
            components: self.components,
            decay_bound: bound,
            label: format!("{}+{}", self.label, other.label),
        })
    }

    /// `μ Φ`.
    pub fn scaled(&self, mu: f64) -> Self {
        let a = self.evaluator.clone();
        Self {
            evaluator: Arc::new(move |x| a(x).into_iter().map(|z| z * mu).collect()),
            components: self.components,
            decay_bound: self.decay_bound.map(|c| c * mu.abs()),
            label: format!("{mu}*({})", self.label),
        }
    }

    pub fn eval(&self, x: f64) -> Vec<Complex64> {
        (self.evaluator)(x)
    }

    pub fn trace_at(&self, x: f64) -> f64 {
        let v = self.eval(x);
        (0..self.components).map(|a| v[a * self.components + a].re).sum()
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn decay_bound(&self) -> Option<f64> {
        self.decay_bound
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Block-diagonal multiplication operator `B` on the grid.
    pub fn multiplication(&self, grid: &GridSpec) -> LatticeOperator {
        let d = self.components;
        let n = grid.points();
        let mut m = DenseMatrix::zeros(n * d, n * d);
        for j in 0..n {
            let v = self.eval(grid.x(j));
            for a in 0..d {
                for b in 0..d {
                    m.set(j * d + a, j * d + b, v[a * d + b]);
                }
            }
        }
        LatticeOperator {
            matrix: m.symmetrize().expect("square"),
            grid: *grid,
            components: d,
        }
    }
}

fn frobenius(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn hermitian_deviation(v: &[Complex64], d: usize) -> f64 {
    let mut dev = 0.0f64;
    for a in 0..d {
        for b in 0..d {
            dev = dev.max((v[a * d + b] - v[b * d + a].conj()).norm());
        }
    }
    dev
}

// ---------------------------------------------------------------------------
// Closed form
// ---------------------------------------------------------------------------

/// Target accuracy of the closed-form line integral.
pub const CLOSED_FORM_TOL: f64 = 1e-8;
const CLOSED_FORM_MAX_PANELS: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedForm {
    pub value: f64,
    pub error_estimate: f64,
    pub panels: usize,
}

/// `(1/2π) ∫ tr Φ(x) dx` over the whole line.
///
/// With `x = tan u` the integrand becomes `tr Φ(tan u)(1 + tan²u)`, which the
/// decay certificate bounds by `d·C`; the substituted integral is therefore
/// over a finite interval with a bounded integrand and no tail truncation.
pub fn witten_index_closed_form(b: &PerturbationProfile) -> Result<ClosedForm> {
    if b.decay_bound().is_none() {
        return Err(WittenError::InsufficientDecay);
    }
    let f = |x: f64| b.trace_at(x);
    let r = quadrature::line_integral(&f, PI / 2.0, 1e-13, CLOSED_FORM_MAX_PANELS);
    let error_estimate = r.refinement_change / (2.0 * PI);
    if error_estimate > CLOSED_FORM_TOL {
        return Err(WittenError::InsufficientDecay);
    }
    Ok(ClosedForm {
        value: r.value / (2.0 * PI),
        error_estimate,
        panels: r.panels,
    })
}

/// Closed form at a fixed panel level, for comparisons that must be exactly
/// linear in the profile.
pub fn witten_index_closed_form_at(b: &PerturbationProfile, panels: usize) -> Result<f64> {
    if b.decay_bound().is_none() {
        return Err(WittenError::InsufficientDecay);
    }
    let f = |x: f64| b.trace_at(x);
    Ok(quadrature::line_integral_at_level(&f, PI / 2.0, panels) / (2.0 * PI))
}

// ---------------------------------------------------------------------------
// Heat traces
// ---------------------------------------------------------------------------

pub const DEFAULT_S_NODES: usize = 8;

/// Spectral data of `A_s = A + (s-1)B` at one Gauss–Legendre node: the
/// eigenvalues `λ_k` and the diagonal weights `⟨v_k, B v_k⟩`.
#[derive(Debug, Clone)]
struct NodeSpectrum {
    weight: f64,
    eigenvalues: Vec<f64>,
    b_weights: Vec<f64>,
}

/// Cached spectral data for `t ↦ ∫₁² tr(e^{-tA_s²}B) ds`; each additional `t`
/// costs O(n).
#[derive(Debug, Clone)]
pub struct HeatTrace {
    nodes: Vec<NodeSpectrum>,
    half_width: f64,
}

fn diagonal_expectations(eig: &EigenSystem, b: &LatticeOperator) -> Vec<f64> {
    let n = eig.dim();
    let d = b.components;
    let v = &eig.eigenvectors;
    (0..n)
        .map(|k| {
            let mut acc = 0.0;
            for site in 0..n / d {
                for a in 0..d {
                    let row = site * d + a;
                    let va = v.get(row, k).conj();
                    for c in 0..d {
                        let col = site * d + c;
                        let bac = b.matrix.get(row, col);
                        if bac.re != 0.0 || bac.im != 0.0 {
                            acc += (va * bac * v.get(col, k)).re;
                        }
                    }
                }
            }
            acc
        })
        .collect()
}

impl HeatTrace {
    pub fn new(a1: &LatticeOperator, b: &LatticeOperator, s_nodes: usize) -> Result<Self> {
        if s_nodes < 2 {
            return Err(WittenError::Domain(format!("need at least 2 s-nodes, got {s_nodes}")));
        }
        a1.check_compatible(b)?;
        if !a1.is_hermitian() || !b.is_hermitian() {
            return Err(WittenError::Linalg(LinalgError::NotFlaggedHermitian("HeatTrace::new")));
        }
        let rule = quadrature::gauss_legendre(s_nodes, 1.0, 2.0);
        let nodes = rule
            .par_iter()
            .map(|&(s, w)| -> Result<NodeSpectrum> {
                let a_s = a1
                    .matrix
                    .add(&b.matrix.scale(Complex64::new(s - 1.0, 0.0)))?
                    .symmetrize()?;
                let eig = herm_eig(&a_s)?;
                let b_weights = diagonal_expectations(&eig, b);
                Ok(NodeSpectrum {
                    weight: w,
                    eigenvalues: eig.eigenvalues,
                    b_weights,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nodes,
            half_width: a1.grid.half_width(),
        })
    }

    /// `∫₁² tr(e^{-tA_s²}B) ds` by the Gauss–Legendre rule.
    pub fn integral(&self, t: f64) -> f64 {
        self.nodes
            .iter()
            .map(|node| {
                node.weight
                    * node
                        .eigenvalues
                        .iter()
                        .zip(&node.b_weights)
                        .map(|(l, q)| (-t * l * l).exp() * q)
                        .sum::<f64>()
            })
            .sum()
    }

    /// Calibrated right side `SIGN·(t/π)^{1/2} ∫₁² tr(e^{-tA_s²}B) ds`.
    pub fn rhs(&self, t: f64) -> f64 {
        conventions::WITTEN_RHS_SIGN * (t / PI).sqrt() * self.integral(t)
    }

    /// Largest `t` at which the grid still resolves the continuum limit.
    pub fn validity_ceiling(&self) -> f64 {
        validity_ceiling(self.half_width)
    }
}

/// `t ≤ (L/π)²/4`.
pub fn validity_ceiling(half_width: f64) -> f64 {
    (half_width / PI).powi(2) / 4.0
}

pub fn heat_trace_rhs(a1: &LatticeOperator, b: &PerturbationProfile, t: f64, s_nodes: usize) -> Result<f64> {
    if !(t > 0.0) {
        return Err(WittenError::Domain(format!("heat time must be positive, got {t}")));
    }
    let bop = b.multiplication(&a1.grid);
    let a = lift(a1, b.components())?;
    Ok(HeatTrace::new(&a, &bop, s_nodes)?.rhs(t))
}

fn lift(a1: &LatticeOperator, d: usize) -> Result<LatticeOperator> {
    if a1.components == d {
        Ok(a1.clone())
    } else {
        a1.with_components(d)
    }
}

// ---------------------------------------------------------------------------
// Plateau detection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauRule {
    /// Consecutive samples closer than this belong to one plateau.
    pub step: f64,
    pub min_samples: usize,
    /// Reject plateaus whose spread exceeds this.
    pub max_uncertainty: f64,
}

impl Default for PlateauRule {
    fn default() -> Self {
        Self {
            step: 0.005,
            min_samples: 5,
            max_uncertainty: 0.02,
        }
    }
}

/// `t_j = t₀ 2^j`, `j = 0..=levels`.
pub fn geometric_schedule(t0: f64, levels: usize) -> Vec<f64> {
    (0..=levels).map(|j| t0 * 2f64.powi(j as i32)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WittenEstimate {
    pub t_samples: Vec<f64>,
    pub rhs_values: Vec<f64>,
    pub plateau_value: f64,
    pub plateau_window: (f64, f64),
    pub uncertainty: f64,
    /// Samples above this were evaluated but excluded from the plateau.
    pub validity_ceiling: f64,
}

/// Longest run of samples (below the ceiling) with consecutive differences
/// under `rule.step`; ties go to the run reaching larger `t`.
pub fn detect_plateau(t: &[f64], values: &[f64], ceiling: f64, rule: &PlateauRule) -> Result<WittenEstimate> {
    let valid = t.iter().take_while(|&&x| x <= ceiling).count();
    let mut best: Option<(usize, usize)> = None;
    let mut start = 0;
    for i in 0..valid {
        let run_ends = i + 1 == valid || (values[i + 1] - values[i]).abs() >= rule.step;
        if run_ends {
            let len = i + 1 - start;
            if best.map_or(true, |(s, e)| len >= e - s) {
                best = Some((start, i + 1));
            }
            start = i + 1;
        }
    }
    let no_plateau = || WittenError::NoPlateau {
        min_samples: rule.min_samples,
        t_samples: t.to_vec(),
        rhs_values: values.to_vec(),
    };
    let (s, e) = best.ok_or_else(no_plateau)?;
    if e - s < rule.min_samples {
        return Err(no_plateau());
    }
    let window = &values[s..e];
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let uncertainty = window.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
    if uncertainty > rule.max_uncertainty {
        return Err(no_plateau());
    }
    Ok(WittenEstimate {
        t_samples: t.to_vec(),
        rhs_values: values.to_vec(),
        plateau_value: mean,
        plateau_window: (t[s], t[e - 1]),
        uncertainty,
        validity_ceiling: ceiling,
    })
}

pub fn witten_index_estimate_from(heat: &HeatTrace, t_schedule: &[f64], rule: &PlateauRule) -> Result<WittenEstimate> {
    if t_schedule.len() < 8 {
        return Err(WittenError::Domain(format!(
            "t schedule needs at least 8 points, got {}",
            t_schedule.len()
        )));
    }
    if t_schedule.windows(2).any(|w| !(w[0] < w[1])) || !(t_schedule[0] > 0.0) {
        return Err(WittenError::Domain("t schedule must be positive and ascending".into()));
    }
    let values: Vec<f64> = t_schedule.iter().map(|&t| heat.rhs(t)).collect();
    detect_plateau(t_schedule, &values, heat.validity_ceiling(), rule)
}

/// Plateau estimate of the Witten index of `(A₁, A₁ + B)`.
pub fn witten_index_estimate(
    a1: &LatticeOperator,
    b: &PerturbationProfile,
    t_schedule: &[f64],
    s_nodes: usize,
    rule: &PlateauRule,
) -> Result<WittenEstimate> {
    let bop = b.multiplication(&a1.grid);
    let a = lift(a1, b.components())?;
    let heat = HeatTrace::new(&a, &bop, s_nodes)?;
    witten_index_estimate_from(&heat, t_schedule, rule)
}

// ---------------------------------------------------------------------------
// Composition rule
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub w12: WittenEstimate,
    pub w23: WittenEstimate,
    pub w13: WittenEstimate,
    /// `|W(A₁,A₂) + W(A₂,A₃) − W(A₁,A₃)|` from the plateau values.
    pub heat_residual: f64,
    pub closed_12: f64,
    pub closed_23: f64,
    pub closed_13: f64,
    /// Same combination for the closed forms at one common quadrature level.
    pub closed_residual: f64,
}

/// `A₂ = A₁ + B₁`, `A₃ = A₂ + B₂`.
pub fn check_composition(
    a1: &LatticeOperator,
    b1: &PerturbationProfile,
    b2: &PerturbationProfile,
    t_schedule: &[f64],
    s_nodes: usize,
    rule: &PlateauRule,
) -> Result<CompositionReport> {
    if b1.decay_bound().is_none() || b2.decay_bound().is_none() {
        return Err(WittenError::InsufficientDecay);
    }
    let b3 = b1.sum(b2)?;
    let d = b1.components();
    let a = lift(a1, d)?;
    let op1 = b1.multiplication(&a.grid);
    let op2 = b2.multiplication(&a.grid);
    let op3 = b3.multiplication(&a.grid);
    let a2 = a.add(&op1)?;

    let w12 = witten_index_estimate_from(&HeatTrace::new(&a, &op1, s_nodes)?, t_schedule, rule)?;
    let w23 = witten_index_estimate_from(&HeatTrace::new(&a2, &op2, s_nodes)?, t_schedule, rule)?;
    let w13 = witten_index_estimate_from(&HeatTrace::new(&a, &op3, s_nodes)?, t_schedule, rule)?;
    let heat_residual = (w12.plateau_value + w23.plateau_value - w13.plateau_value).abs();

    // common level so that the three quadratures are the same linear functional
    let panels = [b1, b2, &b3]
        .iter()
        .map(|p| witten_index_closed_form(p).map(|c| c.panels))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(8);
    let closed_12 = witten_index_closed_form_at(b1, panels)?;
    let closed_23 = witten_index_closed_form_at(b2, panels)?;
    let closed_13 = witten_index_closed_form_at(&b3, panels)?;
    let closed_residual = (closed_12 + closed_23 - closed_13).abs();
    Ok(CompositionReport {
        w12,
        w23,
        w13,
        heat_residual,
        closed_12,
        closed_23,
        closed_13,
        closed_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSplitting {
    /// `∫₁² tr(e^{-t(A₁+(s-1)B₃)²}B₃) ds`.
    pub direct: f64,
    /// `∫₁² tr(e^{-t(A₁+(s-1)B₁)²}B₁) ds`.
    pub first_leg: f64,
    /// `∫₁² tr(e^{-t(A₂+(s-1)B₂)²}B₂) ds`.
    pub second_leg: f64,
    pub residual: f64,
}

impl PathSplitting {
    pub fn magnitude(&self) -> f64 {
        self.direct.abs().max(self.first_leg.abs()).max(self.second_leg.abs())
    }
}

/// Compares the straight path from `A₁` to `A₃ = A₁+B₁+B₂` with the path
/// through `A₂ = A₁+B₁`.
pub fn path_splitting_check(
    a1: &LatticeOperator,
    b1: &PerturbationProfile,
    b2: &PerturbationProfile,
    t: f64,
    s_nodes: usize,
) -> Result<PathSplitting> {
    if !(t > 0.0) {
        return Err(WittenError::Domain(format!("heat time must be positive, got {t}")));
    }
    let b3 = b1.sum(b2)?;
    let a = lift(a1, b1.components())?;
    let op1 = b1.multiplication(&a.grid);
    let op2 = b2.multiplication(&a.grid);
    let op3 = b3.multiplication(&a.grid);
    let a2 = a.add(&op1)?;
    let direct = HeatTrace::new(&a, &op3, s_nodes)?.integral(t);
    let first_leg = HeatTrace::new(&a, &op1, s_nodes)?.integral(t);
    let second_leg = HeatTrace::new(&a2, &op2, s_nodes)?.integral(t);
    Ok(PathSplitting {
        direct,
        first_leg,
        second_leg,
        residual: (direct - first_leg - second_leg).abs(),
    })
}

// ---------------------------------------------------------------------------
// Relative trace-class diagnostic
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub p: u32,
    pub singular_values: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// Exponent α in `σ_k ~ k^{-α}` fitted over the upper half of the
    /// non-negligible singular values (0 when there are too few).
    pub decay_exponent: f64,
    pub trace_norm: f64,
    pub refined_trace_norm: f64,
    pub enlarged_trace_norm: f64,
    /// `|refined − base| / base`.
    pub refinement_change: f64,
    /// `enlarged / base`.
    pub domain_growth: f64,
    pub plausibly_trace_class: bool,
}

const REFINEMENT_GATE: f64 = 0.05;
const DOMAIN_GROWTH_GATE: f64 = 1.25;

fn resolvent_product_singular_values(grid: &GridSpec, b: &PerturbationProfile, p: u32) -> Result<Vec<f64>> {
    let d = b.components();
    let a = discretize_dirac(grid).with_components(d)?;
    let eig = herm_eig(&a.matrix)?;
    // (A + i)^{-p-1} = V diag((λ+i)^{-p-1}) V†
    let power = -(p as i32) - 1;
    let r = eig.apply_complex(|l| Complex64::new(l, 1.0).powi(power));
    let bop = b.multiplication(grid);
    Ok(linalg::singular_values(&bop.matrix.matmul(&r)?)?)
}

/// Singular values of `B(A₁+i)^{-p-1}` on `grid`, compared against the
/// refined grid `(L, 2n)` and the enlarged grid `(2L, 2n)`.
pub fn relative_trace_class_diagnostic(grid: &GridSpec, b: &PerturbationProfile, p: u32) -> Result<DecayReport> {
    let sv = resolvent_product_singular_values(grid, b, p)?;
    let refined = resolvent_product_singular_values(&grid.refined(), b, p)?;
    let enlarged = resolvent_product_singular_values(&grid.enlarged(), b, p)?;
    let mut partial_sums = Vec::with_capacity(sv.len());
    let mut acc = 0.0;
    for s in &sv {
        acc += s;
        partial_sums.push(acc);
    }
    let trace_norm = acc;
    let refined_trace_norm: f64 = refined.iter().sum();
    let enlarged_trace_norm: f64 = enlarged.iter().sum();
    let (refinement_change, domain_growth, plausible) = if trace_norm == 0.0 {
        (0.0, 1.0, true)
    } else {
        let rc = (refined_trace_norm - trace_norm).abs() / trace_norm;
        let dg = enlarged_trace_norm / trace_norm;
        (rc, dg, rc <= REFINEMENT_GATE && dg <= DOMAIN_GROWTH_GATE)
    };
    Ok(DecayReport {
        p,
        decay_exponent: fit_decay_exponent(&sv),
        singular_values: sv,
        partial_sums,
        trace_norm,
        refined_trace_norm,
        enlarged_trace_norm,
        refinement_change,
        domain_growth,
        plausibly_trace_class: plausible,
    })
}

fn fit_decay_exponent(sv: &[f64]) -> f64 {
    let top = sv.first().copied().unwrap_or(0.0);
    let usable: Vec<(f64, f64)> = sv
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 1e-12 * top && s > 0.0)
        .map(|(k, &s)| (((k + 1) as f64).ln(), s.ln()))
        .collect();
    if usable.len() < 8 {
        return 0.0;
    }
    let tail = &usable[usable.len() / 2..];
    let m = tail.len() as f64;
    let (sx, sy) = tail.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let (num, den) = tail
        .iter()
        .fold((0.0, 0.0), |(n, d), (x, y)| (n + (x - mx) * (y - my), d + (x - mx) * (x - mx)));
    if den == 0.0 {
        0.0
    } else {
        -num / den
    }
}

// ---------------------------------------------------------------------------
// Connection profiles and the suspension operator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThetaProfile {
    /// `(1 + tanh t)/2`.
    Logistic,
    /// `1/2 + arctan(sinh 2t)/π`.
    ScaledArctan,
}

impl ThetaProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            ThetaProfile::Logistic => 0.5 * (1.0 + t.tanh()),
            ThetaProfile::ScaledArctan => 0.5 + (2.0 * t).sinh().atan() / PI,
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            ThetaProfile::Logistic => 0.5 / t.cosh().powi(2),
            ThetaProfile::ScaledArctan => 2.0 / (PI * (2.0 * t).cosh()),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ThetaProfile::Logistic => "logistic",
            ThetaProfile::ScaledArctan => "scaled-arctan",
        }
    }

    /// Distance of θ from its limits at `±T`.
    pub fn limit_gap(&self, t_edge: f64) -> f64 {
        self.eval(-t_edge).max(1.0 - self.eval(t_edge))
    }
}

/// Precondition on the half-period `T/2` of the suspension t-grid.
pub const THETA_LIMIT_TOL: f64 = 1e-6;

/// `D = d/dt ⊗ 1 + 1 ⊗ A₁ + M_θ ⊗ B` on a periodic `(t, x)` grid.
///
/// The t-grid covers `[-T, T)`. On `|τ| ≤ T/2` the connection is `θ(τ)`;
/// beyond it is reflected (`θ(T − τ)` and `θ(−T − τ)`), so the operator
/// returns to `A₁` smoothly across the periodic seam. Traces of this operator
/// are taken over the physical half `|τ| < T/2` only, since the full trace of
/// a commutator-type difference of finite matrices vanishes.
#[derive(Debug, Clone)]
pub struct SuspensionOperator {
    pub matrix: DenseMatrix,
    pub t_grid: GridSpec,
    pub x_grid: GridSpec,
    pub theta: ThetaProfile,
    pub theta_samples: Vec<f64>,
    pub components: usize,
    a1: DenseMatrix,
    b: DenseMatrix,
}

fn reflected_theta(theta: ThetaProfile, tau: f64, big_t: f64) -> f64 {
    if tau > big_t / 2.0 {
        theta.eval(big_t - tau)
    } else if tau < -big_t / 2.0 {
        theta.eval(-big_t - tau)
    } else {
        theta.eval(tau)
    }
}

pub fn build_suspension(
    a1: &LatticeOperator,
    b: &PerturbationProfile,
    theta: ThetaProfile,
    t_grid: &GridSpec,
    x_grid: &GridSpec,
) -> Result<SuspensionOperator> {
    if a1.grid != *x_grid {
        return Err(WittenError::Domain("A₁ must live on the x-grid".into()));
    }
    let big_t = t_grid.half_width();
    let gap = theta.limit_gap(big_t / 2.0);
    if gap > THETA_LIMIT_TOL {
        return Err(WittenError::Domain(format!(
            "θ is {gap:e} away from its limits at ±T/2 = ±{}; widen the t-grid",
            big_t / 2.0
        )));
    }
    let d = b.components();
    let a = lift(a1, d)?;
    let bop = b.multiplication(x_grid);
    let theta_samples: Vec<f64> = (0..t_grid.points())
        .map(|i| reflected_theta(theta, t_grid.x(i), big_t))
        .collect();
    let at = discretize_dirac(t_grid);
    let nt = t_grid.points();
    let nx = a.dim();
    let i = Complex64::new(0.0, 1.0);
    // d/dt = i·A_t
    let mut m = at.matrix.scale(i).kron(&DenseMatrix::identity(nx));
    add_spatial_blocks(&mut m, nt, nx, &a.matrix, &bop.matrix, &theta_samples);
    Ok(SuspensionOperator {
        matrix: m,
        t_grid: *t_grid,
        x_grid: *x_grid,
        theta,
        theta_samples,
        components: d,
        a1: a.matrix,
        b: bop.matrix,
    })
}

fn add_spatial_blocks(m: &mut DenseMatrix, nt: usize, nx: usize, a: &DenseMatrix, b: &DenseMatrix, theta: &[f64]) {
    for it in 0..nt {
        let th = theta[it];
        for r in 0..nx {
            for c in 0..nx {
                let row = it * nx + r;
                let col = it * nx + c;
                let v = m.get(row, col) + a.get(r, c) + b.get(r, c) * th;
                m.set(row, col, v);
            }
        }
    }
}

impl SuspensionOperator {
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    /// `D* = −d/dt ⊗ 1 + 1 ⊗ A₁ + M_θ ⊗ B`, assembled from its parts rather
    /// than by transposing `D`.
    pub fn assemble_adjoint(&self) -> DenseMatrix {
        let at = discretize_dirac(&self.t_grid);
        let nt = self.t_grid.points();
        let nx = self.a1.rows();
        let mut m = at.matrix.scale(Complex64::new(0.0, -1.0)).kron(&DenseMatrix::identity(nx));
        add_spatial_blocks(&mut m, nt, nx, &self.a1, &self.b, &self.theta_samples);
        m
    }

    /// Rows whose t-coordinate lies in the physical half `|τ| < T/2`.
    pub fn window_rows(&self) -> Vec<usize> {
        let nx = self.a1.rows();
        let half = self.t_grid.half_width() / 2.0;
        (0..self.t_grid.points())
            .filter(|&it| self.t_grid.x(it).abs() < half)
            .flat_map(|it| (it * nx)..((it + 1) * nx))
            .collect()
    }

    /// `max|DD* − D*D|`.
    pub fn commutator_defect(&self) -> Result<f64> {
        let dstar = self.assemble_adjoint();
        let ddstar = self.matrix.matmul(&dstar)?;
        let dstard = dstar.matmul(&self.matrix)?;
        Ok(ddstar.max_abs_diff(&dstard)?)
    }

    pub fn heat_difference(&self) -> Result<HeatDifference> {
        let dstar = self.assemble_adjoint();
        let ddstar = self.matrix.matmul(&dstar)?.symmetrize()?;
        let dstard = dstar.matmul(&self.matrix)?.symmetrize()?;
        let (e1, e2) = rayon::join(|| herm_eig(&ddstar), || herm_eig(&dstard));
        let rows = self.window_rows();
        Ok(HeatDifference {
            dd_star: WindowedSpectrum::new(&e1?, &rows),
            d_star_d: WindowedSpectrum::new(&e2?, &rows),
        })
    }
}

/// Eigenvalues with the squared eigenvector mass inside the trace window.
#[derive(Debug, Clone)]
struct WindowedSpectrum {
    eigenvalues: Vec<f64>,
    window_mass: Vec<f64>,
}

impl WindowedSpectrum {
    fn new(eig: &EigenSystem, rows: &[usize]) -> Self {
        let n = eig.dim();
        let window_mass = (0..n)
            .map(|k| rows.iter().map(|&r| eig.eigenvectors.get(r, k).norm_sqr()).sum())
            .collect();
        Self {
            eigenvalues: eig.eigenvalues.clone(),
            window_mass,
        }
    }

    fn heat_trace(&self, t: f64) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.window_mass)
            .map(|(l, w)| (-t * l).exp() * w)
            .sum()
    }
}

/// Cached eigendata for `t ↦ tr_W(e^{-tDD*} − e^{-tD*D})`.
#[derive(Debug, Clone)]
pub struct HeatDifference {
    dd_star: WindowedSpectrum,
    d_star_d: WindowedSpectrum,
}

impl HeatDifference {
    /// The windowed trace of `e^{-tDD*} − e^{-tD*D}`.
    pub fn raw(&self, t: f64) -> f64 {
        self.dd_star.heat_trace(t) - self.d_star_d.heat_trace(t)
    }

    /// The raw trace in the orientation of [`HeatTrace::rhs`].
    pub fn oriented(&self, t: f64) -> f64 {
        conventions::PTF_LHS_ORIENTATION * self.raw(t)
    }
}

/// Left side of the principal trace formula at one `t`, oriented to compare
/// directly with [`heat_trace_rhs`].
pub fn ptf_lhs(d: &SuspensionOperator, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(WittenError::Domain(format!("heat time must be positive, got {t}")));
    }
    Ok(d.heat_difference()?.oriented(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(l: f64, n: usize) -> GridSpec {
        GridSpec::new(l, n).unwrap()
    }

    #[test]
    fn dirac_kills_constants_and_differentiates_plane_waves() {
        let g = grid(8.0, 64);
        let a = discretize_dirac(&g);
        assert!(a.is_hermitian());
        let ones = vec![Complex64::new(1.0, 0.0); 64];
        let r = a.matrix.matvec(&ones).unwrap();
        assert!(r.iter().all(|z| z.norm() < 1e-12));

        let k = PI / g.half_width();
        let wave: Vec<Complex64> = g.nodes().iter().map(|&x| Complex64::from_polar(1.0, k * x)).collect();
        let r = a.matrix.matvec(&wave).unwrap();
        for (u, v) in r.iter().zip(&wave) {
            assert!((u - v * k).norm() < 1e-10);
        }
    }

    #[test]
    fn dirac_spectrum() {
        let g = grid(5.0, 32);
        let a = discretize_dirac(&g);
        let eig = herm_eig(&a.matrix).unwrap();
        let expected = dirac_frequencies(&g);
        for (l, e) in eig.eigenvalues.iter().zip(&expected) {
            assert!((l - e).abs() < 1e-10, "{l} vs {e}");
        }
    }

    #[test]
    fn profiles_check_certificates() {
        assert!(PerturbationProfile::scalar(|x| 2.0 / (1.0 + x * x), Some(1.0), "bad").is_err());
        assert!(PerturbationProfile::scalar(|x| 2.0 / (1.0 + x * x), Some(2.0), "ok").is_ok());
        assert!(PerturbationProfile::gaussian(1.0, 3.0).is_ok());
        let c = PerturbationProfile::constant(1.0);
        assert_eq!(c.decay_bound(), None);
        assert_eq!(witten_index_closed_form(&c).unwrap_err(), WittenError::InsufficientDecay);
    }

    #[test]
    fn closed_form_values() {
        let r = witten_index_closed_form(&PerturbationProfile::lorentzian(1.0)).unwrap();
        assert!((r.value - 0.5).abs() < 1e-12);
        for mu in [0.3, 2.7] {
            let r = witten_index_closed_form(&PerturbationProfile::lorentzian(mu)).unwrap();
            assert!((r.value - mu / 2.0).abs() < 1e-8);
        }
        assert_eq!(witten_index_closed_form(&PerturbationProfile::zero()).unwrap().value, 0.0);
        // ∫ μ e^{-x²/w²} = μ w √π
        let g = PerturbationProfile::gaussian(0.8, 1.5).unwrap();
        let r = witten_index_closed_form(&g).unwrap();
        assert!((r.value - 0.8 * 1.5 * PI.sqrt() / (2.0 * PI)).abs() < 1e-10);
    }

    #[test]
    fn heat_integral_matches_erf_identity() {
        // √(t/π) ∫₁² tr(e^{-tA_s²}B) ds = ½ tr[erf(√t A₂) − erf(√t A₁)]
        let g = grid(10.0, 64);
        let a = discretize_dirac(&g);
        let b = PerturbationProfile::lorentzian(1.3).multiplication(&g);
        let t = 1.7;
        let heat = HeatTrace::new(&a, &b, 12).unwrap();
        let lhs = (t / PI).sqrt() * heat.integral(t);
        let tr_erf = |m: &DenseMatrix| -> f64 {
            let eig = herm_eig(m).unwrap();
            eig.eigenvalues.iter().map(|l| libm::erf(t.sqrt() * l)).sum()
        };
        let a2 = a.add(&b).unwrap();
        let oracle = 0.5 * (tr_erf(&a2.matrix) - tr_erf(&a.matrix));
        assert!((lhs - oracle).abs() < 1e-10, "{lhs} vs {oracle}");
    }

    #[test]
    fn zero_perturbation_gives_zero() {
        let g = grid(10.0, 64);
        let a = discretize_dirac(&g);
        let v = heat_trace_rhs(&a, &PerturbationProfile::zero(), 2.0, 8).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn plateau_detection_picks_longest_run() {
        let t = geometric_schedule(1.0, 7);
        let v = [0.3, 0.49, 0.492, 0.493, 0.491, 0.492, 0.494, 0.2];
        let e = detect_plateau(&t, &v, 1000.0, &PlateauRule::default()).unwrap();
        assert_eq!(e.plateau_window, (2.0, 64.0));
        assert!((e.plateau_value - 0.492).abs() < 1e-12);
        assert!((e.uncertainty - 0.002).abs() < 1e-12);

        let err = detect_plateau(&t, &v, 20.0, &PlateauRule::default()).unwrap_err();
        assert!(matches!(err, WittenError::NoPlateau { .. }));
    }

    #[test]
    fn theta_profiles_admissible() {
        for th in [ThetaProfile::Logistic, ThetaProfile::ScaledArctan] {
            assert!((th.eval(0.0) - 0.5).abs() < 1e-15);
            assert!(th.limit_gap(8.0) < THETA_LIMIT_TOL);
            let mut prev = 0.0;
            for i in 0..200 {
                let t = -10.0 + 0.1 * i as f64;
                let v = th.eval(t);
                assert!(v > 0.0 && v < 1.0 && v >= prev);
                prev = v;
                let fd = (th.eval(t + 1e-6) - th.eval(t - 1e-6)) / 2e-6;
                assert!((fd - th.derivative(t)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn suspension_rejects_narrow_t_grid() {
        let xg = grid(6.0, 16);
        let a = discretize_dirac(&xg);
        let r = build_suspension(&a, &PerturbationProfile::lorentzian(1.0), ThetaProfile::Logistic, &grid(8.0, 32), &xg);
        assert!(matches!(r, Err(WittenError::Domain(_))));
    }

    #[test]
    fn suspension_small_grid_structure() {
        let xg = grid(6.0, 16);
        let tg = grid(16.0, 48);
        let a = discretize_dirac(&xg);
        let free = build_suspension(&a, &PerturbationProfile::zero(), ThetaProfile::Logistic, &tg, &xg).unwrap();
        assert!(free.commutator_defect().unwrap() <= 1e-8);
        assert!(free.matrix.adjoint().max_abs_diff(&free.assemble_adjoint()).unwrap() <= 1e-10);
        let hd = free.heat_difference().unwrap();
        assert!(hd.raw(1.0).abs() < 1e-9);

        let d = build_suspension(&a, &PerturbationProfile::lorentzian(1.0), ThetaProfile::Logistic, &tg, &xg).unwrap();
        assert!(d.matrix.adjoint().max_abs_diff(&d.assemble_adjoint()).unwrap() <= 1e-10);
        assert!(d.commutator_defect().unwrap() > 0.01);
    }

    #[test]
    fn decay_exponent_of_power_law() {
        let sv: Vec<f64> = (1..200).map(|k| (k as f64).powf(-1.5)).collect();
        assert!((fit_decay_exponent(&sv) - 1.5).abs() < 1e-10);
    }
}
