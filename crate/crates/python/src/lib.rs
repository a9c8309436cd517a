//! Python bindings for `opindex`.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use opindex::cli;
use opindex::grid::GridSpec;
use opindex::linalg::tolerances;
use opindex::scattering::{self as sc, Mat2, Potential};
use opindex::toeplitz::{self as tp, CircleSymbol, HalfInteger};
use opindex::witten::{self as wt, PerturbationProfile, PlateauRule};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_rows(m: &Mat2) -> Vec<Vec<Complex64>> {
    vec![vec![m[0], m[1]], vec![m[2], m[3]]]
}

fn from_rows(rows: Vec<Vec<Complex64>>) -> PyResult<Mat2> {
    if rows.len() != 2 || rows.iter().any(|r| r.len() != 2) {
        return Err(PyValueError::new_err("expected a 2x2 nested list"));
    }
    Ok([rows[0][0], rows[0][1], rows[1][0], rows[1][1]])
}

/// Fedosov index of the two-lattice Toeplitz example with interior size `n`.
#[pyfunction]
#[pyo3(signature = (n = 64))]
fn toeplitz_example_index(n: i64) -> PyResult<f64> {
    let pair = tp::build_paper_example(n).map_err(value_err)?;
    let report = tp::fedosov_index(&pair.t_op, &pair.parametrix, n).map_err(runtime_err)?;
    Ok(report.fedosov_value.re)
}

/// Winding, SVD kernel/cokernel and index for `a(θ) = e^{ikθ}(1 + ε cos θ)`.
#[pyfunction]
#[pyo3(signature = (degree, epsilon = 0.0, truncation = 64, guard = 8))]
fn toeplitz_symbol_index<'py>(
    py: Python<'py>,
    degree: i64,
    epsilon: f64,
    truncation: usize,
    guard: usize,
) -> PyResult<Bound<'py, PyDict>> {
    if epsilon.abs() >= 1.0 {
        return Err(PyValueError::new_err("|epsilon| must be below 1"));
    }
    let symbol = CircleSymbol::new(
        move |t| Complex64::from_polar(1.0 + epsilon * t.cos(), degree as f64 * t),
        HalfInteger::ZERO,
        8 * (degree.unsigned_abs() as usize + 4),
    )
    .map_err(value_err)?;
    let r = tp::symbol_index_report(&symbol, truncation, guard, tolerances::SVD_ZERO).map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("winding", r.winding)?;
    d.set_item("kernel_dim", r.svd_kernel_dim)?;
    d.set_item("cokernel_dim", r.svd_cokernel_dim)?;
    d.set_item("index", r.verdict.index)?;
    d.set_item("certain", r.verdict.certain)?;
    Ok(d)
}

/// `(1/2π) ∫ μ/(1+x²) dx` by quadrature.
#[pyfunction]
fn witten_closed_form(mu: f64) -> PyResult<f64> {
    wt::witten_index_closed_form(&PerturbationProfile::lorentzian(mu))
        .map(|c| c.value)
        .map_err(runtime_err)
}

/// Heat-trace plateau estimate of the Witten index for `B = μ/(1+x²)`.
#[pyfunction]
#[pyo3(signature = (mu, half_width = 40.0, points = 1024, t0 = 1.0, levels = 7, s_nodes = 8))]
fn witten_estimate<'py>(
    py: Python<'py>,
    mu: f64,
    half_width: f64,
    points: usize,
    t0: f64,
    levels: usize,
    s_nodes: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let grid = GridSpec::new(half_width, points).map_err(value_err)?;
    let a1 = wt::discretize_dirac(&grid);
    let b = PerturbationProfile::lorentzian(mu);
    let schedule = wt::geometric_schedule(t0, levels);
    let est = py
        .detach(|| wt::witten_index_estimate(&a1, &b, &schedule, s_nodes, &PlateauRule::default()))
        .map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("plateau", est.plateau_value)?;
    d.set_item("uncertainty", est.uncertainty)?;
    d.set_item("window", est.plateau_window)?;
    d.set_item("t", est.t_samples)?;
    d.set_item("rhs", est.rhs_values)?;
    d.set_item("validity_ceiling", est.validity_ceiling)?;
    Ok(d)
}

/// `W(D, σDσ*)` for the σ built from a unitary zero-energy limit `S(-∞)`.
#[pyfunction]
fn witten_index_sigma(limit: Vec<Vec<Complex64>>) -> PyResult<f64> {
    let s = from_rows(limit)?;
    let sigma = sc::build_sigma(&s).map_err(value_err)?;
    sc::witten_index_sigma(&sigma).map(|w| w.value).map_err(runtime_err)
}

/// Square well `V = -depth` on `|x| < half_width`, in units `ħ = 2m = 1`.
#[pyclass(frozen)]
struct SquareWell {
    #[pyo3(get)]
    depth: f64,
    #[pyo3(get)]
    half_width: f64,
    potential: Potential,
}

#[pymethods]
impl SquareWell {
    #[new]
    fn new(depth: f64, half_width: f64) -> PyResult<Self> {
        let potential = Potential::square_well(depth, half_width).map_err(value_err)?;
        Ok(Self {
            depth,
            half_width,
            potential,
        })
    }

    fn __repr__(&self) -> String {
        format!("SquareWell(depth={}, half_width={})", self.depth, self.half_width)
    }

    /// Transfer matrix `(A_L, B_L) -> (A_R, B_R)` at wavenumber `k`.
    fn transfer_matrix(&self, k: f64) -> PyResult<Vec<Vec<Complex64>>> {
        sc::transfer_matrix(&self.potential, k)
            .map(|m| to_rows(&m))
            .map_err(value_err)
    }

    /// `S(k) = [[t, r₋], [r₊, t]]`.
    fn s_matrix(&self, k: f64) -> PyResult<Vec<Vec<Complex64>>> {
        let m = sc::transfer_matrix(&self.potential, k).map_err(value_err)?;
        Ok(to_rows(&sc::s_from_transfer(&m)))
    }

    fn bound_states(&self) -> PyResult<usize> {
        sc::bound_states(&self.potential, &sc::default_bound_state_grid(&self.potential)).map_err(runtime_err)
    }

    fn levinson<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = py.detach(|| sc::levinson_check(&self.potential)).map_err(runtime_err)?;
        let d = PyDict::new(py);
        d.set_item("n_bound", r.n_bound)?;
        d.set_item("phase_winding", r.phase_winding)?;
        d.set_item("resonance_flag", r.resonance_flag)?;
        d.set_item("levinson_value", r.levinson_value)?;
        d.set_item("residual", r.residual)?;
        d.set_item("accepted", r.accepted)?;
        d.set_item("k", r.curve.k_samples)?;
        d.set_item("phase", r.unwrapped_phase)?;
        Ok(d)
    }

    fn corrected_index<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = py
            .detach(|| -> Result<sc::CorrectedIndex, sc::ScatteringError> {
                let line = sc::exp_resample(&sc::default_curve(&self.potential)?)?;
                let sigma = sc::build_sigma(&line.s_minus_infinity)?;
                sc::corrected_index(&line, &sigma)
            })
            .map_err(runtime_err)?;
        let d = PyDict::new(py);
        d.set_item("index", c.fredholm_index)?;
        d.set_item("w_scattering", c.w_scattering)?;
        d.set_item("w_sigma", c.w_sigma)?;
        d.set_item("decomposition_residual", c.decomposition_residual)?;
        Ok(d)
    }
}

/// Depth near `(mπ/2a)²` with a zero-energy resonance.
#[pyfunction]
#[pyo3(signature = (half_width, m = 1))]
fn resonance_depth(half_width: f64, m: u32) -> PyResult<f64> {
    sc::resonance_depth(half_width, m).map_err(value_err)
}

/// Runs a command-line invocation (without the program name) and returns
/// `(exit_code, record_json)`. `--out` and `--format` are ignored.
#[pyfunction]
#[pyo3(signature = (args, config_text = None))]
fn run(py: Python<'_>, args: Vec<String>, config_text: Option<String>) -> PyResult<(i32, String)> {
    let argv = std::iter::once("opindex".to_string()).chain(args);
    match cli::parse_config_with(argv, config_text.as_deref()) {
        Ok(config) => {
            let rec = py.detach(|| cli::run(&config));
            Ok((rec.exit_code, rec.to_json()))
        }
        Err(e) => {
            let rec = cli::ResultRecord::usage_error(&e.to_string());
            Ok((rec.exit_code, rec.to_json()))
        }
    }
}

#[pymodule]
fn pyopindex(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(toeplitz_example_index, m)?)?;
    m.add_function(wrap_pyfunction!(toeplitz_symbol_index, m)?)?;
    m.add_function(wrap_pyfunction!(witten_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(witten_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(witten_index_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(resonance_depth, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<SquareWell>()?;
    Ok(())
}
