//! Python bindings. Matrices cross the boundary as lists of rows; the
//! design `x` is `d × n`, one covariate per row and one sample per column.
//! Reports come back as plain dicts decoded from their JSON form.

use nalgebra::DVector;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;

use selfdistill::data::{DatasetSpec, Split};
use selfdistill::estimators::{fit_ridge as core_fit_ridge, fit_sd_recursive, xi_to_xibar as core_xi_to_xibar};
use selfdistill::estimators::{xibar_to_xi as core_xibar_to_xi, XiBar};
use selfdistill::risk::{self, LambdaRange};
use selfdistill::serial::{matrix_from_rows, matrix_to_rows};
use selfdistill::spectral::{make_synthetic, BasisKind, SyntheticSpec, ThetaSpec};
use selfdistill::{solver, tuner, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Csv(_) | Error::Data(_) | Error::Schema { .. } => PyOSError::new_err(e.to_string()),
        Error::Infeasible(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn as_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<nalgebra::DMatrix<f64>> {
    matrix_from_rows(rows).map_err(PyValueError::new_err)
}

/// Fixed-design regression problem: `Y = Xᵀθ* + ε`, `ε ~ N(0, γ² I)`.
#[pyclass(name = "ProblemInstance", module = "selfdistill_py", frozen)]
struct PyProblemInstance {
    inner: selfdistill::spectral::ProblemInstance,
}

#[pymethods]
impl PyProblemInstance {
    #[new]
    fn new(x: Vec<Vec<f64>>, theta_star: Vec<f64>, gamma: f64) -> PyResult<Self> {
        let inner = selfdistill::spectral::ProblemInstance::new(matrix(&x)?, DVector::from_vec(theta_star), gamma * gamma)
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Instance with the given nonzero singular values and `θ* = Σ_j c_j u_j`.
    #[staticmethod]
    #[pyo3(signature = (d, n, singular_values, theta_coefficients, gamma, seed=0, basis="random"))]
    fn synthetic(
        d: usize,
        n: usize,
        singular_values: Vec<f64>,
        theta_coefficients: Vec<f64>,
        gamma: f64,
        seed: u64,
        basis: &str,
    ) -> PyResult<Self> {
        let basis = match basis {
            "random" => BasisKind::Random,
            "identity" => BasisKind::Identity,
            other => return Err(PyValueError::new_err(format!("unknown basis {other:?}"))),
        };
        let spec = SyntheticSpec {
            d,
            n,
            singular_values,
            theta: ThetaSpec::Coefficients {
                values: theta_coefficients,
            },
            gamma,
            seed,
            basis,
        };
        Ok(Self {
            inner: make_synthetic(&spec).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: selfdistill::spectral::ProblemInstance::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma2().sqrt()
    }

    #[getter]
    fn singular_values(&self) -> Vec<f64> {
        self.inner.spectrum().nonzero().to_vec()
    }

    #[getter]
    fn theta_star(&self) -> Vec<f64> {
        self.inner.theta_star().as_slice().to_vec()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.x_matrix())
    }

    fn __repr__(&self) -> String {
        format!(
            "ProblemInstance(d={}, n={}, rank={}, gamma={})",
            self.inner.dim(),
            self.inner.n_samples(),
            self.inner.rank(),
            self.inner.gamma2().sqrt()
        )
    }
}

/// Closed-form excess risk of the k-step estimator at `ξ̄` (`k = len(xibar)`).
#[pyfunction]
fn excess_risk<'py>(
    py: Python<'py>,
    instance: &PyProblemInstance,
    lam: f64,
    xibar: Vec<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    as_dict(py, &risk::excess_risk_closed(&instance.inner, lam, &XiBar::new(xibar)).map_err(to_py)?)
}

#[pyfunction]
fn ridge_risk<'py>(py: Python<'py>, instance: &PyProblemInstance, lam: f64) -> PyResult<Bound<'py, PyAny>> {
    as_dict(py, &risk::ridge_risk(&instance.inner, lam).map_err(to_py)?)
}

#[pyfunction]
#[pyo3(signature = (instance, lo=1e-6, hi=1e6))]
fn ridge_lambda_star<'py>(py: Python<'py>, instance: &PyProblemInstance, lo: f64, hi: f64) -> PyResult<Bound<'py, PyAny>> {
    as_dict(py, &risk::ridge_lambda_star(&instance.inner, LambdaRange { lo, hi }).map_err(to_py)?)
}

/// Risk of the best preconditioner that is diagonal in the singular basis.
#[pyfunction]
fn lower_bound(instance: &PyProblemInstance) -> f64 {
    risk::lower_bound(&instance.inner)
}

/// `M`, `m` and `c` with risk `ξ̄ᵀMξ̄ + 2mᵀξ̄ + c`.
#[pyfunction]
fn quadratic_coefficients<'py>(
    py: Python<'py>,
    instance: &PyProblemInstance,
    lam: f64,
    k: usize,
) -> PyResult<Bound<'py, PyAny>> {
    as_dict(py, &risk::quadratic_coefficients(&instance.inner, lam, k).map_err(to_py)?)
}

#[pyfunction]
#[pyo3(signature = (instance, lam, xibar, trials=10_000, seed=0))]
fn monte_carlo_risk<'py>(
    py: Python<'py>,
    instance: &PyProblemInstance,
    lam: f64,
    xibar: Vec<f64>,
    trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let reports = risk::monte_carlo_batch(&instance.inner, lam, &[XiBar::new(xibar)], trials, seed).map_err(to_py)?;
    as_dict(py, &reports[0])
}

#[pyfunction]
fn dominance_check<'py>(py: Python<'py>, instance: &PyProblemInstance) -> PyResult<Bound<'py, PyAny>> {
    as_dict(py, &risk::strict_dominance_condition(&instance.inner).map_err(to_py)?)
}

#[pyfunction]
fn xi_to_xibar(xi: Vec<f64>) -> Vec<f64> {
    core_xi_to_xibar(&xi).as_slice().to_vec()
}

/// Raises `ValueError` when a tail sum of `xibar` vanishes.
#[pyfunction]
fn xibar_to_xi(xibar: Vec<f64>) -> PyResult<Vec<f64>> {
    core_xibar_to_xi(&XiBar::new(xibar)).map_err(to_py)
}

/// Risk-minimizing `ξ̄` for k steps at a fixed λ.
#[pyfunction]
fn solve_xibar_argmin(instance: &PyProblemInstance, lam: f64, k: usize) -> PyResult<Vec<f64>> {
    let q = risk::quadratic_coefficients(&instance.inner, lam, k).map_err(to_py)?;
    Ok(solver::solve_xibar_argmin(&q).as_slice().to_vec())
}

/// Solves for the `r`-step `ξ̄` that meets the lower bound at λ.
#[pyfunction]
fn solve_xibar_exact<'py>(py: Python<'py>, instance: &PyProblemInstance, lam: f64) -> PyResult<Bound<'py, PyAny>> {
    as_dict(py, &solver::solve_xibar_exact(&instance.inner, lam).map_err(to_py)?)
}

#[pyfunction]
#[pyo3(signature = (instance, lambda_grid=None))]
fn search_lambda_achieving_bound<'py>(
    py: Python<'py>,
    instance: &PyProblemInstance,
    lambda_grid: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let grid = lambda_grid.unwrap_or_else(solver::default_lambda_grid);
    as_dict(py, &solver::search_lambda_achieving_bound(&instance.inner, &grid).map_err(to_py)?)
}

#[pyfunction]
fn fit_ridge(x: Vec<Vec<f64>>, y: Vec<f64>, lam: f64) -> PyResult<Vec<f64>> {
    let w = core_fit_ridge(&matrix(&x)?, &DVector::from_vec(y), lam).map_err(to_py)?;
    Ok(w.theta_hat.as_slice().to_vec())
}

/// k-step distillation by repeated ridge fits, `k = len(xi)`.
#[pyfunction]
fn fit_sd(x: Vec<Vec<f64>>, y: Vec<f64>, lam: f64, xi: Vec<f64>) -> PyResult<Vec<f64>> {
    let w = fit_sd_recursive(&matrix(&x)?, &DVector::from_vec(y), lam, &xi).map_err(to_py)?;
    Ok(w.theta_hat.as_slice().to_vec())
}

/// The `ξ̄` probe points used by the tuner for k steps.
#[pyfunction]
fn probe_design(k: usize) -> Vec<Vec<f64>> {
    tuner::probe_design(k).xibars
}

fn split(x: &[Vec<f64>], y: Vec<f64>) -> PyResult<Split> {
    let x_matrix = matrix(x)?;
    if x_matrix.ncols() != y.len() {
        return Err(PyValueError::new_err(format!(
            "x has {} samples but y has {}",
            x_matrix.ncols(),
            y.len()
        )));
    }
    Ok(Split {
        x_matrix,
        y: DVector::from_vec(y),
    })
}

/// Picks λ from the grid and `ξ` for k steps by validation MSE.
#[pyfunction]
fn tune<'py>(
    py: Python<'py>,
    x_train: Vec<Vec<f64>>,
    y_train: Vec<f64>,
    x_val: Vec<Vec<f64>>,
    y_val: Vec<f64>,
    lambda_grid: Vec<f64>,
    k: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let train = split(&x_train, y_train)?;
    let val = split(&x_val, y_val)?;
    let res = py.detach(|| tuner::tune(&train, &val, &lambda_grid, k)).map_err(to_py)?;
    as_dict(py, &res)
}

/// Loads, cleans, splits and whitens a dataset described by a JSON spec;
/// returns its manifest.
#[pyfunction]
fn prepare_dataset<'py>(py: Python<'py>, spec_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let spec: DatasetSpec = serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let ds = spec.prepare().map_err(to_py)?;
    as_dict(py, &selfdistill::data::manifest(&spec, &ds))
}

#[pymodule]
pub fn selfdistill_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblemInstance>()?;
    m.add_function(wrap_pyfunction!(excess_risk, m)?)?;
    m.add_function(wrap_pyfunction!(ridge_risk, m)?)?;
    m.add_function(wrap_pyfunction!(ridge_lambda_star, m)?)?;
    m.add_function(wrap_pyfunction!(lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(quadratic_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_risk, m)?)?;
    m.add_function(wrap_pyfunction!(dominance_check, m)?)?;
    m.add_function(wrap_pyfunction!(xi_to_xibar, m)?)?;
    m.add_function(wrap_pyfunction!(xibar_to_xi, m)?)?;
    m.add_function(wrap_pyfunction!(solve_xibar_argmin, m)?)?;
    m.add_function(wrap_pyfunction!(solve_xibar_exact, m)?)?;
    m.add_function(wrap_pyfunction!(search_lambda_achieving_bound, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ridge, m)?)?;
    m.add_function(wrap_pyfunction!(fit_sd, m)?)?;
    m.add_function(wrap_pyfunction!(probe_design, m)?)?;
    m.add_function(wrap_pyfunction!(tune, m)?)?;
    m.add_function(wrap_pyfunction!(prepare_dataset, m)?)?;
    Ok(())
}
