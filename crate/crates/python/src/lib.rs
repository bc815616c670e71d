//! Python bindings for `ellrs`. Complex numbers map to Python `complex`, vectors to lists
//! and matrices to lists of rows.

use ellrs::belavin::{r_matrix, ybe_residual};
use ellrs::cli::{step_residuals, DEFAULT_U};
use ellrs::discrete::{solve_next, SolverConfig, Trajectory};
use ellrs::elliptic::{phi_kernel, theta_char as theta_char_impl, zeta_log, Characteristic};
use ellrs::identity::{run_all, SuiteConfig};
use ellrs::intertwiners::{phi_inverse, phi_matrix, WeightVector};
use ellrs::lax::{BacklundStep, PhaseConfig};
use ellrs::linalg::CMatrix;
use ellrs::{Error, ModelParams, TorusParams, C64};
use num_rational::Rational64;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(ellrs, EllrsError, PyRuntimeError, "Numerical failure in ellrs.");
create_exception!(ellrs, NoConvergenceError, EllrsError, "The Newton solve did not converge.");

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter { .. } | Error::DegenerateWeights(_) | Error::ShiftMismatch { .. } => {
            PyValueError::new_err(e.to_string())
        }
        Error::NoConvergence { .. } | Error::DegenerateSolution(_) => NoConvergenceError::new_err(e.to_string()),
        _ => EllrsError::new_err(e.to_string()),
    }
}

fn rows(m: &CMatrix) -> Vec<Vec<C64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Model parameters `(n, eta, tau)`.
#[pyclass(name = "Model", frozen, skip_from_py_object, module = "ellrs")]
#[derive(Clone, Copy)]
pub struct PyModel {
    inner: ModelParams,
}

impl PyModel {
    fn weights(&self, lam: Vec<C64>) -> PyResult<WeightVector> {
        WeightVector::new(lam, self.inner).map_err(to_py)
    }
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(n: usize, eta: C64, tau: C64) -> PyResult<Self> {
        let torus = TorusParams::new(tau).map_err(to_py)?;
        Ok(Self {
            inner: ModelParams::new(n, eta, torus).map_err(to_py)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn eta(&self) -> C64 {
        self.inner.eta()
    }

    #[getter]
    fn tau(&self) -> C64 {
        self.inner.tau()
    }

    #[getter]
    fn dedekind_eta(&self) -> C64 {
        self.inner.torus().dedekind_eta()
    }

    /// Odd theta function `theta[1/2, 1/2](z)`.
    fn theta(&self, z: C64) -> PyResult<C64> {
        self.inner.theta(z).map_err(to_py)
    }

    /// Level-n theta function `theta_j(z)`.
    fn theta_level(&self, j: i64, z: C64) -> PyResult<C64> {
        self.inner.theta_level(j, z).map_err(to_py)
    }

    /// Band theta function `theta^{(j)}(z)` of the R-matrix.
    fn theta_band(&self, j: i64, z: C64) -> PyResult<C64> {
        self.inner.theta_band(j, z).map_err(to_py)
    }

    /// Logarithmic derivative `theta'(z) / theta(z)`.
    fn zeta(&self, z: C64) -> PyResult<C64> {
        zeta_log(z, self.inner.torus()).map_err(to_py)
    }

    /// Kernel `theta(z + x) / (theta(z) theta(x))`.
    fn phi(&self, z: C64, x: C64) -> PyResult<C64> {
        phi_kernel(z, x, self.inner.torus()).map_err(to_py)
    }

    /// Intertwining matrix `phi(z)` for positions `lam`.
    fn phi_matrix(&self, lam: Vec<C64>, z: C64) -> PyResult<Vec<Vec<C64>>> {
        let w = self.weights(lam)?;
        Ok(rows(&phi_matrix(z, &w).map_err(to_py)?.entries))
    }

    /// Inverse intertwining matrix `phi_bar(z)`.
    fn phi_inverse(&self, lam: Vec<C64>, z: C64) -> PyResult<Vec<Vec<C64>>> {
        let w = self.weights(lam)?;
        Ok(rows(&phi_inverse(z, &w).map_err(to_py)?))
    }

    /// Belavin R-matrix as an `n^2 x n^2` matrix, row `i n + j`, column `i' n + j'`.
    fn r_matrix(&self, z: C64) -> PyResult<Vec<Vec<C64>>> {
        Ok(rows(&r_matrix(z, &self.inner).map_err(to_py)?.entries))
    }

    /// Relative Yang-Baxter residual at spectral parameters `(z, w)`.
    fn ybe_residual(&self, z: C64, w: C64) -> PyResult<f64> {
        ybe_residual(z, w, &self.inner).map_err(to_py)
    }

    /// Baecklund step from positions `lam` to `mu`.
    #[pyo3(signature = (lam, mu, c, u = DEFAULT_U))]
    fn backlund_step(&self, lam: Vec<C64>, mu: Vec<C64>, c: C64, u: C64) -> PyResult<PyBacklundStep> {
        let (l, m) = (self.weights(lam)?, self.weights(mu)?);
        Ok(PyBacklundStep {
            inner: BacklundStep::new(&l, &m, c, u).map_err(to_py)?,
        })
    }

    /// New positions `mu` with `t_k = e^c prod_s theta(lam_k - mu_s + eta/n) / theta(lam_k - mu_s)`.
    #[pyo3(signature = (lam, t, c, seed = 0, guess = None, tol = 1e-11, max_iter = 50, multistart = 5))]
    #[allow(clippy::too_many_arguments)]
    fn solve_next(
        &self,
        lam: Vec<C64>,
        t: Vec<C64>,
        c: C64,
        seed: u64,
        guess: Option<Vec<C64>>,
        tol: f64,
        max_iter: usize,
        multistart: usize,
    ) -> PyResult<Vec<C64>> {
        let l = self.weights(lam)?;
        let g = guess.map(|g| self.weights(g)).transpose()?;
        let cfg = SolverConfig {
            tol,
            max_iter,
            multistart,
            seed,
            ..Default::default()
        };
        let mu = solve_next(&l, &t, c, &cfg, g.as_ref()).map_err(to_py)?;
        Ok(mu.lambda().to_vec())
    }

    /// Evolves `(lam0, t0)` for `steps` steps with constant `c`.
    #[pyo3(signature = (lam0, t0, c, steps, seed = 0))]
    fn evolve(&self, lam0: Vec<C64>, t0: Vec<C64>, c: C64, steps: usize, seed: u64) -> PyResult<PyTrajectory> {
        let initial = PhaseConfig::new(self.weights(lam0)?, t0).map_err(to_py)?;
        let mut traj = Trajectory::new(initial, c, DEFAULT_U);
        let cfg = SolverConfig {
            seed,
            ..Default::default()
        };
        for _ in 0..steps {
            traj.step(c, &cfg).map_err(to_py)?;
        }
        Ok(PyTrajectory { inner: traj })
    }

    fn __repr__(&self) -> String {
        let (eta, tau) = (self.inner.eta(), self.inner.tau());
        format!(
            "Model(n={}, eta=({}{:+}j), tau=({}{:+}j))",
            self.inner.n(),
            eta.re,
            eta.im,
            tau.re,
            tau.im
        )
    }
}

/// A Baecklund transformation `(lambda, t) -> (mu, t_tilde)` with its gauge data.
#[pyclass(name = "BacklundStep", frozen, module = "ellrs")]
pub struct PyBacklundStep {
    inner: BacklundStep,
}

#[pymethods]
impl PyBacklundStep {
    #[getter]
    fn lam(&self) -> Vec<C64> {
        self.inner.lambda().lambda().to_vec()
    }

    #[getter]
    fn t(&self) -> Vec<C64> {
        self.inner.t().to_vec()
    }

    #[getter]
    fn mu(&self) -> Vec<C64> {
        self.inner.mu().lambda().to_vec()
    }

    #[getter]
    fn t_tilde(&self) -> Vec<C64> {
        self.inner.t_tilde().to_vec()
    }

    /// Weights `C_k` of the modification matrix.
    #[getter]
    fn c_weights(&self) -> Vec<C64> {
        self.inner.c_weights().to_vec()
    }

    #[getter]
    fn v(&self) -> C64 {
        self.inner.v()
    }

    /// Lax, eigenvector, kernel and KS residuals.
    fn residuals<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = step_residuals(&self.inner).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("lax", r.lax)?;
        d.set_item("eigen", r.eigen)?;
        d.set_item("kernel", r.kernel)?;
        d.set_item("ks", r.ks)?;
        Ok(d)
    }
}

/// States `(lambda(a), t(a), c(a))` of a discrete evolution.
#[pyclass(name = "Trajectory", frozen, module = "ellrs")]
pub struct PyTrajectory {
    inner: Trajectory,
}

#[pymethods]
impl PyTrajectory {
    fn __len__(&self) -> usize {
        self.inner.points().len()
    }

    #[getter]
    fn positions(&self) -> Vec<Vec<C64>> {
        self.inner.points().iter().map(|p| p.lambda.lambda().to_vec()).collect()
    }

    #[getter]
    fn weights(&self) -> Vec<Vec<C64>> {
        self.inner.points().iter().map(|p| p.t.clone()).collect()
    }

    /// Per-state, per-component residuals (discrete RS equation at interior states).
    fn residuals(&self) -> PyResult<Vec<Vec<f64>>> {
        self.inner.residuals().map_err(to_py)
    }
}

/// Theta function with rational characteristics `a = (num, den)`, `b = (num, den)`.
#[pyfunction]
pub fn theta_char(a: (i64, i64), b: (i64, i64), z: C64, tau: C64) -> PyResult<C64> {
    if a.1 == 0 || b.1 == 0 {
        return Err(PyValueError::new_err("characteristic denominators must be nonzero"));
    }
    let ch = Characteristic::new(Rational64::new(a.0, a.1), Rational64::new(b.0, b.1));
    theta_char_impl(&ch, z, tau).map_err(to_py)
}

/// Runs the identity suite and returns its reports as a list of dicts.
#[pyfunction]
#[pyo3(signature = (seed = 42, draws = 50, tol = None))]
pub fn verify(py: Python<'_>, seed: u64, draws: usize, tol: Option<f64>) -> PyResult<Py<PyAny>> {
    let cfg = SuiteConfig {
        seed,
        draws,
        tol,
        ..Default::default()
    };
    let reports = py.detach(|| run_all(&cfg)).map_err(to_py)?;
    let text = serde_json::to_string(&reports).map_err(|e| EllrsError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pymodule]
#[pyo3(name = "ellrs")]
pub fn ellrs_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyBacklundStep>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(theta_char, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("EllrsError", m.py().get_type::<EllrsError>())?;
    m.add("NoConvergenceError", m.py().get_type::<NoConvergenceError>())?;
    Ok(())
}
