//! Python bindings.

use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use rbirg_core::baselines::full_irg;
use rbirg_core::diagnostics;
use rbirg_core::imaging::{self, BlurKernel, Boundary, GrayImage};
use rbirg_core::schedule::CheckStatus;
use rbirg_core::{BilevelProblem, LeastSquaresInstance, Objective, RunOptions};

fn err(e: rbirg_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "BlockStructure", frozen, from_py_object)]
#[derive(Clone)]
struct PyBlockStructure(rbirg_core::BlockStructure);

#[pymethods]
impl PyBlockStructure {
    #[new]
    fn new(sizes: Vec<usize>) -> PyResult<Self> {
        rbirg_core::BlockStructure::new(&sizes).map(Self).map_err(err)
    }

    #[staticmethod]
    fn split_even(n: usize, d: usize) -> PyResult<Self> {
        rbirg_core::BlockStructure::split_even(n, d).map(Self).map_err(err)
    }

    #[getter]
    fn sizes(&self) -> Vec<usize> {
        self.0.sizes().to_vec()
    }

    #[getter]
    fn offsets(&self) -> Vec<usize> {
        self.0.offsets().to_vec()
    }

    #[getter]
    fn count(&self) -> usize {
        self.0.count()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn __repr__(&self) -> String {
        format!("BlockStructure({:?})", self.0.sizes())
    }
}

#[pyclass(name = "StepSchedule", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyStepSchedule(rbirg_core::StepSchedule);

#[pymethods]
impl PyStepSchedule {
    /// Either `delta` or both `a` and `b`.
    #[new]
    #[pyo3(signature = (gamma0, eta0, delta=None, a=None, b=None, r=0.5))]
    fn new(
        gamma0: f64,
        eta0: f64,
        delta: Option<f64>,
        a: Option<f64>,
        b: Option<f64>,
        r: f64,
    ) -> PyResult<Self> {
        let s = match (delta, a, b) {
            (Some(d), None, None) => rbirg_core::StepSchedule::with_delta(gamma0, eta0, d, r),
            (None, Some(a), Some(b)) => {
                rbirg_core::StepSchedule::with_exponents(gamma0, eta0, a, b, r)
            }
            _ => return Err(PyValueError::new_err("give delta, or both a and b")),
        };
        s.map(Self).map_err(err)
    }

    #[staticmethod]
    fn default_for(d: usize, mu: f64) -> PyResult<Self> {
        rbirg_core::StepSchedule::default_for(d, mu).map(Self).map_err(err)
    }

    #[getter]
    fn gamma0(&self) -> f64 {
        self.0.gamma0
    }

    #[getter]
    fn eta0(&self) -> f64 {
        self.0.eta0
    }

    #[getter]
    fn a(&self) -> f64 {
        self.0.a
    }

    #[getter]
    fn b(&self) -> f64 {
        self.0.b
    }

    #[getter]
    fn r(&self) -> f64 {
        self.0.r
    }

    /// `(γ_k, η_k, γ_k^r)`.
    fn eval(&self, k: u64) -> (f64, f64, f64) {
        let v = self.0.eval(k);
        (v.gamma, v.eta, v.weight)
    }

    /// `(passed, [(name, "pass" | "fail" | "n/a", detail), ...])`.
    fn validate(&self, mu: f64, d: usize) -> (bool, Vec<(String, &'static str, String)>) {
        let rep = self.0.validate(mu, d);
        let checks = rep
            .checks
            .iter()
            .map(|c| {
                let status = match c.status {
                    CheckStatus::Pass => "pass",
                    CheckStatus::Fail => "fail",
                    CheckStatus::NotApplicable => "n/a",
                };
                (c.name.clone(), status, c.detail.clone())
            })
            .collect();
        (rep.passed(), checks)
    }

    fn __repr__(&self) -> String {
        let s = &self.0;
        format!(
            "StepSchedule(gamma0={}, eta0={}, a={}, b={}, r={})",
            s.gamma0, s.eta0, s.a, s.b, s.r
        )
    }
}

/// Outcome of a solver run.
#[pyclass(name = "RunResult", frozen)]
struct PyRunResult {
    #[pyo3(get)]
    x: Vec<f64>,
    #[pyo3(get)]
    x_bar: Vec<f64>,
    #[pyo3(get)]
    oracle_calls: u64,
    /// Rows `(k, f_xbar, g_xbar, f_x, g_x, dist_ref)`.
    #[pyo3(get)]
    trace: Vec<(u64, f64, f64, f64, f64, Option<f64>)>,
    csv: String,
}

#[pymethods]
impl PyRunResult {
    fn to_csv(&self) -> String {
        self.csv.clone()
    }
}

/// Minimum-norm least squares: `f = ‖Ax − b‖²`, `g = ‖x‖²`.
#[pyclass(name = "LeastSquaresProblem", frozen)]
struct PyLeastSquares {
    inst: Arc<LeastSquaresInstance>,
    problem: BilevelProblem,
}

#[pymethods]
impl PyLeastSquares {
    #[new]
    #[pyo3(signature = (rows, b, blocks=None))]
    fn new(rows: Vec<Vec<f64>>, b: Vec<f64>, blocks: Option<PyBlockStructure>) -> PyResult<Self> {
        let inst = Arc::new(LeastSquaresInstance::from_rows(&rows, &b).map_err(err)?);
        let structure = match blocks {
            Some(s) => s.0,
            None => rbirg_core::BlockStructure::single(inst.cols()).map_err(err)?,
        };
        let problem =
            BilevelProblem::min_norm_least_squares(inst.clone(), structure).map_err(err)?;
        Ok(Self { inst, problem })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inst.value(&x).map_err(err)
    }

    fn subgradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inst.value_subgrad(&x).map_err(err)?.1)
    }

    fn min_norm_solution(&self) -> PyResult<Vec<f64>> {
        rbirg_core::min_norm_oracle(&self.inst).map_err(err)
    }

    /// Runs RB-IRG, or full-vector IRG with `full=True`.
    #[pyo3(signature = (schedule, iterations, seed=0, checkpoints=None, reference=None, full=false))]
    fn run(
        &self,
        py: Python<'_>,
        schedule: PyStepSchedule,
        iterations: u64,
        seed: u64,
        checkpoints: Option<Vec<u64>>,
        reference: Option<Vec<f64>>,
        full: bool,
    ) -> PyResult<PyRunResult> {
        let mut opts = RunOptions::new(iterations, seed);
        if let Some(c) = checkpoints {
            opts = opts.checkpoints(c);
        }
        if let Some(r) = reference {
            opts = opts.reference(r);
        }
        let problem = &self.problem;
        let res = py
            .detach(|| {
                if full {
                    full_irg(problem, &schedule.0, &opts)
                } else {
                    rbirg_core::run_rbirg(problem, &schedule.0, &opts)
                }
            })
            .map_err(err)?;
        Ok(PyRunResult {
            x: res.state.x.clone(),
            x_bar: res.state.x_bar.clone(),
            oracle_calls: res.trace.oracle_calls,
            csv: res.trace.to_csv(),
            trace: res
                .trace
                .rows
                .iter()
                .map(|r| (r.k, r.f_xbar, r.g_xbar, r.f_x, r.g_x, r.dist_ref))
                .collect(),
        })
    }
}

/// `A⁺b` for a dense matrix given by rows.
#[pyfunction]
fn min_norm_oracle(rows: Vec<Vec<f64>>, b: Vec<f64>) -> PyResult<Vec<f64>> {
    let inst = LeastSquaresInstance::from_rows(&rows, &b).map_err(err)?;
    rbirg_core::min_norm_oracle(&inst).map_err(err)
}

fn boundary(name: &str) -> PyResult<Boundary> {
    match name {
        "zero" => Ok(Boundary::Zero),
        "replicate" => Ok(Boundary::Replicate),
        other => Err(PyValueError::new_err(format!(
            "boundary must be 'zero' or 'replicate', got {other:?}"
        ))),
    }
}

/// Gaussian blur of a row-major image.
#[pyfunction]
#[pyo3(signature = (pixels, width, height, size=5, sigma=1.0, boundary_mode="replicate"))]
fn gaussian_blur(
    pixels: Vec<f64>,
    width: usize,
    height: usize,
    size: usize,
    sigma: f64,
    boundary_mode: &str,
) -> PyResult<Vec<f64>> {
    let img = GrayImage::new(width, height, pixels).map_err(err)?;
    let k = BlurKernel::gaussian(size, sigma).map_err(err)?;
    Ok(imaging::apply_blur(&k, &img, boundary(boundary_mode)?).into_pixels())
}

/// Dense blur operator as a list of rows.
#[pyfunction]
#[pyo3(signature = (width, height, size=5, sigma=1.0, boundary_mode="replicate"))]
fn blur_matrix(
    width: usize,
    height: usize,
    size: usize,
    sigma: f64,
    boundary_mode: &str,
) -> PyResult<Vec<Vec<f64>>> {
    let k = BlurKernel::gaussian(size, sigma).map_err(err)?;
    let a = imaging::blur_matrix(&k, width, height, boundary(boundary_mode)?).map_err(err)?;
    Ok(a.row_iter().map(|r| r.iter().copied().collect()).collect())
}

/// `(slope, intercept)` of `log gap` against `log k` over `k ≥ k_min`.
#[pyfunction]
#[pyo3(signature = (ks, gaps, k_min=1))]
fn fit_rate_slope(ks: Vec<u64>, gaps: Vec<f64>, k_min: u64) -> PyResult<(f64, f64)> {
    if ks.len() != gaps.len() {
        return Err(PyValueError::new_err("ks and gaps differ in length"));
    }
    let pts: Vec<(u64, f64)> = ks.into_iter().zip(gaps).collect();
    let fit = diagnostics::fit_rate_slope(&pts, k_min).map_err(err)?;
    Ok((fit.slope, fit.intercept))
}

/// `𝓛(x, y) = Σ_i p_i⁻¹ ‖x⁽ⁱ⁾ − y⁽ⁱ⁾‖²`.
#[pyfunction]
fn weighted_distance(
    probabilities: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    blocks: PyBlockStructure,
) -> PyResult<f64> {
    diagnostics::weighted_distance(&probabilities, &x, &y, &blocks.0).map_err(err)
}

#[pymodule]
fn rbirg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBlockStructure>()?;
    m.add_class::<PyStepSchedule>()?;
    m.add_class::<PyLeastSquares>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(min_norm_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_blur, m)?)?;
    m.add_function(wrap_pyfunction!(blur_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rate_slope, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_distance, m)?)?;
    Ok(())
}
