//! Python bindings: the `loclim` extension module.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use loclim_core::harness::{self, ExperimentConfig};
use loclim_core::heatkernel::{self, MultiIndex};
use loclim_core::limits::{self, ConstantName, ConstantParams, Hurst};
use loclim_core::loctime::{self, EstimatorConfig};
use loclim_core::oracles::{self, MomentBudget, MomentQuery};
use loclim_core::process::{self, PathSampler};
use loclim_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::Shape(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn hurst(obj: &Bound<'_, PyAny>) -> PyResult<Hurst> {
    if let Ok(s) = obj.extract::<String>() {
        return s.parse::<Hurst>().map_err(to_py);
    }
    Hurst::approx(obj.extract::<f64>()?).map_err(to_py)
}

fn multi_index(k: Option<Vec<f64>>, d: usize) -> PyResult<MultiIndex> {
    match k {
        Some(v) => MultiIndex::new(v).map_err(to_py),
        None => Ok(MultiIndex::zeros(d)),
    }
}

/// A self-similar Gaussian model.
#[pyclass(name = "ProcessSpec", module = "loclim", frozen)]
#[derive(Clone)]
struct PyProcessSpec {
    inner: process::ProcessSpec,
}

#[pymethods]
impl PyProcessSpec {
    #[staticmethod]
    #[pyo3(signature = (hurst, sigma = 1.0, dim = 1))]
    fn fbm(hurst: f64, sigma: f64, dim: usize) -> PyResult<Self> {
        Ok(PyProcessSpec {
            inner: process::ProcessSpec::fbm(hurst, sigma, dim).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (hurst, sigma = 1.0, dim = 1))]
    fn sub_fbm(hurst: f64, sigma: f64, dim: usize) -> PyResult<Self> {
        Ok(PyProcessSpec {
            inner: process::ProcessSpec::sub_fbm(hurst, sigma, dim).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (h_prime, k, sigma = 1.0, dim = 1))]
    fn bi_fbm(h_prime: f64, k: f64, sigma: f64, dim: usize) -> PyResult<Self> {
        Ok(PyProcessSpec {
            inner: process::ProcessSpec::bi_fbm(h_prime, k, sigma, dim).map_err(to_py)?,
        })
    }

    #[getter]
    fn hurst(&self) -> f64 {
        self.inner.hurst
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    /// One-component covariance `R(s, t)`.
    fn covariance(&self, s: f64, t: f64) -> PyResult<f64> {
        Ok(process::covariance(&self.inner).map_err(to_py)?.eval(s, t))
    }

    fn __repr__(&self) -> String {
        format!("ProcessSpec({:?}, H={}, sigma={}, d={})", self.inner.kind, self.inner.hurst, self.inner.sigma, self.inner.dim)
    }
}

/// A sampled path on the uniform grid.
#[pyclass(name = "PathSample", module = "loclim", frozen)]
struct PyPathSample {
    inner: process::PathSample,
}

#[pymethods]
impl PyPathSample {
    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// `d` lists of `n + 1` values.
    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        self.inner.values.clone()
    }

    fn times(&self) -> Vec<f64> {
        (0..=self.inner.steps).map(|i| self.inner.time(i)).collect()
    }

    /// `L_eps^{(k)}(T, x)` along this path.
    #[pyo3(signature = (eps, level = None, k = None, horizon = None))]
    fn estimate(&self, eps: f64, level: Option<Vec<f64>>, k: Option<Vec<f64>>, horizon: Option<f64>) -> PyResult<f64> {
        let d = self.inner.dim();
        let cfg = EstimatorConfig::new(
            eps,
            level.unwrap_or_else(|| vec![0.0; d]),
            multi_index(k, d)?,
            horizon.unwrap_or(self.inner.horizon),
        )
        .map_err(to_py)?;
        Ok(loctime::estimate(&self.inner, &cfg).map_err(to_py)?.value)
    }
}

#[pyfunction]
#[pyo3(signature = (spec, horizon, steps, seed, replicate = 0))]
fn sample_path(spec: &PyProcessSpec, horizon: f64, steps: usize, seed: u64, replicate: u64) -> PyResult<PyPathSample> {
    let sampler = PathSampler::new(&spec.inner, horizon, steps).map_err(to_py)?;
    Ok(PyPathSample {
        inner: sampler.sample(seed, replicate),
    })
}

/// `p_eps^{(k)}(x)`, integer or fractional `k`.
#[pyfunction]
fn heat_kernel_deriv(x: Vec<f64>, eps: f64, k: Vec<f64>) -> PyResult<f64> {
    let k = MultiIndex::new(k).map_err(to_py)?;
    heatkernel::heat_kernel_deriv(&x, eps, &k).map_err(to_py)
}

/// `E L_eps^{(k)}(T, x)` by deterministic quadrature.
#[pyfunction]
#[pyo3(signature = (spec, eps, horizon = 1.0, level = None, k = None))]
fn expected_estimate(spec: &PyProcessSpec, eps: f64, horizon: f64, level: Option<Vec<f64>>, k: Option<Vec<f64>>) -> PyResult<f64> {
    let d = spec.inner.dim;
    let cfg = EstimatorConfig::new(eps, level.unwrap_or_else(|| vec![0.0; d]), multi_index(k, d)?, horizon).map_err(to_py)?;
    loctime::expected_estimate(&spec.inner, &cfg).map_err(to_py)
}

/// `(regime, exponent, has_log, summary)` for `(H, k, d, N)`.
#[pyfunction]
#[pyo3(signature = (hurst, dim = 1, k = None, order = 2))]
fn classify(hurst: &Bound<'_, PyAny>, dim: usize, k: Option<Vec<f64>>, order: u32) -> PyResult<(String, f64, bool, String)> {
    let rep = limits::classify(self::hurst(hurst)?, &multi_index(k, dim)?, dim, order).map_err(to_py)?;
    Ok((rep.regime.to_string(), rep.exponent, rep.has_log, rep.summary()))
}

/// `(value, quadrature residual)` of a named limiting constant.
#[pyfunction]
#[pyo3(signature = (name, hurst, dim = 1, sigma = 1.0, k = None, order = 2))]
fn constant(name: &str, hurst: &Bound<'_, PyAny>, dim: usize, sigma: f64, k: Option<Vec<f64>>, order: u32) -> PyResult<(f64, f64)> {
    let name: ConstantName = name.parse().map_err(to_py)?;
    let params = ConstantParams::new(self::hurst(hurst)?, sigma, dim)
        .with_k(multi_index(k, dim)?)
        .with_order(order);
    let c = limits::constant(name, &params).map_err(to_py)?;
    Ok((c.value, c.error))
}

/// Mixed moment of `W(L(., x))` increments by the Fourier-integral formula.
#[pyfunction]
#[pyo3(signature = (spec, intervals, m, level = None, samples = 200_000, seed = 1))]
fn moment_formula(
    spec: &PyProcessSpec,
    intervals: Vec<(f64, f64)>,
    m: Vec<u32>,
    level: Option<Vec<f64>>,
    samples: u64,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let d = spec.inner.dim;
    let q = MomentQuery::new(intervals, m, level.unwrap_or_else(|| vec![0.0; d]), spec.inner.clone()).map_err(to_py)?;
    let r = oracles::moment_formula(&q, &MomentBudget { samples, seed, ..Default::default() }).map_err(to_py)?;
    Ok((r.value, r.std_error))
}

/// Runs an experiment from TOML text and returns the record as JSON.
#[pyfunction]
fn run_experiment(kind: &str, config_toml: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml(config_toml).map_err(to_py)?;
    let rec = match kind {
        "rates" => harness::run_rate_experiment(&cfg),
        "clt" => harness::run_clt_experiment(&cfg),
        other => return Err(PyValueError::new_err(format!("unknown experiment {other:?}; use 'rates' or 'clt'"))),
    }
    .map_err(to_py)?;
    serde_json::to_string(&rec).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn loclim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProcessSpec>()?;
    m.add_class::<PyPathSample>()?;
    m.add_function(wrap_pyfunction!(sample_path, m)?)?;
    m.add_function(wrap_pyfunction!(heat_kernel_deriv, m)?)?;
    m.add_function(wrap_pyfunction!(expected_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(constant, m)?)?;
    m.add_function(wrap_pyfunction!(moment_formula, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
