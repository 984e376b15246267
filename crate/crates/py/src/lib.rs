//! Python bindings. Configurations cross the boundary as plain dicts with the same
//! field names as the JSON configs of the command-line tool.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use core::experiment::{self, ExperimentConfig, Suite};
use core::functionals::{self, BetaConfig};
use core::noise::{BracketKind, RngStream};
use core::sewing::{self, ItoGerm};
use core::solver::{self, SimConfig};
use core::spectral;
use core::stats;
use she_renorm_core as core;

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Python object -> JSON value, through the standard `json` module.
fn to_json(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let text: String = obj
        .py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn from_json<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

fn parse<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    serde_json::from_value(to_json(obj)?).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A field in the real trigonometric basis `1, sqrt2 sin 2 pi k x, sqrt2 cos 2 pi k x, ...`.
#[pyclass(name = "SpectralField", module = "she_renorm", from_py_object)]
#[derive(Clone)]
struct PySpectralField {
    inner: spectral::SpectralField,
}

#[pymethods]
impl PySpectralField {
    #[new]
    fn new(coeffs: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: spectral::SpectralField::from_coeffs(coeffs).map_err(err)?,
        })
    }

    #[staticmethod]
    fn unit(m: usize, n: usize) -> Self {
        Self {
            inner: spectral::SpectralField::unit(m, n),
        }
    }

    /// Projection of samples on the uniform grid of `len(values)` points onto `m` modes.
    #[staticmethod]
    fn from_grid(values: Vec<f64>, m: usize) -> PyResult<Self> {
        let g = spectral::GridField::new(values).map_err(err)?;
        Ok(Self {
            inner: spectral::analyze(&g, m).map_err(err)?,
        })
    }

    #[getter]
    fn coeffs(&self) -> Vec<f64> {
        self.inner.coeffs().to_vec()
    }

    #[getter]
    fn mode_cutoff(&self) -> usize {
        self.inner.mode_cutoff()
    }

    fn __len__(&self) -> usize {
        self.inner.mode_cutoff()
    }

    fn __call__(&self, x: f64) -> f64 {
        self.inner.synthesize(x)
    }

    fn grid(&self, n_grid: usize) -> PyResult<Vec<f64>> {
        Ok(spectral::synthesize_grid(&self.inner, n_grid)
            .map_err(err)?
            .into_values())
    }

    /// `P_t f`.
    fn heat(&self, t: f64) -> PyResult<Self> {
        Ok(Self {
            inner: spectral::apply_heat(&self.inner, t).map_err(err)?,
        })
    }

    fn gradient(&self) -> Self {
        Self {
            inner: spectral::apply_gradient(&self.inner),
        }
    }

    /// `Proj_m(e_n f)`.
    fn times_basis(&self, n: usize, m: usize) -> Self {
        Self {
            inner: spectral::basis_product(n, &self.inner, m),
        }
    }

    fn dot(&self, other: &Self) -> f64 {
        self.inner.dot(&other.inner)
    }

    fn norm(&self) -> f64 {
        self.inner.norm_l2()
    }

    fn __repr__(&self) -> String {
        format!(
            "SpectralField(m={}, norm={:.6e})",
            self.inner.mode_cutoff(),
            self.inner.norm_l2()
        )
    }
}

/// Streaming moments with batch-means confidence intervals.
#[pyclass(name = "MCStats", module = "she_renorm", from_py_object)]
#[derive(Clone)]
struct PyMCStats {
    inner: stats::MCStats,
    next: u64,
}

#[pymethods]
impl PyMCStats {
    #[new]
    #[pyo3(signature = (batches = 32))]
    fn new(batches: usize) -> PyResult<Self> {
        if batches < 2 {
            return Err(PyValueError::new_err("batches must be at least 2"));
        }
        Ok(Self {
            inner: stats::MCStats::new(batches),
            next: 0,
        })
    }

    /// Adds samples; `index` places a single sample in its batch explicitly.
    #[pyo3(signature = (x, index = None))]
    fn push(&mut self, x: f64, index: Option<u64>) {
        let i = index.unwrap_or(self.next);
        self.inner.push(i, x);
        self.next = self.next.max(i + 1);
    }

    fn extend(&mut self, xs: Vec<f64>) {
        for x in xs {
            self.push(x, None);
        }
    }

    fn merge(&mut self, other: &Self) -> PyResult<()> {
        if self.inner.batches() != other.inner.batches() {
            return Err(PyValueError::new_err("batch counts differ"));
        }
        self.inner.merge(&other.inner);
        self.next = self.next.max(other.next);
        Ok(())
    }

    #[getter]
    fn count(&self) -> u64 {
        self.inner.count()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn variance(&self) -> f64 {
        self.inner.variance()
    }

    fn raw_moment(&self, k: usize) -> PyResult<f64> {
        if !(1..=8).contains(&k) {
            return Err(PyValueError::new_err("k must lie in 1..=8"));
        }
        Ok(self.inner.raw_moment(k))
    }

    /// 95% half width of the mean.
    fn mean_ci(&self) -> f64 {
        self.inner.mean_ci()
    }
}

/// `(8 pi^{1/4})^{-2} = (64 sqrt(pi))^{-1}`.
#[pyfunction]
fn c0() -> f64 {
    core::constants::c0()
}

#[pyfunction]
fn limit_coefficient() -> f64 {
    core::constants::limit_coefficient()
}

#[pyfunction]
fn alternative_limit_coefficient() -> f64 {
    core::constants::alternative_limit_coefficient()
}

#[pyfunction]
fn variance_blowup(gamma: f64, eps: f64) -> PyResult<f64> {
    core::constants::variance_blowup(gamma, eps).map_err(err)
}

#[pyfunction]
fn heat_kernel(t: f64, x: f64) -> PyResult<f64> {
    spectral::heat_kernel_value(t, x).map_err(err)
}

/// `kind` is `"grad"` for the mollified gradient noise or `"fractional"` for `(-Laplacian)^{1/4} xi_eps`.
#[pyfunction]
fn bracket_norm(kind: &str, eps: f64, alpha: f64) -> PyResult<f64> {
    let k = match kind {
        "grad" => BracketKind::GradMollified { epsilon: eps },
        "fractional" => BracketKind::FractionalQuarter { epsilon: eps },
        _ => return Err(PyValueError::new_err("kind must be 'grad' or 'fractional'")),
    };
    core::noise::bracket_norm(k, alpha).map_err(err)
}

/// Default simulation settings for `eps` (the limit equation when `eps == 0`) as a dict.
#[pyfunction]
#[pyo3(signature = (eps, mode_cutoff = 80, dt = 1e-3))]
fn default_sim_config<'py>(
    py: Python<'py>,
    eps: f64,
    mode_cutoff: usize,
    dt: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = if eps == 0.0 {
        SimConfig::limit(mode_cutoff, dt)
    } else {
        SimConfig::mollified(eps)
    };
    from_json(py, &serde_json::to_value(cfg).expect("config serializes"))
}

/// Runs one path. Returns a dict with `times`, `u` (coefficient lists) and the optional
/// `x` and `beta` channels.
#[pyfunction]
#[pyo3(signature = (config, seed, path = 0))]
fn simulate<'py>(
    py: Python<'py>,
    config: &Bound<'py, PyAny>,
    seed: u64,
    path: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg: SimConfig = parse(config)?;
    let tr = py
        .detach(|| solver::solve_path(&cfg, RngStream::new(seed, path)))
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("times", tr.times.clone())?;
    let coeffs =
        |v: &[spectral::SpectralField]| v.iter().map(|f| f.coeffs().to_vec()).collect::<Vec<_>>();
    out.set_item("u", coeffs(&tr.u))?;
    if let Some(x) = &tr.x {
        out.set_item("x", coeffs(x))?;
    }
    if let Some(b) = &tr.beta {
        let d = PyDict::new(py);
        for (n, vals) in b.modes.iter().zip(&b.values) {
            d.set_item(n, vals.clone())?;
        }
        out.set_item("beta", d)?;
    }
    out.set_item("config_hash", tr.config_hash)?;
    Ok(out)
}

fn beta_config(eps: f64, modes: Vec<usize>, times: Vec<f64>, dt: Option<f64>) -> BetaConfig {
    let mut bc = BetaConfig::new(eps);
    bc.modes = modes;
    bc.times = times;
    if let Some(dt) = dt {
        bc.dt = dt;
    }
    bc
}

/// `beta^{eps,n}` at `times` for each path; returns `values[path][mode][time]`.
#[pyfunction]
#[pyo3(signature = (eps, modes, times, seed, paths = 1, dt = None))]
fn simulate_beta(
    py: Python<'_>,
    eps: f64,
    modes: Vec<usize>,
    times: Vec<f64>,
    seed: u64,
    paths: u64,
    dt: Option<f64>,
) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let bc = beta_config(eps, modes, times, dt);
    py.detach(|| {
        (0..paths)
            .map(|p| functionals::simulate_beta(&bc, RngStream::new(seed, p)).map(|b| b.values))
            .collect::<core::Result<Vec<_>>>()
    })
    .map_err(err)
}

/// Exact variance of `beta^n_t - beta^n_s` under the discrete scheme.
#[pyfunction]
#[pyo3(signature = (eps, n, s, t, dt = None))]
fn beta_variance_exact(eps: f64, n: usize, s: f64, t: f64, dt: Option<f64>) -> PyResult<f64> {
    let bc = beta_config(eps, vec![n], vec![t], dt);
    functionals::beta_variance_exact(&bc, n, s, t).map_err(err)
}

/// Two-sample Kolmogorov-Smirnov test; returns `(statistic, p_value)`.
#[pyfunction]
fn ks_two_sample(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64)> {
    let r = stats::ks_two_sample(&a, &b).map_err(err)?;
    Ok((r.statistic, r.p_value))
}

/// Sews the Ito germ `W_s (W_t - W_s)` at `level`; returns `(sewn value at 1, W_1)`.
#[pyfunction]
#[pyo3(signature = (seed, level, path = 0))]
fn sew_ito(seed: u64, level: u32, path: u64) -> PyResult<(f64, f64)> {
    let w = sewing::brownian_path(&RngStream::new(seed, path), level);
    let w1 = *w.values.last().expect("nonempty path");
    let sewn = sewing::sew(&ItoGerm { w }, level).map_err(err)?;
    Ok((sewn.last(), w1))
}

#[pyfunction]
fn derive_seed(master: u64, tag: &str) -> u64 {
    experiment::derive_seed(master, tag)
}

#[pyfunction]
fn suites() -> Vec<&'static str> {
    Suite::ALL.iter().map(|s| s.name()).collect()
}

/// Runs a suite. `config` may be a partial config dict or a manifest; missing fields take
/// the suite defaults. Returns a dict with `pass`, `rows`, `summary`, `csv` and `manifest`.
#[pyfunction]
#[pyo3(signature = (suite, config = None, out_dir = None))]
fn run_suite<'py>(
    py: Python<'py>,
    suite: &str,
    config: Option<&Bound<'py, PyAny>>,
    out_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let suite: Suite = suite.parse().map_err(err)?;
    let file = config.map(to_json).transpose()?;
    let cfg = ExperimentConfig::resolve(suite, file, &[]).map_err(err)?;
    let out = py
        .detach(|| experiment::run(suite, &cfg, out_dir.as_deref()))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("pass", out.manifest.pass)?;
    let rows = PyList::empty(py);
    for r in &out.rows {
        rows.append(from_json(
            py,
            &serde_json::to_value(r).expect("row serializes"),
        )?)?;
    }
    d.set_item("rows", rows)?;
    d.set_item("notes", out.notes.clone())?;
    d.set_item("summary", out.summary.clone())?;
    d.set_item("csv", out.csv.clone())?;
    d.set_item(
        "manifest",
        from_json(
            py,
            &serde_json::to_value(&out.manifest).expect("manifest serializes"),
        )?,
    )?;
    Ok(d)
}

#[pymodule]
fn she_renorm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpectralField>()?;
    m.add_class::<PyMCStats>()?;
    m.add_function(wrap_pyfunction!(c0, m)?)?;
    m.add_function(wrap_pyfunction!(limit_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(alternative_limit_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(variance_blowup, m)?)?;
    m.add_function(wrap_pyfunction!(heat_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(bracket_norm, m)?)?;
    m.add_function(wrap_pyfunction!(default_sim_config, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_beta, m)?)?;
    m.add_function(wrap_pyfunction!(beta_variance_exact, m)?)?;
    m.add_function(wrap_pyfunction!(ks_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(sew_ito, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(suites, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
