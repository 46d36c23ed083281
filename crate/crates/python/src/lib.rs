//! Python bindings. Fields cross the boundary as flat row-major lists.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use efr_core::filters::{self, Provenance};
use efr_core::learning::{fit_filter, SnapshotMatrices};
use efr_core::scenarios::{random_initial_condition, InitSpec, SpectrumProfile};
use efr_core::spectral::{shell_averaged_gain, SpectralOps};
use efr_core::tuning::{finite_diff_gd, TuneConfig};
use efr_core::{io, metrics, timestepper};
use efr_core::{EfrIntegrator, Error, RelaxPolicy, SolverParams, StaggeredGrid, Stepper, VelocityField};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::FilterMissing(_) => PyIOError::new_err(e.to_string()),
        Error::NumericalBlowup { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn grid(n: usize, length: f64) -> PyResult<StaggeredGrid> {
    StaggeredGrid::with_length(n, length).map_err(to_py)
}

/// Staggered velocity on a periodic `n x n` grid.
#[pyclass(name = "VelocityField", frozen, from_py_object)]
#[derive(Clone)]
struct PyVelocity {
    inner: VelocityField,
}

#[pymethods]
impl PyVelocity {
    #[new]
    #[pyo3(signature = (n, u, v, length = 1.0))]
    fn new(n: usize, u: Vec<f64>, v: Vec<f64>, length: f64) -> PyResult<Self> {
        let inner = VelocityField::from_components(grid(n, length)?, u, v).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (n, length = 1.0))]
    fn zeros(n: usize, length: f64) -> PyResult<Self> {
        Ok(Self {
            inner: VelocityField::zeros(grid(n, length)?),
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.grid().n()
    }

    #[getter]
    fn u(&self) -> Vec<f64> {
        self.inner.u().to_vec()
    }

    #[getter]
    fn v(&self) -> Vec<f64> {
        self.inner.v().to_vec()
    }

    fn energy(&self) -> f64 {
        metrics::energy(&self.inner)
    }

    fn enstrophy(&self) -> f64 {
        metrics::enstrophy(&self.inner)
    }

    /// Largest absolute cell divergence.
    fn max_divergence(&self) -> f64 {
        efr_core::grid::divergence(&self.inner).max_abs()
    }

    fn spectrum(&self) -> PyResult<Vec<f64>> {
        SpectralOps::new(*self.inner.grid())
            .energy_spectrum(&self.inner)
            .map_err(to_py)
    }

    fn project(&self) -> Self {
        Self {
            inner: timestepper::project(&self.inner),
        }
    }

    fn __repr__(&self) -> String {
        format!("VelocityField(n={}, energy={:.6e})", self.n(), self.energy())
    }
}

/// Per-mode complex gains for both velocity components.
#[pyclass(name = "SpectralFilter", frozen)]
struct PyFilter {
    inner: Arc<filters::SpectralFilter>,
}

#[pymethods]
impl PyFilter {
    #[getter]
    fn n(&self) -> usize {
        self.inner.grid().n()
    }

    #[getter]
    fn provenance(&self) -> &'static str {
        match self.inner.provenance() {
            Provenance::Custom => "custom",
            Provenance::Differential => "differential",
            Provenance::Learned => "learned",
        }
    }

    /// Shell-averaged gain magnitudes as `(u, v)` pairs.
    fn shell_gain(&self) -> Vec<(f64, f64)> {
        shell_averaged_gain(&self.inner).into_iter().map(|g| (g[0], g[1])).collect()
    }

    fn apply(&self, w: &PyVelocity) -> PyResult<PyVelocity> {
        let inner = SpectralOps::new(*self.inner.grid())
            .apply_diagonal(&self.inner, &w.inner)
            .map_err(to_py)?;
        Ok(PyVelocity { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_filter(&path, &self.inner).map_err(to_py)
    }
}

/// RK4 stepper without regularization.
#[pyclass(name = "Stepper")]
struct PyStepper {
    inner: Stepper,
}

fn solver_params(viscosity: f64, dt: f64, smagorinsky: Option<f64>) -> SolverParams {
    let p = SolverParams::new(viscosity, dt);
    match smagorinsky {
        Some(c) => p.with_closure(timestepper::Closure::Smagorinsky {
            coefficient: c,
            width: None,
        }),
        None => p,
    }
}

#[pymethods]
impl PyStepper {
    #[new]
    #[pyo3(signature = (n, viscosity, dt, smagorinsky = None, length = 1.0))]
    fn new(n: usize, viscosity: f64, dt: f64, smagorinsky: Option<f64>, length: f64) -> PyResult<Self> {
        let inner = Stepper::new(grid(n, length)?, solver_params(viscosity, dt, smagorinsky)).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn step(&mut self, u: &PyVelocity) -> PyResult<PyVelocity> {
        self.inner.grid().check_same(u.inner.grid()).map_err(to_py)?;
        Ok(PyVelocity {
            inner: self.inner.rk4_step(&u.inner),
        })
    }
}

fn parse_policy(policy: &Bound<'_, PyAny>) -> PyResult<RelaxPolicy> {
    if let Ok(chi) = policy.extract::<f64>() {
        return Ok(RelaxPolicy::Fixed(chi));
    }
    match policy.extract::<String>()?.as_str() {
        "energy" => Ok(RelaxPolicy::Energy),
        "energy_enstrophy" => Ok(RelaxPolicy::EnergyEnstrophy),
        other => Err(PyValueError::new_err(format!(
            "policy must be a float chi, 'energy' or 'energy_enstrophy', got {other:?}"
        ))),
    }
}

/// Evolve-filter-relax integrator.
#[pyclass(name = "EfrIntegrator")]
struct PyIntegrator {
    inner: EfrIntegrator,
}

#[pymethods]
impl PyIntegrator {
    #[new]
    #[pyo3(signature = (n, viscosity, dt, filter = None, policy = None, length = 1.0))]
    fn new(
        n: usize,
        viscosity: f64,
        dt: f64,
        filter: Option<PyRef<'_, PyFilter>>,
        policy: Option<&Bound<'_, PyAny>>,
        length: f64,
    ) -> PyResult<Self> {
        let policy = match policy {
            Some(p) => parse_policy(p)?,
            None => RelaxPolicy::Fixed(1.0),
        };
        let stepper = Stepper::new(grid(n, length)?, solver_params(viscosity, dt, None)).map_err(to_py)?;
        let inner = EfrIntegrator::new(stepper, filter.map(|f| f.inner.clone()), policy).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// One step; returns the new state and the relaxation parameter used.
    fn step(&mut self, u: &PyVelocity) -> PyResult<(PyVelocity, f64)> {
        let (inner, diag) = self.inner.step(&u.inner).map_err(to_py)?;
        Ok((PyVelocity { inner }, diag.chi))
    }
}

#[pyfunction]
#[pyo3(signature = (n, seed, peak = 10.0, energy = 0.5, length = 1.0))]
fn random_field(n: usize, seed: u64, peak: f64, energy: f64, length: f64) -> PyResult<PyVelocity> {
    let spec = InitSpec {
        profile: SpectrumProfile::PeakedQuartic { peak },
        seed,
        energy,
    };
    Ok(PyVelocity {
        inner: random_initial_condition(grid(n, length)?, &spec),
    })
}

#[pyfunction]
#[pyo3(signature = (n, delta, length = 1.0))]
fn differential_filter(n: usize, delta: f64, length: f64) -> PyResult<PyFilter> {
    if !(delta >= 0.0) {
        return Err(PyValueError::new_err("delta must be >= 0"));
    }
    Ok(PyFilter {
        inner: Arc::new(filters::differential_filter(grid(n, length)?, delta)),
    })
}

/// Least-squares filter from `(target, evolved)` pairs.
#[pyfunction]
fn learn_filter(pairs: Vec<(PyVelocity, PyVelocity)>) -> PyResult<PyFilter> {
    let first = pairs
        .first()
        .ok_or_else(|| PyValueError::new_err("need at least one snapshot pair"))?;
    let g = *first.0.inner.grid();
    let pairs: Vec<(VelocityField, VelocityField)> = pairs.into_iter().map(|(u, w)| (u.inner, w.inner)).collect();
    let snaps = SnapshotMatrices::from_pairs(g, &pairs).map_err(to_py)?;
    Ok(PyFilter {
        inner: Arc::new(fit_filter(&snaps).map_err(to_py)?),
    })
}

#[pyfunction]
fn load_filter(path: PathBuf) -> PyResult<PyFilter> {
    Ok(PyFilter {
        inner: Arc::new(io::read_filter(&path).map_err(to_py)?),
    })
}

#[pyfunction]
#[pyo3(signature = (path, field, time = 0.0, seed = 0))]
fn write_snapshot(path: PathBuf, field: &PyVelocity, time: f64, seed: u64) -> PyResult<()> {
    io::write_snapshot(&path, &field.inner, time, seed).map_err(to_py)
}

/// Returns `(field, time, seed)`.
#[pyfunction]
fn read_snapshot(path: PathBuf) -> PyResult<(PyVelocity, f64, u64)> {
    let s = io::read_snapshot(&path).map_err(to_py)?;
    Ok((PyVelocity { inner: s.field }, s.time, s.seed))
}

/// Finite-difference gradient descent on a Python loss. Returns
/// `(alpha, converged, iterations)`.
#[pyfunction]
#[pyo3(signature = (loss, alpha0, beta, epsilon, lower, upper, tol = 1e-6, max_iter = 50))]
#[allow(clippy::too_many_arguments)]
fn tune(
    loss: &Bound<'_, PyAny>,
    alpha0: f64,
    beta: f64,
    epsilon: f64,
    lower: f64,
    upper: f64,
    tol: f64,
    max_iter: usize,
) -> PyResult<(f64, bool, usize)> {
    let cfg = TuneConfig {
        alpha0,
        beta,
        epsilon,
        max_iter,
        tol,
        min: lower,
        max: upper,
    };
    let mut py_err = None;
    let out = finite_diff_gd(&cfg, |a| match loss.call1((a,)).and_then(|r| r.extract::<f64>()) {
        Ok(l) => Ok(l),
        Err(e) => {
            py_err = Some(e);
            Err(Error::Config("loss callback raised".into()))
        }
    });
    match (out, py_err) {
        (_, Some(e)) => Err(e),
        (Ok(o), None) => Ok((o.alpha, o.converged, o.trace.len())),
        (Err(e), None) => Err(to_py(e)),
    }
}

#[pymodule]
fn efr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVelocity>()?;
    m.add_class::<PyFilter>()?;
    m.add_class::<PyStepper>()?;
    m.add_class::<PyIntegrator>()?;
    m.add_function(wrap_pyfunction!(random_field, m)?)?;
    m.add_function(wrap_pyfunction!(differential_filter, m)?)?;
    m.add_function(wrap_pyfunction!(learn_filter, m)?)?;
    m.add_function(wrap_pyfunction!(load_filter, m)?)?;
    m.add_function(wrap_pyfunction!(write_snapshot, m)?)?;
    m.add_function(wrap_pyfunction!(read_snapshot, m)?)?;
    m.add_function(wrap_pyfunction!(tune, m)?)?;
    Ok(())
}
