use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use tapergp_core::covmodel::{preset_model, ModelConfig, Preset};
use tapergp_core::experiments::{run_scenario as run, write_outputs, Config, Scenario};
use tapergp_core::geometry::{sample_perturbed_grid, GridDesign, LocationSet};
use tapergp_core::likelihood::{fit_with_continuation, FitOptions, Objective};
use tapergp_core::predict::{mspe_ratio_curve, KrigingSystem};
use tapergp_core::simulate::{simulate_field, SimulationPlan};
use tapergp_core::taper::{TaperFamily, TaperSpec};
use tapergp_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Observation sites in the plane.
#[pyclass(name = "LocationSet", frozen)]
struct PyLocations {
    inner: LocationSet,
}

#[pymethods]
impl PyLocations {
    #[new]
    fn new(points: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: LocationSet::new(&points, 0.0).map_err(to_py)?,
        })
    }

    /// One point per square of a `2m x 2m` grid, jittered unless `delta = 1`.
    #[staticmethod]
    #[pyo3(signature = (m, delta = 1.0, spacing = 1.0, seed = 0))]
    fn grid(m: usize, delta: f64, spacing: f64, seed: u64) -> PyResult<Self> {
        let design = GridDesign { m, delta, spacing };
        Ok(Self {
            inner: sample_perturbed_grid(&design, seed).map_err(to_py)?,
        })
    }

    fn points(&self) -> Vec<Vec<f64>> {
        self.inner.points().map(<[f64]>::to_vec).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("LocationSet(n={})", self.inner.len())
    }
}

/// True parameters and estimation box of a bivariate Matern model.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: ModelConfig,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (preset = "A", overrides = None))]
    fn new(preset: &str, overrides: Option<BTreeMap<String, f64>>) -> PyResult<Self> {
        let preset: Preset = preset.parse().map_err(to_py)?;
        let mut model = preset_model(preset);
        for (k, v) in overrides.unwrap_or_default() {
            if !model.params_true.apply_entry(&k, v).map_err(to_py)? {
                return Err(PyValueError::new_err(format!("unknown parameter '{k}'")));
            }
        }
        let model = ModelConfig::new(model.d, model.params_true, model.param_box).map_err(to_py)?;
        Ok(Self { inner: model })
    }

    /// `rho.kl`, `sigma.kl` and `nu.kl` entries.
    fn params(&self) -> BTreeMap<String, f64> {
        self.inner.params_true.to_entries().into_iter().collect()
    }

    fn theta0(&self) -> Vec<f64> {
        self.inner.theta0()
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.param_box.names.iter().map(|n| n.to_string()).collect()
    }

    fn cov(&self, dist: f64, k: usize, l: usize) -> f64 {
        self.inner.params_true.cov_at(dist, k, l)
    }
}

/// Taper matrix function of a named family.
#[pyclass(name = "Taper", frozen)]
struct PyTaper {
    inner: TaperSpec,
}

#[pymethods]
impl PyTaper {
    #[new]
    fn new(family: &str, gamma: f64) -> PyResult<Self> {
        let family: TaperFamily = family.parse().map_err(to_py)?;
        Ok(Self {
            inner: TaperSpec::new(family, 2, gamma).map_err(to_py)?,
        })
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    fn value(&self, dist: f64, k: usize, l: usize) -> f64 {
        self.inner.value_at_distance(dist, k, l)
    }
}

/// Fit of one data vector at one taper range.
#[pyclass(name = "FitResult", frozen, get_all)]
struct PyFitResult {
    gamma: f64,
    theta: Vec<f64>,
    objective: f64,
    evaluations: usize,
    converged: bool,
    error: Option<String>,
}

#[pymethods]
impl PyFitResult {
    fn __repr__(&self) -> String {
        format!(
            "FitResult(gamma={}, objective={:.6}, converged={})",
            self.gamma, self.objective, self.converged
        )
    }
}

/// Simple kriging of the first component.
#[pyclass(name = "Kriging", frozen)]
struct PyKriging {
    inner: KrigingSystem,
    truth: ModelConfig,
}

#[pymethods]
impl PyKriging {
    #[new]
    #[pyo3(signature = (locs, model, taper = None))]
    fn new(locs: &PyLocations, model: &PyModel, taper: Option<&PyTaper>) -> PyResult<Self> {
        let params = model.inner.params_true.clone();
        let inner = match taper {
            Some(t) => KrigingSystem::tapered(locs.inner.clone(), params, t.inner.clone()),
            None => KrigingSystem::untapered(locs.inner.clone(), params),
        }
        .map_err(to_py)?;
        Ok(Self {
            inner,
            truth: model.inner.clone(),
        })
    }

    fn weights(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.weights(&x).map_err(to_py)
    }

    fn predict(&self, x: Vec<f64>, z: Vec<f64>) -> PyResult<f64> {
        self.inner.predict_at(&x, &z).map_err(to_py)
    }

    /// Exact MSPE under the model the system was built with, or `truth`.
    #[pyo3(signature = (x, truth = None))]
    fn exact_mspe(&self, x: Vec<f64>, truth: Option<&PyModel>) -> PyResult<f64> {
        let truth = truth.map_or(&self.truth.params_true, |m| &m.inner.params_true);
        self.inner.exact_mspe(&x, truth).map_err(to_py)
    }

    fn neighbors_in_range(&self, x: Vec<f64>) -> PyResult<usize> {
        self.inner.neighbors_in_range(&x).map_err(to_py)
    }
}

/// Replications of the field, each stacked as component-major.
#[pyfunction]
fn simulate(model: &PyModel, locs: &PyLocations, n_rep: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let plan = SimulationPlan::new(model.inner.params_true.clone(), locs.inner.clone(), n_rep, seed);
    simulate_field(&plan).map_err(to_py)
}

/// Normalized negative log-likelihood; `taper` selects the one-taper
/// objective.
#[pyfunction]
#[pyo3(signature = (model, locs, data, theta, taper = None))]
fn neg_loglik(
    model: &PyModel,
    locs: &PyLocations,
    data: Vec<f64>,
    theta: Vec<f64>,
    taper: Option<&PyTaper>,
) -> PyResult<f64> {
    let (template, pbox) = (model.inner.params_true.clone(), model.inner.param_box.clone());
    let obj = match taper {
        Some(t) => Objective::one_taper(locs.inner.clone(), data, template, pbox, t.inner.clone()),
        None => Objective::untapered(locs.inner.clone(), data, template, pbox),
    }
    .map_err(to_py)?;
    obj.try_neg_loglik(&theta).map_err(to_py)
}

/// Maximum likelihood fits over decreasing taper ranges, each warm-started
/// at the previous optimum. The first fit starts at the true parameters.
#[pyfunction]
#[pyo3(signature = (model, locs, data, gammas, family = "i", max_evals = 2000))]
fn fit(
    model: &PyModel,
    locs: &PyLocations,
    data: Vec<f64>,
    gammas: Vec<f64>,
    family: &str,
    max_evals: usize,
) -> PyResult<Vec<PyFitResult>> {
    let family: TaperFamily = family.parse().map_err(to_py)?;
    let mut opts = FitOptions::default();
    opts.nelder_mead.max_evals = max_evals;
    let m = &model.inner;
    let fits = fit_with_continuation(
        |g| {
            Objective::one_taper(
                locs.inner.clone(),
                data.clone(),
                m.params_true.clone(),
                m.param_box.clone(),
                TaperSpec::new(family, 2, g)?,
            )
        },
        &gammas,
        &m.theta0(),
        &opts,
    )
    .map_err(to_py)?;
    Ok(gammas
        .iter()
        .zip(fits)
        .map(|(&gamma, f)| PyFitResult {
            gamma,
            theta: f.theta_hat,
            objective: f.objective_value,
            evaluations: f.evaluations,
            converged: f.converged,
            error: f.error,
        })
        .collect())
}

/// `(gamma, mspe_tapered, mspe_untapered, ratio, neighbors_in_range)` rows
/// at `site`, using the true parameters.
#[pyfunction]
#[pyo3(signature = (model, locs, family, gammas, site = vec![0.0, 0.0]))]
fn mspe_curve(
    model: &PyModel,
    locs: &PyLocations,
    family: &str,
    gammas: Vec<f64>,
    site: Vec<f64>,
) -> PyResult<Vec<(f64, f64, f64, f64, usize)>> {
    let family: TaperFamily = family.parse().map_err(to_py)?;
    let first = *gammas.first().ok_or_else(|| PyValueError::new_err("no taper ranges given"))?;
    let taper = TaperSpec::new(family, 2, first).map_err(to_py)?;
    let truth = &model.inner.params_true;
    let rows = mspe_ratio_curve(&gammas, &taper, &locs.inner, truth, truth, &site).map_err(to_py)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.gamma, r.mspe_tapered, r.mspe_untapered, r.ratio, r.neighbors_in_range))
        .collect())
}

/// Runs a scenario given as `key = value` text and returns the result table
/// as CSV. With `out_dir`, the table, summary and metadata files are also
/// written there.
#[pyfunction]
#[pyo3(signature = (config, out_dir = None))]
fn run_scenario(py: Python<'_>, config: &str, out_dir: Option<PathBuf>) -> PyResult<String> {
    let cfg = Config::parse(config).map_err(to_py)?;
    let scenario = Scenario::from_config(&cfg).map_err(to_py)?;
    let table = py.detach(|| run(&scenario)).map_err(to_py)?;
    if let Some(dir) = out_dir {
        write_outputs(&scenario, &table, &dir).map_err(to_py)?;
    }
    table.to_csv_string().map_err(to_py)
}

#[pymodule]
fn tapergp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLocations>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTaper>()?;
    m.add_class::<PyFitResult>()?;
    m.add_class::<PyKriging>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(neg_loglik, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(mspe_curve, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
