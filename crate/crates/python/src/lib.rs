//! Python bindings. Specs are wrapped in `Spec`; policies are passed as the
//! same JSON-shaped objects the CLI reads, and results come back as dicts.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::de::DeserializeOwned;
use serde::Serialize;

use teamfield::dynamic::{
    cluster_dynamic_hits, dynamic_epsilon_estimate, dynamic_exact_feasible,
    dynamic_grid_fixed_point_search, simulate_finite_n, solve_dynamic_mf_fixed_point,
    DynEpsilonOptions, DynTeamPolicy, StagePolicy,
};
use teamfield::finite_n::{
    epsilon_monte_carlo, epsilon_ne_certify, exact_cost, exact_feasible, mc_cost, sizes_with_ratio,
    sweep_team_sizes, FiniteGameInstance, SweepOptions,
};
use teamfield::fixed_point::{InitPolicy, SolverConfig};
use teamfield::mf_static::{cluster_hits, grid_fixed_point_search, solve_mf_fixed_point};
use teamfield::policy::TeamPolicy;
use teamfield::spec::load_spec;
use teamfield::{DynamicGameSpec, Error, GameSpec, Kernel, StaticGameSpec};

create_exception!(teamfield_py, BudgetError, PyRuntimeError);

fn py_err(e: Error) -> PyErr {
    if e.is_budget() {
        BudgetError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// Python object to a Rust value, through `json.dumps` unless already a string.
fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = if obj.is_instance_of::<PyString>() {
        obj.extract()?
    } else {
        obj.py()
            .import("json")?
            .call_method1("dumps", (obj,))?
            .extract()?
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn sizes(n: &Bound<'_, PyAny>) -> PyResult<[usize; 2]> {
    let s = if let Ok(k) = n.extract::<usize>() {
        [k, k]
    } else {
        n.extract::<(usize, usize)>()?.into()
    };
    if s.contains(&0) {
        return Err(PyValueError::new_err("team sizes must be >= 1"));
    }
    Ok(s)
}

/// A validated static or dynamic game.
#[pyclass(name = "Spec", frozen)]
struct PySpec {
    inner: GameSpec,
}

#[pymethods]
impl PySpec {
    /// Loads a spec file; invalid specs raise unless `force` is set.
    #[staticmethod]
    #[pyo3(signature = (path, force = false))]
    fn load(path: PathBuf, force: bool) -> PyResult<Self> {
        let (inner, _) = load_spec(&path, force).map_err(py_err)?;
        Ok(PySpec { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner =
            GameSpec::from_json_str(text, std::path::Path::new("<string>")).map_err(py_err)?;
        Ok(PySpec { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json_string().map_err(py_err)
    }

    /// Validation report: `valid`, `issues` and `cost_bounds`.
    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let r = self.inner.validate();
        to_py(
            py,
            &serde_json::json!({
                "valid": r.is_valid(),
                "issues": r.issues,
                "cost_bounds": r.cost_bounds,
            }),
        )
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner {
            GameSpec::Static(_) => "static",
            GameSpec::Dynamic(_) => "dynamic",
        }
    }

    fn __repr__(&self) -> String {
        format!("Spec(kind={:?})", self.kind())
    }
}

impl PySpec {
    fn static_spec(&self) -> PyResult<&StaticGameSpec> {
        match &self.inner {
            GameSpec::Static(s) => Ok(s),
            GameSpec::Dynamic(_) => Err(PyValueError::new_err("expected a static spec")),
        }
    }

    fn dynamic_spec(&self) -> PyResult<&DynamicGameSpec> {
        match &self.inner {
            GameSpec::Dynamic(s) => Ok(s),
            GameSpec::Static(_) => Err(PyValueError::new_err("expected a dynamic spec")),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn solver_config(
    damping: f64,
    tol: f64,
    max_iters: usize,
    smoothing: f64,
    anneal: f64,
    min_temperature: f64,
    seed: Option<u64>,
    init_action: Option<usize>,
) -> SolverConfig {
    let init = match (seed, init_action) {
        (_, Some(a)) => InitPolicy::Action(a),
        (Some(s), None) => InitPolicy::Random(s),
        (None, None) => InitPolicy::Uniform,
    };
    SolverConfig {
        damping,
        tol,
        max_iters,
        smoothing,
        anneal,
        min_temperature,
        init,
    }
}

/// Static mean-field fixed point.
#[pyfunction]
#[pyo3(signature = (spec, damping = 0.5, tol = 1e-6, max_iters = 10_000, smoothing = 1.0, anneal = 0.5,
    min_temperature = 1e-8, seed = None, init_action = None))]
#[allow(clippy::too_many_arguments)]
fn solve_mf<'py>(
    py: Python<'py>,
    spec: &PySpec,
    damping: f64,
    tol: f64,
    max_iters: usize,
    smoothing: f64,
    anneal: f64,
    min_temperature: f64,
    seed: Option<u64>,
    init_action: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let s = spec.static_spec()?;
    let cfg = solver_config(
        damping,
        tol,
        max_iters,
        smoothing,
        anneal,
        min_temperature,
        seed,
        init_action,
    );
    let eq = py
        .detach(|| solve_mf_fixed_point(s, &cfg))
        .map_err(py_err)?;
    to_py(py, &eq)
}

/// Dynamic mean-field fixed point over memoryless stage policies.
#[pyfunction]
#[pyo3(signature = (spec, damping = 0.5, tol = 1e-6, max_iters = 10_000, smoothing = 1.0, anneal = 0.5,
    min_temperature = 1e-8, seed = None, init_action = None))]
#[allow(clippy::too_many_arguments)]
fn solve_mf_dyn<'py>(
    py: Python<'py>,
    spec: &PySpec,
    damping: f64,
    tol: f64,
    max_iters: usize,
    smoothing: f64,
    anneal: f64,
    min_temperature: f64,
    seed: Option<u64>,
    init_action: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let s = spec.dynamic_spec()?;
    let cfg = solver_config(
        damping,
        tol,
        max_iters,
        smoothing,
        anneal,
        min_temperature,
        seed,
        init_action,
    );
    let eq = py
        .detach(|| solve_dynamic_mf_fixed_point(s, &cfg))
        .map_err(py_err)?;
    to_py(py, &eq)
}

/// Exact expected per-DM cost of `team` (0 or 1) under two team policies.
#[pyfunction]
fn cost(
    spec: &PySpec,
    policies: &Bound<'_, PyAny>,
    n: &Bound<'_, PyAny>,
    team: usize,
) -> PyResult<f64> {
    let [p1, p2]: [TeamPolicy; 2] = from_py(policies)?;
    let inst = FiniteGameInstance::new(spec.static_spec()?.clone(), sizes(n)?).map_err(py_err)?;
    exact_cost(&inst, &p1, &p2, team).map_err(py_err)
}

/// Monte Carlo per-DM cost of `team` with a 99% confidence half-width.
#[pyfunction]
#[pyo3(signature = (spec, policies, n, team, seed, reps = 1000))]
fn simulate_cost<'py>(
    py: Python<'py>,
    spec: &PySpec,
    policies: &Bound<'py, PyAny>,
    n: &Bound<'py, PyAny>,
    team: usize,
    seed: u64,
    reps: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let [p1, p2]: [TeamPolicy; 2] = from_py(policies)?;
    let inst = FiniteGameInstance::new(spec.static_spec()?.clone(), sizes(n)?).map_err(py_err)?;
    let est = py
        .detach(|| mc_cost(&inst, &p1, &p2, team, reps, seed))
        .map_err(py_err)?;
    to_py(py, &est)
}

/// Epsilon-Nash certificate of two team policies at team sizes `n`; exact
/// when within budget, Monte Carlo otherwise (which needs `seed`).
#[pyfunction]
#[pyo3(signature = (spec, policies, n, seed = None, reps = 1000, grid_steps = 10))]
fn certify<'py>(
    py: Python<'py>,
    spec: &PySpec,
    policies: &Bound<'py, PyAny>,
    n: &Bound<'py, PyAny>,
    seed: Option<u64>,
    reps: usize,
    grid_steps: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let [p1, p2]: [TeamPolicy; 2] = from_py(policies)?;
    let inst = FiniteGameInstance::new(spec.static_spec()?.clone(), sizes(n)?).map_err(py_err)?;
    let report = if exact_feasible(&inst, [&p1, &p2]) {
        py.detach(|| epsilon_ne_certify(&inst, &p1, &p2))
    } else {
        let seed = seed.ok_or_else(|| {
            PyValueError::new_err("seed is required for Monte Carlo certification")
        })?;
        let opts = SweepOptions {
            reps,
            seed,
            grid_steps,
        };
        py.detach(|| epsilon_monte_carlo(&inst, &p1, &p2, &opts))
    }
    .map_err(py_err)?;
    to_py(py, &report)
}

/// Certificates of symmetric deployment of two kernels over team sizes
/// `(n, ratio * n)` for each `n` in `ns`.
#[pyfunction]
#[pyo3(signature = (spec, kernels, ns, ratio = 1, seed = 0, reps = 1000, grid_steps = 10))]
#[allow(clippy::too_many_arguments)]
fn sweep_n<'py>(
    py: Python<'py>,
    spec: &PySpec,
    kernels: &Bound<'py, PyAny>,
    ns: Vec<usize>,
    ratio: usize,
    seed: u64,
    reps: usize,
    grid_steps: usize,
) -> PyResult<Bound<'py, PyAny>> {
    if ratio == 0 || ns.contains(&0) {
        return Err(PyValueError::new_err("team sizes and ratio must be >= 1"));
    }
    let kernels: [Kernel; 2] = from_py(kernels)?;
    let s = spec.static_spec()?;
    let opts = SweepOptions {
        reps,
        seed,
        grid_steps,
    };
    let team_sizes = sizes_with_ratio(&ns, ratio);
    let reports = py
        .detach(|| sweep_team_sizes(s, &kernels, &team_sizes, &opts))
        .map_err(py_err)?;
    to_py(py, &reports)
}

/// Simulated finite-N dynamic episodes under symmetric stage policies.
#[pyfunction]
#[pyo3(signature = (spec, policies, n, seed, reps = 1000))]
fn simulate<'py>(
    py: Python<'py>,
    spec: &PySpec,
    policies: &Bound<'py, PyAny>,
    n: &Bound<'py, PyAny>,
    seed: u64,
    reps: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let s = spec.dynamic_spec()?;
    let pols: [StagePolicy; 2] = from_py(policies)?;
    let p = pols.map(|stages| DynTeamPolicy::Symmetric { stages });
    let sizes = sizes(n)?;
    let report = py
        .detach(|| simulate_finite_n(s, sizes, [&p[0], &p[1]], reps, seed))
        .map_err(py_err)?;
    to_py(py, &report)
}

/// Dynamic epsilon at team sizes `n`: exact when within budget, Monte Carlo
/// otherwise. `exact=True` raises `BudgetError` instead of estimating.
#[pyfunction]
#[pyo3(signature = (spec, policies, n, exact = false, seed = 0, reps = 1000, grid_steps = 10))]
#[allow(clippy::too_many_arguments)]
fn eps_dyn<'py>(
    py: Python<'py>,
    spec: &PySpec,
    policies: &Bound<'py, PyAny>,
    n: &Bound<'py, PyAny>,
    exact: bool,
    seed: u64,
    reps: usize,
    grid_steps: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let s = spec.dynamic_spec()?;
    let pols: [StagePolicy; 2] = from_py(policies)?;
    let sizes = sizes(n)?;
    if exact && !dynamic_exact_feasible(s, sizes) {
        return Err(BudgetError::new_err(
            "exact dynamic epsilon is out of budget at these team sizes",
        ));
    }
    let opts = DynEpsilonOptions {
        prefer_exact: true,
        reps,
        seed,
        grid_steps,
    };
    let report = py
        .detach(|| dynamic_epsilon_estimate(s, sizes, &pols, &opts))
        .map_err(py_err)?;
    to_py(py, &report)
}

/// Fixed points on a policy grid of the given resolution, clustered within
/// `radius` (default twice the resolution) unless `all` is set.
#[pyfunction]
#[pyo3(signature = (spec, resolution, all = false, radius = None))]
fn grid_search<'py>(
    py: Python<'py>,
    spec: &PySpec,
    resolution: f64,
    all: bool,
    radius: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    if !(resolution > 0.0 && resolution <= 0.1) {
        return Err(PyValueError::new_err("resolution must lie in (0, 0.1]"));
    }
    let radius = radius.unwrap_or(2.0 * resolution);
    match &spec.inner {
        GameSpec::Static(s) => {
            let hits = py
                .detach(|| grid_fixed_point_search(s, resolution))
                .map_err(py_err)?;
            to_py(
                py,
                &if all {
                    hits
                } else {
                    cluster_hits(&hits, radius)
                },
            )
        }
        GameSpec::Dynamic(s) => {
            let hits = py
                .detach(|| dynamic_grid_fixed_point_search(s, resolution))
                .map_err(py_err)?;
            to_py(
                py,
                &if all {
                    hits
                } else {
                    cluster_dynamic_hits(&hits, radius)
                },
            )
        }
    }
}

#[pymodule]
fn teamfield_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpec>()?;
    m.add("BudgetError", m.py().get_type::<BudgetError>())?;
    m.add_function(wrap_pyfunction!(solve_mf, m)?)?;
    m.add_function(wrap_pyfunction!(solve_mf_dyn, m)?)?;
    m.add_function(wrap_pyfunction!(cost, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_cost, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_n, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(eps_dyn, m)?)?;
    m.add_function(wrap_pyfunction!(grid_search, m)?)?;
    Ok(())
}
