//! Python bindings. Structured results come back as plain dicts and lists
//! (serialized through JSON), partitions as strings like "[1 2][3]".

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use poisfactor_core::cli::{describe as describe_dataset, Dataset};
use poisfactor_core::estimation::attach_standard_errors;
use poisfactor_core::{
    asp_table as core_asp_table, fit_mixed as core_fit_mixed, fit_model, select_exhaustive, select_forward,
    CountMatrix, FitOptions, ModelPartition, SeMode, SimDesign,
};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix(data: Vec<Vec<u32>>, trunc: Option<u32>) -> PyResult<CountMatrix> {
    CountMatrix::new(data, trunc).map_err(err)
}

fn options(seed: u64) -> FitOptions {
    FitOptions {
        seed,
        ..FitOptions::default()
    }
}

#[pyfunction]
fn bell_number(n: usize) -> PyResult<u128> {
    poisfactor_core::bell_number(n).map_err(err)
}

/// All set partitions of n variables in canonical order.
#[pyfunction]
fn enumerate_partitions(n: usize) -> PyResult<Vec<String>> {
    Ok(poisfactor_core::enumerate_partitions(n)
        .map_err(err)?
        .iter()
        .map(ToString::to_string)
        .collect())
}

/// Partitions reachable by merging two groups of `partition`.
#[pyfunction]
#[pyo3(signature = (partition, n_vars=None))]
fn successor_models(partition: &str, n_vars: Option<usize>) -> PyResult<Vec<String>> {
    let p = parse(partition, n_vars)?;
    Ok(p.successor_models().iter().map(ToString::to_string).collect())
}

#[pyfunction]
fn type_signature(partition: &str) -> PyResult<String> {
    Ok(parse(partition, None)?.type_signature().to_string())
}

fn parse(partition: &str, n_vars: Option<usize>) -> PyResult<ModelPartition> {
    match n_vars {
        Some(n) => ModelPartition::parse_with_dim(partition, n),
        None => ModelPartition::parse(partition),
    }
    .map_err(err)
}

/// Maximum likelihood fit of one partition, with standard errors.
#[pyfunction]
#[pyo3(signature = (data, partition, trunc=None, seed=1))]
fn fit<'py>(
    py: Python<'py>,
    data: Vec<Vec<u32>>,
    partition: &str,
    trunc: Option<u32>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let data = matrix(data, trunc)?;
    let p = parse(partition, Some(data.n_vars()))?;
    let mut model = fit_model(&data, &p, &options(seed)).map_err(err)?;
    attach_standard_errors(&mut model, &data, SeMode::Diagonal).map_err(err)?;
    to_py(py, &model)
}

/// Mixed model moving variable `moved` into group `target`, both 1-based
/// (groups in the order `partition` prints them).
#[pyfunction]
#[pyo3(signature = (data, partition, moved, target, trunc=None, seed=1))]
fn fit_mixed<'py>(
    py: Python<'py>,
    data: Vec<Vec<u32>>,
    partition: &str,
    moved: usize,
    target: usize,
    trunc: Option<u32>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let data = matrix(data, trunc)?;
    let p = parse(partition, Some(data.n_vars()))?;
    if moved == 0 || target == 0 {
        return Err(PyValueError::new_err("moved and target are 1-based"));
    }
    let model = core_fit_mixed(&data, &p, moved - 1, target - 1, &options(seed)).map_err(err)?;
    to_py(py, &model)
}

/// Forward AIC selection trace, or the full table when `exhaustive`.
#[pyfunction]
#[pyo3(signature = (data, trunc=None, exhaustive=false, seed=1))]
fn select<'py>(
    py: Python<'py>,
    data: Vec<Vec<u32>>,
    trunc: Option<u32>,
    exhaustive: bool,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let data = matrix(data, trunc)?;
    if exhaustive {
        to_py(py, &select_exhaustive(&data, &options(seed)).map_err(err)?)
    } else {
        to_py(py, &select_forward(&data, &options(seed)).map_err(err)?)
    }
}

#[pyfunction]
fn asp_table(py: Python<'_>, n: usize) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &core_asp_table(n).map_err(err)?)
}

/// One replicate of the simulation design, as a list of rows.
#[pyfunction]
#[pyo3(signature = (
    partition, n_obs, factor_rate=0.5, idio_rate_in_group=0.5, idio_rate_singleton=1.0,
    trunc=None, seed=1, rep=0
))]
#[allow(clippy::too_many_arguments)]
fn generate(
    partition: &str,
    n_obs: usize,
    factor_rate: f64,
    idio_rate_in_group: f64,
    idio_rate_singleton: f64,
    trunc: Option<u32>,
    seed: u64,
    rep: u64,
) -> PyResult<Vec<Vec<u32>>> {
    let design = SimDesign {
        partition: parse(partition, None)?,
        factor_rate,
        idio_rate_in_group,
        idio_rate_singleton,
        trunc_bound: trunc,
        n_obs,
        n_reps: 1,
        seed,
    };
    let data = poisfactor_core::generate(&design, rep).map_err(err)?;
    Ok(data.rows().map(<[u32]>::to_vec).collect())
}

/// Means, variances, correlations and overdispersion warnings.
#[pyfunction]
#[pyo3(signature = (data, names=None))]
fn describe<'py>(py: Python<'py>, data: Vec<Vec<u32>>, names: Option<Vec<String>>) -> PyResult<Bound<'py, PyAny>> {
    let data = matrix(data, None)?;
    let names = names.unwrap_or_else(|| (1..=data.n_vars()).map(|i| format!("V{i}")).collect());
    if names.len() != data.n_vars() {
        return Err(PyValueError::new_err("one name per column"));
    }
    to_py(py, &describe_dataset(&Dataset { names, data }))
}

#[pymodule]
fn poisfactor(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(bell_number, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_partitions, m)?)?;
    m.add_function(wrap_pyfunction!(successor_models, m)?)?;
    m.add_function(wrap_pyfunction!(type_signature, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(fit_mixed, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(asp_table, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(describe, m)?)?;
    Ok(())
}
