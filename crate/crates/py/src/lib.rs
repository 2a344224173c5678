use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use regkernel::graph::RegularMatrix;
use regkernel::graph_stats::{check_omega, deflated_norm, NormOptions, OmegaOptions};
use regkernel::rng::rng_from;
use regkernel::{decompose, harness, sampler, KVector};
use std::path::PathBuf;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(n: usize, d: usize, rows: Vec<Vec<usize>>) -> PyResult<RegularMatrix> {
    RegularMatrix::from_row_supports(n, d, &rows).map_err(value_err)
}

fn rows_of(m: &RegularMatrix) -> Vec<Vec<usize>> {
    (0..m.n()).map(|i| m.row(i).to_vec()).collect()
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

/// All 0/1 n x n matrices with row and column sums d, as 0-based row supports.
#[pyfunction]
fn enumerate(n: usize, d: usize) -> PyResult<Vec<Vec<Vec<usize>>>> {
    Ok(sampler::enumerate_all(n, d).map_err(value_err)?.iter().map(rows_of).collect())
}

/// A uniform draw from M_{n,d} (rejection, switch-chain fallback).
#[pyfunction]
#[pyo3(signature = (n, d, seed, budget=1000))]
fn sample_matrix(n: usize, d: usize, seed: u64, budget: u64) -> PyResult<Vec<Vec<usize>>> {
    let (m, _) = sampler::sample_matrix(&mut rng_from(seed, 0), n, d, budget).map_err(value_err)?;
    Ok(rows_of(&m))
}

/// l-decomposition of the k-approximation of `x`, as a dict.
#[pyfunction]
fn decompose_vector<'py>(py: Python<'py>, x: Vec<Complex64>, k: u128, d: usize) -> PyResult<Bound<'py, PyAny>> {
    let dec = KVector::approx(&x, k).and_then(|y| decompose(&y, d)).map_err(value_err)?;
    json_to_py(py, &dec.to_json())
}

/// `(estimate, lower, upper)` for `||M - (d/n) J||`.
#[pyfunction]
#[pyo3(signature = (n, d, rows, seed=0))]
fn deflated_norm_of(n: usize, d: usize, rows: Vec<Vec<usize>>, seed: u64) -> PyResult<(f64, f64, f64)> {
    let r = deflated_norm(&matrix(n, d, rows)?, &NormOptions { seed, ..Default::default() });
    Ok((r.estimate, r.lower, r.upper))
}

/// Whether the edge-expansion event holds for all sets of size k.
#[pyfunction]
#[pyo3(signature = (n, d, rows, k, eps, samples=0, seed=0))]
fn omega_holds(n: usize, d: usize, rows: Vec<Vec<usize>>, k: usize, eps: f64, samples: u64, seed: u64) -> PyResult<bool> {
    let opts = OmegaOptions { k_exhaustive: 2, samples, seed };
    Ok(check_omega(&matrix(n, d, rows)?, k, eps, &opts).map_err(value_err)?.holds)
}

/// Runs an experiment config; returns `(exit_code, out_dir, hard_failures)`.
#[pyfunction]
fn run_config(path: PathBuf) -> PyResult<(i32, PathBuf, usize)> {
    let cfg = harness::load_config(&path).map_err(value_err)?;
    let out = harness::run(&cfg).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((out.exit_code, out.out_dir, out.hard_failures))
}

#[pymodule]
#[pyo3(name = "regkernel")]
fn regkernel_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(enumerate, m)?)?;
    m.add_function(wrap_pyfunction!(sample_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_vector, m)?)?;
    m.add_function(wrap_pyfunction!(deflated_norm_of, m)?)?;
    m.add_function(wrap_pyfunction!(omega_holds, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
