//! Python bindings. Structured results are returned as plain dicts, built
//! by round-tripping the serde form through Python's `json` module.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

use scalenet_core::certify::{Certificate, Violation};
use scalenet_core::expcli::{self, LoadedConfig, RunOptions, ScenarioConfig};
use scalenet_core::{halanay, measures, neuralnet, unicycle};

fn err(e: scalenet_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

#[derive(Serialize)]
struct Outcome<'a> {
    certified: bool,
    certificate: Option<&'a Certificate>,
    violation: Option<&'a Violation>,
}

fn outcome<'py>(py: Python<'py>, r: &Result<Certificate, Violation>) -> PyResult<Bound<'py, PyAny>> {
    let o = match r {
        Ok(c) => Outcome { certified: true, certificate: Some(c), violation: None },
        Err(v) => Outcome { certified: false, certificate: None, violation: Some(v) },
    };
    to_py(py, &o)
}

/// Log-norm induced by the Euclidean norm.
#[pyfunction]
fn mu2(a: Vec<Vec<f64>>) -> PyResult<f64> {
    measures::mu2(&matrix(a)?).map_err(err)
}

/// Log-norm induced by the max norm.
#[pyfunction]
fn mu_inf(a: Vec<Vec<f64>>) -> PyResult<f64> {
    measures::mu_inf(&matrix(a)?).map_err(err)
}

/// Upper bounds `(measure, norm)` for the max-separable metric with the given block sizes.
#[pyfunction]
fn block_bounds(a: Vec<Vec<f64>>, dims: Vec<usize>) -> PyResult<(f64, f64)> {
    let bm = measures::BlockMatrix::new(matrix(a)?, dims).map_err(err)?;
    Ok((measures::lemma1_measure_bound(&bm).map_err(err)?, measures::lemma1_norm_bound(&bm).map_err(err)?))
}

/// Decay rate solving `lambda + a + b exp(lambda tau0) = 0`.
#[pyfunction]
fn solve_rate(a: f64, b: f64, tau0: f64) -> PyResult<f64> {
    halanay::solve_rate(a, b, tau0).map_err(err)
}

/// Bound for `u' <= a u + b sup u(t - s) + c` evaluated at `times`.
#[pyfunction]
fn envelope(a: f64, b: f64, c: f64, tau0: f64, initial_sup: f64, times: Vec<f64>) -> PyResult<Vec<f64>> {
    let env = halanay::envelope(&halanay::HalanayParams::new(a, b, c, tau0).map_err(err)?, initial_sup).map_err(err)?;
    Ok(times.into_iter().map(|t| env.eval(t)).collect())
}

/// Certificate of the circle formation; `kp_scale` multiplies the consensus gain.
#[pyfunction]
#[pyo3(signature = (circles = 4, tau0 = 0.1, kp_scale = 1.0))]
fn robot_certificate(py: Python<'_>, circles: usize, tau0: f64, kp_scale: f64) -> PyResult<Bound<'_, PyAny>> {
    let gains = unicycle::FormationGains::scalable().scale_kp(kp_scale);
    let sc = unicycle::CircleScenario::new(circles, unicycle::AdjacencyMode::IntraInter, gains, tau0).map_err(err)?;
    let r = unicycle::scenario_certificate(&sc);
    let d = outcome(py, &r.as_ref().map(|rc| rc.certificate.clone()).map_err(Clone::clone))?;
    if let Ok(rc) = &r {
        d.set_item("alpha", rc.alpha)?;
    }
    Ok(d)
}

fn hopfield_net(c: Vec<f64>, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, inputs: Vec<f64>, tau0: f64) -> PyResult<neuralnet::CGNetwork> {
    let tanh = neuralnet::Activation::Tanh;
    neuralnet::CGNetwork::hopfield(c, matrix(a)?, matrix(b)?, tanh.clone(), tanh, inputs, tau0).map_err(err)
}

/// Closed-form certificate of a tanh Hopfield network.
#[pyfunction]
fn hopfield_certificate(
    py: Python<'_>,
    c: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    inputs: Vec<f64>,
    tau0: f64,
) -> PyResult<Bound<'_, PyAny>> {
    outcome(py, &neuralnet::prop4_certificate(&hopfield_net(c, a, b, inputs, tau0)?))
}

/// Equilibrium of a tanh Hopfield network.
#[pyfunction]
fn hopfield_equilibrium(c: Vec<f64>, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, inputs: Vec<f64>, tau0: f64) -> PyResult<Vec<f64>> {
    Ok(neuralnet::solve_equilibrium(&hopfield_net(c, a, b, inputs, tau0)?).map_err(err)?.x_star)
}

/// Row-normalized random weights with zero diagonal.
#[pyfunction]
fn sample_weights(n: usize, row_margin: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let w = neuralnet::hopfield_weight_sampler(n, row_margin, seed).map_err(err)?;
    Ok(w.row_iter().map(|r| r.iter().copied().collect()).collect())
}

fn loaded(text: &str, base_dir: Option<PathBuf>) -> PyResult<LoadedConfig> {
    let config = ScenarioConfig::parse(text).map_err(err)?;
    config.validate().map_err(err)?;
    Ok(LoadedConfig { config, base_dir: base_dir.unwrap_or_else(|| ".".into()) })
}

/// Certifies a scenario given as TOML or JSON text; writes certificate.json into `out_dir`.
#[pyfunction]
#[pyo3(signature = (config, out_dir, base_dir = None))]
fn certify<'py>(py: Python<'py>, config: &str, out_dir: PathBuf, base_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let l = loaded(config, base_dir)?;
    let r = py.detach(|| expcli::cmd_certify(&l, &RunOptions { out_dir, jobs: None })).map_err(err)?;
    to_py(py, &r)
}

/// Simulates a scenario given as TOML or JSON text and returns the metrics report.
#[pyfunction]
#[pyo3(signature = (config, out_dir, base_dir = None))]
fn simulate<'py>(py: Python<'py>, config: &str, out_dir: PathBuf, base_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let l = loaded(config, base_dir)?;
    let r = py.detach(|| expcli::cmd_simulate(&l, &RunOptions { out_dir, jobs: None })).map_err(err)?;
    to_py(py, &r)
}

/// Runs the config's sweep and returns `[value, report]` pairs.
#[pyfunction]
#[pyo3(signature = (config, out_dir, base_dir = None, jobs = None))]
fn sweep<'py>(
    py: Python<'py>,
    config: &str,
    out_dir: PathBuf,
    base_dir: Option<PathBuf>,
    jobs: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let l = loaded(config, base_dir)?;
    let r = py.detach(|| expcli::cmd_sweep(&l, &RunOptions { out_dir, jobs }, &|_| {})).map_err(err)?;
    let rows: Vec<_> = r.rows.iter().map(|row| (row.value, &row.report)).collect();
    to_py(py, &rows)
}

#[pymodule]
fn scalenet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mu2, m)?)?;
    m.add_function(wrap_pyfunction!(mu_inf, m)?)?;
    m.add_function(wrap_pyfunction!(block_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(solve_rate, m)?)?;
    m.add_function(wrap_pyfunction!(envelope, m)?)?;
    m.add_function(wrap_pyfunction!(robot_certificate, m)?)?;
    m.add_function(wrap_pyfunction!(hopfield_certificate, m)?)?;
    m.add_function(wrap_pyfunction!(hopfield_equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(sample_weights, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
