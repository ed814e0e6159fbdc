// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Python bindings for `prandtl-os`.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use num_complex::Complex64 as C64;
use prandtl_os::cli_runner::acceptance::run_acceptance;
use prandtl_os::cli_runner::{run, ExperimentConfig};
use prandtl_os::evolve_oracle::theta as theta_rs;
use prandtl_os::halfline_grid::{make_grid, HalfLineGrid, Stretch};
use prandtl_os::os_core::{airy_mode, rayleigh_mode, ModeSolution, OsContext, SpectralParams};
use prandtl_os::profiles::{build_profile, certify_concavity, heat_evolve, ShearProfile};
use prandtl_os::ray_airy_iteration::{build_phi_mos, IterationConfig};
use prandtl_os::resolvent_map::{sweep_resolvent_norms, ResolventOptions};
use prandtl_os::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Invalid(_) | Error::Config { .. } | Error::Regime(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn grid(points: usize) -> PyResult<Arc<HalfLineGrid>> {
    make_grid(points, 40.0, Stretch::Tanh { beta: 3.0 }).map(Arc::new).map_err(py_err)
}

fn profile(kind: &str, params: Option<HashMap<String, f64>>) -> PyResult<ShearProfile> {
    let p: BTreeMap<String, f64> = params.unwrap_or_default().into_iter().collect();
    build_profile(kind, &p).map_err(py_err)
}

/// `[U, U', U'', U''']` at each `y`.
#[pyfunction]
#[pyo3(signature = (kind, ys, params=None))]
fn profile_values(kind: &str, ys: Vec<f64>, params: Option<HashMap<String, f64>>) -> PyResult<Vec<[f64; 4]>> {
    let p = profile(kind, params)?;
    Ok(ys.iter().map(|&y| p.u(y)).collect())
}

/// Concavity class (`"WC"`, `"SC"` or `"fail"`) and `(sigma, M_sigma)` pairs.
#[pyfunction]
#[pyo3(signature = (kind, sigmas, heat_t=0.0, points=1024))]
fn concavity(kind: &str, sigmas: Vec<f64>, heat_t: f64, points: usize) -> PyResult<(String, Vec<(f64, f64)>)> {
    let g = grid(points)?;
    let mut p = profile(kind, None)?;
    if heat_t > 0.0 {
        p = heat_evolve(&p, heat_t, &g).map_err(py_err)?;
    }
    let c = certify_concavity(&p, &sigmas, &g);
    Ok((c.kind.tag().to_string(), c.m_sigma))
}

/// Solves `solver` (`"rayleigh"`, `"airy"` or `"mos"`) with a fixed smooth source.
/// Returns `(ys, re phi, im phi, diagnostics)`.
#[pyfunction]
#[pyo3(signature = (kind, n, nu, c, solver="rayleigh", gamma=2.0/3.0, points=400))]
fn solve_mode(
    kind: &str,
    n: i64,
    nu: f64,
    c: (f64, f64),
    solver: &str,
    gamma: f64,
    points: usize,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>, HashMap<String, f64>)> {
    let g = grid(points)?;
    let p = profile(kind, None)?;
    let sp = SpectralParams::new(n, nu, gamma, 0.05, C64::new(c.0, c.1)).map_err(py_err)?;
    let ctx = OsContext::new(&p, sp, g.clone());
    let h = g.sample(|y| C64::new(y * (-y).exp(), 0.5 * y * y * (-0.7 * y).exp()));
    let m: ModeSolution = match solver {
        "rayleigh" => rayleigh_mode(&ctx, &h, C64::new(0.0, 0.0)),
        "airy" => airy_mode(&ctx, &h),
        "mos" => build_phi_mos(&ctx, &h, &IterationConfig::default()).map(|r| r.0),
        other => return Err(PyValueError::new_err(format!("unknown solver `{other}`"))),
    }
    .map_err(py_err)?;
    let mut d: HashMap<String, f64> = m.diagnostics.iter().cloned().collect();
    d.insert("residual".into(), m.residual);
    let phi = &m.phi.values;
    Ok((g.nodes.clone(), phi.iter().map(|z| z.re).collect(), phi.iter().map(|z| z.im).collect(), d))
}

/// Ensemble/power estimate of `||(mu + L)^{-1}||` at one `mu`.
#[pyfunction]
#[pyo3(signature = (kind, n, nu, mu, gamma=2.0/3.0, count=8, seed=0, points=400))]
fn resolvent_norm(
    kind: &str,
    n: i64,
    nu: f64,
    mu: (f64, f64),
    gamma: f64,
    count: usize,
    seed: u64,
    points: usize,
) -> PyResult<f64> {
    let g = grid(points)?;
    let p = profile(kind, None)?;
    let opts = ResolventOptions::for_profile(&p);
    let template = SpectralParams::on_stability_line(n, nu, gamma, 0.05, 0.0).map_err(py_err)?;
    let rows = sweep_resolvent_norms(&p, &template, g, &[C64::new(mu.0, mu.1)], count, seed, &opts)
        .map_err(py_err)?;
    Ok(rows[0].norm)
}

/// `theta_{gamma,n}`.
#[pyfunction]
fn theta(gamma: f64, n: i64) -> f64 {
    theta_rs(gamma, n)
}

/// `(id, passed, description)` for the selected acceptance criteria.
#[pyfunction]
#[pyo3(signature = (ids, seed=20240601))]
fn acceptance(py: Python<'_>, ids: Vec<u8>, seed: u64) -> Vec<(u8, bool, String)> {
    py.detach(|| run_acceptance(seed, &ids))
        .into_iter()
        .map(|r| (r.id, r.pass, r.line()))
        .collect()
}

/// Runs a TOML experiment config; returns the written paths.
#[pyfunction]
fn run_config(py: Python<'_>, text: &str) -> PyResult<Vec<String>> {
    let cfg = ExperimentConfig::parse(text).map_err(py_err)?;
    let out = py.detach(|| run(&cfg)).map_err(py_err)?;
    Ok(out.files.iter().map(|p| p.display().to_string()).collect())
}

#[pymodule]
fn prandtl_os_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(profile_values, m)?)?;
    m.add_function(wrap_pyfunction!(concavity, m)?)?;
    m.add_function(wrap_pyfunction!(solve_mode, m)?)?;
    m.add_function(wrap_pyfunction!(resolvent_norm, m)?)?;
    m.add_function(wrap_pyfunction!(theta, m)?)?;
    m.add_function(wrap_pyfunction!(acceptance, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
