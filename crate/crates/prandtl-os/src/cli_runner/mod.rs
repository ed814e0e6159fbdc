// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Batch front-end: one subcommand per run, CSV output plus a `manifest.txt`.
//!
//! Parameter points are the product `n x nu x gamma x re_c x im_scale` in that
//! nesting order; rows are written in point order whatever the worker count.

pub mod acceptance;
pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::boundary_modes::{build_fast_mode, d_eps, FastModeConfig};
use crate::error::{Error, Result};
use crate::evolve_oracle::{
    run_nonlinear, write_checkpoint, write_time_series_csv, GevreyNorm, MultiModeState, NonlinearStepper,
};
use crate::halfline_grid::HalfLineGrid;
use crate::os_core::{airy_mode, rayleigh_mode, OsContext, SpectralParams};
use crate::profiles::{certify_concavity, ProfileTrack, ShearProfile};
use crate::ray_airy_iteration::{build_phi_mos, IterationConfig};
use crate::resolvent_map::{classify_mu, sweep_resolvent_norms, write_sweep_csv, RegionParams, ResolventOptions};
use crate::semigroup_engine::{
    evolution_operator, growth_report, random_initial_data, write_growth_csv, EvolutionConfig, SemigroupConfig,
};
use crate::C64;

pub use config::ExperimentConfig;

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "PRANDTL_OS_OUT";

/// What a finished run produced.
#[derive(Debug, Default)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    /// Human-readable summary for stdout (may contain timings).
    pub summary: String,
    /// Number of failed acceptance criteria.
    pub failed: usize,
}

/// Short machine-readable tag for an error.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Invalid(_) => "invalid",
        Error::Singular(_) => "singular",
        Error::Divergence(_) => "divergence",
        Error::Quadrature(_) => "quadrature",
        Error::Regime(_) => "regime",
        Error::Config { .. } => "config",
        Error::Blowup(_) => "blowup",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
    }
}

/// `kind = ...` / `line = ...` / `message = ...` record for a failed run.
pub fn error_record(e: &Error) -> String {
    let mut s = format!("kind = {}\n", error_kind(e));
    if let Error::Config { line, msg } = e {
        s.push_str(&format!("line = {line}\nmessage = {msg}\n"));
    } else {
        s.push_str(&format!("message = {e}\n"));
    }
    s
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Copy, Debug)]
struct Point {
    n: i64,
    nu: f64,
    gamma: f64,
    re_c: f64,
    im_scale: f64,
}

impl Point {
    fn params(&self, delta: f64) -> Result<SpectralParams> {
        let base = SpectralParams::on_stability_line(self.n, self.nu, self.gamma, delta, self.re_c)?;
        Ok(base.with_c(C64::new(self.re_c, base.c.im * self.im_scale)))
    }

    fn cells(&self, sp: &SpectralParams) -> Vec<String> {
        vec![self.n.to_string(), f(self.nu), f(self.gamma), f(sp.c.re), f(sp.c.im)]
    }
}

const POINT_HEAD: [&str; 5] = ["n", "nu", "gamma", "re_c", "im_c"];

fn points(cfg: &ExperimentConfig) -> Result<Vec<Point>> {
    let (nus, gammas) = (cfg.params.nu.values()?, cfg.params.gamma.values()?);
    let (res, ims) = (cfg.params.re_c.values()?, cfg.params.im_scale.values()?);
    let mut out = Vec::new();
    for n in cfg.ns()? {
        for &nu in &nus {
            for &gamma in &gammas {
                for &re_c in &res {
                    for &im_scale in &ims {
                        out.push(Point { n, nu, gamma, re_c, im_scale });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Distinct `(n, nu, gamma)` triples in point order.
fn triples(cfg: &ExperimentConfig) -> Result<Vec<(i64, f64, f64)>> {
    let mut out: Vec<(i64, f64, f64)> = Vec::new();
    for p in points(cfg)? {
        if !out.iter().any(|&(n, nu, g)| n == p.n && nu == p.nu && g == p.gamma) {
            out.push((p.n, p.nu, p.gamma));
        }
    }
    Ok(out)
}

/// Errors that mark a parameter point as outside the admissible set rather than failing the run.
fn soft(r: Result<Vec<String>>, width: usize) -> Result<(Vec<String>, String)> {
    match r {
        Ok(v) => Ok((v, "ok".into())),
        Err(e @ (Error::Singular(_) | Error::Regime(_) | Error::Divergence(_))) => {
            Ok((vec![String::new(); width], error_kind(&e).into()))
        }
        Err(e) => Err(e),
    }
}

fn write_table(path: &Path, head: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(head)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn smooth_source(g: &HalfLineGrid) -> Vec<C64> {
    g.sample(|y| C64::new(y * (-y).exp(), 0.5 * y * y * (-0.7 * y).exp()))
}

/// Runs each point in parallel and writes one row per point, plus a status column.
fn point_table<F>(cfg: &ExperimentConfig, path: &Path, head: &[&str], eval: F) -> Result<()>
where
    F: Fn(&Point, &SpectralParams) -> Result<Vec<String>> + Sync,
{
    let delta = cfg.delta();
    let rows = points(cfg)?
        .par_iter()
        .map(|pt| {
            let sp = pt.params(delta)?;
            let (vals, status) = soft(eval(pt, &sp), head.len())?;
            let mut row = pt.cells(&sp);
            row.extend(vals);
            row.push(status);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut full: Vec<&str> = POINT_HEAD.to_vec();
    full.extend_from_slice(head);
    full.push("status");
    write_table(path, &full, &rows)
}

fn profile_check(p: &ShearProfile, g: &HalfLineGrid, out: &Path) -> Result<Vec<PathBuf>> {
    let rows: Vec<Vec<String>> = g
        .nodes
        .iter()
        .map(|&y| {
            let u = p.u(y);
            vec![f(y), f(u[0]), f(u[1]), f(u[2]), f(u[3])]
        })
        .collect();
    let a = out.join("profile.csv");
    write_table(&a, &["y", "u", "du", "d2u", "d3u"], &rows)?;
    let cert = certify_concavity(p, &[0.1, 0.25, 0.5], g);
    let rows: Vec<Vec<String>> = cert
        .m_sigma
        .iter()
        .map(|&(s, m)| vec![cert.kind.tag().to_string(), f(s), f(m), cert.m_global.map(f).unwrap_or_default()])
        .collect();
    let b = out.join("concavity.csv");
    write_table(&b, &["kind", "sigma", "m_sigma", "m_global"], &rows)?;
    Ok(vec![a, b])
}

fn nonlinear(cfg: &ExperimentConfig, p: &ShearProfile, g: Arc<HalfLineGrid>, out: &Path) -> Result<Vec<PathBuf>> {
    let ev = &cfg.evolve;
    let nu = cfg.params.nu.values()?[0];
    let gamma = cfg.params.gamma.values()?[0];
    let beta = 2.0 * (1.0 - gamma) / gamma;
    let amp = ev.amplitude.unwrap_or(nu.powf(0.5 + beta));
    let mut stepper = NonlinearStepper::new(p, g.clone(), nu, ev.n_max)?;
    let mut s0 = MultiModeState::zeros(ev.n_max, g.len());
    let seeded = (ev.n_max / 4).max(1);
    for (k, phi) in random_initial_data(&g, seeded, cfg.run.seed).iter().enumerate() {
        s0.set_real_pair(k as i64 + 1, phi);
    }
    let e = stepper.energy(&s0).sqrt();
    for m in s0.modes.iter_mut() {
        for z in m.iter_mut() {
            *z *= amp / e;
        }
    }
    let (k, k0, d) = (ev.k, ev.k0, ev.d);
    let run = run_nonlinear(&mut stepper, &s0, ev.t_end / nu.sqrt(), ev.dt, move |t| {
        GevreyNorm { d, gamma, k }.shrunk(k0, t)
    })?;
    let a = out.join("time_series.csv");
    write_time_series_csv(BufWriter::new(File::create(&a)?), ev.n_max, &run.rows)?;
    let b = out.join("checkpoint.bin");
    let mut w = BufWriter::new(File::create(&b)?);
    write_checkpoint(&mut w, &g, &run.state)?;
    w.flush()?;
    Ok(vec![a, b])
}

fn evolve(cfg: &ExperimentConfig, p: &ShearProfile, g: Arc<HalfLineGrid>, out: &Path) -> Result<Vec<PathBuf>> {
    let ev = &cfg.evolve;
    let data = random_initial_data(&g, ev.ensemble.max(1), cfg.run.seed);
    let sg = SemigroupConfig::for_profile(p);
    let ecfg = EvolutionConfig { semigroup: sg, delta_tilde: cfg.delta_tilde() };
    let mut rows = Vec::new();
    for (n, nu, gamma) in triples(cfg)? {
        let track = ProfileTrack::heat(p, nu, &g, ev.t_end, ev.snapshots.max(2))?;
        let sp = SpectralParams::on_stability_line(n, nu, gamma, cfg.delta(), 0.0)?;
        let r = evolution_operator(&track, &sp, g.clone(), &data, 0.0, ev.t_end, &ecfg)?;
        for &(t, norm) in &r.history {
            rows.push(vec![n.to_string(), f(nu), f(gamma), f(t), f(norm), r.subintervals.to_string(), f(r.rate_fit)]);
        }
    }
    let a = out.join("evolve.csv");
    write_table(&a, &["n", "nu", "gamma", "t", "norm", "subintervals", "rate_fit"], &rows)?;
    Ok(vec![a])
}

fn resolvent_sweep(cfg: &ExperimentConfig, p: &ShearProfile, g: Arc<HalfLineGrid>, out: &Path) -> Result<Vec<PathBuf>> {
    let mut opts = ResolventOptions::for_profile(p);
    if let Some(d2) = cfg.thresholds.delta2 {
        opts.thresholds.delta2 = d2;
    }
    let (res, ims) = (cfg.params.re_c.values()?, cfg.params.im_scale.values()?);
    let mut rows = Vec::new();
    for (n, nu, gamma) in triples(cfg)? {
        let template = SpectralParams::on_stability_line(n, nu, gamma, cfg.delta(), 0.0)?;
        let rp = RegionParams::new(&template, &opts.thresholds, opts.theta)?;
        let mut mus = Vec::new();
        for &rc in &res {
            for &s in &ims {
                let mu = C64::new(rp.l0_re() * s, -template.alpha() * rc);
                if classify_mu(&rp, mu).estimate().is_some() {
                    mus.push(mu);
                }
            }
        }
        if !mus.is_empty() {
            rows.extend(sweep_resolvent_norms(p, &template, g.clone(), &mus, cfg.evolve.ensemble, cfg.run.seed, &opts)?);
        }
    }
    let a = out.join("resolvent_sweep.csv");
    write_sweep_csv(BufWriter::new(File::create(&a)?), &rows)?;
    Ok(vec![a])
}

fn semigroup(cfg: &ExperimentConfig, p: &ShearProfile, g: Arc<HalfLineGrid>, out: &Path) -> Result<Vec<PathBuf>> {
    let mut sg = SemigroupConfig::for_profile(p);
    if let Some(d2) = cfg.thresholds.delta2 {
        sg.thresholds.delta2 = d2;
    }
    let taus = cfg.params.tau.values()?;
    let mut reports = Vec::new();
    for (n, nu, gamma) in triples(cfg)? {
        let sp = SpectralParams::on_stability_line(n, nu, gamma, cfg.delta(), 0.0)?;
        reports.push(growth_report(p, &sp, g.clone(), &taus, cfg.evolve.ensemble, cfg.run.seed, &sg)?);
    }
    let a = out.join("growth.csv");
    write_growth_csv(BufWriter::new(File::create(&a)?), &reports)?;
    Ok(vec![a])
}

fn acceptance_run(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let results = acceptance::run_acceptance(cfg.run.seed, &[]);
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                format!("C{}", r.id),
                r.name.to_string(),
                if r.pass { "pass" } else { "fail" }.to_string(),
                r.measured.clone(),
                r.tolerance.clone(),
            ]
        })
        .collect();
    let a = out.join("acceptance.csv");
    write_table(&a, &["criterion", "name", "result", "measured", "tolerance"], &rows)?;
    let summary: Vec<String> = results.iter().map(|r| r.line()).collect();
    Ok(RunOutcome {
        files: vec![a],
        summary: summary.join("\n"),
        failed: results.iter().filter(|r| !r.pass).count(),
    })
}

/// Executes the configured subcommand, writing artifacts under `cfg.run.out`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let out = cfg.run.out.clone();
    fs::create_dir_all(&out)?;
    let manifest = out.join("manifest.txt");
    fs::write(&manifest, cfg.manifest())?;
    let mut outcome = if cfg.run.subcommand == "acceptance" {
        acceptance_run(cfg, &out)?
    } else {
        let g = cfg.grid()?;
        let p = cfg.profile(&g)?;
        let files = match cfg.run.subcommand.as_str() {
            "profile-check" => profile_check(&p, &g, &out)?,
            "solve-os" => {
                let path = out.join("solve_os.csv");
                let h = smooth_source(&g);
                point_table(
                    cfg,
                    &path,
                    &["rayleigh_identity_re", "rayleigh_identity_im", "airy_identity", "airy_bound_ratio", "residual"],
                    |_, sp| {
                        let ctx = OsContext::new(&p, *sp, g.clone());
                        let r = rayleigh_mode(&ctx, &h, C64::new(0.0, 0.0))?;
                        let a = airy_mode(&ctx, &h)?;
                        let d = |m: &crate::os_core::ModeSolution, k: &str| f(m.diagnostic(k).unwrap_or(f64::NAN));
                        Ok(vec![
                            d(&r, "rayleigh_identity_re"),
                            d(&r, "rayleigh_identity_im"),
                            d(&a, "airy_identity"),
                            d(&a, "airy_bound_ratio"),
                            f(r.residual),
                        ])
                    },
                )?;
                vec![path]
            }
            "iterate" => {
                let path = out.join("iterate.csv");
                let h = smooth_source(&g);
                let strong = ResolventOptions::for_profile(&p).strong;
                let icfg = IterationConfig { strong, ..Default::default() };
                point_table(
                    cfg,
                    &path,
                    &["steps", "observed_ratio", "predicted_b1", "residual", "converged"],
                    |_, sp| {
                        let ctx = OsContext::new(&p, *sp, g.clone());
                        let (m, t) = build_phi_mos(&ctx, &h, &icfg)?;
                        Ok(vec![
                            t.steps.len().to_string(),
                            f(t.observed_ratio()),
                            f(t.predicted_b1),
                            f(m.residual),
                            t.converged.to_string(),
                        ])
                    },
                )?;
                vec![path]
            }
            "modes" => {
                let path = out.join("modes.csv");
                let fcfg = FastModeConfig::default();
                point_table(cfg, &path, &["slope_re", "slope_im", "residual", "d_eps", "remainder_bound"], |_, sp| {
                    let ctx = OsContext::new(&p, *sp, g.clone());
                    let m = build_fast_mode(&p, &ctx, &fcfg)?;
                    Ok(vec![
                        f(m.boundary_slope.re),
                        f(m.boundary_slope.im),
                        f(m.residual),
                        f(d_eps(&ctx)),
                        m.diagnostic("remainder_bound").map(f).unwrap_or_default(),
                    ])
                })?;
                vec![path]
            }
            "resolvent-sweep" => resolvent_sweep(cfg, &p, g.clone(), &out)?,
            "semigroup" => semigroup(cfg, &p, g.clone(), &out)?,
            "evolve" => evolve(cfg, &p, g.clone(), &out)?,
            "nonlinear" => nonlinear(cfg, &p, g.clone(), &out)?,
            other => return Err(Error::invalid(format!("unknown subcommand `{other}`"))),
        };
        RunOutcome { summary: format!("{} wrote {} file(s)", cfg.run.subcommand, files.len()), files, failed: 0 }
    };
    outcome.files.insert(0, manifest);
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_nest_in_declared_order() {
        let cfg = ExperimentConfig::parse("[params]\nn = [16, 32]\nnu = [1e-3]\nre_c = [0.0, 0.5]\n").unwrap();
        let ps = points(&cfg).unwrap();
        let got: Vec<(i64, f64)> = ps.iter().map(|p| (p.n, p.re_c)).collect();
        assert_eq!(got, vec![(16, 0.0), (16, 0.5), (32, 0.0), (32, 0.5)]);
        assert_eq!(triples(&cfg).unwrap().len(), 2);
    }

    #[test]
    fn im_scale_multiplies_the_stability_line() {
        let cfg = ExperimentConfig::parse("[params]\nn = [27]\nim_scale = [2.0]\nre_c = [0.1]\n").unwrap();
        let sp = points(&cfg).unwrap()[0].params(0.05).unwrap();
        // 27^{-1/3} / 0.05 = 20/3, doubled.
        assert!((sp.c.im - 40.0 / 3.0).abs() < 1e-12);
        assert_eq!(sp.c.re, 0.1);
    }

    #[test]
    fn error_records_are_key_value_lines() {
        let e = Error::Config { line: 4, msg: "bad".into() };
        assert_eq!(error_record(&e), "kind = config\nline = 4\nmessage = bad\n");
        let r = error_record(&Error::Singular("pivot".into()));
        assert!(r.starts_with("kind = singular\nmessage = "));
    }

    #[test]
    fn soft_errors_become_status_cells() {
        let (v, s) = soft(Err(Error::Regime("x".into())), 3).unwrap();
        assert_eq!((v.len(), s.as_str()), (3, "regime"));
        assert!(soft(Err(Error::invalid("x")), 3).is_err());
    }
}
