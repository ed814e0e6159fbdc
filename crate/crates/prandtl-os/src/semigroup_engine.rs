// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Semigroup `e^{-tau L}` on one Fourier mode through the Dunford integral,
//! growth reports, the low- and high-frequency energy certificates, and the
//! time-splitting evolution operator for time-dependent profiles.
//!
//! States are stream functions `phi`; the evolution reads
//! `d/dtau (L_d phi) = A phi` with `A = -i alpha V L_d + i alpha V'' + sqrt(nu) L_d^2`,
//! so that `(mu + L)^{-1}` becomes `(mu L_d - A)^{-1}` acting on `L_d`-data.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::halfline_grid::{Banded, BandedLu, Constraint, ConstrainedSystem, HalfLineGrid};
use crate::os_core::{Forcing, SpectralParams, ThresholdSet};
use crate::profiles::{ProfileTrack, ShearProfile, VSamples, NORM_LEVEL};
use crate::quad::{gl, Rule};
use crate::resolvent_map::{classify_mu, RegionParams};
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);
/// `ln(1e16)`: the ray tail is cut where `e^{tau mu}` drops below `1e-16` of its maximum.
const TAIL_LOG: f64 = 36.841_361_487_904_734;

/// Frozen-coefficient pencil `mu M - A` with the clamped and outflow
/// conditions as fixed algebraic rows.
pub struct Pencil {
    pub grid: Arc<HalfLineGrid>,
    pub n: i64,
    pub nu: f64,
    pub alpha: f64,
    pub ld: Banded,
    m: Banded,
    // C - A: constraint rows minus the assembled operator.
    ca: Banded,
    sys: ConstrainedSystem,
    v: Vec<f64>,
    d2v: Vec<f64>,
}

fn mode_constraints(g: &HalfLineGrid, alpha: f64) -> Vec<Constraint> {
    let n = g.len();
    let a = C64::new(alpha, 0.0);
    let d2a = g.d2().add_scaled(g.d1(), a);
    vec![
        Constraint::dirichlet(0, ZERO),
        Constraint::from_row(1, g.d1(), 0, ZERO, ZERO),
        Constraint::from_row(n - 2, g.d1(), n - 1, a, ZERO),
        Constraint::from_row(n - 1, &d2a, n - 1, ZERO, ZERO),
    ]
}

impl Pencil {
    pub fn new(grid: Arc<HalfLineGrid>, vs: &VSamples, n: i64, nu: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::invalid(format!("pencil needs n >= 1, got {n}")));
        }
        let alpha = n as f64 * nu.sqrt();
        let size = grid.len();
        let ld = grid.d2().add_scaled(&Banded::identity(size), C64::new(-alpha * alpha, 0.0));
        let adv: Vec<C64> = vs.v.iter().map(|&v| -I * alpha * v).collect();
        let str: Vec<C64> = vs.d2v.iter().map(|&v| I * alpha * v).collect();
        let a_op = ld
            .scale_rows(&adv)
            .add_scaled(&Banded::diag(&str), ONE)
            .add_scaled(&ld.matmul(&ld), C64::new(nu.sqrt(), 0.0));
        let mut sys = ConstrainedSystem::new(&grid.weights, mode_constraints(&grid, alpha))?;
        let full = sys.assemble(&a_op, true);
        let plain = sys.assemble(&a_op, false);
        let ca = full.add_scaled(&plain, C64::new(-2.0, 0.0));
        let m = sys.assemble(&ld, false);
        Ok(Self { grid, n, nu, alpha, ld, m, ca, sys, v: vs.v.clone(), d2v: vs.d2v.clone() })
    }

    /// `mu M - A + C`.
    pub fn matrix(&self, mu: C64) -> Banded {
        self.ca.add_scaled(&self.m, mu)
    }

    /// `L_d phi`.
    pub fn datum(&self, phi: &[C64]) -> Vec<C64> {
        self.ld.apply(phi)
    }

    /// `L_d`-datum of a velocity field, `i alpha h` with `h = -g2 + (1/(i alpha)) g1'`.
    pub fn datum_from_velocity(&self, g: &Forcing) -> Vec<C64> {
        let h = g.source(&self.grid, self.alpha);
        h.iter().map(|x| I * self.alpha * x).collect()
    }

    pub fn rhs(&self, b: &[C64]) -> Vec<C64> {
        self.sys.rhs_homogeneous(b)
    }

    /// `(A_other - A_self) phi = -i alpha dV L_d phi + i alpha dV'' phi`.
    pub fn difference_source(&self, other: &VSamples, phi: &[C64]) -> Vec<C64> {
        let lp = self.ld.apply(phi);
        let a = self.alpha;
        (0..phi.len())
            .map(|i| {
                let dv = other.v[i] - self.v[i];
                let dv2 = other.d2v[i] - self.d2v[i];
                -I * a * dv * lp[i] + I * a * dv2 * phi[i]
            })
            .collect()
    }

    pub fn velocity(&self, phi: &[C64]) -> [Vec<C64>; 2] {
        crate::resolvent_map::velocity(&self.grid, self.alpha, phi)
    }
}

/// Energy norm `(||phi'||^2 + alpha^2 ||phi||^2)^{1/2}`.
pub fn energy_norm(g: &HalfLineGrid, alpha: f64, phi: &[C64]) -> f64 {
    let d = g.d1().apply(phi);
    (g.norm(&d).powi(2) + alpha * alpha * g.norm(phi).powi(2)).sqrt()
}

fn energy_inner(g: &HalfLineGrid, alpha: f64, a: &[C64], b: &[C64]) -> C64 {
    let da = g.d1().apply(a);
    let db = g.d1().apply(b);
    g.inner(&da, &db) + g.inner(a, b) * (alpha * alpha)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Leg {
    L0,
    LPlus,
    GammaPlus,
    GammaMinus,
    LMinus,
}

/// Straight piece of the contour from `a` to `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Panel {
    pub leg: Leg,
    pub a: C64,
    pub b: C64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContourConfig {
    pub theta: f64,
    /// Gauss-Legendre nodes per panel.
    pub order: usize,
    /// Panel length relative to the distance from the spectral strip.
    pub panel_scale: f64,
    /// Multiplier on the ray truncation length.
    pub tail_factor: f64,
    /// Largest `tau Re mu` on `l0` in a single Dunford application.
    pub budget: f64,
}

impl ContourConfig {
    pub fn new(theta: f64) -> Self {
        Self { theta, order: 16, panel_scale: 1.0, tail_factor: 1.0, budget: 4.0 }
    }
}

/// `Gamma = Gamma_+ + Gamma_- + l_+ + l_- + l_0`, counterclockwise, as panels
/// carrying Gauss-Legendre nodes.
#[derive(Clone, Debug)]
pub struct DunfordContour {
    pub region: RegionParams,
    pub l0_re: f64,
    pub offset: f64,
    pub ray_length: f64,
    pub panels: Vec<Panel>,
    pub nodes: Vec<C64>,
    rule: Arc<Rule>,
    bary: Vec<f64>,
}

// Breakpoints from `start` toward `end` with local step `step(p)`.
fn march(start: f64, end: f64, step: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = vec![start];
    let dir = if end >= start { 1.0 } else { -1.0 };
    let mut p = start;
    while (end - p) * dir > 0.0 {
        let h = step(p).max(1e-12);
        let rest = (end - p).abs();
        p = if rest <= 1.25 * h { end } else { p + dir * h };
        out.push(p);
    }
    out
}

impl DunfordContour {
    /// `width` is the height `alpha sup V` of the strip below the real axis
    /// holding the spectrum; `tau_min` sets the ray truncation.
    pub fn new(region: RegionParams, width: f64, tau_min: f64, cfg: &ContourConfig) -> Result<Self> {
        if !(tau_min > 0.0) {
            return Err(Error::invalid("contour needs tau_min > 0"));
        }
        if cfg.order < 2 || !(cfg.panel_scale > 0.0) || !(cfg.tail_factor >= 1.0) {
            return Err(Error::invalid("bad contour configuration"));
        }
        let r = region.l0_re();
        let off = region.offset();
        let t = region.theta.tan().abs();
        let ray_length = cfg.tail_factor * (TAIL_LOG + tau_min * r) / tau_min;
        let k = cfg.panel_scale;
        let dist = |mu: C64| {
            let dx = mu.re.max(0.0);
            let dy = if mu.im > 0.0 {
                mu.im
            } else if mu.im < -width {
                -width - mu.im
            } else {
                0.0
            };
            (dx * dx + dy * dy).sqrt().max(r)
        };
        let mut panels = Vec::new();
        let centre = (-0.5 * width).clamp(-off, off);
        let down = march(centre, -off, |s| k * dist(C64::new(r, s)));
        let up = march(centre, off, |s| k * dist(C64::new(r, s)));
        let mut l0: Vec<f64> = down.into_iter().rev().collect();
        l0.extend(up.into_iter().skip(1));
        for w in l0.windows(2) {
            panels.push(Panel { leg: Leg::L0, a: C64::new(r, w[0]), b: C64::new(r, w[1]) });
        }
        let horiz = march(r, 0.0, |x| k * dist(C64::new(x, off)));
        for w in horiz.windows(2) {
            panels.push(Panel { leg: Leg::LPlus, a: C64::new(w[0], off), b: C64::new(w[1], off) });
        }
        let speed = (1.0 + t * t).sqrt();
        let ray = march(0.0, ray_length, |s| k * dist(C64::new(-s, off + t * s)) / speed);
        let plus = |s: f64| C64::new(-s, off + t * s);
        for w in ray.windows(2) {
            panels.push(Panel { leg: Leg::GammaPlus, a: plus(w[0]), b: plus(w[1]) });
        }
        for w in ray.windows(2).rev() {
            panels.push(Panel { leg: Leg::GammaMinus, a: plus(w[1]).conj(), b: plus(w[0]).conj() });
        }
        for w in horiz.windows(2).rev() {
            panels.push(Panel { leg: Leg::LMinus, a: C64::new(w[1], -off), b: C64::new(w[0], -off) });
        }
        let rule = gl(cfg.order);
        let nodes = panels
            .iter()
            .flat_map(|p| {
                let (m, h) = ((p.a + p.b) * 0.5, (p.b - p.a) * 0.5);
                rule.x.iter().map(move |&x| m + h * x).collect::<Vec<_>>()
            })
            .collect();
        let bary = (0..rule.x.len())
            .map(|j| 1.0 / (0..rule.x.len()).filter(|&k| k != j).map(|k| rule.x[j] - rule.x[k]).product::<f64>())
            .collect();
        Ok(Self { region, l0_re: r, offset: off, ray_length, panels, nodes, rule, bary })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Every node lies in one of the certified regions or on or right of `l0`.
    pub fn certified(&self) -> bool {
        let rp = &self.region;
        let t = rp.theta.tan();
        let slack = 1e-9 * (1.0 + self.offset);
        self.nodes.iter().all(|&mu| {
            classify_mu(rp, mu).certified()
                || mu.re >= rp.l0_re() * (1.0 - 1e-12)
                || mu.im.abs() + slack >= t * mu.re + rp.offset()
        })
    }

    /// Weights `w_j(tau) = (1/(2 pi i)) int_panel e^{tau mu} l_j(mu) dmu` with
    /// `l_j` the Lagrange basis of the panel nodes.
    pub fn weights(&self, tau: f64) -> Vec<C64> {
        let q = self.rule.x.len();
        let fine = gl(q + 4);
        let scale = 1.0 / (2.0 * std::f64::consts::PI * I);
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut basis = vec![0.0; q];
        for p in &self.panels {
            let (m, h) = ((p.a + p.b) * 0.5, (p.b - p.a) * 0.5);
            let pieces = ((tau * (p.b - p.a).norm()) / 2.0).ceil() as usize + 1;
            let mut w = vec![ZERO; q];
            for s in 0..pieces {
                let lo = -1.0 + 2.0 * s as f64 / pieces as f64;
                let hi = -1.0 + 2.0 * (s + 1) as f64 / pieces as f64;
                for (x, wx) in fine.mapped(lo, hi) {
                    let e = (m + h * x).scale(tau).exp() * h * wx;
                    lagrange(&self.rule.x, &self.bary, x, &mut basis);
                    for j in 0..q {
                        w[j] += e * basis[j];
                    }
                }
            }
            out.extend(w.into_iter().map(|v| v * scale));
        }
        out
    }
}

fn lagrange(xs: &[f64], bary: &[f64], x: f64, out: &mut [f64]) {
    if let Some(k) = xs.iter().position(|&xk| (x - xk).abs() < 1e-15) {
        out.iter_mut().enumerate().for_each(|(j, v)| *v = if j == k { 1.0 } else { 0.0 });
        return;
    }
    let mut den = 0.0;
    for j in 0..xs.len() {
        out[j] = bary[j] / (x - xs[j]);
        den += out[j];
    }
    out.iter_mut().for_each(|v| *v /= den);
}

/// Pencil factored at every contour node.
pub struct DunfordSolver {
    pub pencil: Pencil,
    pub contour: DunfordContour,
    lus: Vec<BandedLu>,
}

/// One right-hand side and the times at which its Dunford image is wanted.
pub struct Job {
    pub datum: Vec<C64>,
    pub taus: Vec<f64>,
}

impl DunfordSolver {
    pub fn new(pencil: Pencil, contour: DunfordContour) -> Result<Self> {
        let lus = contour
            .nodes
            .par_iter()
            .map(|&mu| {
                BandedLu::factor(&pencil.matrix(mu))
                    .map_err(|e| Error::Singular(format!("resolvent solve failed at mu = {mu}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pencil, contour, lus })
    }

    /// `(1/(2 pi i)) int e^{tau mu} (mu L_d - A)^{-1} b dmu` for each job and time.
    pub fn apply(&self, jobs: &[Job]) -> Vec<Vec<Vec<C64>>> {
        let mut keys: Vec<u64> = jobs.iter().flat_map(|j| j.taus.iter().map(|t| t.to_bits())).collect();
        keys.sort_unstable();
        keys.dedup();
        let table: HashMap<u64, Vec<C64>> = keys
            .par_iter()
            .map(|&k| (k, self.contour.weights(f64::from_bits(k))))
            .collect();
        let rhs: Vec<Vec<C64>> = jobs.iter().map(|j| self.pencil.rhs(&j.datum)).collect();
        let size = self.pencil.grid.len();
        let zero = || jobs.iter().map(|j| vec![vec![ZERO; size]; j.taus.len()]).collect::<Vec<_>>();
        // Fixed chunks summed in index order keep the result independent of the thread count.
        let chunks: Vec<usize> = (0..self.lus.len()).step_by(NODE_CHUNK).collect();
        let partial: Vec<_> = chunks
            .into_par_iter()
            .map(|start| {
                let mut acc = zero();
                for node in start..(start + NODE_CHUNK).min(self.lus.len()) {
                    for (ji, job) in jobs.iter().enumerate() {
                        let x = self.lus[node].solve(&rhs[ji]);
                        for (ti, t) in job.taus.iter().enumerate() {
                            let w = table[&t.to_bits()][node];
                            for (a, v) in acc[ji][ti].iter_mut().zip(&x) {
                                *a += w * v;
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        partial.into_iter().fold(zero(), |mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                for (u, v) in x.iter_mut().zip(y) {
                    for (p, q) in u.iter_mut().zip(v) {
                        *p += q;
                    }
                }
            }
            a
        })
    }
}

const NODE_CHUNK: usize = 16;

/// Settings shared by the semigroup and evolution routines.
#[derive(Clone, Copy, Debug)]
pub struct SemigroupConfig {
    pub thresholds: ThresholdSet,
    pub contour: ContourConfig,
}

impl SemigroupConfig {
    pub fn for_profile(p: &ShearProfile) -> Self {
        let theta = crate::resolvent_map::default_theta(p.norm_u(), 1.0);
        Self { thresholds: ThresholdSet::from_profile(p), contour: ContourConfig::new(theta) }
    }
}

fn region(sp: &SpectralParams, cfg: &SemigroupConfig) -> Result<RegionParams> {
    RegionParams::new(sp, &cfg.thresholds, cfg.contour.theta)
}

// Step lengths taking the state from 0 through each target, none longer than `h_max`.
fn schedule(targets: &[f64], h_max: f64) -> Vec<(f64, usize, Option<usize>)> {
    let mut out = Vec::new();
    let mut now = 0.0;
    for (k, &t) in targets.iter().enumerate() {
        let d = t - now;
        if d <= 0.0 {
            out.push((0.0, 0, Some(k)));
            continue;
        }
        let m = (d / h_max).ceil().max(1.0) as usize;
        out.push((d / m as f64, m, Some(k)));
        now = t;
    }
    out
}

/// Shortest step [`Semigroup::propagate`] takes for sorted `targets`.
pub fn step_floor(targets: &[f64], h_max: f64) -> f64 {
    schedule(targets, h_max).iter().filter(|s| s.1 > 0).map(|s| s.0).fold(f64::INFINITY, f64::min)
}

/// Frozen-coefficient semigroup for one mode `n >= 1`.
pub struct Semigroup {
    pub solver: DunfordSolver,
    pub h_max: f64,
    pub tau_min: f64,
}

impl Semigroup {
    /// Builds the contour for all step lengths down to `tau_min`.
    pub fn new(
        grid: Arc<HalfLineGrid>,
        vs: &VSamples,
        sp: &SpectralParams,
        tau_min: f64,
        cfg: &SemigroupConfig,
    ) -> Result<Self> {
        let pencil = Pencil::new(grid, vs, sp.n, sp.nu)?;
        let rp = region(sp, cfg)?;
        let width = pencil.alpha * vs.v.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let h_max = cfg.contour.budget / rp.l0_re();
        let tau_min = tau_min.min(h_max);
        let contour = DunfordContour::new(rp, width, tau_min, &cfg.contour)?;
        if !contour.certified() {
            return Err(Error::Regime("contour leaves the certified resolvent region".into()));
        }
        Ok(Self { solver: DunfordSolver::new(pencil, contour)?, h_max, tau_min })
    }

    /// Contour long enough for every step needed to reach `taus`.
    pub fn for_times(
        grid: Arc<HalfLineGrid>,
        vs: &VSamples,
        sp: &SpectralParams,
        taus: &[f64],
        cfg: &SemigroupConfig,
    ) -> Result<Self> {
        let h_max = cfg.contour.budget / region(sp, cfg)?.l0_re();
        Self::new(grid, vs, sp, step_floor(taus, h_max), cfg)
    }

    /// Stream functions at each sorted time in `taus` for each initial stream function.
    pub fn propagate(&self, data: &[Vec<C64>], taus: &[f64]) -> Result<Vec<Vec<Vec<C64>>>> {
        let b: Vec<Vec<C64>> = data.iter().map(|phi| self.solver.pencil.datum(phi)).collect();
        self.propagate_data(&b, taus)
    }

    /// As [`Self::propagate`], starting from `L_d`-data.
    pub fn propagate_data(&self, data: &[Vec<C64>], taus: &[f64]) -> Result<Vec<Vec<Vec<C64>>>> {
        if taus.windows(2).any(|w| w[1] < w[0]) || taus.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::invalid("times must be nonnegative and sorted"));
        }
        let plan = schedule(taus, self.h_max);
        if plan.iter().any(|s| s.1 > 0 && s.0 < self.tau_min * (1.0 - 1e-12)) {
            return Err(Error::invalid("time step shorter than the contour truncation allows"));
        }
        let mut datum: Vec<Vec<C64>> = data.to_vec();
        let mut state: Option<Vec<Vec<C64>>> = None;
        let mut out = vec![Vec::with_capacity(taus.len()); data.len()];
        for (h, m, _) in plan {
            for _ in 0..m {
                if let Some(st) = &state {
                    datum = st.iter().map(|phi| self.solver.pencil.datum(phi)).collect();
                }
                let jobs: Vec<Job> = datum.iter().map(|b| Job { datum: b.clone(), taus: vec![h] }).collect();
                state = Some(self.solver.apply(&jobs).into_iter().map(|mut r| r.pop().unwrap()).collect());
            }
            for (i, o) in out.iter_mut().enumerate() {
                // A zero-length first target leaves no stream function to report; reconstruct
                // one through a direct solve of L_d phi = b with clamped data.
                o.push(match &state {
                    Some(st) => st[i].clone(),
                    None => return Err(Error::invalid("first time must be positive")),
                });
            }
        }
        Ok(out)
    }

    /// Dunford image of an arbitrary `L_d`-datum at one time `tau <= h_max`.
    pub fn apply_datum(&self, datum: &[C64], tau: f64) -> Vec<C64> {
        self.solver.apply(&[Job { datum: datum.to_vec(), taus: vec![tau] }]).remove(0).remove(0)
    }
}

/// Result of [`semigroup_apply`].
#[derive(Clone, Debug)]
pub struct SemigroupSample {
    pub tau: f64,
    pub phi: Vec<C64>,
    pub velocity: [Vec<C64>; 2],
    pub norm: f64,
    /// `tau < 1/alpha`, where the energy bound rather than the contour is the natural tool.
    pub short_time: bool,
    /// Relative change when every panel is halved, if requested.
    pub refinement: Option<f64>,
    pub nodes: usize,
}

fn conj_all(v: &[C64]) -> Vec<C64> {
    v.iter().map(|z| z.conj()).collect()
}

/// `e^{-tau L_{nu,n}} g` for a velocity datum `g`; negative `n` by conjugation.
pub fn semigroup_apply(
    p: &ShearProfile,
    sp: &SpectralParams,
    grid: Arc<HalfLineGrid>,
    g: &Forcing,
    tau: f64,
    cfg: &SemigroupConfig,
    refine: bool,
) -> Result<SemigroupSample> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    if sp.n < 0 {
        let spp = SpectralParams { n: -sp.n, ..*sp };
        let gc = Forcing { f1: conj_all(&g.f1), f2: conj_all(&g.f2) };
        let mut s = semigroup_apply(p, &spp, grid, &gc, tau, cfg, refine)?;
        s.phi = conj_all(&s.phi);
        s.velocity = [conj_all(&s.velocity[0]), conj_all(&s.velocity[1])];
        return Ok(s);
    }
    let alpha = sp.alpha();
    if g.is_zero() {
        let phi = vec![ZERO; grid.len()];
        let velocity = crate::resolvent_map::velocity(&grid, alpha, &phi);
        let refinement = refine.then_some(0.0);
        return Ok(SemigroupSample { tau, phi, velocity, norm: 0.0, short_time: tau * alpha < 1.0, refinement, nodes: 0 });
    }
    let vs = p.sample_grid(sp.nu, &grid);
    let run = |c: &SemigroupConfig| -> Result<(Vec<C64>, usize)> {
        let sg = Semigroup::for_times(grid.clone(), &vs, sp, &[tau], c)?;
        let b = sg.solver.pencil.datum_from_velocity(g);
        let phi = sg.propagate_data(&[b], &[tau])?.remove(0).remove(0);
        Ok((phi, sg.solver.contour.len()))
    };
    let (phi, nodes) = run(cfg)?;
    let refinement = if refine {
        let mut fine = *cfg;
        fine.contour.panel_scale *= 0.5;
        let (phi2, _) = run(&fine)?;
        let d: Vec<C64> = phi.iter().zip(&phi2).map(|(a, b)| a - b).collect();
        let den = energy_norm(&grid, alpha, &phi2);
        Some(if den > 0.0 { energy_norm(&grid, alpha, &d) / den } else { 0.0 })
    } else {
        None
    };
    let velocity = crate::resolvent_map::velocity(&grid, alpha, &phi);
    Ok(SemigroupSample {
        tau,
        norm: energy_norm(&grid, alpha, &phi),
        phi,
        velocity,
        short_time: tau * alpha < 1.0,
        refinement,
        nodes,
    })
}

/// Smooth random initial stream functions `sum a_k Y^2 exp(-(Y - c_k)^2 / (2 s_k^2))`,
/// clamped at the wall.
pub fn random_initial_data(g: &HalfLineGrid, count: usize, seed: u64) -> Vec<Vec<C64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let bumps: Vec<(C64, f64, f64)> = (0..4)
                .map(|_| {
                    let a = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    (a, rng.random_range(0.5..8.0), rng.random_range(0.4..2.5))
                })
                .collect();
            g.sample(|y| bumps.iter().map(|(a, c, s)| a * (y * y * (-(y - c).powi(2) / (2.0 * s * s)).exp())).sum())
        })
        .collect()
}

/// Largest amplification `||T x|| / ||x||` over the span of `inputs`, in the
/// energy norm, from the generalized Gram eigenproblem.
pub fn ritz_norm(g: &HalfLineGrid, alpha: f64, inputs: &[Vec<C64>], outputs: &[Vec<C64>]) -> Result<f64> {
    let k = inputs.len();
    if k == 0 || outputs.len() != k {
        return Err(Error::invalid("ritz norm needs matching nonempty families"));
    }
    let gram = |v: &[Vec<C64>]| DMatrix::from_fn(k, k, |i, j| energy_inner(g, alpha, &v[j], &v[i]));
    let gin = gram(inputs);
    let gout = gram(outputs);
    let chol = gin.cholesky().ok_or_else(|| Error::Singular("input family is degenerate".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("input family is degenerate".into()))?;
    let m = &linv * gout * linv.adjoint();
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = m.symmetric_eigenvalues();
    Ok(eig.iter().fold(0.0f64, |a, &e| a.max(e)).sqrt())
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Operator-norm estimates of `e^{-tau L}` on a time grid.
#[derive(Clone, Debug)]
pub struct GrowthReport {
    pub n: i64,
    pub nu: f64,
    pub gamma: f64,
    pub taus: Vec<f64>,
    pub norms: Vec<f64>,
    /// Least-squares slope of `ln ||T(tau)||` in `tau`.
    pub rate_fit: f64,
    /// `n^gamma nu^{1/2} / delta`, the bound rate per unit `tau` (`n^gamma / delta` per unit `t`).
    pub rate_bound: f64,
    /// `max_tau ||T(tau)||`.
    pub prefactor_fit: f64,
    pub short_time: Vec<bool>,
}

pub fn growth_report(
    p: &ShearProfile,
    sp: &SpectralParams,
    grid: Arc<HalfLineGrid>,
    taus: &[f64],
    count: usize,
    seed: u64,
    cfg: &SemigroupConfig,
) -> Result<GrowthReport> {
    if taus.len() < 2 || count < 2 {
        return Err(Error::invalid("growth report needs at least two times and two data"));
    }
    let sp = SpectralParams { n: sp.n.abs(), ..*sp };
    let vs = p.sample_grid(sp.nu, &grid);
    let sg = Semigroup::for_times(grid.clone(), &vs, &sp, taus, cfg)?;
    let data = random_initial_data(&grid, count, seed);
    let out = sg.propagate(&data, taus)?;
    let alpha = sp.alpha();
    let norms = (0..taus.len())
        .map(|k| {
            let o: Vec<Vec<C64>> = out.iter().map(|v| v[k].clone()).collect();
            ritz_norm(&grid, alpha, &data, &o)
        })
        .collect::<Result<Vec<f64>>>()?;
    let logs: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    Ok(GrowthReport {
        n: sp.n,
        nu: sp.nu,
        gamma: sp.gamma,
        rate_fit: ls_slope(taus, &logs),
        rate_bound: sp.n_abs().powf(sp.gamma) * sp.nu.sqrt() / sp.delta,
        prefactor_fit: norms.iter().cloned().fold(0.0, f64::max),
        short_time: taus.iter().map(|t| t * alpha < 1.0).collect(),
        taus: taus.to_vec(),
        norms,
    })
}

pub fn write_growth_csv<W: Write>(w: W, reports: &[GrowthReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "nu", "gamma", "tau", "norm", "rate_fit", "rate_bound", "prefactor_fit"])?;
    for r in reports {
        for (t, v) in r.taus.iter().zip(&r.norms) {
            out.write_record([
                r.n.to_string(),
                format!("{:.16e}", r.nu),
                format!("{:.16e}", r.gamma),
                format!("{:.16e}", t),
                format!("{:.16e}", v),
                format!("{:.16e}", r.rate_fit),
                format!("{:.16e}", r.rate_bound),
                format!("{:.16e}", r.prefactor_fit),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn sup_dyadic(y_max: f64, f: impl Fn(f64) -> f64 + Sync) -> f64 {
    let k = 1usize << NORM_LEVEL;
    (0..=k)
        .into_par_iter()
        .map(|i| {
            let s = i as f64 / k as f64;
            f(y_max * s * s).abs()
        })
        .reduce(|| 0.0, f64::max)
}

/// Gronwall certificate for modes `|n| <= m1 - 1`, in physical time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowFreqCertificate {
    pub m1: u32,
    /// `||d_y U^E|| + 2 (m1 - 1) ||Y d_Y U^P||`.
    pub c1: f64,
    /// `c1 + (||U^E|| + ||U^P||) (m1 - 1)`.
    pub c2: f64,
    pub s: f64,
    pub t: f64,
    /// `e^{(t - s) c1}`.
    pub factor: f64,
}

/// `profiles` are snapshots covering `[s, t]`; the norms are maximized over them.
pub fn low_freq_bound(profiles: &[&ShearProfile], m1: u32, s: f64, t: f64) -> Result<LowFreqCertificate> {
    if profiles.is_empty() || m1 == 0 || !(t >= s) {
        return Err(Error::invalid("low-frequency bound needs profiles, m1 >= 1 and t >= s"));
    }
    let mut de: f64 = 0.0;
    let mut yd: f64 = 0.0;
    let mut ue: f64 = 0.0;
    let mut up: f64 = 0.0;
    for p in profiles {
        de = de.max(p.outer.d_norm());
        ue = ue.max(p.outer.u0.abs().max((p.outer.u0 + p.outer.slope).abs()));
        yd = yd.max(sup_dyadic(p.y_max, |y| y * p.u(y)[1]));
        up = up.max(sup_dyadic(p.y_max, |y| p.u(y)[0]));
    }
    let k = (m1 - 1) as f64;
    let c1 = de + 2.0 * k * yd;
    let c2 = c1 + (ue + up) * k;
    Ok(LowFreqCertificate { m1, c1, c2, s, t, factor: ((t - s) * c1).exp() })
}

/// Viscous decay certificate for `|n| >= delta0^{-1} nu^{-3/4}`, in physical time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HighFreqCertificate {
    pub delta0: f64,
    pub n_min: f64,
    /// `nu n^2 / 4`.
    pub rate: f64,
    pub factor: f64,
}

pub fn delta0(de: f64, dp: f64) -> f64 {
    1.0 / (2.0 * (1.0 + de + dp).sqrt())
}

pub fn high_freq_bound(p: &ShearProfile, n: i64, nu: f64, s: f64, t: f64) -> Result<HighFreqCertificate> {
    if !(t >= s) {
        return Err(Error::invalid("high-frequency bound needs t >= s"));
    }
    let d0 = delta0(p.outer.d_norm(), p.sup_du());
    let n_min = nu.powf(-0.75) / d0;
    let na = n.unsigned_abs() as f64;
    if na < n_min {
        return Err(Error::Regime(format!("|n| = {na} below the high-frequency threshold {n_min:.3}")));
    }
    let rate = nu * na * na / 4.0;
    Ok(HighFreqCertificate { delta0: d0, n_min, rate, factor: (-(t - s) * rate).exp() })
}

/// `N = max(ceil(|n|^gamma T0 / delta_tilde), 1)`.
pub fn subinterval_count(t0: f64, n: i64, gamma: f64, delta_tilde: f64) -> usize {
    ((n.unsigned_abs() as f64).powf(gamma) * t0 / delta_tilde).ceil().max(1.0) as usize
}

#[derive(Clone, Copy, Debug)]
pub struct EvolutionConfig {
    pub semigroup: SemigroupConfig,
    pub delta_tilde: f64,
}

/// Result of [`evolution_operator`].
#[derive(Clone, Debug)]
pub struct EvolutionResult {
    pub phi: Vec<Vec<C64>>,
    pub subintervals: usize,
    /// Physical times `t_l` and the amplification over the data span from `s`.
    pub history: Vec<(f64, f64)>,
    /// Least-squares slope of `ln ||T(t, s)||` in physical time.
    pub rate_fit: f64,
}

const GAUSS4_X: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
const GAUSS4_W: [f64; 4] = [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];

/// `T(t, s)` applied to initial stream functions: coefficients frozen at the
/// left end of each of the `N` subintervals, with the first Duhamel correction
/// for the difference terms integrated by 4-point Gauss. Times are physical.
#[allow(clippy::too_many_arguments)]
pub fn evolution_operator(
    track: &ProfileTrack,
    sp: &SpectralParams,
    grid: Arc<HalfLineGrid>,
    data: &[Vec<C64>],
    s: f64,
    t: f64,
    cfg: &EvolutionConfig,
) -> Result<EvolutionResult> {
    if !(t > s) || data.is_empty() {
        return Err(Error::invalid("evolution needs t > s and at least one datum"));
    }
    if sp.n < 1 {
        return Err(Error::invalid("evolution operator is built for n >= 1"));
    }
    let sq = sp.nu.sqrt();
    let rp = region(sp, &cfg.semigroup)?;
    let mut count = subinterval_count(t - s, sp.n, sp.gamma, cfg.delta_tilde);
    // Keep each frozen step within the cancellation budget on l0.
    let dtau_total = (t - s) / sq;
    count = count.max((dtau_total * rp.l0_re() / cfg.semigroup.contour.budget).ceil() as usize);
    let dtau = dtau_total / count as f64;
    let nodes: Vec<f64> = GAUSS4_X.iter().map(|x| 0.5 * dtau * (1.0 + x)).collect();
    let tau_min = dtau - nodes[3];
    let alpha = sp.alpha();
    let mut state = data.to_vec();
    let mut history = vec![(s, 1.0)];
    for l in 0..count {
        let tau_l = s / sq + l as f64 * dtau;
        let vs = track.at(tau_l);
        let sg = Semigroup::new(grid.clone(), &vs, sp, tau_min, &cfg.semigroup)?;
        let pencil = &sg.solver.pencil;
        let mut taus = nodes.clone();
        taus.push(dtau);
        let jobs: Vec<Job> = state.iter().map(|phi| Job { datum: pencil.datum(phi), taus: taus.clone() }).collect();
        let first = sg.solver.apply(&jobs);
        let mut next: Vec<Vec<C64>> = first.iter().map(|r| r[4].clone()).collect();
        if !track.is_frozen() {
            let later: Vec<VSamples> = nodes.iter().map(|&x| track.at(tau_l + x)).collect();
            let mut jobs = Vec::new();
            for r in &first {
                for q in 0..4 {
                    let src = pencil.difference_source(&later[q], &r[q]);
                    let w = 0.5 * dtau * GAUSS4_W[q];
                    jobs.push(Job { datum: src.iter().map(|z| z * w).collect(), taus: vec![dtau - nodes[q]] });
                }
            }
            let corr = sg.solver.apply(&jobs);
            for (i, nx) in next.iter_mut().enumerate() {
                for q in 0..4 {
                    for (a, b) in nx.iter_mut().zip(&corr[4 * i + q][0]) {
                        *a += b;
                    }
                }
            }
        }
        state = next;
        let amp = if data.len() > 1 {
            ritz_norm(&grid, alpha, data, &state)?
        } else {
            energy_norm(&grid, alpha, &state[0]) / energy_norm(&grid, alpha, &data[0])
        };
        history.push((s + (l + 1) as f64 * dtau * sq, amp));
    }
    let ts: Vec<f64> = history.iter().map(|h| h.0).collect();
    let ls: Vec<f64> = history.iter().map(|h| h.1.ln()).collect();
    Ok(EvolutionResult { phi: state, subintervals: count, history, rate_fit: ls_slope(&ts, &ls) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halfline_grid::{make_grid, Stretch};
    use crate::profiles::build_profile;
    use std::collections::BTreeMap;

    fn setup(n: usize) -> (ShearProfile, Arc<HalfLineGrid>) {
        let p = build_profile("exp", &BTreeMap::new()).unwrap();
        let g = Arc::new(make_grid(n, 40.0, Stretch::Tanh { beta: 3.0 }).unwrap());
        (p, g)
    }

    fn velocity_datum(g: &HalfLineGrid, alpha: f64, phi: &[C64]) -> Forcing {
        let [f1, f2] = crate::resolvent_map::velocity(g, alpha, phi);
        Forcing { f1, f2 }
    }

    fn rel(g: &HalfLineGrid, alpha: f64, a: &[C64], b: &[C64]) -> f64 {
        let d: Vec<C64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        energy_norm(g, alpha, &d) / energy_norm(g, alpha, b)
    }

    #[test]
    fn subinterval_formula() {
        let want = (10.0 * 32f64.powf(7.0 / 9.0)).ceil() as usize;
        assert_eq!(subinterval_count(1.0, 32, 7.0 / 9.0, 0.1), want);
        assert_eq!(subinterval_count(1e-9, 1, 1.0, 0.05), 1);
    }

    #[test]
    fn delta0_example() {
        assert!((delta0(0.0, 1.0) - 1.0 / (2.0 * 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn low_freq_constants() {
        let (p, _) = setup(64);
        let c = low_freq_bound(&[&p], 1, 0.0, 1.0).unwrap();
        assert_eq!(c.c1, p.outer.d_norm());
        let c3 = low_freq_bound(&[&p], 3, 0.0, 0.0).unwrap();
        assert!((c3.c1 - 4.0 / std::f64::consts::E).abs() < 1e-6, "{}", c3.c1);
        assert_eq!(c3.factor, 1.0);
    }

    #[test]
    fn high_freq_regime_and_trivial_time() {
        let (p, _) = setup(64);
        assert!(high_freq_bound(&p, 10, 1e-2, 0.0, 1.0).is_err());
        let c = high_freq_bound(&p, 96, 1e-2, 0.3, 0.3).unwrap();
        assert_eq!(c.factor, 1.0);
        assert!((c.rate - 1e-2 * 96.0 * 96.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn contour_is_certified_and_counterclockwise() {
        let (p, _) = setup(64);
        let cfg = SemigroupConfig::for_profile(&p);
        let sp = SpectralParams::on_stability_line(32, 1e-3, 2.0 / 3.0, 0.05, 0.5).unwrap();
        let rp = RegionParams::new(&sp, &cfg.thresholds, cfg.contour.theta).unwrap();
        let c = DunfordContour::new(rp, sp.alpha(), 0.5, &cfg.contour).unwrap();
        assert!(c.certified());
        let mut wind = 0.0;
        let last = c.panels.len() - 1;
        for (k, w) in c.panels.windows(2).enumerate() {
            let z = C64::new(-1.0, -0.5 * sp.alpha());
            wind += ((w[0].b - z) / (w[0].a - z)).arg();
            if k + 1 == last {
                wind += ((w[1].b - z) / (w[1].a - z)).arg();
            }
            if w[0].leg == Leg::GammaPlus && w[1].leg == Leg::GammaMinus {
                // Truncated rays, closed through the far left.
                wind += ((w[1].a - z) / (w[0].b - z)).arg();
                assert!(w[0].b.re < -0.5 * c.ray_length);
            } else {
                assert!((w[0].b - w[1].a).norm() < 1e-9 * (1.0 + c.offset));
            }
        }
        assert!((c.panels[last].b - c.panels[0].a).norm() < 1e-9 * (1.0 + c.offset));
        assert!((wind - 2.0 * std::f64::consts::PI).abs() < 1e-6, "{wind}");
    }

    #[test]
    fn weights_integrate_exponential_exactly() {
        // (1/2 pi i) int e^{tau mu} / (mu - lambda) dmu = e^{tau lambda}.
        let (p, _) = setup(64);
        let cfg = SemigroupConfig::for_profile(&p);
        let sp = SpectralParams::on_stability_line(16, 1e-3, 2.0 / 3.0, 0.05, 0.5).unwrap();
        let rp = RegionParams::new(&sp, &cfg.thresholds, cfg.contour.theta).unwrap();
        let c = DunfordContour::new(rp, sp.alpha(), 0.5, &cfg.contour).unwrap();
        for &(tau, lam) in &[(0.25, C64::new(-0.3, -0.2)), (0.5, C64::new(0.1, -0.4)), (1.0, C64::new(-2.0, 0.0))] {
            let w = c.weights(tau);
            let got: C64 = w.iter().zip(&c.nodes).map(|(w, mu)| w / (mu - lam)).sum();
            let want = (lam * tau).exp();
            assert!((got - want).norm() < 1e-10 * want.norm(), "tau {tau}: {got} vs {want}");
        }
    }

    #[test]
    fn zero_datum_gives_zero() {
        let (p, g) = setup(200);
        let cfg = SemigroupConfig::for_profile(&p);
        let sp = SpectralParams::on_stability_line(16, 1e-3, 2.0 / 3.0, 0.05, 0.5).unwrap();
        let s = semigroup_apply(&p, &sp, g.clone(), &Forcing::zeros(g.len()), 1.0, &cfg, false).unwrap();
        assert!(s.phi.iter().all(|v| *v == ZERO));
    }

    #[test]
    fn refinement_and_tail_doubling() {
        let (p, g) = setup(200);
        let cfg = SemigroupConfig::for_profile(&p);
        let sp = SpectralParams::on_stability_line(16, 1e-3, 2.0 / 3.0, 0.05, 0.5).unwrap();
        let phi0 = random_initial_data(&g, 1, 4).remove(0);
        let f = velocity_datum(&g, sp.alpha(), &phi0);
        let a = semigroup_apply(&p, &sp, g.clone(), &f, 2.5, &cfg, true).unwrap();
        assert!(a.refinement.unwrap() < 1e-7, "{:?}", a.refinement);
        assert!(!a.short_time);
        let mut long = cfg;
        long.contour.tail_factor = 2.0;
        let b = semigroup_apply(&p, &sp, g.clone(), &f, 2.5, &long, false).unwrap();
        assert!(rel(&g, sp.alpha(), &a.phi, &b.phi) < 1e-8);
    }

    #[test]
    fn semigroup_property_and_conjugation() {
        let (p, g) = setup(200);
        let cfg = SemigroupConfig::for_profile(&p);
        let sp = SpectralParams::on_stability_line(24, 1e-3, 2.0 / 3.0, 0.05, 0.5).unwrap();
        let vs = p.sample_grid(sp.nu, &g);
        let sg = Semigroup::new(g.clone(), &vs, &sp, 0.2, &cfg).unwrap();
        let phi0 = random_initial_data(&g, 1, 8).remove(0);
        let out = sg.propagate(&[phi0.clone()], &[0.6, 1.2]).unwrap();
        let twice = sg.propagate(&[out[0][0].clone()], &[0.6]).unwrap();
        assert!(rel(&g, sp.alpha(), &twice[0][0], &out[0][1]) < 1e-8);
        let f = velocity_datum(&g, sp.alpha(), &phi0);
        let fc = Forcing { f1: conj_all(&f.f1), f2: conj_all(&f.f2) };
        let neg = SpectralParams { n: -24, ..sp };
        let a = semigroup_apply(&p, &neg, g.clone(), &fc, 1.2, &cfg, false).unwrap();
        let want = conj_all(&out[0][1]);
        assert!(rel(&g, sp.alpha(), &a.phi, &want) < 1e-8);
    }

    #[test]
    fn theta_perturbation_leaves_result_unchanged() {
        let (p, g) = setup(200);
        let cfg = SemigroupConfig::for_profile(&p);
        let sp = SpectralParams::on_stability_line(16, 1e-3, 2.0 / 3.0, 0.05, 0.5).unwrap();
        let phi0 = random_initial_data(&g, 1, 5).remove(0);
        let f = velocity_datum(&g, sp.alpha(), &phi0);
        let a = semigroup_apply(&p, &sp, g.clone(), &f, 1.0, &cfg, false).unwrap();
        let mut other = cfg;
        other.contour.theta = 0.5 * (cfg.contour.theta + std::f64::consts::PI);
        let b = semigroup_apply(&p, &sp, g.clone(), &f, 1.0, &other, false).unwrap();
        assert!(rel(&g, sp.alpha(), &a.phi, &b.phi) < 1e-6);
    }

    #[test]
    fn ritz_norm_of_identity_is_one() {
        let (_, g) = setup(100);
        let d = random_initial_data(&g, 4, 1);
        assert!((ritz_norm(&g, 0.3, &d, &d).unwrap() - 1.0).abs() < 1e-10);
        let twice: Vec<Vec<C64>> = d.iter().map(|v| v.iter().map(|z| z * 2.0).collect()).collect();
        assert!((ritz_norm(&g, 0.3, &d, &twice).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn frozen_evolution_matches_semigroup() {
        let (p, g) = setup(200);
        let cfg = SemigroupConfig::for_profile(&p);
        let sp = SpectralParams::on_stability_line(16, 1e-3, 7.0 / 9.0, 0.05, 0.5).unwrap();
        let track = ProfileTrack::frozen(&p, sp.nu, &g);
        let phi0 = random_initial_data(&g, 1, 6).remove(0);
        let t = 0.02;
        let ev = evolution_operator(&track, &sp, g.clone(), &[phi0.clone()], 0.0, t, &EvolutionConfig { semigroup: cfg, delta_tilde: 0.05 }).unwrap();
        assert!(ev.subintervals > 1);
        let f = velocity_datum(&g, sp.alpha(), &phi0);
        let s = semigroup_apply(&p, &sp, g.clone(), &f, t / sp.nu.sqrt(), &cfg, false).unwrap();
        assert!(rel(&g, sp.alpha(), &ev.phi[0], &s.phi) < 1e-6);
    }

    #[test]
    fn growth_report_rows() {
        let (p, g) = setup(200);
        let cfg = SemigroupConfig::for_profile(&p);
        let sp = SpectralParams::on_stability_line(16, 1e-3, 2.0 / 3.0, 0.05, 0.5).unwrap();
        let r = growth_report(&p, &sp, g, &[2.0, 3.0, 4.0, 5.0], 6, 1, &cfg).unwrap();
        assert_eq!(r.norms.len(), 4);
        assert!(r.rate_fit <= r.rate_bound * 1.05);
        let mut buf = Vec::new();
        write_growth_csv(&mut buf, &[r]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
