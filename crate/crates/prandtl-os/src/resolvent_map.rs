// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Resolvent of the linearized operator on one Fourier mode: the assembled
//! Orr-Sommerfeld solution `Phi_mOS[h] + A (phi_s - phi_f)`, a direct banded
//! solve for the large-`alpha` regime and for norm sweeps, velocity
//! reconstruction, resolvent-set regions and operator-norm estimates.

use std::io::Write;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::boundary_modes::{build_mode_pair, match_modes, FastModeConfig, ModePair};
use crate::error::{Error, Result};
use crate::halfline_grid::{Banded, BandedLu, ConstrainedSystem, HalfLineGrid, LeftBc, RightBc};
use crate::os_core::{Forcing, ModeSolution, OsContext, SpectralParams, ThresholdSet};
use crate::profiles::ShearProfile;
use crate::ray_airy_iteration::{build_phi_mos_robust, IterationConfig};
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Parameters of the certified resolvent regions for one `(n, nu)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionParams {
    pub theta: f64,
    pub delta: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub gamma: f64,
    pub n: i64,
    pub nu: f64,
}

/// `pi/2 + atan(1 / (2 C (1 + ||U||)))`, with `C` a measured resolvent constant.
pub fn default_theta(norm_u: f64, c_measured: f64) -> f64 {
    std::f64::consts::FRAC_PI_2 + (1.0 / (2.0 * c_measured * (1.0 + norm_u))).atan()
}

impl RegionParams {
    pub fn new(sp: &SpectralParams, ts: &ThresholdSet, theta: f64) -> Result<Self> {
        if !(theta > std::f64::consts::FRAC_PI_2 && theta < std::f64::consts::PI) {
            return Err(Error::invalid(format!("theta = {theta} outside (pi/2, pi)")));
        }
        Ok(Self {
            theta,
            delta: sp.delta,
            delta1: ts.delta1,
            delta2: ts.delta2,
            gamma: sp.gamma,
            n: sp.n,
            nu: sp.nu,
        })
    }

    fn n_abs(&self) -> f64 {
        self.n.unsigned_abs() as f64
    }

    pub fn alpha(&self) -> f64 {
        self.n_abs() * self.nu.sqrt()
    }

    /// `n^gamma nu^{1/2}`.
    pub fn growth_scale(&self) -> f64 {
        self.n_abs().powf(self.gamma) * self.nu.sqrt()
    }

    /// `delta1^{-1} (alpha + |tan theta| n^gamma nu^{1/2})`.
    pub fn offset(&self) -> f64 {
        (self.alpha() + self.theta.tan().abs() * self.growth_scale()) / self.delta1
    }

    /// Abscissa of the vertical leg, `n^gamma nu^{1/2} / delta`.
    pub fn l0_re(&self) -> f64 {
        self.growth_scale() / self.delta
    }

    pub fn in_s_theta(&self, mu: C64) -> bool {
        let t = self.theta.tan();
        mu.im.abs() >= t * mu.re + (self.alpha() + t.abs() * self.growth_scale()) / self.delta1
            && mu.norm() >= self.alpha() / self.delta1
    }

    pub fn in_o_region(&self, mu: C64) -> bool {
        mu.norm() <= self.n_abs() * self.nu.sqrt() / self.delta1 && mu.re >= self.l0_re()
    }

    pub fn in_large_alpha(&self, mu: C64) -> bool {
        mu.re + self.n_abs().powi(2) * self.nu.powf(1.5) >= 1.0 / self.delta2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionKind {
    STheta,
    ORegion,
    LargeAlpha,
}

impl RegionKind {
    pub fn tag(&self) -> &'static str {
        match self {
            RegionKind::STheta => "S_theta",
            RegionKind::ORegion => "O_region",
            RegionKind::LargeAlpha => "large_alpha",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Membership {
    pub s_theta: bool,
    pub o_region: bool,
    pub large_alpha: bool,
}

impl Membership {
    pub fn certified(&self) -> bool {
        self.s_theta || self.o_region || self.large_alpha
    }

    /// The estimate used for `mu`: large-`alpha`, then `O`, then the sector.
    pub fn estimate(&self) -> Option<RegionKind> {
        if self.large_alpha {
            Some(RegionKind::LargeAlpha)
        } else if self.o_region {
            Some(RegionKind::ORegion)
        } else if self.s_theta {
            Some(RegionKind::STheta)
        } else {
            None
        }
    }
}

pub fn classify_mu(rp: &RegionParams, mu: C64) -> Membership {
    Membership { s_theta: rp.in_s_theta(mu), o_region: rp.in_o_region(mu), large_alpha: rp.in_large_alpha(mu) }
}

/// Factor `F` in `||v|| <= C F ||f||` for the estimate attached to `kind`.
/// `strong` selects the strongly concave exponent `(Im c_eps)^{-2}` over `-5/2`.
pub fn predicted_factor(kind: RegionKind, sp: &SpectralParams, strong: bool) -> f64 {
    let a = sp.alpha();
    let im = sp.c_eps().im;
    match kind {
        RegionKind::LargeAlpha => 1.0 / (a * im),
        RegionKind::ORegion => 1.0 / (a * im.powf(if strong { 2.0 } else { 2.5 })),
        RegionKind::STheta => 1.0 / sp.mu().norm(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMethod {
    /// Construction for moderate alpha, direct solve in the large-alpha regime.
    Auto,
    Construction,
    Direct,
}

impl SolveMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            SolveMethod::Auto => "auto",
            SolveMethod::Construction => "construction",
            SolveMethod::Direct => "direct",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ResolventOptions {
    pub thresholds: ThresholdSet,
    pub theta: f64,
    pub method: SolveMethod,
    pub fast: FastModeConfig,
    pub strong: bool,
    pub residual_tol: f64,
}

impl ResolventOptions {
    pub fn for_profile(p: &ShearProfile) -> Self {
        let strong = matches!(p.kind, crate::profiles::ProfileKind::Exp);
        Self {
            thresholds: ThresholdSet::from_profile(p),
            theta: default_theta(p.norm_u(), 1.0),
            method: SolveMethod::Auto,
            fast: FastModeConfig::default(),
            strong,
            residual_tol: 1e-5,
        }
    }

    pub fn iteration(&self) -> IterationConfig {
        IterationConfig { strong: self.strong, ..self.fast.iteration }
    }
}

/// Velocity `(phi', -i alpha phi)` of a stream function.
pub fn velocity(g: &HalfLineGrid, alpha: f64, phi: &[C64]) -> [Vec<C64>; 2] {
    let v1 = g.d1().apply(phi);
    let v2 = phi.iter().map(|p| -I * alpha * p).collect();
    [v1, v2]
}

/// `||i alpha v1 + v2'||` relative to `alpha ||v1||`.
pub fn divergence_defect(g: &HalfLineGrid, alpha: f64, v: &[Vec<C64>; 2]) -> f64 {
    let dv2 = g.d1().apply(&v[1]);
    let div: Vec<C64> = v[0].iter().zip(&dv2).map(|(a, b)| I * alpha * a + b).collect();
    let scale = alpha * g.norm(&v[0]);
    if scale == 0.0 {
        0.0
    } else {
        g.norm(&div) / scale
    }
}

fn velocity_norm(g: &HalfLineGrid, v: &[Vec<C64>; 2]) -> f64 {
    (g.norm(&v[0]).powi(2) + g.norm(&v[1]).powi(2)).sqrt()
}

/// Direct banded solve of `mOS phi = h` with `phi(0) = phi'(0) = 0` and the
/// outflow conditions at `Y_max`, with its weighted adjoint.
pub struct DirectResolvent {
    pub ctx: OsContext,
    sys: ConstrainedSystem,
    matrix: Banded,
    lu: BandedLu,
    adj: OnceLock<std::result::Result<BandedLu, String>>,
}

impl DirectResolvent {
    pub fn new(ctx: OsContext) -> Result<Self> {
        let mut cons = ctx.clamped_constraints();
        cons.extend(ctx.decay_constraints());
        let mut sys = ConstrainedSystem::new(&ctx.grid.weights, cons)?;
        let matrix = sys.assemble(&ctx.mos_matrix(), true);
        let lu = BandedLu::factor(&matrix)?;
        Ok(Self { ctx, sys, matrix, lu, adj: OnceLock::new() })
    }

    pub fn solve_source(&self, h: &[C64]) -> Vec<C64> {
        self.lu.solve(&self.sys.rhs_homogeneous(h))
    }

    pub fn solve(&self, f: &Forcing) -> Vec<C64> {
        self.solve_source(&f.source(&self.ctx.grid, self.ctx.alpha()))
    }

    /// `f -> v` followed by its adjoint in the weighted `L^2` pairings.
    pub fn adjoint(&self, v: &[Vec<C64>; 2]) -> Result<Forcing> {
        let g = &self.ctx.grid;
        let a = self.ctx.alpha();
        let lu = self
            .adj
            .get_or_init(|| BandedLu::factor(&self.matrix.conj_transpose()).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Singular(e.clone()))?;
        let d1h = g.d1().conj_transpose();
        let wv1: Vec<C64> = v[0].iter().zip(&g.weights).map(|(x, w)| x * *w).collect();
        let mut u = d1h.apply(&wv1);
        for ((ui, x), w) in u.iter_mut().zip(&v[1]).zip(&g.weights) {
            *ui += I * a * x * *w;
        }
        let z = lu.solve(&u);
        let y = self.sys.rhs_homogeneous_adjoint(&z);
        let dy = d1h.apply(&y);
        let f1 = dy.iter().zip(&g.weights).map(|(d, w)| I / a * d / *w).collect();
        let f2 = y.iter().zip(&g.weights).map(|(x, w)| -x / *w).collect();
        Ok(Forcing { f1, f2 })
    }

    /// `||v|| / ||f||` for one forcing.
    pub fn gain(&self, f: &Forcing) -> f64 {
        let g = &self.ctx.grid;
        let phi = self.solve(f);
        velocity_norm(g, &velocity(g, self.ctx.alpha(), &phi)) / f.norm(g)
    }

    /// Ensemble maximum of the gain followed by `power_iters` steps of power
    /// iteration on `T* T`, started from the best ensemble member.
    pub fn operator_norm(&self, forcings: &[Forcing], power_iters: usize) -> Result<NormEstimate> {
        let g = &self.ctx.grid;
        let live: Vec<&Forcing> = forcings.iter().filter(|f| f.norm(g) > 0.0).collect();
        if live.is_empty() {
            return Err(Error::invalid("forcing ensemble has no nonzero member"));
        }
        let gains: Vec<f64> = live.iter().map(|f| self.gain(f)).collect();
        let (best, ensemble) =
            gains.iter().enumerate().fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let mut x = live[best].clone();
        let mut power = ensemble;
        let a = self.ctx.alpha();
        for _ in 0..power_iters {
            let v = velocity(g, a, &self.solve(&x));
            let y = self.adjoint(&v)?;
            let ny = y.norm(g);
            if !(ny > 0.0) {
                break;
            }
            x = Forcing { f1: y.f1.iter().map(|z| z / ny).collect(), f2: y.f2.iter().map(|z| z / ny).collect() };
            power = power.max(self.gain(&x));
        }
        Ok(NormEstimate { ensemble, power, norm: ensemble.max(power) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormEstimate {
    pub ensemble: f64,
    pub power: f64,
    pub norm: f64,
}

/// Assembled construction for one `mu`: the mode pair is built once and
/// reused for every forcing.
pub struct ConstructionResolvent<'a> {
    pub ctx: OsContext,
    pub pair: ModePair,
    iteration: IterationConfig,
    _profile: &'a ShearProfile,
}

impl<'a> ConstructionResolvent<'a> {
    pub fn new(p: &'a ShearProfile, ctx: OsContext, opts: &ResolventOptions) -> Result<Self> {
        let mut fast = opts.fast;
        fast.iteration = opts.iteration();
        let pair = build_mode_pair(p, &ctx, &fast)?;
        Ok(Self { ctx, pair, iteration: opts.iteration(), _profile: p })
    }

    /// `phi = Phi_mOS[h] + A (phi_s - phi_f)`; returns `phi` and `A`.
    pub fn solve_source(&self, h: &[C64]) -> Result<(Vec<C64>, C64, f64)> {
        let (pm, _) = build_phi_mos_robust(&self.ctx, h, &self.iteration)?;
        let (a, b) = match_modes(&self.pair, pm.boundary_slope)?;
        let phi: Vec<C64> = (0..h.len())
            .map(|i| pm.phi.values[i] + a * self.pair.slow.phi.values[i] + b * self.pair.fast.phi.values[i])
            .collect();
        Ok((phi, a, pm.diagnostic("coupled").unwrap_or(0.0)))
    }
}

/// One resolvent solve with norms and the estimate it is compared against.
#[derive(Clone, Debug)]
pub struct ResolventSample {
    pub mu: C64,
    pub sp: SpectralParams,
    pub solve: ModeSolution,
    pub velocity: [Vec<C64>; 2],
    /// `(||v||, ||(D^2 - alpha^2) phi||)`.
    pub norms: (f64, f64),
    pub forcing_norm: f64,
    pub regime: Option<RegionKind>,
    pub predicted_factor: f64,
    /// `||v|| / (F ||f||)`: the constant implied by the measured solve.
    pub bound_ratio: f64,
    pub method: SolveMethod,
    pub residual: f64,
    pub divergence: f64,
    pub flagged: bool,
}

fn conj_forcing(f: &Forcing) -> Forcing {
    Forcing { f1: f.f1.iter().map(|z| z.conj()).collect(), f2: f.f2.iter().map(|z| z.conj()).collect() }
}

/// Solves the resolvent problem `(mu + L) v = f` for the stream function.
/// Negative `n` is reduced to `|n|` by complex conjugation.
pub fn solve_resolvent(
    p: &ShearProfile,
    sp: &SpectralParams,
    grid: Arc<HalfLineGrid>,
    f: &Forcing,
    opts: &ResolventOptions,
) -> Result<ResolventSample> {
    if !(sp.c.im > 0.0) {
        return Err(Error::Regime(format!("Im c = {} must be positive", sp.c.im)));
    }
    if f.f1.len() != grid.len() || f.f2.len() != grid.len() {
        return Err(Error::invalid("forcing length differs from the grid"));
    }
    if sp.n < 0 {
        let mu = sp.mu();
        let spp = SpectralParams::from_mu(-sp.n, sp.nu, sp.gamma, sp.delta, mu.conj())?;
        let mut s = solve_resolvent(p, &spp, grid, &conj_forcing(f), opts)?;
        for v in s.solve.phi.values.iter_mut().chain(s.solve.dphi.iter_mut()).chain(s.solve.d2phi.iter_mut()) {
            *v = v.conj();
        }
        s.solve.boundary_slope = s.solve.boundary_slope.conj();
        for comp in s.velocity.iter_mut() {
            for v in comp.iter_mut() {
                *v = v.conj();
            }
        }
        s.mu = mu;
        s.sp = *sp;
        return Ok(s);
    }
    let ctx = OsContext::new(p, *sp, grid.clone());
    let rp = RegionParams::new(sp, &opts.thresholds, opts.theta)?;
    let mu = sp.mu();
    let regime = classify_mu(&rp, mu).estimate();
    let alpha = sp.alpha();
    let large = alpha * sp.c_eps().im >= 1.0 / opts.thresholds.delta2;
    let method = match opts.method {
        SolveMethod::Auto if large => SolveMethod::Direct,
        SolveMethod::Auto => SolveMethod::Construction,
        m => m,
    };
    let h = f.source(&grid, alpha);
    let (values, extra) = if f.is_zero() {
        (vec![ZERO; grid.len()], Vec::new())
    } else {
        match method {
            SolveMethod::Direct => {
                let d = DirectResolvent::new(ctx)?;
                (d.solve_source(&h), Vec::new())
            }
            _ => {
                let c = ConstructionResolvent::new(p, ctx, opts)?;
                let (phi, a, coupled) = c.solve_source(&h)?;
                let gap = c.pair.wronskian_gap.norm();
                (phi, vec![("matching_a".to_string(), a.norm()), ("wronskian_gap".into(), gap), ("coupled".into(), coupled)])
            }
        }
    };
    let ctx = OsContext::new(p, *sp, grid.clone());
    let residual = if f.is_zero() { 0.0 } else { ctx.mos_residual(&values, &h) };
    let mut solve = ModeSolution::from_values(&grid, alpha, values, residual);
    solve.phi.bc_left = LeftBc::DirichletNeumann;
    solve.phi.bc_right = RightBc::Decay;
    solve.diagnostics.push(("wall_value".into(), solve.phi.values[0].norm()));
    solve.diagnostics.push(("wall_slope".into(), solve.boundary_slope.norm()));
    solve.diagnostics.extend(extra);
    let vel = velocity(&grid, alpha, &solve.phi.values);
    let vnorm = velocity_norm(&grid, &vel);
    let fnorm = f.norm(&grid);
    let factor = regime.map(|k| predicted_factor(k, sp, opts.strong)).unwrap_or(f64::NAN);
    let bound_ratio = if fnorm > 0.0 { vnorm / (factor * fnorm) } else { 0.0 };
    let divergence = divergence_defect(&grid, alpha, &vel);
    Ok(ResolventSample {
        mu,
        sp: *sp,
        norms: (vnorm, solve.norms.2),
        solve,
        velocity: vel,
        forcing_norm: fnorm,
        regime,
        predicted_factor: factor,
        bound_ratio,
        method,
        residual,
        divergence,
        flagged: !(residual <= opts.residual_tol),
    })
}

/// Smooth random forcings: sums of complex Gaussian bumps on `[0, 12]`.
pub fn random_forcings(g: &HalfLineGrid, count: usize, seed: u64) -> Vec<Forcing> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut comp = || {
                let bumps: Vec<(C64, f64, f64)> = (0..5)
                    .map(|_| {
                        let a = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                        (a, rng.random_range(0.0..12.0), rng.random_range(0.3..3.0))
                    })
                    .collect();
                g.sample(|y| bumps.iter().map(|(a, c, s)| a * (-(y - c).powi(2) / (2.0 * s * s)).exp()).sum())
            };
            let f1 = comp();
            let f2 = comp();
            Forcing { f1, f2 }
        })
        .collect()
}

/// One row of the resolvent-norm table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n: i64,
    pub nu: f64,
    pub gamma: f64,
    pub mu: C64,
    pub norm: f64,
    pub predicted_factor: f64,
    pub ratio: f64,
    pub residual: f64,
    pub regime: RegionKind,
    pub flagged: bool,
}

pub const MIN_ENSEMBLE: usize = 8;
pub const POWER_ITERATIONS: usize = 3;

/// Operator-norm sweep over `mu_grid`, each point solved directly with an
/// ensemble of random forcings plus power iteration.
pub fn sweep_resolvent_norms(
    p: &ShearProfile,
    template: &SpectralParams,
    grid: Arc<HalfLineGrid>,
    mu_grid: &[C64],
    count: usize,
    seed: u64,
    opts: &ResolventOptions,
) -> Result<Vec<SweepRow>> {
    if count < MIN_ENSEMBLE {
        return Err(Error::invalid(format!("ensemble of {count} forcings, need at least {MIN_ENSEMBLE}")));
    }
    let forcings = random_forcings(&grid, count, seed);
    let rp = RegionParams::new(template, &opts.thresholds, opts.theta)?;
    mu_grid
        .par_iter()
        .map(|&mu| {
            let regime = classify_mu(&rp, mu)
                .estimate()
                .ok_or_else(|| Error::Regime(format!("mu = {mu} lies outside the certified regions")))?;
            let sp = SpectralParams::from_mu(template.n, template.nu, template.gamma, template.delta, mu)?;
            let (sp_pos, fs) = if sp.n < 0 {
                let spp = SpectralParams::from_mu(-sp.n, sp.nu, sp.gamma, sp.delta, mu.conj())?;
                (spp, forcings.iter().map(conj_forcing).collect::<Vec<_>>())
            } else {
                (sp, forcings.clone())
            };
            let ctx = OsContext::new(p, sp_pos, grid.clone());
            let d = DirectResolvent::new(ctx)?;
            let est = d.operator_norm(&fs, POWER_ITERATIONS)?;
            let h = fs[0].source(&grid, sp_pos.alpha());
            let residual = d.ctx.mos_residual(&d.solve_source(&h), &h);
            let factor = predicted_factor(regime, &sp, opts.strong);
            Ok(SweepRow {
                n: sp.n,
                nu: sp.nu,
                gamma: sp.gamma,
                mu,
                norm: est.norm,
                predicted_factor: factor,
                ratio: est.norm / factor,
                residual,
                regime,
                flagged: !(residual <= opts.residual_tol),
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "n", "nu", "gamma", "re_mu", "im_mu", "norm", "predicted_factor", "ratio", "residual", "regime",
    ])?;
    for r in rows {
        out.write_record([
            r.n.to_string(),
            format!("{:.16e}", r.nu),
            format!("{:.16e}", r.gamma),
            format!("{:.16e}", r.mu.re),
            format!("{:.16e}", r.mu.im),
            format!("{:.16e}", r.norm),
            format!("{:.16e}", r.predicted_factor),
            format!("{:.16e}", r.ratio),
            format!("{:.16e}", r.residual),
            if r.flagged { format!("{}!", r.regime.tag()) } else { r.regime.tag().to_string() },
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halfline_grid::{make_grid, Stretch};
    use crate::profiles::build_profile;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn setup(n: usize) -> (ShearProfile, Arc<HalfLineGrid>) {
        let p = build_profile("exp", &BTreeMap::new()).unwrap();
        let g = Arc::new(make_grid(n, 40.0, Stretch::Tanh { beta: 3.0 }).unwrap());
        (p, g)
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let (p, g) = setup(300);
        let sp = SpectralParams::on_stability_line(64, 1e-4, 2.0 / 3.0, 0.05, 0.3).unwrap();
        let opts = ResolventOptions { method: SolveMethod::Direct, ..ResolventOptions::for_profile(&p) };
        let s = solve_resolvent(&p, &sp, g.clone(), &Forcing::zeros(g.len()), &opts).unwrap();
        assert!(s.solve.phi.values.iter().all(|v| *v == ZERO));
        assert_eq!(s.norms.0, 0.0);
    }

    #[test]
    fn direct_solution_is_clamped_and_divergence_free() {
        let (p, g) = setup(400);
        let sp = SpectralParams::on_stability_line(32, 1e-4, 2.0 / 3.0, 0.05, 0.4).unwrap();
        let f = random_forcings(&g, 1, 3).pop().unwrap();
        let opts = ResolventOptions { method: SolveMethod::Direct, ..ResolventOptions::for_profile(&p) };
        let s = solve_resolvent(&p, &sp, g.clone(), &f, &opts).unwrap();
        assert!(s.residual < 1e-9, "residual {}", s.residual);
        assert!(s.solve.phi.values[0].norm() < 1e-12);
        assert!(s.solve.boundary_slope.norm() < 1e-9 * s.norms.0.max(1.0));
        assert!(s.divergence < 1e-12, "div {}", s.divergence);
        assert!(!s.flagged);
    }

    // Independent assembly of the signed-n equation
    // (i/n) L^2 phi + (V + mu/(i n sqrt(nu))) L phi - V'' phi = h.
    fn signed_solve(p: &ShearProfile, g: &Arc<HalfLineGrid>, n: i64, nu: f64, mu: C64, f: &Forcing) -> Vec<C64> {
        let nn = n as f64;
        let a2 = nn * nn * nu;
        let vs = p.sample_grid(nu, g);
        let l = g.d2().add_scaled(&Banded::identity(g.len()), C64::new(-a2, 0.0));
        let l2 = l.matmul(&l);
        let shift = mu / (I * nn * nu.sqrt());
        let coef: Vec<C64> = vs.v.iter().map(|&v| C64::new(v, 0.0) + shift).collect();
        let d2v: Vec<C64> = vs.d2v.iter().map(|&x| C64::new(-x, 0.0)).collect();
        let op = l2.scaled(I / nn).add_scaled(&l.scale_rows(&coef), C64::new(1.0, 0.0)).add_scaled(&Banded::diag(&d2v), C64::new(1.0, 0.0));
        let sp = SpectralParams::new(n.abs(), nu, 2.0 / 3.0, 0.05, C64::new(0.3, 1.0)).unwrap();
        let ctx = OsContext::new(p, sp, g.clone());
        let mut cons = ctx.clamped_constraints();
        cons.extend(ctx.decay_constraints());
        let mut sys = ConstrainedSystem::new(&g.weights, cons).unwrap();
        let a = sys.assemble(&op, true);
        let d = g.d1().apply(&f.f1);
        let h: Vec<C64> = d.iter().zip(&f.f2).map(|(x, y)| -y + x / (I * nn * nu.sqrt())).collect();
        BandedLu::factor(&a).unwrap().solve(&sys.rhs(&h))
    }

    #[test]
    fn negative_n_matches_signed_equation() {
        let (p, g) = setup(300);
        let mu = C64::new(0.4, -0.2);
        let f = random_forcings(&g, 1, 11).pop().unwrap();
        let sp = SpectralParams::from_mu(-24, 1e-4, 2.0 / 3.0, 0.05, mu).unwrap();
        let opts = ResolventOptions { method: SolveMethod::Direct, ..ResolventOptions::for_profile(&p) };
        let s = solve_resolvent(&p, &sp, g.clone(), &f, &opts).unwrap();
        let want = signed_solve(&p, &g, -24, 1e-4, mu, &f);
        let diff: Vec<C64> = s.solve.phi.values.iter().zip(&want).map(|(a, b)| a - b).collect();
        assert!(g.norm(&diff) < 1e-8 * g.norm(&want), "{}", g.norm(&diff) / g.norm(&want));
        // Conjugation symmetry: -n with conjugated data gives the conjugate.
        let sp2 = SpectralParams::from_mu(24, 1e-4, 2.0 / 3.0, 0.05, mu.conj()).unwrap();
        let s2 = solve_resolvent(&p, &sp2, g.clone(), &conj_forcing(&f), &opts).unwrap();
        let d2: Vec<C64> = s.solve.phi.values.iter().zip(&s2.solve.phi.values).map(|(a, b)| a - b.conj()).collect();
        assert!(g.norm(&d2) <= 1e-12 * g.norm(&want));
    }

    #[test]
    fn adjoint_is_weighted_transpose() {
        let (p, g) = setup(200);
        let sp = SpectralParams::on_stability_line(16, 1e-3, 2.0 / 3.0, 0.05, 0.5).unwrap();
        let d = DirectResolvent::new(OsContext::new(&p, sp, g.clone())).unwrap();
        let fs = random_forcings(&g, 2, 5);
        let a = sp.alpha();
        let tf = velocity(&g, a, &d.solve(&fs[0]));
        let w = velocity(&g, a, &d.solve(&fs[1]));
        let tw = d.adjoint(&w).unwrap();
        let lhs = g.inner(&tf[0], &w[0]) + g.inner(&tf[1], &w[1]);
        let rhs = g.inner(&fs[0].f1, &tw.f1) + g.inner(&fs[0].f2, &tw.f2);
        assert!((lhs - rhs).norm() < 1e-9 * lhs.norm(), "{lhs} vs {rhs}");
    }

    #[test]
    fn power_iteration_does_not_lose_the_ensemble_maximum() {
        let (p, g) = setup(200);
        let sp = SpectralParams::on_stability_line(16, 1e-3, 2.0 / 3.0, 0.05, 0.5).unwrap();
        let d = DirectResolvent::new(OsContext::new(&p, sp, g.clone())).unwrap();
        let fs = random_forcings(&g, 8, 9);
        let e = d.operator_norm(&fs, 3).unwrap();
        assert!(e.power >= e.ensemble * (1.0 - 1e-12));
        assert!(d.operator_norm(&[Forcing::zeros(g.len())], 3).is_err());
    }

    #[test]
    fn large_alpha_bound_constant_is_stable() {
        let (p, g) = setup(400);
        let opts = ResolventOptions::for_profile(&p);
        let f = random_forcings(&g, 1, 21).pop().unwrap();
        let mut cs = Vec::new();
        for im in [25.0, 50.0, 100.0] {
            let sp = SpectralParams::new(64, 1e-2, 2.0 / 3.0, 0.05, C64::new(0.5, im / (64.0 * 0.1))).unwrap();
            let s = solve_resolvent(&p, &sp, g.clone(), &f, &opts).unwrap();
            assert_eq!(s.method, SolveMethod::Direct);
            assert_eq!(s.regime, Some(RegionKind::LargeAlpha));
            // ||phi'|| + alpha ||phi|| <= C ||f|| / (alpha Im c_eps)
            let m = (s.solve.norms.0 + s.solve.norms.1) * sp.alpha() * sp.c_eps().im / s.forcing_norm;
            cs.push(m);
        }
        let (lo, hi) = cs.iter().fold((f64::INFINITY, 0.0f64), |a, &c| (a.0.min(c), a.1.max(c)));
        assert!(hi < 10.0 && hi / lo < 3.0, "{cs:?}");
    }

    #[test]
    fn construction_matches_direct_solve() {
        let (p, g) = setup(600);
        let sp = SpectralParams::on_stability_line(64, 1e-4, 2.0 / 3.0, 0.05, 0.3).unwrap();
        let f = random_forcings(&g, 1, 2).pop().unwrap();
        let base = ResolventOptions::for_profile(&p);
        let c = solve_resolvent(&p, &sp, g.clone(), &f, &ResolventOptions { method: SolveMethod::Construction, ..base }).unwrap();
        let d = solve_resolvent(&p, &sp, g.clone(), &f, &ResolventOptions { method: SolveMethod::Direct, ..base }).unwrap();
        let diff: Vec<C64> = c.solve.phi.values.iter().zip(&d.solve.phi.values).map(|(a, b)| a - b).collect();
        let rel = g.norm(&diff) / g.norm(&d.solve.phi.values);
        assert!(rel < 1e-5, "relative difference {rel}");
        assert!(c.solve.phi.values[0].norm() < 1e-8 && c.solve.boundary_slope.norm() < 1e-3 * c.norms.0);
        assert_eq!(c.regime, Some(RegionKind::ORegion));
    }

    #[test]
    fn classify_examples() {
        let p = build_profile("exp", &BTreeMap::new()).unwrap();
        let sp = SpectralParams::on_stability_line(64, 1e-4, 2.0 / 3.0, 0.05, 0.3).unwrap();
        let ts = ThresholdSet::from_profile(&p);
        let rp = RegionParams::new(&sp, &ts, default_theta(p.norm_u(), 1.0)).unwrap();
        assert!(!classify_mu(&rp, ZERO).certified());
        let on_l0 = C64::new(rp.l0_re(), -0.1);
        let m = classify_mu(&rp, on_l0);
        assert!(m.o_region && !m.large_alpha);
        let big = classify_mu(&rp, C64::new(1.0 / ts.delta2 + 1.0, 0.0));
        assert_eq!(big.estimate(), Some(RegionKind::LargeAlpha));
        assert!(RegionParams::new(&sp, &ts, 1.0).is_err());
    }

    #[test]
    fn sweep_rejects_small_ensembles_and_uncertified_points() {
        let (p, g) = setup(200);
        let sp = SpectralParams::on_stability_line(16, 1e-3, 2.0 / 3.0, 0.05, 0.5).unwrap();
        let opts = ResolventOptions::for_profile(&p);
        assert!(sweep_resolvent_norms(&p, &sp, g.clone(), &[sp.mu()], 1, 0, &opts).is_err());
        assert!(sweep_resolvent_norms(&p, &sp, g.clone(), &[C64::new(1e-4, 0.0)], 8, 0, &opts).is_err());
        let rows = sweep_resolvent_norms(&p, &sp, g.clone(), &[sp.mu()], 8, 0, &opts).unwrap();
        assert!(rows[0].norm > 0.0 && !rows[0].flagged);
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,nu,gamma,re_mu,im_mu,norm"));
    }

    fn direct_membership(rp: &RegionParams, mu: C64) -> (bool, bool, bool) {
        let n = rp.n.unsigned_abs() as f64;
        let a = n * rp.nu.sqrt();
        let t = rp.theta.tan();
        let g = n.powf(rp.gamma) * rp.nu.sqrt();
        let s = mu.im.abs() >= t * mu.re + (a + t.abs() * g) / rp.delta1 && mu.norm() >= a / rp.delta1;
        let o = mu.norm() <= n * rp.nu.sqrt() / rp.delta1 && mu.re >= g / rp.delta;
        let l = mu.re + n * n * rp.nu.powf(1.5) >= 1.0 / rp.delta2;
        (s, o, l)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn classify_agrees_with_inequalities(
            n in 1i64..2000, lnu in -8.0f64..-1.0, gamma in 0.6f64..1.0, theta in 1.6f64..3.1,
            re in -500.0f64..500.0, im in -500.0f64..500.0,
        ) {
            let rp = RegionParams { theta, delta: 0.05, delta1: 0.01, delta2: 0.05, gamma, n, nu: 10f64.powf(lnu) };
            let mu = C64::new(re, im);
            let m = classify_mu(&rp, mu);
            prop_assert_eq!((m.s_theta, m.o_region, m.large_alpha), direct_membership(&rp, mu));
            prop_assert_eq!(m.certified(), m.estimate().is_some());
        }
    }
}
