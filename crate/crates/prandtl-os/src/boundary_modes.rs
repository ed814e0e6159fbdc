// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Slow and fast solutions of `mOS(phi) = 0`, `phi(0) = 1`, and the matching
//! of their boundary slopes.
//!
//! The slow mode is `e^{-alpha Y}` corrected by a Rayleigh solve and the
//! Airy/Rayleigh series. The fast mode is built from the critical-layer
//! Airy profile when `|c| <= |eps|^{(1-theta)/3}` and from the boundary-layer
//! expansion in `z = |tau_eps| Y` otherwise; both finish with a remainder
//! solve of the full problem.

use std::path::Path;

use crate::airy_kernel::{build_psi_ai, case_one, critical_layer};
use crate::error::{Error, Result};
use crate::os_core::{ModeSolution, OsContext};
use crate::profiles::ShearProfile;
use crate::ray_airy_iteration::{build_phi_mos_robust, iterate_mos, solve_coupled, IterationConfig};
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Clone, Copy, Debug)]
pub struct FastModeConfig {
    pub theta: f64,
    pub n_bl: usize,
    /// Decay rate for the profile envelopes; `None` uses `Re omega / 2`.
    pub decay_delta: Option<f64>,
    /// Spacing of the fine `z` grid for the boundary-layer profiles.
    pub dz: f64,
    pub iteration: IterationConfig,
}

impl FastModeConfig {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 0.1) {
            return Err(Error::invalid(format!("theta = {theta} outside (0, 1/10)")));
        }
        let n_bl = (15.0 / (4.0 * theta)).ceil() as usize + 2;
        Ok(Self { theta, n_bl, decay_delta: None, dz: 2e-3, iteration: IterationConfig::default() })
    }
}

impl Default for FastModeConfig {
    fn default() -> Self {
        Self::new(0.08).unwrap()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FastCase {
    CriticalLayer,
    BoundaryLayer,
}

#[derive(Clone, Debug)]
pub struct ModePair {
    pub slow: ModeSolution,
    pub fast: ModeSolution,
    pub slopes: (C64, C64),
    pub wronskian_gap: C64,
}

fn remainder(ctx: &OsContext, base: &[C64], cfg: &IterationConfig) -> Result<(Vec<C64>, bool)> {
    let h: Vec<C64> = ctx.mos_apply(base).iter().map(|v| -v).collect();
    let (m, _) = build_phi_mos_robust(ctx, &h, cfg)?;
    let coupled = m.diagnostic("coupled") == Some(1.0);
    Ok((m.phi.values, coupled))
}

/// Slow mode `e^{-alpha Y} + phi~_Ray + phi~_s`.
pub fn build_slow_mode(p: &ShearProfile, ctx: &OsContext, cfg: &IterationConfig) -> Result<ModeSolution> {
    let g = &ctx.grid;
    let a = ctx.alpha();
    let nu = ctx.sp.nu;
    let s = nu.sqrt();
    let e: Vec<C64> = g.sample(|y| C64::new((-a * y).exp(), 0.0));
    // V'' e^{-alpha Y} = h1 + h2 with h1 = nu U^E''(sqrt(nu) Y) e^{-alpha Y}.
    let h1: Vec<C64> = g.nodes.iter().zip(&e).map(|(&y, &ev)| ev * (nu * p.outer.eval(s * y)[2])).collect();
    let h: Vec<C64> = e.iter().zip(&ctx.vs.d2v).map(|(ev, d)| ev * *d).collect();
    let h2: Vec<C64> = h.iter().zip(&h1).map(|(a, b)| a - b).collect();
    let (ray_t, _) = ctx.rayleigh()?.solve_raw(&h, ZERO);
    let phi_ray: Vec<C64> = e.iter().zip(&ray_t).map(|(a, b)| a + b).collect();
    // The series starts from the correction alone: (D^2 - alpha^2) D^2 e^{-alpha Y} = 0.
    let (corr, coupled) = match iterate_mos(ctx, &ray_t, cfg) {
        Ok((x, _)) => (x, false),
        Err(Error::Divergence(_)) => (solve_coupled(ctx, &ray_t)?, true),
        Err(e) => return Err(e),
    };
    let mut vals: Vec<C64> = phi_ray.iter().zip(&corr).map(|(a, b)| a + b).collect();
    vals[0] = ONE;
    let res = ctx.mos_residual_homogeneous(&vals);
    let dev: Vec<C64> = vals.iter().zip(&e).map(|(a, b)| a - b).collect();
    let dev_d = g.norm(&g.d1().apply(&dev));
    let mut m = ModeSolution::from_values(g, a, vals, res);
    m.diagnostics.push(("correction_dnorm".into(), dev_d));
    m.diagnostics.push(("source_outer".into(), g.norm(&h1)));
    m.diagnostics.push(("source_layer".into(), g.norm(&h2)));
    m.diagnostics.push(("coupled".into(), if coupled { 1.0 } else { 0.0 }));
    Ok(m)
}

/// `tau_eps = (-c_eps/eps)^{1/2}` with `Re tau > 0`.
pub fn tau_eps(ctx: &OsContext) -> C64 {
    let t = (-ctx.sp.c_eps() / ctx.sp.eps()).sqrt();
    if t.re < 0.0 {
        -t
    } else {
        t
    }
}

/// `D_eps` for the boundary-layer expansion.
pub fn d_eps(ctx: &OsContext) -> f64 {
    let t = tau_eps(ctx).norm();
    let a2 = ctx.alpha().powi(2);
    let e = ctx.sp.eps().norm();
    let dv = ctx.vs.dv.iter().map(|v| v.abs()).fold(0.0, f64::max);
    2.0 * a2 / (t * t) + dv / (e * t.powi(3)) + a2 * dv / (e * t.powi(5))
}

/// Boundary-layer profiles `phi_k` on a uniform `z` grid.
#[derive(Clone, Debug)]
pub struct BlProfiles {
    pub dz: f64,
    pub omega: C64,
    /// `sum_{k>=1} phi_k` and its `z` derivative.
    pub tail: Vec<C64>,
    pub dtail: Vec<C64>,
    /// `sup_z e^{delta z} (|phi_k| + |phi_k'| + |phi_k''|)` for `k = 0..=3`.
    pub envelopes: Vec<f64>,
    pub delta: f64,
    /// Profiles actually computed before they fell below `1e-18`.
    pub used: usize,
}

/// `int_0^h e^{-w s} ds` and `int_0^h s e^{-w s} ds`.
fn exp_moments(w: C64, h: f64) -> (C64, C64, C64) {
    let e = (-w * h).exp();
    let wh = w * h;
    if wh.norm() < 1e-4 {
        let i0 = h * (ONE - wh / 2.0 + wh * wh / 6.0);
        let i1 = h * h * (C64::new(0.5, 0.0) - wh / 3.0 + wh * wh / 8.0);
        return (e, i0, i1);
    }
    ((e), (ONE - e) / w, (ONE - e * (ONE + wh)) / (w * w))
}

/// `-int_z^inf f` by the trapezoid rule (zero beyond the grid).
fn anti_from_inf(f: &[C64], h: f64) -> Vec<C64> {
    let n = f.len();
    let mut out = vec![ZERO; n];
    for i in (0..n - 1).rev() {
        out[i] = out[i + 1] - (f[i] + f[i + 1]) * (0.5 * h);
    }
    out
}

pub fn boundary_layer_profiles(p: &ShearProfile, ctx: &OsContext, cfg: &FastModeConfig) -> Result<BlProfiles> {
    let tau = tau_eps(ctx);
    let ta = tau.norm();
    let w = tau / ta;
    let eps = ctx.sp.eps();
    let ce = ctx.sp.c_eps();
    let a2 = ctx.alpha().powi(2);
    let nu = ctx.sp.nu;
    let delta = cfg.decay_delta.unwrap_or(0.5 * w.re);
    if !(delta > 0.0 && delta < w.re) {
        return Err(Error::invalid(format!("decay delta {delta} outside (0, Re omega)")));
    }
    let z_max = (ta * ctx.grid.y_max).min(60.0 / w.re);
    let h = cfg.dz;
    let m = (z_max / h).ceil() as usize + 1;
    let zs: Vec<f64> = (0..m).map(|i| i as f64 * h).collect();
    let vv: Vec<[f64; 4]> = zs.iter().map(|&z| p.v(nu, z / ta)).collect();
    let (e, i0, i1) = exp_moments(w, h);
    let mut f: Vec<C64> = zs.iter().map(|&z| (-w * z).exp()).collect();
    let mut tail = vec![ZERO; m];
    let mut dtail = vec![ZERO; m];
    let env = |phi: &[C64], dphi: &[C64], d2phi: &[C64]| {
        (0..m).map(|i| (delta * zs[i]).exp() * (phi[i].norm() + dphi[i].norm() + d2phi[i].norm())).fold(0.0, f64::max)
    };
    let df: Vec<C64> = f.iter().map(|v| -w * v).collect();
    let d2f: Vec<C64> = f.iter().map(|v| w * w * v).collect();
    let mut envelopes = vec![env(&f, &df, &d2f)];
    let c_a = -(a2 / (ta * ta));
    let c_v = -ONE / (eps * ta * ta);
    let c_d = 2.0 / (eps * ta.powi(3));
    let c_c = a2 / (eps * ta.powi(4));
    let scale0 = 1.0;
    let mut used = 0;
    for k in 1..=cfg.n_bl {
        let b_src: Vec<C64> = (0..m).map(|i| c_d * vv[i][1] * f[i]).collect();
        let b = anti_from_inf(&b_src, h);
        let c_src: Vec<C64> = (0..m).map(|i| c_c * (C64::new(vv[i][0], 0.0) - ce) * f[i]).collect();
        let c1 = anti_from_inf(&c_src, h);
        let c = anti_from_inf(&c1, h).iter().map(|v| -v).collect::<Vec<_>>();
        let gk: Vec<C64> = (0..m).map(|i| c_a * f[i] + c_v * vv[i][0] * f[i] + b[i] + c[i]).collect();
        // G(xi) = int_xi^inf e^{-w (s - xi)} g(s) ds, backward.
        let mut gg = vec![ZERO; m];
        for i in (0..m - 1).rev() {
            gg[i] = e * gg[i + 1] + gk[i] * i0 + (gk[i + 1] - gk[i]) / h * i1;
        }
        let mut phi = vec![ZERO; m];
        for i in 0..m - 1 {
            phi[i + 1] = e * phi[i] + gg[i + 1] * i0 + (gg[i] - gg[i + 1]) / h * i1;
        }
        let dphi: Vec<C64> = (0..m).map(|i| gg[i] - w * phi[i]).collect();
        if k <= 3 {
            let d2phi: Vec<C64> = (0..m).map(|i| w * w * phi[i] - gk[i]).collect();
            envelopes.push(env(&phi, &dphi, &d2phi));
        }
        let sup = phi.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if !sup.is_finite() {
            return Err(Error::Divergence(format!("boundary-layer profile {k} is not finite")));
        }
        for i in 0..m {
            tail[i] += phi[i];
            dtail[i] += dphi[i];
        }
        used = k;
        if sup < 1e-18 * scale0 && k > 3 {
            break;
        }
        f = phi;
    }
    Ok(BlProfiles { dz: h, omega: w, tail, dtail, envelopes, delta, used })
}

impl BlProfiles {
    /// Cubic Hermite interpolation of the tail and its derivative at `z`.
    pub fn eval_tail(&self, z: f64) -> (C64, C64) {
        let n = self.tail.len();
        let t = z / self.dz;
        if t >= (n - 1) as f64 {
            return (ZERO, ZERO);
        }
        let i = t.floor() as usize;
        let s = t - i as f64;
        let (y0, y1) = (self.tail[i], self.tail[i + 1]);
        let (m0, m1) = (self.dtail[i] * self.dz, self.dtail[i + 1] * self.dz);
        let h00 = 2.0 * s.powi(3) - 3.0 * s * s + 1.0;
        let h10 = s.powi(3) - 2.0 * s * s + s;
        let h01 = -2.0 * s.powi(3) + 3.0 * s * s;
        let h11 = s.powi(3) - s * s;
        let v = y0 * h00 + m0 * h10 + y1 * h01 + m1 * h11;
        let dh00 = 6.0 * s * s - 6.0 * s;
        let dh10 = 3.0 * s * s - 4.0 * s + 1.0;
        let dh01 = -6.0 * s * s + 6.0 * s;
        let dh11 = 3.0 * s * s - 2.0 * s;
        let d = (y0 * dh00 + m0 * dh10 + y1 * dh01 + m1 * dh11) / self.dz;
        (v, d)
    }
}

fn fast_boundary_layer(p: &ShearProfile, ctx: &OsContext, cfg: &FastModeConfig) -> Result<ModeSolution> {
    let d = d_eps(ctx);
    if !(d < 1.0) {
        return Err(Error::Regime(format!("D_eps = {d:.3e} is not below 1")));
    }
    let bl = boundary_layer_profiles(p, ctx, cfg)?;
    let tau = tau_eps(ctx);
    let ta = tau.norm();
    let w = bl.omega;
    let g = &ctx.grid;
    let mut base = Vec::with_capacity(g.len());
    let mut slope0 = ZERO;
    for (i, &y) in g.nodes.iter().enumerate() {
        let z = ta * y;
        let (t, dt) = bl.eval_tail(z);
        base.push((-w * z).exp() + t);
        if i == 0 {
            slope0 = (-w + dt) * ta;
        }
    }
    let (rem, coupled) = remainder(ctx, &base, &cfg.iteration)?;
    let mut vals: Vec<C64> = base.iter().zip(&rem).map(|(a, b)| a + b).collect();
    vals[0] = ONE;
    let res = ctx.mos_residual_homogeneous(&vals);
    let rd = g.d1().apply(&rem);
    let r_norm = g.norm(&rd) + ctx.alpha() * g.norm(&rem);
    let mut m = ModeSolution::from_values(g, ctx.alpha(), vals, res);
    m.boundary_slope = slope0 + rd[0];
    m.diagnostics.push(("case".into(), 2.0));
    m.diagnostics.push(("tau_abs".into(), ta));
    m.diagnostics.push(("d_eps".into(), d));
    m.diagnostics.push(("remainder_bound".into(), ta.powf(2.5) * d.powi(cfg.n_bl as i32)));
    m.diagnostics.push(("remainder_norm".into(), r_norm));
    m.diagnostics.push(("profiles_used".into(), bl.used as f64));
    for (k, v) in bl.envelopes.iter().enumerate() {
        m.diagnostics.push((format!("envelope_{k}"), *v));
    }
    m.diagnostics.push(("coupled".into(), if coupled { 1.0 } else { 0.0 }));
    Ok(m)
}

fn fast_critical_layer(p: &ShearProfile, ctx: &OsContext, cfg: &FastModeConfig) -> Result<ModeSolution> {
    let g = &ctx.grid;
    let cl = critical_layer(p, &ctx.sp, g)?;
    let psi = build_psi_ai(p, &ctx.sp, &cl, g)?;
    let base = psi.psi.values.clone();
    let (rem, coupled) = remainder(ctx, &base, &cfg.iteration)?;
    let mut vals: Vec<C64> = base.iter().zip(&rem).map(|(a, b)| a + b).collect();
    vals[0] = ONE;
    let res = ctx.mos_residual_homogeneous(&vals);
    let rd = g.d1().apply(&rem);
    let mut m = ModeSolution::from_values(g, ctx.alpha(), vals, res);
    m.boundary_slope = psi.d1[0] + rd[0];
    m.diagnostics.push(("case".into(), 1.0));
    m.diagnostics.push(("y_c".into(), cl.y_c));
    m.diagnostics.push(("r_bound".into(), cl.r_bound));
    m.diagnostics.push(("pole_abs".into(), psi.pole.norm()));
    m.diagnostics.push(("remainder_norm".into(), g.norm(&rd) + ctx.alpha() * g.norm(&rem)));
    m.diagnostics.push(("psi_slope".into(), psi.d1[0].norm()));
    m.diagnostics.push(("coupled".into(), if coupled { 1.0 } else { 0.0 }));
    Ok(m)
}

/// Fast mode in a requested regime.
pub fn build_fast_mode_case(
    p: &ShearProfile,
    ctx: &OsContext,
    cfg: &FastModeConfig,
    case: FastCase,
) -> Result<ModeSolution> {
    let one = case_one(&ctx.sp, cfg.theta);
    match case {
        FastCase::CriticalLayer if !one => {
            Err(Error::Regime("critical-layer construction needs |c| <= |eps|^{(1-theta)/3}".into()))
        }
        FastCase::BoundaryLayer if one => {
            Err(Error::Regime("boundary-layer construction needs |c| >= |eps|^{(1-theta)/3}".into()))
        }
        FastCase::CriticalLayer => fast_critical_layer(p, ctx, cfg),
        FastCase::BoundaryLayer => fast_boundary_layer(p, ctx, cfg),
    }
}

/// Fast mode; near the case boundary both constructions run and the one
/// with the smaller residual is kept.
pub fn build_fast_mode(p: &ShearProfile, ctx: &OsContext, cfg: &FastModeConfig) -> Result<ModeSolution> {
    let r = ctx.sp.c.norm() / ctx.sp.eps().norm().powf((1.0 - cfg.theta) / 3.0);
    if (0.8..=1.25).contains(&r) {
        let a = fast_critical_layer(p, ctx, cfg);
        let b = fast_boundary_layer(p, ctx, cfg);
        return match (a, b) {
            (Ok(a), Ok(b)) => {
                let gap = (a.boundary_slope - b.boundary_slope).norm() / b.boundary_slope.norm();
                let mut keep = if a.residual <= b.residual { a } else { b };
                keep.diagnostics.push(("case_discrepancy".into(), gap));
                Ok(keep)
            }
            (Ok(a), Err(_)) => Ok(a),
            (Err(_), Ok(b)) => Ok(b),
            (Err(e), Err(_)) => Err(e),
        };
    }
    if r < 1.0 {
        fast_critical_layer(p, ctx, cfg)
    } else {
        fast_boundary_layer(p, ctx, cfg)
    }
}

pub fn build_mode_pair(p: &ShearProfile, ctx: &OsContext, cfg: &FastModeConfig) -> Result<ModePair> {
    let slow = build_slow_mode(p, ctx, &cfg.iteration)?;
    let fast = build_fast_mode(p, ctx, cfg)?;
    let slopes = (slow.boundary_slope, fast.boundary_slope);
    Ok(ModePair { slow, fast, slopes, wronskian_gap: slopes.1 - slopes.0 })
}

/// `(A, B)` with `A = -B = slope / (phi_f'(0) - phi_s'(0))`.
pub fn match_modes(pair: &ModePair, phi_mos_slope: C64) -> Result<(C64, C64)> {
    let gap = pair.wronskian_gap;
    if !(gap.norm() > 1e-12 * pair.slopes.1.norm()) {
        return Err(Error::Singular(format!("matching gap {:.3e} is degenerate", gap.norm())));
    }
    let a = phi_mos_slope / gap;
    Ok((a, -a))
}

/// `(Y, Re phi, Im phi, Re phi', Im phi')` rows.
pub fn write_mode_csv(path: &Path, ys: &[f64], m: &ModeSolution) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["Y", "re_phi", "im_phi", "re_dphi", "im_dphi"])?;
    for (i, y) in ys.iter().enumerate() {
        let (p, d) = (m.phi.values[i], m.dphi[i]);
        w.write_record([y, &p.re, &p.im, &d.re, &d.im].map(|v| format!("{v:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halfline_grid::{make_grid, HalfLineGrid, Stretch};
    use crate::os_core::SpectralParams;
    use crate::profiles::{build_profile, VSamples};
    use proptest::prelude::*;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn grid(n: usize) -> Arc<HalfLineGrid> {
        Arc::new(make_grid(n, 40.0, Stretch::Tanh { beta: 3.0 }).unwrap())
    }

    fn exp_profile() -> ShearProfile {
        build_profile("exp", &BTreeMap::new()).unwrap()
    }

    #[test]
    fn flat_profile_slow_mode_is_the_exponential() {
        let g = grid(400);
        let n = g.len();
        let vs = VSamples {
            v: vec![1.0; n],
            dv: vec![0.0; n],
            d2v: vec![0.0; n],
            d3v: vec![0.0; n],
            dv_outer: vec![0.0; n],
            du: vec![0.0; n],
        };
        let sp = SpectralParams::on_stability_line(64, 1e-4, 2.0 / 3.0, 0.05, 0.3).unwrap();
        let ctx = OsContext::from_samples(vs, sp, g.clone());
        let flat = exp_profile();
        let m = build_slow_mode(&flat, &ctx, &IterationConfig::default()).unwrap();
        let a = sp.alpha();
        let e = g.sample(|y| C64::new((-a * y).exp(), 0.0));
        let d: Vec<C64> = m.phi.values.iter().zip(&e).map(|(x, y)| x - y).collect();
        assert!(g.norm(&d) < 1e-6 * g.norm(&e), "{}", g.norm(&d));
    }

    #[test]
    fn slow_mode_satisfies_homogeneous_problem() {
        let p = exp_profile();
        let sp = SpectralParams::on_stability_line(64, 1e-4, 2.0 / 3.0, 0.05, 0.3).unwrap();
        let ctx = OsContext::new(&p, sp, grid(600));
        let m = build_slow_mode(&p, &ctx, &IterationConfig::default()).unwrap();
        assert_eq!(m.phi.values[0], ONE);
        assert!(m.residual < 1e-6, "{}", m.residual);
        // Slope bounded by C / Im c_eps with a modest C.
        assert!(m.boundary_slope.norm() * sp.c_eps().im < 50.0);
    }

    #[test]
    fn boundary_layer_fast_mode() {
        let p = exp_profile();
        let sp = SpectralParams::on_stability_line(64, 1e-4, 2.0 / 3.0, 0.05, 0.3).unwrap();
        let ctx = OsContext::new(&p, sp, grid(800));
        let cfg = FastModeConfig::default();
        assert_eq!(cfg.n_bl, 49);
        let m = build_fast_mode_case(&p, &ctx, &cfg, FastCase::BoundaryLayer).unwrap();
        assert_eq!(m.phi.values[0], ONE);
        assert!(m.residual < 1e-5, "{}", m.residual);
        assert!(m.diagnostic("d_eps").unwrap() < 1.0);
        assert!(m.diagnostic("remainder_bound").unwrap() < 1e-6);
        // The expansion's leading slope is -omega |tau|.
        let tau = tau_eps(&ctx);
        assert!((m.boundary_slope + tau).norm() < 0.2 * tau.norm());
        assert!(build_fast_mode_case(&p, &ctx, &cfg, FastCase::CriticalLayer).is_err());
    }

    #[test]
    fn critical_layer_fast_mode() {
        let p = exp_profile();
        let sp = SpectralParams::new(256, 1e-5, 2.0 / 3.0, 0.05, C64::new(0.05, 0.1)).unwrap();
        let ctx = OsContext::new(&p, sp, grid(800));
        let cfg = FastModeConfig::default();
        let m = build_fast_mode_case(&p, &ctx, &cfg, FastCase::CriticalLayer).unwrap();
        assert_eq!(m.phi.values[0], ONE);
        assert!(m.residual < 1e-5, "{}", m.residual);
    }

    #[test]
    fn matching_identities() {
        let p = exp_profile();
        let sp = SpectralParams::on_stability_line(64, 1e-4, 2.0 / 3.0, 0.05, 0.3).unwrap();
        let ctx = OsContext::new(&p, sp, grid(800));
        let pair = build_mode_pair(&p, &ctx, &FastModeConfig::default()).unwrap();
        assert!(pair.slopes.1.norm() >= 10.0 * pair.slopes.0.norm());
        let (a, b) = match_modes(&pair, ZERO).unwrap();
        assert!(a == ZERO && b == ZERO);
        let s = C64::new(0.7, -1.3);
        let (a, b) = match_modes(&pair, s).unwrap();
        assert_eq!(a + b, ZERO);
        let v0 = a * pair.slow.phi.values[0] + b * pair.fast.phi.values[0];
        let d0 = a * pair.slopes.0 + b * pair.slopes.1;
        assert!(v0.norm() < 1e-10);
        assert!((d0 + s).norm() < 1e-10 * s.norm());
    }

    #[test]
    fn theta_range_is_enforced() {
        assert!(FastModeConfig::new(0.2).is_err());
        assert!(FastModeConfig::new(0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn matching_sums_to_zero(re in -5.0f64..5.0, im in -5.0f64..5.0, gr in 1.0f64..50.0) {
            let dummy = ModeSolution::from_values(&make_grid(40, 10.0, Stretch::Uniform).unwrap(), 1.0, vec![ONE; 40], 0.0);
            let pair = ModePair {
                slow: dummy.clone(),
                fast: dummy,
                slopes: (C64::new(-1.0, 0.0), C64::new(-gr, gr)),
                wronskian_gap: C64::new(1.0 - gr, gr),
            };
            let s = C64::new(re, im);
            let (a, b) = match_modes(&pair, s).unwrap();
            prop_assert!(a + b == ZERO);
            prop_assert!((a * pair.slopes.0 + b * pair.slopes.1 + s).norm() < 1e-12 * (1.0 + s.norm()));
        }
    }
}
