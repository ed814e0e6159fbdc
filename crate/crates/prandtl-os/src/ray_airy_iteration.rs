// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Alternating Airy/Rayleigh series for the modified Orr-Sommerfeld problem
//! `mOS(phi) = h`, `phi(0) = 0`.
//!
//! Starting from the Rayleigh solution `phi^(0)`, each step solves
//! `-eps psi'' + (V - c_eps) psi = eps (phi^(k-1))''` with Dirichlet data,
//! forms `h^(k) = 2 (V' psi^(k))'` and sets `phi^(k) = Phi_Ray[h^(k)]`.
//! The discrete commutator makes the telescoping exact, so the residual of
//! the partial sum is `eps L D2 phi^(K)` for the last Rayleigh iterate.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::halfline_grid::{Banded, BandedLu};
use crate::os_core::{ModeSolution, OsContext, SpectralParams};
use crate::C64;

#[derive(Clone, Copy, Debug)]
pub struct IterationConfig {
    pub tol: f64,
    pub k_cap: usize,
    pub safety: f64,
    /// Strong concavity: drops the `|eps|/(Im c_eps)^{7/2}` term from `B_1`.
    pub strong: bool,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self { tol: 1e-8, k_cap: 40, safety: 10.0, strong: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationStep {
    pub k: usize,
    /// `(||psi||, ||psi'||, ||psi''||)`.
    pub psi: (f64, f64, f64),
    /// `||(D^2 - alpha^2) phi^(k)||`.
    pub lphi: f64,
    /// `||(D^2 - alpha^2) (psi^(k) + phi^(k))||`.
    pub increment: f64,
    /// `lphi_k / lphi_{k-1}`.
    pub ratio: f64,
    /// `||psi^(k)|| <= 1.05 |eps|/Im c_eps ||(phi^(k-1))''||`.
    pub airy_bound_ok: bool,
}

#[derive(Clone, Debug, Default)]
pub struct IterationTrace {
    pub steps: Vec<IterationStep>,
    pub predicted_b1: f64,
    pub converged: bool,
    /// Geometric tail certificate `r/(1-r) * last increment`.
    pub tail_bound: f64,
}

impl IterationTrace {
    pub fn k_max(&self) -> usize {
        self.steps.len()
    }

    /// Largest step ratio after the first step.
    pub fn observed_ratio(&self) -> f64 {
        self.steps.iter().skip(1).map(|s| s.ratio).fold(0.0, f64::max)
    }

    /// Ratio bounded by `safety * B_1`.
    pub fn within_safety(&self, safety: f64) -> bool {
        !self.converged || self.observed_ratio() <= safety * self.predicted_b1
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "psi", "dpsi", "d2psi", "lphi", "increment", "ratio", "b1"])?;
        for s in &self.steps {
            w.write_record([
                s.k.to_string(),
                format!("{:.16e}", s.psi.0),
                format!("{:.16e}", s.psi.1),
                format!("{:.16e}", s.psi.2),
                format!("{:.16e}", s.lphi),
                format!("{:.16e}", s.increment),
                format!("{:.16e}", s.ratio),
                format!("{:.16e}", self.predicted_b1),
            ])?;
        }
        w.flush().map_err(Error::Io)?;
        Ok(())
    }
}

/// `B_1 = |eps|/(Im c_eps)^{7/2} + |eps|^{1/2}/(Im c_eps)^{3/2}` with unit constant.
pub fn predicted_b1(sp: &SpectralParams, strong: bool) -> f64 {
    let e = sp.eps().norm();
    let im = sp.c_eps().im;
    let tail = e.sqrt() / im.powf(1.5);
    if strong {
        tail
    } else {
        e / im.powf(3.5) + tail
    }
}

fn lap(ctx: &OsContext, x: &[C64]) -> Vec<C64> {
    let a2 = ctx.alpha().powi(2);
    let d2 = ctx.grid.d2().apply(x);
    d2.iter().zip(x).map(|(d, v)| d - v * a2).collect()
}

/// Sums the series for `phi^(1)` given the Rayleigh iterate `phi0`.
pub fn iterate_mos(ctx: &OsContext, phi0: &[C64], cfg: &IterationConfig) -> Result<(Vec<C64>, IterationTrace)> {
    let g = &ctx.grid;
    let n = ctx.len();
    let eps = ctx.sp.eps();
    let im = ctx.sp.c_eps().im;
    if !(im > 0.0) {
        return Err(Error::invalid(format!("Im c_eps = {im:.3e} must be positive")));
    }
    let mut trace = IterationTrace { predicted_b1: predicted_b1(&ctx.sp, cfg.strong), ..Default::default() };
    let mut sum = vec![C64::new(0.0, 0.0); n];
    let mut d2prev = g.d2().apply(phi0);
    if g.norm(&d2prev) == 0.0 {
        trace.converged = true;
        return Ok((sum, trace));
    }
    let airy = ctx.airy()?;
    let ray = ctx.rayleigh()?;
    let mut lprev = g.norm(&lap(ctx, phi0));
    let mut first_inc = 0.0;
    let mut rising = 0;
    for k in 1..=cfg.k_cap {
        let src: Vec<C64> = d2prev.iter().map(|v| v * eps).collect();
        let (psi, _) = airy.solve_raw(&src);
        let h = ctx.commutator(&psi);
        let (phi, _) = ray.solve_raw(&h, C64::new(0.0, 0.0));
        let dpsi = g.d1().apply(&psi);
        let d2psi = g.d2().apply(&psi);
        let lphi = g.norm(&lap(ctx, &phi));
        let inc: Vec<C64> = psi.iter().zip(&phi).map(|(a, b)| a + b).collect();
        let inc_norm = g.norm(&lap(ctx, &inc));
        let psi_norm = g.norm(&psi);
        let bound = eps.norm() / im * g.norm(&d2prev);
        let ratio = lphi / lprev;
        if !ratio.is_finite() || !inc_norm.is_finite() {
            return Err(Error::Divergence(format!("non-finite iterate at step {k}")));
        }
        trace.steps.push(IterationStep {
            k,
            psi: (psi_norm, g.norm(&dpsi), g.norm(&d2psi)),
            lphi,
            increment: inc_norm,
            ratio,
            airy_bound_ok: psi_norm <= 1.05 * bound,
        });
        for i in 0..n {
            sum[i] += inc[i];
        }
        if k == 1 {
            first_inc = inc_norm;
        }
        rising = if ratio > 1.0 { rising + 1 } else { 0 };
        if rising >= 3 {
            return Err(Error::Divergence(format!(
                "step ratio above 1 for 3 consecutive steps (last {ratio:.3e}, predicted B1 {:.3e})",
                trace.predicted_b1
            )));
        }
        if inc_norm <= cfg.tol * first_inc || lphi == 0.0 {
            trace.converged = true;
            let r = ratio.min(0.999);
            trace.tail_bound = r / (1.0 - r) * inc_norm;
            break;
        }
        d2prev = g.d2().apply(&phi);
        lprev = lphi;
    }
    Ok((sum, trace))
}

/// 2x2 block matrix with interleaved unknowns (`2i` first block, `2i+1` second).
fn interleave(blocks: [[&Banded; 2]; 2]) -> Banded {
    let n = blocks[0][0].n;
    let b = blocks.iter().flatten().map(|m| m.kl.max(m.ku)).max().unwrap_or(0);
    let w = (2 * b + 1).min(2 * n - 1);
    let mut out = Banded::zeros(2 * n, w, w);
    for (r, row) in blocks.iter().enumerate() {
        for (c, m) in row.iter().enumerate() {
            for i in 0..n {
                let (lo, hi) = m.row_range(i);
                for j in lo..hi {
                    let v = m.get(i, j);
                    if v != C64::new(0.0, 0.0) {
                        out.add_to(2 * i + r, 2 * j + c, v);
                    }
                }
            }
        }
    }
    out
}

/// Limit of the series by one direct solve of the coupled discrete system
/// `M_A Psi = R_A eps D2 (phi0 + Phi)`, `M_R Phi = R_R (comm Psi / (V - c_eps))`.
/// Agrees with [`iterate_mos`] whenever the series converges.
pub fn solve_coupled(ctx: &OsContext, phi0: &[C64]) -> Result<Vec<C64>> {
    let n = ctx.len();
    let airy = ctx.airy()?;
    let ray = ctx.rayleigh()?;
    let d2 = ctx.grid.d2();
    let ra = airy.sys.rhs_matrix();
    let rr = ray.sys.rhs_matrix();
    let eps = ctx.sp.eps();
    let off_a = ra.matmul(d2).scaled(-eps);
    let v: Vec<C64> = ctx.vs.v.iter().map(|&x| C64::new(x, 0.0)).collect();
    let d2v: Vec<C64> = ctx.vs.d2v.iter().map(|&x| C64::new(x, 0.0)).collect();
    let vneg: Vec<C64> = v.iter().map(|x| -x).collect();
    let comm = d2.matmul(&Banded::diag(&v)).add_scaled(&d2.scale_rows(&vneg), C64::new(1.0, 0.0)).add_scaled(&Banded::diag(&d2v), C64::new(1.0, 0.0));
    let off_r = rr.matmul(&comm.scale_rows(&ray.inv_vc)).scaled(C64::new(-1.0, 0.0));
    let big = interleave([[&airy.matrix, &off_a], [&off_r, &ray.matrix]]);
    let lu = BandedLu::factor(&big)?;
    let src = ra.apply(&d2.apply(phi0));
    let mut rhs = vec![C64::new(0.0, 0.0); 2 * n];
    for i in 0..n {
        rhs[2 * i] = src[i] * eps;
    }
    let x = lu.solve(&rhs);
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Singular("coupled Airy-Rayleigh system".into()));
    }
    Ok((0..n).map(|i| x[2 * i] + x[2 * i + 1]).collect())
}

/// `Phi_mOS[h] = Phi_Ray[h] + phi^(1)` with its residual and trace.
pub fn build_phi_mos(ctx: &OsContext, h: &[C64], cfg: &IterationConfig) -> Result<(ModeSolution, IterationTrace)> {
    let g = &ctx.grid;
    if h.iter().all(|v| *v == C64::new(0.0, 0.0)) {
        let z = vec![C64::new(0.0, 0.0); ctx.len()];
        return Ok((ModeSolution::from_values(g, ctx.alpha(), z, 0.0), IterationTrace { converged: true, ..Default::default() }));
    }
    let (phi0, _) = ctx.rayleigh()?.solve_raw(h, C64::new(0.0, 0.0));
    let (phi1, trace) = iterate_mos(ctx, &phi0, cfg)?;
    let total: Vec<C64> = phi0.iter().zip(&phi1).map(|(a, b)| a + b).collect();
    let res = ctx.mos_residual(&total, h);
    let mut m = ModeSolution::from_values(g, ctx.alpha(), total, res);
    m.diagnostics.push(("coupled".into(), 0.0));
    m.diagnostics.push(("iterations".into(), trace.k_max() as f64));
    m.diagnostics.push(("observed_ratio".into(), trace.observed_ratio()));
    m.diagnostics.push(("predicted_b1".into(), trace.predicted_b1));
    Ok((m, trace))
}

/// [`build_phi_mos`], falling back to [`solve_coupled`] when the series
/// diverges (diagnostic `coupled = 1`).
pub fn build_phi_mos_robust(ctx: &OsContext, h: &[C64], cfg: &IterationConfig) -> Result<(ModeSolution, IterationTrace)> {
    match build_phi_mos(ctx, h, cfg) {
        Err(Error::Divergence(msg)) => {
            let (phi0, _) = ctx.rayleigh()?.solve_raw(h, C64::new(0.0, 0.0));
            let phi1 = solve_coupled(ctx, &phi0)?;
            let total: Vec<C64> = phi0.iter().zip(&phi1).map(|(a, b)| a + b).collect();
            let res = ctx.mos_residual(&total, h);
            let mut m = ModeSolution::from_values(&ctx.grid, ctx.alpha(), total, res);
            m.diagnostics.push(("coupled".into(), 1.0));
            let trace = IterationTrace { predicted_b1: predicted_b1(&ctx.sp, cfg.strong), ..Default::default() };
            let _ = msg;
            Ok((m, trace))
        }
        other => other,
    }
}

/// Writes `k, ratio` pairs to any writer (for quick logs).
pub fn log_trace<W: Write>(mut w: W, t: &IterationTrace) -> std::io::Result<()> {
    for s in &t.steps {
        writeln!(w, "{} {:.6e} {:.6e}", s.k, s.ratio, s.increment)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halfline_grid::{make_grid, HalfLineGrid, Stretch};
    use crate::profiles::build_profile;
    use proptest::prelude::*;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn grid(n: usize) -> Arc<HalfLineGrid> {
        Arc::new(make_grid(n, 40.0, Stretch::Tanh { beta: 3.0 }).unwrap())
    }

    fn ctx(sp: SpectralParams, n: usize) -> OsContext {
        let p = build_profile("exp", &BTreeMap::new()).unwrap();
        OsContext::new(&p, sp, grid(n))
    }

    fn source(g: &HalfLineGrid) -> Vec<C64> {
        g.sample(|y| C64::new(y * (-y).exp(), 0.5 * y * y * (-0.7 * y).exp()))
    }

    #[test]
    fn zero_input_gives_zero_series() {
        let sp = SpectralParams::on_stability_line(64, 1e-4, 2.0 / 3.0, 0.05, 0.3).unwrap();
        let c = ctx(sp, 300);
        let (s, t) = iterate_mos(&c, &vec![C64::new(0.0, 0.0); c.len()], &IterationConfig::default()).unwrap();
        assert!(t.converged && t.k_max() == 0);
        assert!(s.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn stability_line_series_converges() {
        let sp = SpectralParams::on_stability_line(64, 1e-4, 2.0 / 3.0, 0.05, 0.3).unwrap();
        let c = ctx(sp, 600);
        let h = source(&c.grid);
        let cfg = IterationConfig { strong: true, ..Default::default() };
        let (m, t) = build_phi_mos(&c, &h, &cfg).unwrap();
        assert!(t.converged, "{:?}", t.steps);
        assert!(t.steps.iter().all(|s| s.ratio < 1.0));
        assert!(t.steps.iter().all(|s| s.airy_bound_ok));
        assert!(t.within_safety(cfg.safety));
        assert!(m.residual < 1e-6, "residual {}", m.residual);
        assert_eq!(m.phi.values[0], C64::new(0.0, 0.0));
    }

    #[test]
    fn broken_regime_diverges() {
        // gamma = 1/2 with a large eps: B1 well above 1.
        let sp = SpectralParams::new(2, 1e-2, 0.5, 1.0, C64::new(0.3, 0.06)).unwrap();
        assert!(predicted_b1(&sp, false) > 1.0);
        let c = ctx(sp, 600);
        let h = source(&c.grid);
        let (phi0, _) = c.rayleigh().unwrap().solve_raw(&h, C64::new(0.0, 0.0));
        let r = iterate_mos(&c, &phi0, &IterationConfig::default());
        assert!(matches!(r, Err(Error::Divergence(_))), "{:?}", r.map(|x| x.1.steps));
    }

    #[test]
    fn coupled_solve_matches_series() {
        let sp = SpectralParams::on_stability_line(64, 1e-4, 2.0 / 3.0, 0.05, 0.3).unwrap();
        let c = ctx(sp, 400);
        let h = source(&c.grid);
        let (phi0, _) = c.rayleigh().unwrap().solve_raw(&h, C64::new(0.0, 0.0));
        let (s1, _) = iterate_mos(&c, &phi0, &IterationConfig { tol: 1e-13, ..Default::default() }).unwrap();
        let s2 = solve_coupled(&c, &phi0).unwrap();
        let d: Vec<C64> = s1.iter().zip(&s2).map(|(a, b)| a - b).collect();
        assert!(c.grid.norm(&d) < 1e-9 * c.grid.norm(&s1), "{} {}", c.grid.norm(&d), c.grid.norm(&s1));
    }

    #[test]
    fn robust_build_recovers_from_divergence() {
        let sp = SpectralParams::new(2, 1e-2, 0.5, 1.0, C64::new(0.3, 0.06)).unwrap();
        let c = ctx(sp, 600);
        let h = source(&c.grid);
        let (m, _) = build_phi_mos_robust(&c, &h, &IterationConfig::default()).unwrap();
        assert_eq!(m.diagnostic("coupled"), Some(1.0));
        assert!(m.residual < 1e-6, "residual {}", m.residual);
    }

    #[test]
    fn b1_against_direct_formula() {
        let sp = SpectralParams::on_stability_line(128, 1e-5, 2.0 / 3.0, 0.05, 0.1).unwrap();
        let e = 1.0 / 128.0;
        let im = sp.c_eps().im;
        let b = e / im.powf(3.5) + e.sqrt() / im.powf(1.5);
        assert!((predicted_b1(&sp, false) - b).abs() < 1e-15 * b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn partial_sum_residual_is_telescoped(re_c in 0.05f64..0.8, nexp in 5u32..8) {
            let sp = SpectralParams::on_stability_line(1 << nexp, 1e-4, 2.0 / 3.0, 0.05, re_c).unwrap();
            let c = ctx(sp, 300);
            let h = source(&c.grid);
            let (m, t) = build_phi_mos(&c, &h, &IterationConfig { strong: true, ..Default::default() }).unwrap();
            prop_assert!(t.converged);
            prop_assert!(m.residual < 1e-6);
            prop_assert!(t.tail_bound <= 1e-6 * t.steps[0].increment.max(1e-300));
        }
    }
}
