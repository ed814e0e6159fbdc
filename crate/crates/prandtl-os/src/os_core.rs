// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Spectral parameters and the three basic boundary-value problems:
//! Rayleigh, the Airy-type equation and the modified Orr-Sommerfeld operator,
//! plus the `Phi_0` problem. Energy identities are evaluated on every solve.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::halfline_grid::{
    relative_residual, Banded, BandedLu, ComplexField, ConstrainedSystem, Constraint, HalfLineGrid, LeftBc,
    RightBc,
};
use crate::profiles::{ShearProfile, VSamples};
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// `(n, nu, gamma, delta, c)` and the derived `alpha`, `epsilon`, `c_eps`, `mu`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralParams {
    pub n: i64,
    pub nu: f64,
    pub gamma: f64,
    pub delta: f64,
    pub c: C64,
}

impl SpectralParams {
    pub fn new(n: i64, nu: f64, gamma: f64, delta: f64, c: C64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("Fourier index must be nonzero"));
        }
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Error::invalid(format!("viscosity must lie in (0, 1], got {nu}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        if !(delta > 0.0) {
            return Err(Error::invalid("delta must be positive"));
        }
        if !c.re.is_finite() || !c.im.is_finite() {
            return Err(Error::invalid("phase speed must be finite"));
        }
        Ok(Self { n, nu, gamma, delta, c })
    }

    /// Parameters with `Im c = n^{gamma-1} / delta`, i.e. `Re mu` on the stability line.
    pub fn on_stability_line(n: i64, nu: f64, gamma: f64, delta: f64, re_c: f64) -> Result<Self> {
        let im = (n.unsigned_abs() as f64).powf(gamma - 1.0) / delta;
        Self::new(n, nu, gamma, delta, C64::new(re_c, im))
    }

    /// Parameters from the resolvent variable, `c = i mu / alpha`.
    pub fn from_mu(n: i64, nu: f64, gamma: f64, delta: f64, mu: C64) -> Result<Self> {
        let alpha = n.unsigned_abs() as f64 * nu.sqrt();
        Self::new(n, nu, gamma, delta, I * mu / alpha)
    }

    pub fn n_abs(&self) -> f64 {
        self.n.unsigned_abs() as f64
    }

    pub fn alpha(&self) -> f64 {
        self.n_abs() * self.nu.sqrt()
    }

    pub fn eps(&self) -> C64 {
        C64::new(0.0, -1.0 / self.n_abs())
    }

    pub fn c_eps(&self) -> C64 {
        let a = self.alpha();
        self.c - self.eps() * a * a
    }

    pub fn mu(&self) -> C64 {
        -I * self.alpha() * self.c
    }

    /// `Re mu / (nu^{1/2} n^gamma / delta)`; at least 1 on or above the stability line.
    pub fn stability_margin(&self) -> f64 {
        self.mu().re * self.delta / (self.nu.sqrt() * self.n_abs().powf(self.gamma))
    }

    pub fn with_c(&self, c: C64) -> Self {
        Self { c, ..*self }
    }
}

/// Thresholds used by the resolvent and semigroup estimates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdSet {
    pub delta0: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta1_prime: f64,
    pub delta_star: f64,
    pub delta_2star: f64,
}

impl ThresholdSet {
    /// `delta0`, `delta1` from the profile norms; the rest default to 0.05.
    pub fn from_profile(p: &ShearProfile) -> Self {
        let delta0 = 1.0 / (2.0 * (1.0 + p.outer.d_norm() + p.sup_du()).sqrt());
        let delta1 = 1.0 / (32.0 * (1.0 + p.outer.c2_norm() + p.norm_u()));
        Self { delta0, delta1, delta2: 0.05, delta1_prime: delta1, delta_star: 0.05, delta_2star: 0.05 }
    }
}

/// Pair `(f1, f2)`; the stream-function source is `h = -f2 + (1/(i alpha)) f1'`.
#[derive(Clone, Debug)]
pub struct Forcing {
    pub f1: Vec<C64>,
    pub f2: Vec<C64>,
}

impl Forcing {
    pub fn zeros(n: usize) -> Self {
        Self { f1: vec![ZERO; n], f2: vec![ZERO; n] }
    }

    pub fn source(&self, g: &HalfLineGrid, alpha: f64) -> Vec<C64> {
        let d = g.d1().apply(&self.f1);
        let s = ONE / (I * alpha);
        d.iter().zip(&self.f2).map(|(a, b)| -b + s * a).collect()
    }

    pub fn norm(&self, g: &HalfLineGrid) -> f64 {
        (g.norm(&self.f1).powi(2) + g.norm(&self.f2).powi(2)).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.f1.iter().chain(&self.f2).all(|v| *v == ZERO)
    }
}

/// A solved field with derivatives and diagnostics.
#[derive(Clone, Debug)]
pub struct ModeSolution {
    pub phi: ComplexField,
    pub dphi: Vec<C64>,
    pub d2phi: Vec<C64>,
    /// Relative residual of the solve (or of the operator equation it targets).
    pub residual: f64,
    pub boundary_slope: C64,
    /// `(||phi'||, alpha ||phi||, ||(D^2 - alpha^2) phi||)`.
    pub norms: (f64, f64, f64),
    pub diagnostics: Vec<(String, f64)>,
}

impl ModeSolution {
    pub fn from_values(g: &HalfLineGrid, alpha: f64, values: Vec<C64>, residual: f64) -> Self {
        let dphi = g.d1().apply(&values);
        let d2phi = g.d1().apply(&dphi);
        let l: Vec<C64> = d2phi.iter().zip(&values).map(|(a, b)| a - b * alpha * alpha).collect();
        let norms = (g.norm(&dphi), alpha * g.norm(&values), g.norm(&l));
        let boundary_slope = dphi[0];
        Self {
            phi: ComplexField::new(values),
            dphi,
            d2phi,
            residual,
            boundary_slope,
            norms,
            diagnostics: Vec::new(),
        }
    }

    pub fn diagnostic(&self, key: &str) -> Option<f64> {
        self.diagnostics.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn velocity_norm(&self) -> f64 {
        (self.norms.0.powi(2) + self.norms.1.powi(2)).sqrt()
    }
}

/// Discretized coefficients for one `(profile, params, grid)` triple, with
/// lazily factored Rayleigh and Airy solvers.
pub struct OsContext {
    pub grid: Arc<HalfLineGrid>,
    pub sp: SpectralParams,
    pub vs: VSamples,
    /// `V - c_eps`.
    pub vc: Vec<C64>,
    ray: OnceLock<std::result::Result<RayleighSolver, String>>,
    airy: OnceLock<std::result::Result<AirySolver, String>>,
}

/// Smallest admissible `Im c_eps` on this grid: three cells times `max |V'|`.
pub fn singularity_floor(g: &HalfLineGrid, vs: &VSamples) -> f64 {
    3.0 * g.min_spacing() * vs.dv.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

impl OsContext {
    pub fn new(p: &ShearProfile, sp: SpectralParams, grid: Arc<HalfLineGrid>) -> Self {
        let vs = p.sample_grid(sp.nu, &grid);
        Self::from_samples(vs, sp, grid)
    }

    pub fn from_samples(vs: VSamples, sp: SpectralParams, grid: Arc<HalfLineGrid>) -> Self {
        let ce = sp.c_eps();
        let vc = vs.v.iter().map(|&v| C64::new(v, 0.0) - ce).collect();
        Self { grid, sp, vs, vc, ray: OnceLock::new(), airy: OnceLock::new() }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.sp.alpha()
    }

    fn check_critical_layer(&self) -> Result<()> {
        let floor = singularity_floor(&self.grid, &self.vs);
        let im = self.sp.c_eps().im;
        if !(im >= floor) {
            return Err(Error::Singular(format!(
                "Im c_eps = {im:.3e} below the critical-layer floor {floor:.3e}"
            )));
        }
        Ok(())
    }

    /// `L_d = D2 - alpha^2`.
    pub fn laplacian(&self) -> Banded {
        let a2 = self.alpha().powi(2);
        self.grid.d2().add_scaled(&Banded::identity(self.len()), C64::new(-a2, 0.0))
    }

    /// `-eps L_d D2 + diag(V - c_eps) L_d - diag(V'')`.
    pub fn mos_matrix(&self) -> Banded {
        let l = self.laplacian();
        let ld2 = l.matmul(self.grid.d2());
        let ray = self.rayleigh_matrix();
        ray.add_scaled(&ld2, -self.sp.eps())
    }

    /// `diag(V - c_eps) L_d - diag(V'')`.
    pub fn rayleigh_matrix(&self) -> Banded {
        let l = self.laplacian();
        let a = l.scale_rows(&self.vc);
        let d2v: Vec<C64> = self.vs.d2v.iter().map(|&x| C64::new(-x, 0.0)).collect();
        a.add_scaled(&Banded::diag(&d2v), ONE)
    }

    /// `-eps D2 + diag(V - c_eps)`.
    pub fn airy_matrix(&self) -> Banded {
        self.grid.d2().scaled(-self.sp.eps()).add_scaled(&Banded::diag(&self.vc), ONE)
    }

    pub fn mos_apply(&self, phi: &[C64]) -> Vec<C64> {
        let d2 = self.grid.d2();
        let a2 = self.alpha().powi(2);
        let p2 = d2.apply(phi);
        let lp: Vec<C64> = p2.iter().zip(phi).map(|(a, b)| a - b * a2).collect();
        let p4 = d2.apply(&p2);
        let eps = self.sp.eps();
        (0..phi.len())
            .map(|i| -eps * (p4[i] - p2[i] * a2) + self.vc[i] * lp[i] - phi[i] * self.vs.d2v[i])
            .collect()
    }

    /// Commutator `D2(V psi) - V D2 psi + V'' psi`, the discrete `2 (V' psi)'`.
    pub fn commutator(&self, psi: &[C64]) -> Vec<C64> {
        let d2 = self.grid.d2();
        let vpsi: Vec<C64> = psi.iter().zip(&self.vs.v).map(|(p, v)| p * *v).collect();
        let a = d2.apply(&vpsi);
        let b = d2.apply(psi);
        (0..psi.len()).map(|i| a[i] - b[i] * self.vs.v[i] + psi[i] * self.vs.d2v[i]).collect()
    }

    /// Rows `[12, N-13]`, beyond the reach of the boundary closures of `D2 D2`.
    pub fn interior_mask(&self) -> Vec<bool> {
        let n = self.len();
        (0..n).map(|i| i >= 12 && i + 13 <= n).collect()
    }

    /// `||mOS(phi) - h||` on interior rows, relative to `||h||` there
    /// (or to `||mOS(phi)||` when `h` vanishes).
    pub fn mos_residual(&self, phi: &[C64], h: &[C64]) -> f64 {
        let m = self.mos_apply(phi);
        let mask = self.interior_mask();
        let r: Vec<C64> = m.iter().zip(h).map(|(a, b)| a - b).collect();
        let num = self.grid.norm_masked(&r, &mask);
        let den = self.grid.norm_masked(h, &mask).max(self.grid.norm_masked(&m, &mask));
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    /// `||mOS(phi)||` on interior rows relative to the sum of the moduli of
    /// its three terms, for homogeneous problems.
    pub fn mos_residual_homogeneous(&self, phi: &[C64]) -> f64 {
        let g = &self.grid;
        let a2 = self.alpha().powi(2);
        let p2 = g.d2().apply(phi);
        let lp: Vec<C64> = p2.iter().zip(phi).map(|(a, b)| a - b * a2).collect();
        let p4 = g.d2().apply(&p2);
        let e = self.sp.eps();
        let mut num = Vec::with_capacity(phi.len());
        let mut den = Vec::with_capacity(phi.len());
        for i in 0..phi.len() {
            let t1 = -e * (p4[i] - p2[i] * a2);
            let t2 = self.vc[i] * lp[i];
            let t3 = -phi[i] * self.vs.d2v[i];
            num.push(t1 + t2 + t3);
            den.push(C64::new(t1.norm() + t2.norm() + t3.norm(), 0.0));
        }
        let mask = self.interior_mask();
        let d = g.norm_masked(&den, &mask);
        if d == 0.0 {
            0.0
        } else {
            g.norm_masked(&num, &mask) / d
        }
    }

    pub fn rayleigh(&self) -> Result<&RayleighSolver> {
        self.ray
            .get_or_init(|| RayleighSolver::new(self).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Singular(e.clone()))
    }

    pub fn airy(&self) -> Result<&AirySolver> {
        self.airy
            .get_or_init(|| AirySolver::new(self).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Singular(e.clone()))
    }

    /// Outflow conditions at `Y_max` for the fourth-order problem:
    /// `phi' + alpha phi = 0` and `phi'' + alpha phi' = 0`.
    pub fn decay_constraints(&self) -> Vec<Constraint> {
        let n = self.len();
        let a = C64::new(self.alpha(), 0.0);
        let d1 = self.grid.d1();
        let d2a = self.grid.d2().add_scaled(d1, a);
        vec![
            Constraint::from_row(n - 2, d1, n - 1, a, ZERO),
            Constraint::from_row(n - 1, &d2a, n - 1, ZERO, ZERO),
        ]
    }

    /// `phi(0) = phi'(0) = 0`.
    pub fn clamped_constraints(&self) -> Vec<Constraint> {
        vec![Constraint::dirichlet(0, ZERO), Constraint::from_row(1, self.grid.d1(), 0, ZERO, ZERO)]
    }
}

/// Factored Rayleigh problem in divided form
/// `L_d phi - V'' phi / (V - c_eps) = h / (V - c_eps)`,
/// Dirichlet at `Y = 0`, `phi' + alpha phi = 0` at `Y_max`.
pub struct RayleighSolver {
    pub(crate) sys: ConstrainedSystem,
    pub(crate) matrix: Banded,
    lu: BandedLu,
    pub(crate) inv_vc: Vec<C64>,
    kern: Vec<C64>,
}

impl RayleighSolver {
    fn new(ctx: &OsContext) -> Result<Self> {
        ctx.check_critical_layer()?;
        let n = ctx.len();
        let inv_vc: Vec<C64> = ctx.vc.iter().map(|v| ONE / v).collect();
        let kern: Vec<C64> = inv_vc.iter().zip(&ctx.vs.d2v).map(|(iv, d)| iv * *d).collect();
        let neg: Vec<C64> = kern.iter().map(|k| -k).collect();
        let op = ctx.laplacian().add_scaled(&Banded::diag(&neg), ONE);
        let a = C64::new(ctx.alpha(), 0.0);
        let cons = vec![Constraint::dirichlet(0, ZERO), Constraint::from_row(n - 1, ctx.grid.d1(), n - 1, a, ZERO)];
        let mut sys = ConstrainedSystem::new(&ctx.grid.weights, cons)?;
        let matrix = sys.assemble(&op, true);
        let lu = BandedLu::factor(&matrix)?;
        Ok(Self { sys, matrix, lu, inv_vc, kern })
    }

    /// Raw solve; returns the field and the relative residual of the square system.
    pub fn solve_raw(&self, h: &[C64], bc0: C64) -> (Vec<C64>, f64) {
        let q: Vec<C64> = h.iter().zip(&self.inv_vc).map(|(a, b)| a * b).collect();
        let rhs = self.sys.rhs_with_values(&q, &[bc0, ZERO]);
        let x = self.lu.solve(&rhs);
        let res = if rhs.iter().all(|v| *v == ZERO) { 0.0 } else { relative_residual(&self.matrix, &x, &rhs) };
        (x, res)
    }

    /// The two Rayleigh identities, as relative defects `(real, imaginary)`.
    pub fn identities(&self, ctx: &OsContext, phi: &[C64], h: &[C64]) -> (f64, f64) {
        let g = &ctx.grid;
        let n = phi.len();
        let a = ctx.alpha();
        let dphi = g.d1().apply(phi);
        let ce = ctx.sp.c_eps();
        let q: Vec<C64> = h.iter().zip(&self.inv_vc).map(|(x, y)| x * y).collect();
        let rhs = g.inner(&q, phi);
        let d2 = g.norm(&dphi).powi(2);
        let p2 = g.norm(phi).powi(2);
        let mut kre = 0.0;
        let mut kim = 0.0;
        for i in 0..n {
            let m = phi[i].norm_sqr() / ctx.vc[i].norm_sqr();
            kre += g.weights[i] * ctx.vs.d2v[i] * (ctx.vs.v[i] - ce.re) * m;
            kim += g.weights[i] * ctx.vs.d2v[i] * m;
        }
        // Boundary term at Y = 0 for inhomogeneous data.
        let b0 = dphi[0] * phi[0].conj();
        let bn = a * phi[n - 1].norm_sqr();
        let lhs_re = -d2 - a * a * p2 - bn - b0.re - kre;
        let scale_re = d2 + a * a * p2 + bn + b0.norm() + kre.abs() + rhs.re.abs();
        let def_re = (lhs_re - rhs.re).abs() / scale_re.max(f64::MIN_POSITIVE);
        let lhs_im = ce.im * kim + rhs.im + b0.im;
        let scale_im = (ce.im * kim).abs() + rhs.im.abs() + b0.im.abs();
        let def_im = lhs_im.abs() / scale_im.max(f64::MIN_POSITIVE);
        let _ = &self.kern;
        (def_re, def_im)
    }
}

/// Factored `-eps psi'' + (V - c_eps) psi = h`, `psi = 0` at both ends.
pub struct AirySolver {
    pub(crate) matrix: Banded,
    lu: BandedLu,
    pub(crate) sys: ConstrainedSystem,
}

impl AirySolver {
    fn new(ctx: &OsContext) -> Result<Self> {
        ctx.check_critical_layer()?;
        let n = ctx.len();
        let cons = vec![Constraint::dirichlet(0, ZERO), Constraint::dirichlet(n - 1, ZERO)];
        let mut sys = ConstrainedSystem::new(&ctx.grid.weights, cons)?;
        let matrix = sys.assemble(&ctx.airy_matrix(), true);
        let lu = BandedLu::factor(&matrix)?;
        Ok(Self { matrix, lu, sys })
    }

    pub fn solve_raw(&self, h: &[C64]) -> (Vec<C64>, f64) {
        let rhs = self.sys.rhs(h);
        let x = self.lu.solve(&rhs);
        let res = if rhs.iter().all(|v| *v == ZERO) { 0.0 } else { relative_residual(&self.matrix, &x, &rhs) };
        (x, res)
    }

    /// Relative defect of `(1/n)||psi'||^2 + Im c_eps ||psi||^2 + Im <h, psi> = 0`.
    pub fn identity(ctx: &OsContext, psi: &[C64], h: &[C64]) -> f64 {
        let g = &ctx.grid;
        let dpsi = g.d1().apply(psi);
        let a = g.norm(&dpsi).powi(2) / ctx.sp.n_abs();
        let b = ctx.sp.c_eps().im * g.norm(psi).powi(2);
        let c = g.inner(h, psi).im;
        let scale = a + b.abs() + c.abs();
        if scale == 0.0 {
            0.0
        } else {
            (a + b + c).abs() / scale
        }
    }
}

/// Rayleigh solve with Dirichlet value `bc0` at the wall and decay at `Y_max`.
pub fn solve_rayleigh(
    p: &ShearProfile,
    sp: &SpectralParams,
    g: Arc<HalfLineGrid>,
    h: &ComplexField,
    bc0: C64,
) -> Result<ModeSolution> {
    let ctx = OsContext::new(p, *sp, g);
    rayleigh_mode(&ctx, &h.values, bc0)
}

pub fn rayleigh_mode(ctx: &OsContext, h: &[C64], bc0: C64) -> Result<ModeSolution> {
    let solver = ctx.rayleigh()?;
    let (x, res) = solver.solve_raw(h, bc0);
    let (dre, dim) = solver.identities(ctx, &x, h);
    let mut m = ModeSolution::from_values(&ctx.grid, ctx.alpha(), x, res);
    m.phi.bc_left = LeftBc::Dirichlet;
    m.phi.bc_right = RightBc::Decay;
    m.diagnostics.push(("rayleigh_identity_re".into(), dre));
    m.diagnostics.push(("rayleigh_identity_im".into(), dim));
    Ok(m)
}

/// Airy-type solve `-eps psi'' + (V - c_eps) psi = h`.
pub fn solve_airy_eq(
    p: &ShearProfile,
    sp: &SpectralParams,
    g: Arc<HalfLineGrid>,
    h: &ComplexField,
) -> Result<ModeSolution> {
    let ctx = OsContext::new(p, *sp, g);
    airy_mode(&ctx, &h.values)
}

pub fn airy_mode(ctx: &OsContext, h: &[C64]) -> Result<ModeSolution> {
    let solver = ctx.airy()?;
    let (x, res) = solver.solve_raw(h);
    let id = AirySolver::identity(ctx, &x, h);
    let bound = ctx.grid.norm(&x) * ctx.sp.c_eps().im / ctx.grid.norm(h).max(f64::MIN_POSITIVE);
    let mut m = ModeSolution::from_values(&ctx.grid, ctx.alpha(), x, res);
    m.phi.bc_left = LeftBc::Dirichlet;
    m.phi.bc_right = RightBc::Dirichlet;
    m.diagnostics.push(("airy_identity".into(), id));
    m.diagnostics.push(("airy_bound_ratio".into(), bound));
    Ok(m)
}

/// Applies the modified Orr-Sommerfeld operator.
pub fn mos_apply(p: &ShearProfile, sp: &SpectralParams, g: Arc<HalfLineGrid>, phi: &ComplexField) -> ComplexField {
    let ctx = OsContext::new(p, *sp, g);
    ComplexField::new(ctx.mos_apply(&phi.values))
}

/// The `Phi_0` operator `mOS + U' D1`, written in divergence form.
pub fn phi0_matrix(ctx: &OsContext) -> Banded {
    let du: Vec<C64> = VSamples::complex(&ctx.vs.du);
    ctx.mos_matrix().add_scaled(&ctx.grid.d1().scale_rows(&du), ONE)
}

/// `Phi_0[f]`: clamped at the wall, outflow conditions at `Y_max`.
pub fn solve_phi0(
    p: &ShearProfile,
    sp: &SpectralParams,
    g: Arc<HalfLineGrid>,
    f: &Forcing,
) -> Result<ModeSolution> {
    let ctx = OsContext::new(p, *sp, g);
    phi0_mode(&ctx, f)
}

pub fn phi0_mode(ctx: &OsContext, f: &Forcing) -> Result<ModeSolution> {
    ctx.check_critical_layer()?;
    let g = &ctx.grid;
    let h = f.source(g, ctx.alpha());
    let mut cons = ctx.clamped_constraints();
    cons.extend(ctx.decay_constraints());
    let mut sys = ConstrainedSystem::new(&g.weights, cons)?;
    let op = phi0_matrix(ctx);
    let a = sys.assemble(&op, true);
    let rhs = sys.rhs(&h);
    let lu = BandedLu::factor(&a)?;
    let x = lu.solve(&rhs);
    let res = if f.is_zero() { 0.0 } else { relative_residual(&a, &x, &rhs) };
    let id = phi0_identity(ctx, &x, &h);
    let fnorm = f.norm(g);
    let mut m = ModeSolution::from_values(g, ctx.alpha(), x, res);
    m.phi.bc_left = LeftBc::DirichletNeumann;
    m.phi.bc_right = RightBc::Decay;
    m.diagnostics.push(("phi0_identity".into(), id));
    if fnorm > 0.0 {
        let ratio = (m.norms.0 + m.norms.1) * ctx.alpha() * ctx.sp.c_eps().im / fnorm;
        m.diagnostics.push(("phi0_bound_ratio".into(), ratio));
    }
    Ok(m)
}

/// Relative defect of the imaginary-part energy identity of the `Phi_0`
/// problem, with the outflow boundary terms at `Y_max` kept explicitly.
pub fn phi0_identity(ctx: &OsContext, phi: &[C64], h: &[C64]) -> f64 {
    let g = &ctx.grid;
    let n = phi.len();
    let a2 = ctx.alpha().powi(2);
    let d1 = g.d1();
    let p1 = d1.apply(phi);
    let p2 = d1.apply(&p1);
    let p3 = d1.apply(&p2);
    let bracket = |x: &[C64], y: &[C64]| x[n - 1] * y[n - 1].conj() - x[0] * y[0].conj();
    let b1 = -bracket(&p2, &p1) + bracket(&p3, phi) - bracket(&p1, phi) * a2;
    let vcp1: Vec<C64> = p1.iter().zip(&ctx.vc).map(|(x, y)| x * y).collect();
    let b2 = bracket(&vcp1, phi);
    let outer: Vec<C64> = p1.iter().zip(&ctx.vs.dv_outer).map(|(x, y)| x * *y).collect();
    let nn = ctx.sp.n_abs();
    let im_ce = ctx.sp.c_eps().im;
    let n2 = g.norm(&p2).powi(2);
    let n1 = g.norm(&p1).powi(2);
    let n0 = g.norm(phi).powi(2);
    let terms = [
        (n2 + a2 * n1) / nn,
        b1.re / nn,
        im_ce * (n1 + a2 * n0),
        b2.im,
        -g.inner(&outer, phi).im,
        -g.inner(h, phi).im,
    ];
    let sum: f64 = terms.iter().sum();
    let scale: f64 = terms.iter().map(|t| t.abs()).sum();
    if scale == 0.0 {
        0.0
    } else {
        sum.abs() / scale
    }
}
