// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Shear profiles `U^E`, `U` and the composite `V(Y) = U^E(sqrt(nu) Y) - U^E(0) + U(Y)`,
//! heat-flow evolution of `U`, and concavity / integral-condition certificates.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};
use crate::halfline_grid::HalfLineGrid;
use crate::quad::{gl, panels};
use crate::C64;

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Outer Euler flow `U^E(y) = u0 + slope (1 - e^{-y})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuterFlow {
    pub u0: f64,
    pub slope: f64,
}

impl OuterFlow {
    pub fn constant(u0: f64) -> Self {
        Self { u0, slope: 0.0 }
    }

    /// `[U^E, U^E', U^E'', U^E''']` at `y`.
    pub fn eval(&self, y: f64) -> [f64; 4] {
        let e = (-y).exp();
        [self.u0 + self.slope * (1.0 - e), self.slope * e, -self.slope * e, self.slope * e]
    }

    /// `sup |U^E| + sup |U^E'| + sup |U^E''|`.
    pub fn c2_norm(&self) -> f64 {
        self.u0.abs().max((self.u0 + self.slope).abs()) + 2.0 * self.slope.abs()
    }

    /// `sup |U^E'|`.
    pub fn d_norm(&self) -> f64 {
        self.slope.abs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileKind {
    Exp,
    Erf,
    HeatEvolved,
    Tabulated,
}

impl ProfileKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ProfileKind::Exp => "exp",
            ProfileKind::Erf => "erf",
            ProfileKind::HeatEvolved => "heat-evolved",
            ProfileKind::Tabulated => "tabulated",
        }
    }
}

/// Natural cubic spline.
#[derive(Clone, Debug)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 4 || y.len() != n {
            return Err(Error::invalid("spline needs at least 4 matching samples"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("spline abscissae must increase strictly"));
        }
        // Tridiagonal system for second derivatives, natural ends.
        let mut a = vec![0.0; n];
        let mut b = vec![1.0; n];
        let mut c = vec![0.0; n];
        let mut r = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            a[i] = h0 / 6.0;
            b[i] = (h0 + h1) / 3.0;
            c[i] = h1 / 6.0;
            r[i] = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
        }
        for i in 1..n {
            let w = a[i] / b[i - 1];
            b[i] -= w * c[i - 1];
            r[i] -= w * r[i - 1];
        }
        let mut m = vec![0.0; n];
        m[n - 1] = r[n - 1] / b[n - 1];
        for i in (0..n - 1).rev() {
            m[i] = (r[i] - c[i] * m[i + 1]) / b[i];
        }
        Ok(Self { x: x.to_vec(), y: y.to_vec(), m })
    }

    /// Value and first three derivatives; constant extension to the right.
    pub fn eval(&self, t: f64) -> [f64; 4] {
        let n = self.x.len();
        if t >= self.x[n - 1] {
            return [self.y[n - 1], 0.0, 0.0, 0.0];
        }
        let i = self.x.partition_point(|&v| v <= t).clamp(1, n - 1) - 1;
        let h = self.x[i + 1] - self.x[i];
        let (a, b) = ((self.x[i + 1] - t) / h, (t - self.x[i]) / h);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let v = a * self.y[i] + b * self.y[i + 1] + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d1 = (self.y[i + 1] - self.y[i]) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0
            + (3.0 * b * b - 1.0) * h * m1 / 6.0;
        let d2 = a * m0 + b * m1;
        let d3 = (m1 - m0) / h;
        [v, d1, d2, d3]
    }
}

#[derive(Clone, Debug)]
enum Inner {
    Exp { rate: f64 },
    Erf { t0: f64 },
    Tabulated(CubicSpline),
    Heat { base: Arc<ShearProfile>, t: f64 },
}

/// The pair `(U^E, U)`.
#[derive(Clone, Debug)]
pub struct ShearProfile {
    pub outer: OuterFlow,
    pub u_e0: f64,
    pub kind: ProfileKind,
    pub y_max: f64,
    inner: Inner,
    norm: OnceLock<f64>,
}

/// Level of the dyadic sampling used for the `||U||` supremum.
pub const NORM_LEVEL: u32 = 13;

/// Profile values on a grid.
#[derive(Clone, Debug)]
pub struct VSamples {
    pub v: Vec<f64>,
    pub dv: Vec<f64>,
    pub d2v: Vec<f64>,
    pub d3v: Vec<f64>,
    /// `sqrt(nu) U^E'(sqrt(nu) Y)`, the outer part of `V'`.
    pub dv_outer: Vec<f64>,
    /// `U'(Y)`.
    pub du: Vec<f64>,
}

impl VSamples {
    pub fn complex(v: &[f64]) -> Vec<C64> {
        v.iter().map(|&x| C64::new(x, 0.0)).collect()
    }
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

/// Builds a closed-form profile. Recognized keys: `uE0`, `slope` (outer flow),
/// `rate` (exp), `t0` (erf, `U = uE0 erf(Y / sqrt(4 t0))`), `y_max`.
pub fn build_profile(kind: &str, params: &BTreeMap<String, f64>) -> Result<ShearProfile> {
    let u_e0 = param(params, "uE0", 1.0);
    let slope = param(params, "slope", 0.0);
    let y_max = param(params, "y_max", 40.0);
    if !(u_e0 > 0.0) {
        return Err(Error::invalid(format!("U^E(0) must be positive, got {u_e0}")));
    }
    if !(y_max > 0.0) {
        return Err(Error::invalid("y_max must be positive"));
    }
    let inner = match kind {
        "exp" => {
            let rate = param(params, "rate", 1.0);
            if !(rate > 0.0) {
                return Err(Error::invalid("exp rate must be positive"));
            }
            Inner::Exp { rate }
        }
        "erf" => {
            let t0 = param(params, "t0", 1.0);
            if !(t0 > 0.0) {
                return Err(Error::invalid("erf t0 must be positive"));
            }
            Inner::Erf { t0 }
        }
        other => return Err(Error::invalid(format!("unknown profile kind `{other}`"))),
    };
    let kind = if kind == "exp" { ProfileKind::Exp } else { ProfileKind::Erf };
    let p = ShearProfile { outer: OuterFlow { u0: u_e0, slope }, u_e0, kind, y_max, inner, norm: OnceLock::new() };
    p.check_limits()?;
    Ok(p)
}

impl ShearProfile {
    /// Spline through samples `(ys, us)`; requires `us[0] = 0` and
    /// nondecreasing data.
    pub fn tabulated(ys: &[f64], us: &[f64], outer: OuterFlow) -> Result<Self> {
        if us.first().map(|u| u.abs() > 1e-12).unwrap_or(true) {
            return Err(Error::invalid("tabulated profile must start at U(0) = 0"));
        }
        if us.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("tabulated profile must be nondecreasing"));
        }
        if !(outer.u0 > 0.0) {
            return Err(Error::invalid("U^E(0) must be positive"));
        }
        let spline = CubicSpline::new(ys, us)?;
        let y_max = *ys.last().unwrap();
        let p = Self {
            outer,
            u_e0: outer.u0,
            kind: ProfileKind::Tabulated,
            y_max,
            inner: Inner::Tabulated(spline),
            norm: OnceLock::new(),
        };
        Ok(p)
    }

    fn check_limits(&self) -> Result<()> {
        let u0 = self.u(0.0)[0];
        let uinf = self.u(self.y_max)[0];
        if u0.abs() > 1e-10 || (uinf - self.u_e0).abs() > 1e-6 * self.u_e0 {
            return Err(Error::invalid(format!(
                "profile limits U(0) = {u0:.3e}, U(Y_max) = {uinf:.6} do not match 0 and {}",
                self.u_e0
            )));
        }
        Ok(())
    }

    /// `[U, U', U'', U''']` at `y`.
    pub fn u(&self, y: f64) -> [f64; 4] {
        let a = self.u_e0;
        match &self.inner {
            Inner::Exp { rate } => {
                let e = (-rate * y).exp();
                [a * (1.0 - e), a * rate * e, -a * rate * rate * e, a * rate.powi(3) * e]
            }
            Inner::Erf { t0 } => {
                let s = 0.5 / t0.sqrt();
                let d1 = a * 2.0 * s / SQRT_PI * (-(s * y).powi(2)).exp();
                [a * erf(s * y), d1, -2.0 * s * s * y * d1, (-2.0 * s * s + 4.0 * s.powi(4) * y * y) * d1]
            }
            Inner::Tabulated(sp) => sp.eval(y),
            Inner::Heat { base, t } => heat_eval(base, *t, y, self.y_max),
        }
    }

    /// `[V, V', V'', V''']` at `y` for viscosity `nu`.
    pub fn v(&self, nu: f64, y: f64) -> [f64; 4] {
        let s = nu.sqrt();
        let e = self.outer.eval(s * y);
        let u = self.u(y);
        [e[0] - self.outer.u0 + u[0], s * e[1] + u[1], nu * e[2] + u[2], nu * s * e[3] + u[3]]
    }

    pub fn sample(&self, nu: f64, ys: &[f64]) -> VSamples {
        let s = nu.sqrt();
        let rows: Vec<([f64; 4], [f64; 4])> =
            ys.par_iter().map(|&y| (self.u(y), self.outer.eval(s * y))).collect();
        let mut out = VSamples {
            v: Vec::with_capacity(ys.len()),
            dv: Vec::with_capacity(ys.len()),
            d2v: Vec::with_capacity(ys.len()),
            d3v: Vec::with_capacity(ys.len()),
            dv_outer: Vec::with_capacity(ys.len()),
            du: Vec::with_capacity(ys.len()),
        };
        for (u, e) in rows {
            out.v.push(e[0] - self.outer.u0 + u[0]);
            out.dv.push(s * e[1] + u[1]);
            out.d2v.push(nu * e[2] + u[2]);
            out.d3v.push(nu * s * e[3] + u[3]);
            out.dv_outer.push(s * e[1]);
            out.du.push(u[1]);
        }
        out
    }

    pub fn sample_grid(&self, nu: f64, g: &HalfLineGrid) -> VSamples {
        self.sample(nu, &g.nodes)
    }

    /// `||U|| = sum_{k<=2} sup (1+Y)^k |U^(k)|`, sampled on `2^NORM_LEVEL`
    /// points clustered quadratically toward the wall.
    pub fn norm_u(&self) -> f64 {
        *self.norm.get_or_init(|| {
            let k = 1usize << NORM_LEVEL;
            let sups = (0..=k)
                .into_par_iter()
                .map(|i| {
                    let s = i as f64 / k as f64;
                    let y = self.y_max * s * s;
                    let u = self.u(y);
                    let w = 1.0 + y;
                    [u[0].abs(), w * u[1].abs(), w * w * u[2].abs()]
                })
                .reduce(|| [0.0; 3], |a, b| [a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])]);
            sups.iter().sum()
        })
    }

    /// `sup |U'|` on the norm sample.
    pub fn sup_du(&self) -> f64 {
        let k = 1usize << NORM_LEVEL;
        (0..=k)
            .into_par_iter()
            .map(|i| {
                let s = i as f64 / k as f64;
                self.u(self.y_max * s * s)[1].abs()
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Critical point: root of the odd extension of `V - target` (bisection).
    pub fn critical_point(&self, nu: f64, target: f64) -> f64 {
        let f = |y: f64| {
            if y >= 0.0 {
                self.v(nu, y)[0] - target
            } else {
                -self.v(nu, -y)[0] - target
            }
        };
        let span = self.y_max;
        let (mut lo, mut hi) = (-span, span);
        if f(lo) > 0.0 {
            return lo;
        }
        if f(hi) < 0.0 {
            return hi;
        }
        while hi - lo > 1e-12 * (1.0 + hi.abs()) {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// `G(t, x) = (4 pi t)^{-1/2} exp(-x^2 / 4t)`.
pub fn heat_kernel(t: f64, x: f64) -> f64 {
    (-x * x / (4.0 * t)).exp() / (4.0 * std::f64::consts::PI * t).sqrt()
}

fn heat_window(t: f64, y: f64, y_max: f64) -> Vec<f64> {
    let st = t.sqrt();
    let l = 13.0 * st;
    let a = (y - l).max(0.0);
    let b = (y + l).min(y_max);
    if b <= a {
        return vec![];
    }
    let m = ((b - a) / st).ceil().max(1.0) as usize;
    (0..=m).map(|k| a + (b - a) * k as f64 / m as f64).collect()
}

/// Short-time cutoff below which the first-order expansion is used.
pub const HEAT_SHORT_TIME: f64 = 1e-3;

fn heat_eval(base: &ShearProfile, t: f64, y: f64, y_max: f64) -> [f64; 4] {
    if t < HEAT_SHORT_TIME {
        let b = base.u(y);
        return [b[0] + t * b[2], b[1] + t * b[3], b[2], b[3]];
    }
    let breaks = heat_window(t, y, y_max);
    let rule = gl(12);
    let mut acc = [0.0; 4];
    for w in breaks.windows(2) {
        for (z, wz) in rule.mapped(w[0], w[1]) {
            let gm = heat_kernel(t, y - z);
            let gp = heat_kernel(t, y + z);
            let u = base.u(z);
            acc[0] += wz * (gm - gp) * u[0];
            acc[1] += wz * (gm + gp) * u[1];
            acc[2] += wz * (gm - gp) * u[2];
            acc[3] += wz * (gm + gp) * u[3];
        }
    }
    let s = (4.0 * t).sqrt();
    let far = base.u(y_max)[0];
    acc[0] += 0.5 * far * (erfc((y_max - y) / s) - erfc((y_max + y) / s));
    acc[3] += 2.0 * heat_kernel(t, y) * base.u(0.0)[2];
    acc
}

/// `int_0^inf G_N(t, y, z) dz` with the same windowed quadrature and tail.
pub fn neumann_mass(t: f64, y: f64, y_max: f64) -> f64 {
    let breaks = heat_window(t, y, y_max);
    let body = panels(&breaks, 12, |z| heat_kernel(t, y - z) + heat_kernel(t, y + z));
    let s = (4.0 * t).sqrt();
    body + 0.5 * (erfc((y_max - y) / s) + erfc((y_max + y) / s))
}

/// Heat flow of the boundary-layer part with Dirichlet data at `Y = 0`;
/// `U^E` is left unchanged.
pub fn heat_evolve(p0: &ShearProfile, t: f64, g: &HalfLineGrid) -> Result<ShearProfile> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("heat time must be nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(p0.clone());
    }
    let (base, t_total) = match &p0.inner {
        Inner::Heat { base, t: t1 } => (base.clone(), t1 + t),
        _ => (Arc::new(p0.clone()), t),
    };
    Ok(ShearProfile {
        outer: p0.outer,
        u_e0: p0.u_e0,
        kind: ProfileKind::HeatEvolved,
        y_max: g.y_max.min(p0.y_max),
        inner: Inner::Heat { base, t: t_total },
        norm: OnceLock::new(),
    })
}

/// Profile coefficients at rescaled times `tau_k = t_k / sqrt(nu)`, linearly
/// interpolated in between. Every time-dependent solver reads its
/// coefficients from one of these, so that competing methods see the same data.
#[derive(Clone, Debug)]
pub struct ProfileTrack {
    pub nu: f64,
    pub taus: Vec<f64>,
    pub samples: Vec<VSamples>,
}

fn lerp(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
}

impl ProfileTrack {
    pub fn frozen(p: &ShearProfile, nu: f64, g: &HalfLineGrid) -> Self {
        Self { nu, taus: vec![0.0], samples: vec![p.sample_grid(nu, g)] }
    }

    /// Heat flow of `p0` sampled at `count` equally spaced physical times in `[0, t_end]`.
    pub fn heat(p0: &ShearProfile, nu: f64, g: &HalfLineGrid, t_end: f64, count: usize) -> Result<Self> {
        if !(t_end > 0.0) || count < 2 {
            return Err(Error::invalid("heat track needs t_end > 0 and at least two snapshots"));
        }
        let ts: Vec<f64> = (0..count).map(|k| t_end * k as f64 / (count - 1) as f64).collect();
        let samples = ts
            .iter()
            .map(|&t| heat_evolve(p0, t, g).map(|p| p.sample_grid(nu, g)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { nu, taus: ts.iter().map(|t| t / nu.sqrt()).collect(), samples })
    }

    pub fn is_frozen(&self) -> bool {
        self.samples.len() == 1
    }

    pub fn tau_end(&self) -> f64 {
        *self.taus.last().unwrap()
    }

    /// Coefficients at `tau`, held constant outside the sampled range.
    pub fn at(&self, tau: f64) -> VSamples {
        let k = self.taus.partition_point(|&t| t <= tau);
        if k == 0 {
            return self.samples[0].clone();
        }
        if k == self.taus.len() {
            return self.samples[k - 1].clone();
        }
        let (a, b) = (&self.samples[k - 1], &self.samples[k]);
        let w = (tau - self.taus[k - 1]) / (self.taus[k] - self.taus[k - 1]);
        VSamples {
            v: lerp(&a.v, &b.v, w),
            dv: lerp(&a.dv, &b.dv, w),
            d2v: lerp(&a.d2v, &b.d2v, w),
            d3v: lerp(&a.d3v, &b.d3v, w),
            dv_outer: lerp(&a.dv_outer, &b.dv_outer, w),
            du: lerp(&a.du, &b.du, w),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConcavityKind {
    Wc,
    Sc,
    Fail,
}

impl ConcavityKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ConcavityKind::Wc => "WC",
            ConcavityKind::Sc => "SC",
            ConcavityKind::Fail => "fail",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConcavityCertificate {
    pub kind: ConcavityKind,
    pub m_sigma: Vec<(f64, f64)>,
    pub m_global: Option<f64>,
    pub ic_constant: Option<f64>,
    pub witness: Option<f64>,
}

/// Safety margin applied to measured suprema.
pub const CONCAVITY_MARGIN: f64 = 1.05;
const UNBOUNDED: f64 = 1e12;

/// Certifies `-M U'' >= (U')^2` on the grid nodes and cell midpoints.
pub fn certify_concavity(p: &ShearProfile, sigmas: &[f64], g: &HalfLineGrid) -> ConcavityCertificate {
    let mut ys: Vec<f64> = Vec::with_capacity(2 * g.len());
    for w in g.nodes.windows(2) {
        ys.push(w[0]);
        ys.push(0.5 * (w[0] + w[1]));
    }
    ys.push(*g.nodes.last().unwrap());
    let vals: Vec<[f64; 4]> = ys.par_iter().map(|&y| p.u(y)).collect();
    let d1max = vals.iter().map(|u| u[1].abs()).fold(0.0, f64::max);
    let d2max = vals.iter().map(|u| u[2].abs()).fold(0.0, f64::max);
    let (tol1, tol2) = (1e-13 * d1max, 1e-10 * d2max.max(f64::MIN_POSITIVE));
    let mut ratio = Vec::with_capacity(ys.len());
    for (y, u) in ys.iter().zip(&vals) {
        let (d1, d2) = (u[1], u[2]);
        if d2 > tol2 {
            return ConcavityCertificate {
                kind: ConcavityKind::Fail,
                m_sigma: vec![],
                m_global: None,
                ic_constant: None,
                witness: Some(*y),
            };
        }
        let r = if d1.abs() <= tol1 && -d2 <= tol2 {
            0.0
        } else if -d2 <= 0.0 {
            f64::INFINITY
        } else {
            d1 * d1 / -d2
        };
        ratio.push(r);
    }
    let sup_from = |s: f64| {
        ys.iter().zip(&ratio).filter(|(y, _)| **y >= s).map(|(_, r)| *r).fold(0.0, f64::max)
    };
    let global = sup_from(0.0);
    if global < UNBOUNDED {
        let m = CONCAVITY_MARGIN * global;
        return ConcavityCertificate {
            kind: ConcavityKind::Sc,
            m_sigma: sigmas.iter().map(|&s| (s, m)).collect(),
            m_global: Some(m),
            ic_constant: None,
            witness: None,
        };
    }
    let mut m_sigma = Vec::new();
    for &s in sigmas {
        let m = sup_from(s);
        if !(m < UNBOUNDED) {
            let witness =
                ys.iter().zip(&ratio).find(|(y, r)| **y >= s && !(**r < UNBOUNDED)).map(|(y, _)| *y);
            return ConcavityCertificate {
                kind: ConcavityKind::Fail,
                m_sigma: vec![],
                m_global: None,
                ic_constant: None,
                witness,
            };
        }
        m_sigma.push((s, CONCAVITY_MARGIN * m));
    }
    ConcavityCertificate { kind: ConcavityKind::Wc, m_sigma, m_global: None, ic_constant: None, witness: None }
}

/// One row of the integral-condition sweep.
#[derive(Clone, Copy, Debug)]
pub struct IcRow {
    pub lambda: C64,
    /// `||Y^{1/2} (U')^2 / (V - lambda)^2||_{L^2}`.
    pub norm: f64,
    /// `(Im lambda)^{3/2}` times `norm`.
    pub scaled: f64,
    /// Difference between the 16- and 32-point panel rules.
    pub quad_error: f64,
}

fn ic_row(p: &ShearProfile, nu: f64, lambda: C64) -> IcRow {
    let yc = p.critical_point(nu, lambda.re).max(0.0);
    let slope = p.v(nu, yc)[1].max(1e-3);
    let d = lambda.im / slope;
    let mut breaks = vec![0.0, p.y_max];
    let mut step = 0.25;
    let mut y = 0.0;
    while y < p.y_max {
        breaks.push(y);
        y += step;
        if y > 10.0 {
            step = 1.0;
        }
    }
    let mut k = d / 64.0;
    while k < p.y_max {
        breaks.push(yc + k);
        breaks.push(yc - k);
        k *= 2.0;
    }
    breaks.push(yc);
    breaks.retain(|b| (0.0..=p.y_max).contains(b));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let f = |y: f64| {
        let v = p.v(nu, y);
        let u1 = p.u(y)[1];
        y * u1.powi(4) / (C64::new(v[0], 0.0) - lambda).norm_sqr().powi(2)
    };
    let i16 = panels(&breaks, 16, f);
    let i32 = panels(&breaks, 32, f);
    let norm = i32.max(0.0).sqrt();
    IcRow { lambda, norm, scaled: lambda.im.powf(1.5) * norm, quad_error: (i16 - i32).abs().sqrt() }
}

/// Integral condition over a list of `lambda`; returns `(M', worst lambda, rows)`.
pub fn verify_integral_condition(
    p: &ShearProfile,
    nu: f64,
    lambdas: &[C64],
) -> Result<(f64, C64, Vec<IcRow>)> {
    if let Some(l) = lambdas.iter().find(|l| !(l.im > 0.0)) {
        return Err(Error::invalid(format!("integral condition needs Im lambda > 0, got {l}")));
    }
    if lambdas.is_empty() {
        return Err(Error::invalid("empty lambda list"));
    }
    let rows: Vec<IcRow> = lambdas.par_iter().map(|&l| ic_row(p, nu, l)).collect();
    let worst = rows.iter().max_by(|a, b| a.scaled.total_cmp(&b.scaled)).unwrap();
    Ok((worst.scaled, worst.lambda, rows))
}

/// Default sweep: `Im lambda` log-spaced in `[1e-2, 1]`, `Re lambda` in `{0, uE0/4, uE0/2}`.
pub fn default_lambda_grid(u_e0: f64, count: usize) -> Vec<C64> {
    let mut out = Vec::new();
    for re in [0.0, 0.25 * u_e0, 0.5 * u_e0] {
        for k in 0..count {
            let s = if count > 1 { k as f64 / (count - 1) as f64 } else { 0.0 };
            out.push(C64::new(re, 10f64.powf(-2.0 + 2.0 * s)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halfline_grid::{make_grid, Stretch};
    use proptest::prelude::*;

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn exp_profile() -> ShearProfile {
        build_profile("exp", &params(&[("uE0", 1.0)])).unwrap()
    }

    #[test]
    fn exp_profile_values_and_norm() {
        let p = exp_profile();
        let u = p.u(0.0);
        assert_eq!(u[0], 0.0);
        assert!((u[1] - 1.0).abs() < 1e-15);
        // Dense search oracle: sup e^{-Y}, sup (1+Y) e^{-Y}, sup (1+Y)^2 e^{-Y} and the limit 1.
        let mut s = [0.0f64; 3];
        for i in 0..=400_000 {
            let y = i as f64 * 1e-4;
            let e = (-y).exp();
            s[0] = s[0].max(1.0 - e);
            s[1] = s[1].max((1.0 + y) * e);
            s[2] = s[2].max((1.0 + y).powi(2) * e);
        }
        let oracle: f64 = s.iter().sum();
        assert!((p.norm_u() - oracle).abs() < 1e-6, "{} vs {}", p.norm_u(), oracle);
        assert!((oracle - (2.0 + 4.0 / std::f64::consts::E)).abs() < 1e-6);
    }

    #[test]
    fn erf_profile_has_zero_curvature_at_wall() {
        let p = build_profile("erf", &params(&[])).unwrap();
        assert_eq!(p.u(0.0)[2], 0.0);
        assert!(build_profile("exp", &params(&[("uE0", -1.0)])).is_err());
        assert!(build_profile("sinh", &params(&[])).is_err());
    }

    #[test]
    fn erf_derivatives_match_finite_differences() {
        let p = build_profile("erf", &params(&[("t0", 0.7)])).unwrap();
        let h = 1e-5;
        for &y in &[0.3, 1.1, 2.5] {
            let (a, b) = (p.u(y + h), p.u(y - h));
            let c = p.u(y);
            for k in 0..3 {
                let fd = (a[k] - b[k]) / (2.0 * h);
                assert!((fd - c[k + 1]).abs() < 1e-7, "k={k} y={y}");
            }
        }
    }

    #[test]
    fn exp_concavity_is_strong_with_unit_constant() {
        let g = make_grid(2048, 40.0, Stretch::Tanh { beta: 3.0 }).unwrap();
        let cert = certify_concavity(&exp_profile(), &[0.25], &g);
        assert_eq!(cert.kind, ConcavityKind::Sc);
        let m = cert.m_global.unwrap();
        assert!((m / CONCAVITY_MARGIN - 1.0).abs() < 1e-12);
        assert!(m <= 1.05 + 1e-12);
    }

    #[test]
    fn erf_concavity_is_weak_with_oracle_constants() {
        let g = make_grid(4096, 40.0, Stretch::Tanh { beta: 3.0 }).unwrap();
        let p = build_profile("erf", &params(&[])).unwrap();
        let cert = certify_concavity(&p, &[0.1, 0.5, 1.0], &g);
        assert_eq!(cert.kind, ConcavityKind::Wc);
        // With U = erf(Y/2): (U')^2 / (-U'') = 2 e^{-Y^2/4} / (sqrt(pi) Y), decreasing in Y.
        for (s, m) in &cert.m_sigma {
            let oracle = 2.0 * (-s * s / 4.0).exp() / (SQRT_PI * s);
            assert!(*m >= oracle * 0.999 && *m <= 1.06 * oracle, "sigma {s}: {m} vs {oracle}");
        }
    }

    #[test]
    fn convex_spliced_profile_fails_with_witness() {
        let ys: Vec<f64> = (0..=400).map(|i| i as f64 * 0.1).collect();
        let us: Vec<f64> = ys.iter().map(|y| y * y / (1.0 + y * y)).collect();
        let p = ShearProfile::tabulated(&ys, &us, OuterFlow::constant(1.0)).unwrap();
        let g = make_grid(256, 40.0, Stretch::Tanh { beta: 3.0 }).unwrap();
        let cert = certify_concavity(&p, &[0.25], &g);
        assert_eq!(cert.kind, ConcavityKind::Fail);
        let w = cert.witness.unwrap();
        assert!(p.u(w)[2] > 0.0);
    }

    #[test]
    fn spline_reproduces_cubic_interior() {
        let x: Vec<f64> = (0..60).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|t| t.sin()).collect();
        let s = CubicSpline::new(&x, &y).unwrap();
        let e = s.eval(2.345);
        assert!((e[0] - 2.345f64.sin()).abs() < 1e-5);
        assert!((e[1] - 2.345f64.cos()).abs() < 1e-3);
    }

    #[test]
    fn heat_similarity_solution() {
        let g = make_grid(64, 40.0, Stretch::Uniform).unwrap();
        let p0 = build_profile("erf", &params(&[("t0", 1.0)])).unwrap();
        for &t in &[0.1, 1.0] {
            let pt = heat_evolve(&p0, t, &g).unwrap();
            let exact = build_profile("erf", &params(&[("t0", 1.0 + t)])).unwrap();
            for &y in &[0.0, 0.2, 1.0, 3.0, 7.5, 20.0, 39.0] {
                let (a, b) = (pt.u(y), exact.u(y));
                for k in 0..4 {
                    assert!((a[k] - b[k]).abs() < 1e-8, "t={t} y={y} k={k}: {} vs {}", a[k], b[k]);
                }
            }
        }
    }

    #[test]
    fn heat_identity_and_composition() {
        let g = make_grid(64, 40.0, Stretch::Uniform).unwrap();
        let p = exp_profile();
        let same = heat_evolve(&p, 0.0, &g).unwrap();
        assert_eq!(same.u(1.3), p.u(1.3));
        assert!(heat_evolve(&p, -1.0, &g).is_err());
        let a = heat_evolve(&heat_evolve(&p, 0.2, &g).unwrap(), 0.3, &g).unwrap();
        let b = heat_evolve(&p, 0.5, &g).unwrap();
        assert_eq!(a.u(2.0), b.u(2.0));
    }

    #[test]
    fn track_interpolates_and_clamps() {
        let g = make_grid(128, 40.0, Stretch::Tanh { beta: 3.0 }).unwrap();
        let nu = 1e-2;
        let tr = ProfileTrack::heat(&exp_profile(), nu, &g, 0.2, 3).unwrap();
        assert!(!tr.is_frozen());
        assert!((tr.tau_end() - 2.0).abs() < 1e-12);
        let mid = tr.at(0.5);
        for i in 0..g.len() {
            let want = 0.5 * (tr.samples[0].v[i] + tr.samples[1].v[i]);
            assert!((mid.v[i] - want).abs() < 1e-15);
        }
        assert_eq!(tr.at(-1.0).v, tr.samples[0].v);
        assert_eq!(tr.at(9.0).v, tr.samples[2].v);
        assert!(ProfileTrack::heat(&exp_profile(), nu, &g, 0.2, 1).is_err());
    }

    #[test]
    fn heat_evolved_exp_is_weakly_concave() {
        let g = make_grid(1024, 40.0, Stretch::Tanh { beta: 3.0 }).unwrap();
        let p = heat_evolve(&exp_profile(), 0.5, &g).unwrap();
        assert!(p.u(0.0)[0].abs() < 1e-12);
        assert!((p.u(40.0)[0] - 1.0).abs() < 1e-8);
        let cert = certify_concavity(&p, &[0.25], &g);
        assert_eq!(cert.kind, ConcavityKind::Wc, "{cert:?}");
        assert!(cert.m_sigma[0].1.is_finite());
    }

    #[test]
    fn integral_condition_sweep() {
        let p = exp_profile();
        let lambdas = default_lambda_grid(1.0, 9);
        let (m, worst, rows) = verify_integral_condition(&p, 1e-4, &lambdas).unwrap();
        assert!(m.is_finite() && m > 0.0);
        assert!(lambdas.contains(&worst));
        assert!(rows.iter().all(|r| r.quad_error < 1e-6 * (1.0 + r.norm)));
        let (far, _, _) = verify_integral_condition(&p, 1e-4, &[C64::new(0.0, 10.0)]).unwrap();
        assert!(far < 0.1 * m * 10f64.powf(1.5), "{far} {m}");
        assert!(verify_integral_condition(&p, 1e-4, &[C64::new(0.1, 0.0)]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn neumann_kernel_has_unit_mass(t in 0.01f64..2.0, y in 0.0f64..39.0) {
            prop_assert!((neumann_mass(t, y, 40.0) - 1.0).abs() < 1e-6);
        }

        #[test]
        fn heat_preserves_monotonicity(t in 0.001f64..1.0, y in 0.0f64..30.0) {
            let g = make_grid(64, 40.0, Stretch::Uniform).unwrap();
            let p = heat_evolve(&exp_profile(), t, &g).unwrap();
            prop_assert!(p.u(y)[1] >= -1e-12);
        }
    }
}
