// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Contour-integral Airy functions in the unnormalized convention
//! `Ai(z) = int_L exp(z t - t^3/3) dt` and the pole-weighted variant
//! `Ai_alpha(z) = int_L exp(z t - t^3/3) / (t^2 - p^2) dt`.
//!
//! `L` runs in from `inf e^{-2i pi/3}`, around the left half of the unit
//! circle and out to `inf e^{2i pi/3}`; with this orientation the value is
//! `2 pi i` times the classical Airy function. Small `|z|` uses direct
//! quadrature on `L`; larger `|z|` uses numerical steepest descent through
//! the saddles `+-sqrt(z)`, with pole residues added when the deformation
//! sweeps across them.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::halfline_grid::{ComplexField, HalfLineGrid, LeftBc, RightBc};
use crate::os_core::SpectralParams;
use crate::profiles::ShearProfile;
use crate::quad::gl;
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Radius below which the contour `L` itself is used.
pub const DIRECT_RADIUS: f64 = 4.0;

/// `mant * exp(exp)`, for values far outside the `f64` range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaled {
    pub mant: C64,
    pub exp: C64,
}

impl Scaled {
    pub fn value(&self) -> C64 {
        if self.mant == ZERO {
            return ZERO;
        }
        self.mant * self.exp.exp()
    }

    pub fn ln(&self) -> C64 {
        self.mant.ln() + self.exp
    }

    /// `self / other` as a plain number.
    pub fn ratio(&self, other: &Scaled) -> C64 {
        if self.mant == ZERO {
            return ZERO;
        }
        self.mant / other.mant * (self.exp - other.exp).exp()
    }
}

/// Contour `L` with its leg truncation.
#[derive(Clone, Copy, Debug)]
pub struct AiryContour {
    pub r_trunc: f64,
    /// Gauss nodes per unit length on the legs.
    pub nodes_per_leg: usize,
}

impl AiryContour {
    /// Truncation radius where `|exp(z t - t^3/3)|` falls below `1e-20` of its
    /// largest value on `L`.
    pub fn for_z(z: C64) -> Self {
        let leg_max = |theta: f64| {
            let e = C64::from_polar(1.0, theta);
            let zr = (z * e).re;
            // max over r >= 1 of zr r - r^3/3
            let r = zr.max(1.0).sqrt().max(1.0);
            zr * r - r * r * r / 3.0
        };
        let mut top = leg_max(2.0 * PI / 3.0).max(leg_max(-2.0 * PI / 3.0));
        for k in 0..=32 {
            let th = -2.0 * PI / 3.0 - (2.0 * PI / 3.0) * k as f64 / 32.0;
            let t = C64::from_polar(1.0, th);
            top = top.max(h(z, t).re);
        }
        let floor = top - 20.0 * std::f64::consts::LN_10;
        let mut r = 2.0;
        loop {
            let ok = [2.0 * PI / 3.0, -2.0 * PI / 3.0].iter().all(|&th| {
                let zr = (z * C64::from_polar(1.0, th)).re;
                zr * r - r * r * r / 3.0 < floor && zr - r * r < 0.0
            });
            if ok {
                break;
            }
            r += 0.5;
        }
        Self { r_trunc: r, nodes_per_leg: 20 }
    }
}

fn h(z: C64, t: C64) -> C64 {
    z * t - t * t * t / 3.0
}

/// `[t^k / (t^2 - p^2)]_{k=0,1,2}`, or `t^k` without a pole.
fn amplitudes(t: C64, pole: Option<C64>) -> [C64; 3] {
    let d = match pole {
        Some(p) => ONE / (t * t - p * p),
        None => ONE,
    };
    [d, t * d, t * t * d]
}

fn check_pole(pole: Option<C64>) -> Result<()> {
    if let Some(p) = pole {
        if !(p.norm() < 1.0) {
            return Err(Error::invalid(format!("pole |p| = {:.3} must be below 1", p.norm())));
        }
    }
    Ok(())
}

/// Integrates along a polyline with Gauss-Legendre on every chord; returns
/// the three moments and an error estimate from a rule of half the order.
fn polyline_integral(pts: &[C64], z: C64, scale: C64, pole: Option<C64>, nodes: usize) -> ([C64; 3], f64) {
    let hi = gl(nodes);
    let lo = gl(nodes / 2);
    let mut acc = [ZERO; 3];
    let mut acc_lo = [ZERO; 3];
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = (b - a) * 0.5;
        let mid = (a + b) * 0.5;
        for (rule, out) in [(&hi, &mut acc), (&lo, &mut acc_lo)] {
            for (x, wt) in rule.x.iter().zip(&rule.w) {
                let t = mid + half * *x;
                let e = (h(z, t) - scale).exp() * half * *wt;
                let a3 = amplitudes(t, pole);
                for k in 0..3 {
                    out[k] += a3[k] * e;
                }
            }
        }
    }
    let mag = acc.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let err = (0..3).map(|k| (acc[k] - acc_lo[k]).norm()).fold(0.0, f64::max) / mag.max(f64::MIN_POSITIVE);
    (acc, err)
}

/// Polyline of the contour `L` truncated at `r_trunc`.
pub fn contour_points(c: &AiryContour) -> Vec<C64> {
    let mut pts = Vec::new();
    let steps = (c.r_trunc - 1.0).ceil().max(1.0) as usize * 2;
    let down = C64::from_polar(1.0, -2.0 * PI / 3.0);
    for k in 0..=steps {
        let r = c.r_trunc - (c.r_trunc - 1.0) * k as f64 / steps as f64;
        pts.push(down * r);
    }
    for k in 1..=24 {
        let th = -2.0 * PI / 3.0 - (2.0 * PI / 3.0) * k as f64 / 24.0;
        pts.push(C64::from_polar(1.0, th));
    }
    let up = C64::from_polar(1.0, 2.0 * PI / 3.0);
    for k in 1..=steps {
        let r = 1.0 + (c.r_trunc - 1.0) * k as f64 / steps as f64;
        pts.push(up * r);
    }
    pts
}

fn direct(z: C64, pole: Option<C64>) -> Result<[Scaled; 3]> {
    let contour = AiryContour::for_z(z);
    let pts = contour_points(&contour);
    let e = scale_exponent(z);
    let (v, err) = polyline_integral(&pts, z, e, pole, contour.nodes_per_leg);
    if err > 1e-9 {
        return Err(Error::Quadrature(format!("Airy contour quadrature at z = {z}: error {err:.2e}")));
    }
    Ok([0, 1, 2].map(|k| Scaled { mant: v[k], exp: e }))
}

/// `-(2/3) z^{3/2}`, the exponent at the saddle `-sqrt(z)`.
pub fn scale_exponent(z: C64) -> C64 {
    -(2.0 / 3.0) * z * z.sqrt()
}

fn dh(z: C64, t: C64) -> C64 {
    z - t * t
}

/// Steepest-descent branch from a saddle along initial direction `dir`.
fn trace_branch(z: C64, ts: C64, dir: C64) -> Vec<C64> {
    let hs = h(z, ts).re;
    let h2 = (2.0 * ts).norm().max(1e-12);
    let mut t = ts + dir * (0.3 / h2.sqrt());
    let mut pts = vec![ts, t];
    let field = |t: C64| {
        let d = dh(z, t);
        let m = d.norm();
        if m == 0.0 {
            ZERO
        } else {
            -d.conj() / m
        }
    };
    for _ in 0..20_000 {
        // Far enough out that the valley is unambiguous.
        if h(z, t).re - hs < -50.0 && t.norm() > 2.0 * ts.norm() + 2.0 {
            break;
        }
        let dl = 0.5 / (dh(z, t).norm() + (2.0 * t).norm().sqrt());
        let k1 = field(t);
        let k2 = field(t + k1 * (0.5 * dl));
        let k3 = field(t + k2 * (0.5 * dl));
        let k4 = field(t + k3 * dl);
        t += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dl / 6.0);
        pts.push(t);
    }
    pts
}

/// Valley index at infinity: 0 for arg 0, 1 for `2 pi/3`, -1 for `-2 pi/3`.
fn valley(t: C64) -> i32 {
    let a = t.arg();
    let cands = [(0, 0.0), (1, 2.0 * PI / 3.0), (-1, -2.0 * PI / 3.0)];
    let dist = |x: f64| {
        let mut d = (a - x).rem_euclid(2.0 * PI);
        if d > PI {
            d = 2.0 * PI - d;
        }
        d
    };
    cands.iter().min_by(|p, q| dist(p.1).total_cmp(&dist(q.1))).unwrap().0
}

struct SaddlePath {
    pts: Vec<C64>,
    from: i32,
    to: i32,
}

fn saddle_path(z: C64, ts: C64) -> SaddlePath {
    let h2 = -2.0 * ts;
    let phi = (PI - h2.arg()) / 2.0;
    let d = C64::from_polar(1.0, phi);
    let a = trace_branch(z, ts, d);
    let b = trace_branch(z, ts, -d);
    let from = valley(*b.last().unwrap());
    let to = valley(*a.last().unwrap());
    let mut pts: Vec<C64> = b.into_iter().rev().collect();
    pts.extend(a.into_iter().skip(1));
    SaddlePath { pts, from, to }
}

fn oriented(p: SaddlePath, start: i32) -> Option<(Vec<C64>, i32)> {
    if p.from == start {
        Some((p.pts, p.to))
    } else if p.to == start {
        Some((p.pts.into_iter().rev().collect(), p.from))
    } else {
        None
    }
}

/// Replaces excursions into `|t| < r` by arcs on `|t| = r`.
fn avoid_disk(pts: &[C64], r: f64) -> Vec<C64> {
    let mut out: Vec<C64> = Vec::with_capacity(pts.len());
    let mut i = 0;
    while i < pts.len() {
        if pts[i].norm() >= r {
            out.push(pts[i]);
            i += 1;
            continue;
        }
        let mut j = i;
        while j < pts.len() && pts[j].norm() < r {
            j += 1;
        }
        let a0 = out.last().copied().unwrap_or(pts[i]).arg();
        let a1 = if j < pts.len() { pts[j].arg() } else { pts[j - 1].arg() };
        let mut da = a1 - a0;
        while da > PI {
            da -= 2.0 * PI;
        }
        while da < -PI {
            da += 2.0 * PI;
        }
        let m = ((da.abs() / 0.02).ceil() as usize).max(2);
        for k in 0..=m {
            out.push(C64::from_polar(r, a0 + da * k as f64 / m as f64));
        }
        i = j;
    }
    out
}

fn arg_increment(pts: &[C64]) -> f64 {
    pts.windows(2)
        .map(|w| {
            let mut d = w[1].arg() - w[0].arg();
            while d > PI {
                d -= 2.0 * PI;
            }
            while d < -PI {
                d += 2.0 * PI;
            }
            d
        })
        .sum()
}

fn principal(d: f64) -> f64 {
    let mut d = d;
    while d > PI {
        d -= 2.0 * PI;
    }
    while d < -PI {
        d += 2.0 * PI;
    }
    d
}

/// Sum of residues of `t^k e^{h} / (t^2 - p^2)` at `+-p`, scaled by `e^{-scale}`.
fn residue_sum(z: C64, p: C64, scale: C64) -> [C64; 3] {
    if p.norm() < 1e-8 {
        // Double pole at 0: residues z, 1, 0.
        let e = (-scale).exp();
        return [z * e, e, ZERO];
    }
    let a = z * p - p * p * p / 3.0;
    let ep = (a - scale).exp();
    let em = (-a - scale).exp();
    let sh = (ep - em) * 0.5;
    let ch = (ep + em) * 0.5;
    [sh / p, ch, p * sh]
}

/// Valley-to-valley chain of steepest-descent paths for the phase of `zp`.
fn descent_chain(zp: C64) -> Option<Vec<Vec<C64>>> {
    let sq = zp.sqrt();
    let (start, goal) = (-1, 1);
    match oriented(saddle_path(zp, -sq), start) {
        Some((pts, end)) if end == goal => Some(vec![pts]),
        Some((pts, end)) => match oriented(saddle_path(zp, sq), end) {
            Some((p2, e2)) if e2 == goal => Some(vec![pts, p2]),
            _ => None,
        },
        None => {
            let (p1, e1) = oriented(saddle_path(zp, sq), start)?;
            match oriented(saddle_path(zp, -sq), e1) {
                Some((p2, e2)) if e2 == goal => Some(vec![p1, p2]),
                _ => None,
            }
        }
    }
}

fn steepest(z: C64, pole: Option<C64>) -> Result<[Scaled; 3]> {
    let e = scale_exponent(z);
    // On a Stokes line the descent path runs into the other saddle; the
    // paths for a slightly rotated argument are still a valid contour.
    let pieces = [0.0, 0.03, -0.03, 0.08, -0.08]
        .iter()
        .find_map(|&d| descent_chain(z * C64::from_polar(1.0, d)))
        .ok_or_else(|| Error::Quadrature(format!("no steepest-descent chain at z = {z}")))?;
    // Join the pieces through the shared valley (both ends are far out).
    let mut path: Vec<C64> = Vec::new();
    for piece in pieces {
        path.extend(piece);
    }
    if let Some(p) = pole {
        let r = 0.75f64.max((p.norm() + 1.0) / 2.0);
        path = avoid_disk(&path, r);
    }
    let (mut v, err) = polyline_integral(&path, z, e, pole, 12);
    if err > 1e-9 {
        return Err(Error::Quadrature(format!("steepest-descent quadrature at z = {z}: error {err:.2e}")));
    }
    if let Some(p) = pole {
        // Winding of the closed loop C + (arc at infinity) - L about the origin.
        let l_start = C64::from_polar(1.0, -2.0 * PI / 3.0);
        let l_end = C64::from_polar(1.0, 2.0 * PI / 3.0);
        let total = arg_increment(&path) + principal(l_end.arg() - path.last().unwrap().arg())
            - (-2.0 * PI / 3.0)
            + principal(path[0].arg() - l_start.arg());
        let w = (total / (2.0 * PI)).round();
        if w != 0.0 {
            let s = residue_sum(z, p, e);
            for k in 0..3 {
                v[k] -= 2.0 * PI * I * w * s[k];
            }
        }
    }
    Ok([0, 1, 2].map(|k| Scaled { mant: v[k], exp: e }))
}

fn eval_all(z: C64, pole: Option<C64>) -> Result<[Scaled; 3]> {
    check_pole(pole)?;
    if !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::invalid("non-finite Airy argument"));
    }
    if z.norm() <= DIRECT_RADIUS {
        direct(z, pole)
    } else {
        steepest(z, pole)
    }
}

/// `d^k/dz^k Ai(z)` for `k = 0, 1, 2`, scaled.
pub fn airy_ai_scaled(z: C64) -> Result<[Scaled; 3]> {
    eval_all(z, None)
}

/// `d^k/dz^k Ai_alpha(z; p)` for `k = 0, 1, 2`, scaled.
pub fn airy_ai_alpha_scaled(z: C64, p: C64) -> Result<[Scaled; 3]> {
    eval_all(z, Some(p))
}

pub fn airy_ai(z: C64, k: usize) -> Result<C64> {
    if k > 2 {
        return Err(Error::invalid("derivative order above 2"));
    }
    Ok(airy_ai_scaled(z)?[k].value())
}

pub fn airy_ai_alpha(z: C64, p: C64, k: usize) -> Result<C64> {
    if k > 2 {
        return Err(Error::invalid("derivative order above 2"));
    }
    Ok(airy_ai_alpha_scaled(z, p)?[k].value())
}

/// Critical-layer data for the Airy profile.
#[derive(Clone, Copy, Debug)]
pub struct CriticalLayerData {
    pub y_c: f64,
    pub z_c: C64,
    /// `eps / V'(Y_c)`.
    pub eps_tilde: C64,
    /// `e^{-i pi/6} (n V'(Y_c))^{-1/3}`.
    pub eps_tilde_cbrt: C64,
    pub dv_c: f64,
    /// `sup |R| / |Y - Z_c|^2` on the grid, `R = V - c_eps - V'_c (Y - Z_c)`.
    pub r_bound: f64,
}

impl CriticalLayerData {
    pub fn pole(&self, alpha: f64) -> C64 {
        self.eps_tilde_cbrt * alpha
    }
}

pub fn critical_layer(p: &ShearProfile, sp: &SpectralParams, g: &HalfLineGrid) -> Result<CriticalLayerData> {
    let y_c = p.critical_point(sp.nu, sp.c.re);
    let dv_c = p.v(sp.nu, y_c.abs())[1];
    if !(dv_c > 0.0) {
        return Err(Error::Regime(format!("V'(Y_c) = {dv_c:.3e} is not positive")));
    }
    let ce = sp.c_eps();
    let z_c = C64::new(y_c, ce.im / dv_c);
    let eps_tilde = sp.eps() / dv_c;
    let eps_tilde_cbrt = C64::from_polar((sp.n_abs() * dv_c).powf(-1.0 / 3.0), -PI / 6.0);
    let mut r_bound: f64 = 0.0;
    for &y in &g.nodes {
        let v = p.v(sp.nu, y)[0];
        let d = C64::new(y, 0.0) - z_c;
        let r = C64::new(v, 0.0) - ce - d * dv_c;
        r_bound = r_bound.max(r.norm() / d.norm_sqr());
    }
    Ok(CriticalLayerData { y_c, z_c, eps_tilde, eps_tilde_cbrt, dv_c, r_bound })
}

/// `psi_Ai` and its first two derivatives on the grid.
#[derive(Clone, Debug)]
pub struct PsiAi {
    pub psi: ComplexField,
    pub d1: Vec<C64>,
    pub d2: Vec<C64>,
    pub denominator: Scaled,
    pub pole: C64,
}

/// True in the critical-layer regime `|c| <= |eps|^{(1-theta)/3}`.
pub fn case_one(sp: &SpectralParams, theta: f64) -> bool {
    sp.c.norm() <= sp.eps().norm().powf((1.0 - theta) / 3.0)
}

/// `psi_Ai(Y) = Ai_alpha((Y - Z_c)/eps~^{1/3}) / Ai_alpha(-Z_c/eps~^{1/3})`.
pub fn build_psi_ai(
    p: &ShearProfile,
    sp: &SpectralParams,
    cl: &CriticalLayerData,
    g: &HalfLineGrid,
) -> Result<PsiAi> {
    let _ = p;
    let pole = cl.pole(sp.alpha());
    check_pole(Some(pole))?;
    let s = cl.eps_tilde_cbrt;
    let z0 = -cl.z_c / s;
    let den = airy_ai_alpha_scaled(z0, pole)?[0];
    if den.ln().re < (1e-30f64).ln() || den.mant == ZERO {
        return Err(Error::Regime(format!("Ai_alpha denominator vanishes at z = {z0}")));
    }
    let vals: Vec<Result<[Scaled; 3]>> = {
        use rayon::prelude::*;
        g.nodes
            .par_iter()
            .map(|&y| {
                let z = (C64::new(y, 0.0) - cl.z_c) / s;
                // Far out the ratio underflows; skip the contour work.
                if z.norm() > 2.0 * DIRECT_RADIUS && (scale_exponent(z) - den.exp).re < -800.0 {
                    let zero = Scaled { mant: ZERO, exp: ZERO };
                    return Ok([zero; 3]);
                }
                airy_ai_alpha_scaled(z, pole)
            })
            .collect()
    };
    let mut psi = Vec::with_capacity(g.len());
    let mut d1 = Vec::with_capacity(g.len());
    let mut d2 = Vec::with_capacity(g.len());
    let (s1, s2) = (ONE / s, ONE / (s * s));
    for v in vals {
        let v = v?;
        psi.push(v[0].ratio(&den));
        d1.push(v[1].ratio(&den) * s1);
        d2.push(v[2].ratio(&den) * s2);
    }
    psi[0] = ONE;
    Ok(PsiAi { psi: ComplexField::with_bc(psi, LeftBc::Free, RightBc::Decay), d1, d2, denominator: den, pole })
}

/// Convenience wrapper taking a shared grid.
pub fn build_psi_ai_shared(p: &ShearProfile, sp: &SpectralParams, g: &Arc<HalfLineGrid>) -> Result<PsiAi> {
    let cl = critical_layer(p, sp, g)?;
    build_psi_ai(p, sp, &cl, g)
}

/// Least-squares fit of `log f(z) = a + b z^{3/2} + c log z + sum_j d_j z^{-j/2}`
/// along a ray, using the unwrapped phase. Returns `(b, c)` (real parts).
pub fn fit_asymptotics(zs: &[C64], logs: &[C64], extra: &[f64]) -> (C64, C64) {
    use nalgebra::{DMatrix, DVector};
    let ncol = 3 + extra.len();
    let mut a = DMatrix::<nalgebra::Complex<f64>>::zeros(zs.len(), ncol);
    let mut b = DVector::<nalgebra::Complex<f64>>::zeros(zs.len());
    for (i, (&z, &l)) in zs.iter().zip(logs).enumerate() {
        a[(i, 0)] = ONE;
        a[(i, 1)] = z * z.sqrt();
        a[(i, 2)] = z.ln();
        for (j, &pw) in extra.iter().enumerate() {
            a[(i, 3 + j)] = z.powf(pw);
        }
        b[i] = l;
    }
    let svd = a.svd(true, true);
    let x = svd.solve(&b, 1e-14).expect("least squares");
    (x[1], x[2])
}

/// Logs of `Ai_alpha^{(k)}` along `z = rho e^{i phi}` with the phase unwrapped.
pub fn log_samples(phi: f64, p: Option<C64>, k: usize, rhos: &[f64]) -> Result<(Vec<C64>, Vec<C64>)> {
    let mut zs = Vec::new();
    let mut logs: Vec<C64> = Vec::new();
    let mut mants: Vec<C64> = Vec::new();
    for &r in rhos {
        let z = C64::from_polar(r, phi);
        let v = eval_all(z, p)?[k];
        // Unwrap the slowly varying mantissa; the exponent is exact.
        let mut l = v.mant.ln();
        if let Some(prev) = mants.last() {
            let mut d = l.im - prev.im;
            while d > PI {
                l.im -= 2.0 * PI;
                d -= 2.0 * PI;
            }
            while d < -PI {
                l.im += 2.0 * PI;
                d += 2.0 * PI;
            }
        }
        zs.push(z);
        mants.push(l);
        logs.push(l + v.exp);
    }
    Ok((zs, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Classical Airy function from its Maclaurin series.
    fn ai_classical(z: C64) -> C64 {
        let c1 = 0.355_028_053_887_817_2;
        let c2 = 0.258_819_403_792_806_8;
        let z3 = z * z * z;
        let (mut f, mut g) = (ONE, z);
        let (mut sf, mut sg) = (ONE, z);
        for k in 0..200 {
            let k = k as f64;
            f *= z3 / ((3.0 * k + 2.0) * (3.0 * k + 3.0));
            g *= z3 / ((3.0 * k + 3.0) * (3.0 * k + 4.0));
            sf += f;
            sg += g;
            if f.norm() + g.norm() < 1e-18 * (sf.norm() + sg.norm()) {
                break;
            }
        }
        sf * c1 - sg * c2
    }

    #[test]
    fn normalization_against_maclaurin() {
        let norm = 2.0 * PI * I;
        for z in [C64::new(0.3, 0.1), C64::new(-1.2, 0.5), C64::new(2.0, -1.0)] {
            let r = airy_ai(z, 0).unwrap() / ai_classical(z);
            assert!((r - norm).norm() < 1e-10 * norm.norm(), "z={z}: {r}");
        }
    }

    #[test]
    fn airy_ode_at_one_plus_i() {
        let z = C64::new(1.0, 1.0);
        let v = airy_ai_scaled(z).unwrap();
        let res = (v[2].value() - z * v[0].value()).norm() / v[0].value().norm();
        assert!(res < 1e-8);
        // Independent check by finite differences of the k = 0 value.
        let hh = 1e-3;
        let f = |w: C64| airy_ai(w, 0).unwrap();
        let fd = (f(z + hh) - 2.0 * f(z) + f(z - hh)) / (hh * hh);
        assert!((fd - z * f(z)).norm() / f(z).norm() < 1e-5);
    }

    #[test]
    fn steepest_descent_matches_direct_quadrature() {
        for &r in &[4.5, 5.5] {
            for k in 0..12 {
                let phi = -PI + 0.05 + (2.0 * PI - 0.1) * k as f64 / 11.0;
                let z = C64::from_polar(r, phi);
                for pole in [None, Some(C64::from_polar(0.3, -PI / 6.0)), Some(C64::new(0.0, 0.0))] {
                    let a = steepest(z, pole).unwrap();
                    let b = direct(z, pole).unwrap();
                    for j in 0..3 {
                        let (va, vb) = (a[j].mant, b[j].mant);
                        assert!((va - vb).norm() < 1e-9 * vb.norm().max(1e-300), "z={z} pole={pole:?} k={j}: {va} {vb}");
                    }
                }
            }
        }
    }

    #[test]
    fn pole_equation_residual() {
        let z = C64::from_polar(2.0, PI / 8.0);
        let p = C64::from_polar(0.1, -PI / 6.0);
        let v = airy_ai_alpha_scaled(z, p).unwrap();
        let ai = airy_ai(z, 0).unwrap();
        let res = (v[2].value() - p * p * v[0].value() - ai).norm() / ai.norm();
        assert!(res < 1e-6);
        let w = airy_ai_alpha_scaled(C64::new(7.0, 3.0), ZERO).unwrap();
        let aw = airy_ai_scaled(C64::new(7.0, 3.0)).unwrap();
        assert!((w[2].mant - aw[0].mant).norm() < 1e-9 * aw[0].mant.norm());
        assert!(airy_ai_alpha(z, C64::new(1.2, 0.0), 0).is_err());
    }

    #[test]
    fn contour_invariance_under_longer_legs() {
        let z = C64::new(-2.0, 1.5);
        let c = AiryContour::for_z(z);
        let longer = AiryContour { r_trunc: 2.0 * c.r_trunc, nodes_per_leg: 40 };
        let e = scale_exponent(z);
        let a = polyline_integral(&contour_points(&c), z, e, None, c.nodes_per_leg).0[0];
        let b = polyline_integral(&contour_points(&longer), z, e, None, 40).0[0];
        assert!((a - b).norm() < 1e-8 * b.norm());
    }

    #[test]
    fn exponent_fit_for_ai_alpha() {
        let rhos: Vec<f64> = (0..26).map(|i| 5.0 + i as f64).collect();
        for phi in [0.0, PI / 3.0, -PI / 3.0, 2.0 * PI / 3.0, -2.0 * PI / 3.0] {
            for k in 0..3 {
                let (zs, logs) = log_samples(phi, Some(ZERO), k, &rhos).unwrap();
                let (b, c) = fit_asymptotics(&zs, &logs, &[-1.5, -3.0]);
                assert!((b.re + 2.0 / 3.0).abs() < 0.01 * 2.0 / 3.0, "phi={phi} k={k} b={b}");
                let expect = -(5.0 - 2.0 * k as f64) / 4.0;
                assert!((c.re - expect).abs() < 0.05, "phi={phi} k={k} c={c}");
            }
        }
    }

    #[test]
    fn psi_ai_is_normalized_and_decays() {
        use crate::halfline_grid::{make_grid, Stretch};
        use crate::profiles::build_profile;
        let prof = build_profile("exp", &Default::default()).unwrap();
        let g = Arc::new(make_grid(400, 40.0, Stretch::Tanh { beta: 3.0 }).unwrap());
        let sp = SpectralParams::new(64, 1e-4, 2.0 / 3.0, 0.05, C64::new(0.1, 0.05)).unwrap();
        assert!(case_one(&sp, 0.08));
        let cl = critical_layer(&prof, &sp, &g).unwrap();
        assert!(cl.z_c.im > 0.0);
        let psi = build_psi_ai(&prof, &sp, &cl, &g).unwrap();
        assert_eq!(psi.psi.values[0], ONE);
        assert!(psi.psi.values.last().unwrap().norm() < 1e-8);
        // Derivative samples agree with the grid derivative of the values.
        let fd = g.d1().apply(&psi.psi.values);
        let scale = psi.d1.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for i in 10..g.len() - 10 {
            assert!((fd[i] - psi.d1[i]).norm() < 1e-3 * scale, "i={i}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ratio_to_classical_is_constant(re in -3.0f64..3.0, im in -3.0f64..3.0) {
            let z = C64::new(re, im);
            let r = airy_ai(z, 0).unwrap() / ai_classical(z);
            prop_assert!((r - 2.0 * PI * I).norm() < 1e-8);
        }
    }
}
