// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Direct time integration per Fourier mode in stream-function form,
//! `d/dtau (L_d phi) = A phi + N`, with
//! `A = -i a_n V L_d + i a_n V'' + sqrt(nu) L_d^2`, `a_n = n sqrt(nu)` signed and
//! `N = (v . grad omega)_n`. Linear modes use a three-stage L-stable SDIRK;
//! the truncated nonlinear system uses an IMEX pair with the convolution explicit.

use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::halfline_grid::{Banded, BandedLu, Constraint, ConstrainedSystem, HalfLineGrid};
use crate::profiles::{ProfileTrack, ShearProfile, VSamples};
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Alexander's three-stage, third-order, stiffly accurate SDIRK.
pub const SDIRK_GAMMA: f64 = 0.435_866_521_508_459;

pub fn sdirk_tableau() -> ([f64; 3], [[f64; 3]; 3]) {
    let g = SDIRK_GAMMA;
    let b1 = -(6.0 * g * g - 16.0 * g + 1.0) / 4.0;
    let b2 = (6.0 * g * g - 20.0 * g + 5.0) / 4.0;
    ([g, 0.5 * (1.0 + g), 1.0], [[g, 0.0, 0.0], [0.5 * (1.0 - g), g, 0.0], [b1, b2, g]])
}

/// `theta_{gamma,n} = |n|^gamma (1 + (1 - gamma) ln(1 + |n|))`.
pub fn theta(gamma: f64, n: i64) -> f64 {
    let m = n.unsigned_abs() as f64;
    m.powf(gamma) * (1.0 + (1.0 - gamma) * m.ln_1p())
}

/// Weights of `X_{d,gamma,K}`: `sup_n (1 + |n|^d) e^{K theta_{gamma,n}} ||P_n f||`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GevreyNorm {
    pub d: f64,
    pub gamma: f64,
    pub k: f64,
}

impl GevreyNorm {
    /// `beta = 2 (1 - gamma) / gamma`.
    pub fn beta(&self) -> f64 {
        2.0 * (1.0 - self.gamma) / self.gamma
    }

    pub fn weight(&self, n: i64) -> f64 {
        let poly = if n == 0 { 0.0 } else { (n.unsigned_abs() as f64).powf(self.d) };
        (1.0 + poly) * (self.k * theta(self.gamma, n)).exp()
    }

    /// Sup over `(n, ||P_n f||)` pairs.
    pub fn eval(&self, modes: &[(i64, f64)]) -> f64 {
        modes.iter().map(|&(n, v)| self.weight(n) * v).fold(0.0, f64::max)
    }

    /// Radius `K - 2 K0 t`.
    pub fn shrunk(&self, k0: f64, t: f64) -> Self {
        Self { k: self.k - 2.0 * k0 * t, ..*self }
    }
}

/// Discrete operators of one mode, assembled independently of the resolvent code.
pub struct ModeOperator {
    pub grid: Arc<HalfLineGrid>,
    pub n: i64,
    pub nu: f64,
    /// Signed `n sqrt(nu)`.
    pub alpha: f64,
    pub ld: Banded,
    l2: Banded,
    sys: ConstrainedSystem,
}

impl ModeOperator {
    pub fn new(grid: Arc<HalfLineGrid>, n: i64, nu: f64) -> Result<Self> {
        let alpha = n as f64 * nu.sqrt();
        let size = grid.len();
        let a2 = alpha * alpha;
        let mut ld = grid.d2().clone();
        for i in 0..size {
            ld.add_to(i, i, C64::new(-a2, 0.0));
        }
        let l2 = ld.matmul(&ld);
        // Clamped wall; phi' + |a| phi = phi'' + |a| phi' = 0 at Y_max.
        let d1 = grid.d1();
        let aa = C64::new(alpha.abs(), 0.0);
        let d2a = grid.d2().add_scaled(d1, aa);
        let cons = vec![
            Constraint::dirichlet(0, ZERO),
            Constraint::from_row(1, d1, 0, ZERO, ZERO),
            Constraint::from_row(size - 2, d1, size - 1, aa, ZERO),
            Constraint::from_row(size - 1, &d2a, size - 1, ZERO, ZERO),
        ];
        let sys = ConstrainedSystem::new(&grid.weights, cons)?;
        Ok(Self { grid, n, nu, alpha, ld, l2, sys })
    }

    fn a_matrix(&self, vs: &VSamples) -> Banded {
        let adv: Vec<C64> = vs.v.iter().map(|&v| -I * self.alpha * v).collect();
        let stretch: Vec<C64> = vs.d2v.iter().map(|&v| I * self.alpha * v).collect();
        self.ld
            .scale_rows(&adv)
            .add_scaled(&Banded::diag(&stretch), ONE)
            .add_scaled(&self.l2, C64::new(self.nu.sqrt(), 0.0))
    }

    pub fn apply_a(&self, vs: &VSamples, phi: &[C64]) -> Vec<C64> {
        let lp = self.ld.apply(phi);
        let l2p = self.ld.apply(&lp);
        let s = self.nu.sqrt();
        (0..phi.len())
            .map(|i| -I * self.alpha * vs.v[i] * lp[i] + I * self.alpha * vs.d2v[i] * phi[i] + l2p[i] * s)
            .collect()
    }

    /// Factored `M - h A` with the boundary rows.
    pub fn implicit(&mut self, vs: &VSamples, h: f64) -> Result<BandedLu> {
        let op = self.ld.add_scaled(&self.a_matrix(vs), C64::new(-h, 0.0));
        BandedLu::factor(&self.sys.assemble(&op, true))
    }

    pub fn solve(&self, lu: &BandedLu, rhs: &[C64]) -> Vec<C64> {
        lu.solve(&self.sys.rhs_homogeneous(rhs))
    }

    pub fn velocity(&self, phi: &[C64]) -> [Vec<C64>; 2] {
        let v1 = self.grid.d1().apply(phi);
        let v2 = phi.iter().map(|p| -I * self.alpha * p).collect();
        [v1, v2]
    }

    /// `omega = -L_d phi`.
    pub fn vorticity(&self, phi: &[C64]) -> Vec<C64> {
        self.ld.apply(phi).into_iter().map(|z| -z).collect()
    }

    /// `||phi'||^2 + a^2 ||phi||^2`.
    pub fn energy(&self, phi: &[C64]) -> f64 {
        let d = self.grid.d1().apply(phi);
        self.grid.norm(&d).powi(2) + self.alpha * self.alpha * self.grid.norm(phi).powi(2)
    }

    /// `-2 Re <A phi, phi>`, the rate of change of [`Self::energy`].
    pub fn production(&self, vs: &VSamples, phi: &[C64]) -> f64 {
        -2.0 * self.grid.inner(&self.apply_a(vs, phi), phi).re
    }
}

/// Single-mode state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeState {
    pub n: i64,
    pub tau: f64,
    pub phi: Vec<C64>,
}

/// Energy bookkeeping of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub tau: f64,
    pub energy: f64,
    /// `|E_{k+1} - E_k - dt (P_k + P_{k+1}) / 2| / E_k`.
    pub identity_residual: f64,
}

/// Advective limit `dt |a| sup|V| <= 1`.
pub const CFL: f64 = 1.0;

pub struct LinearStepper {
    pub op: ModeOperator,
    cache: Option<(u64, BandedLu)>,
}

impl LinearStepper {
    pub fn new(grid: Arc<HalfLineGrid>, n: i64, nu: f64) -> Result<Self> {
        Ok(Self { op: ModeOperator::new(grid, n, nu)?, cache: None })
    }

    fn check_cfl(&self, vs: &VSamples, dt: f64) -> Result<()> {
        let vmax = vs.v.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(dt > 0.0) || dt * self.op.alpha.abs() * vmax > CFL {
            return Err(Error::invalid(format!(
                "time step {dt} violates the advective limit dt |a| sup|V| <= {CFL}"
            )));
        }
        Ok(())
    }

    pub fn step(&mut self, track: &ProfileTrack, state: &ModeState, dt: f64) -> Result<(ModeState, StepReport)> {
        let (c, a) = sdirk_tableau();
        let v0 = track.at(state.tau);
        self.check_cfl(&v0, dt)?;
        let m0 = self.op.ld.apply(&state.phi);
        let mut stages: Vec<Vec<C64>> = Vec::with_capacity(3);
        let mut aphi: Vec<Vec<C64>> = Vec::with_capacity(3);
        let mut last_vs = v0.clone();
        for i in 0..3 {
            let vs = track.at(state.tau + c[i] * dt);
            let mut rhs = m0.clone();
            for j in 0..i {
                for (r, x) in rhs.iter_mut().zip(&aphi[j]) {
                    *r += x * (dt * a[i][j]);
                }
            }
            let h = dt * SDIRK_GAMMA;
            let x = if track.is_frozen() {
                let key = h.to_bits();
                if self.cache.as_ref().map(|c| c.0) != Some(key) {
                    self.cache = Some((key, self.op.implicit(&vs, h)?));
                }
                self.op.solve(&self.cache.as_ref().unwrap().1, &rhs)
            } else {
                let lu = self.op.implicit(&vs, h)?;
                self.op.solve(&lu, &rhs)
            };
            aphi.push(self.op.apply_a(&vs, &x));
            stages.push(x);
            last_vs = vs;
        }
        let phi = stages.pop().unwrap();
        let e0 = self.op.energy(&state.phi);
        let e1 = self.op.energy(&phi);
        let prod = 0.5 * dt * (self.op.production(&v0, &state.phi) + self.op.production(&last_vs, &phi));
        let identity_residual = if e0 > 0.0 { (e1 - e0 - prod).abs() / e0 } else { 0.0 };
        let tau = state.tau + dt;
        Ok((ModeState { n: state.n, tau, phi }, StepReport { tau, energy: e1, identity_residual }))
    }

    /// Equal steps of length at most `dt_max` up to `tau_end`.
    pub fn advance(
        &mut self,
        track: &ProfileTrack,
        state: &ModeState,
        tau_end: f64,
        dt_max: f64,
    ) -> Result<(ModeState, Vec<StepReport>)> {
        let span = tau_end - state.tau;
        if !(span >= 0.0) {
            return Err(Error::invalid("end time precedes the state"));
        }
        let steps = (span / dt_max).ceil() as usize;
        let mut s = state.clone();
        let mut log = Vec::with_capacity(steps);
        for k in 0..steps {
            let dt = (state.tau + span * (k + 1) as f64 / steps as f64) - s.tau;
            let (next, rep) = self.step(track, &s, dt)?;
            s = next;
            log.push(rep);
        }
        Ok((s, log))
    }
}

/// One SDIRK step of a single mode.
pub fn step_linear(track: &ProfileTrack, grid: Arc<HalfLineGrid>, nu: f64, state: &ModeState, dt: f64) -> Result<ModeState> {
    LinearStepper::new(grid, state.n, nu)?.step(track, state, dt).map(|r| r.0)
}

/// Modes `-n_max..=n_max`, stored at index `n + n_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiModeState {
    pub n_max: usize,
    pub tau: f64,
    pub modes: Vec<Vec<C64>>,
}

impl MultiModeState {
    pub fn zeros(n_max: usize, len: usize) -> Self {
        Self { n_max, tau: 0.0, modes: vec![vec![ZERO; len]; 2 * n_max + 1] }
    }

    pub fn index(&self, n: i64) -> usize {
        (n + self.n_max as i64) as usize
    }

    pub fn mode(&self, n: i64) -> &[C64] {
        &self.modes[self.index(n)]
    }

    /// Sets mode `n` and its conjugate partner.
    pub fn set_real_pair(&mut self, n: i64, phi: &[C64]) {
        let i = self.index(n);
        let j = self.index(-n);
        self.modes[i] = phi.to_vec();
        self.modes[j] = phi.iter().map(|z| z.conj()).collect();
    }

    /// `max_n ||phi_{-n} - conj(phi_n)||_inf`.
    pub fn conjugation_defect(&self) -> f64 {
        let m = self.n_max as i64;
        (-m..=m)
            .flat_map(|n| {
                self.mode(n).iter().zip(self.mode(-n)).map(|(a, b)| (a - b.conj()).norm()).collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    pub fn support(&self) -> Vec<i64> {
        let m = self.n_max as i64;
        (-m..=m).filter(|&n| self.mode(n).iter().any(|z| *z != ZERO)).collect()
    }
}

/// Truncated Fourier system around a frozen profile.
pub struct NonlinearStepper {
    pub grid: Arc<HalfLineGrid>,
    pub nu: f64,
    pub n_max: usize,
    pub ops: Vec<ModeOperator>,
    vs: VSamples,
    lus: Vec<Option<(u64, BandedLu)>>,
    pub blowup_factor: f64,
}

/// IMEX ARS(2,2,2): `gamma = 1 - 1/sqrt 2`, `delta = 1 - 1/(2 gamma)`.
const ARS_GAMMA: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;

impl NonlinearStepper {
    pub fn new(p: &ShearProfile, grid: Arc<HalfLineGrid>, nu: f64, n_max: usize) -> Result<Self> {
        if n_max == 0 || n_max > 64 {
            return Err(Error::invalid(format!("n_max must lie in 1..=64, got {n_max}")));
        }
        let m = n_max as i64;
        let ops = (-m..=m).map(|n| ModeOperator::new(grid.clone(), n, nu)).collect::<Result<Vec<_>>>()?;
        let vs = p.sample_grid(nu, &grid);
        Ok(Self { grid, nu, n_max, ops, vs, lus: (0..2 * n_max + 1).map(|_| None).collect(), blowup_factor: 1e6 })
    }

    pub fn op(&self, n: i64) -> &ModeOperator {
        &self.ops[(n + self.n_max as i64) as usize]
    }

    /// `(v . grad omega)_n` over pairs `j + k = n` with both indices retained.
    pub fn nonlinear_term(&self, state: &MultiModeState) -> Vec<Vec<C64>> {
        let m = self.n_max as i64;
        let len = self.grid.len();
        let vel: Vec<[Vec<C64>; 2]> = (-m..=m).map(|n| self.op(n).velocity(state.mode(n))).collect();
        let om: Vec<Vec<C64>> = (-m..=m).map(|n| self.op(n).vorticity(state.mode(n))).collect();
        let live: Vec<bool> = (-m..=m).map(|n| state.mode(n).iter().any(|z| *z != ZERO)).collect();
        let dom: Vec<Vec<C64>> =
            om.iter().zip(&live).map(|(w, &l)| if l { self.grid.d1().apply(w) } else { vec![ZERO; len] }).collect();
        (-m..=m)
            .into_par_iter()
            .map(|n| {
                let mut acc = vec![ZERO; len];
                for j in (-m).max(n - m)..=m.min(n + m) {
                    let k = n - j;
                    let (ji, ki) = ((j + m) as usize, (k + m) as usize);
                    if !live[ji] || !live[ki] {
                        continue;
                    }
                    let ak = I * self.op(k).alpha;
                    for i in 0..len {
                        acc[i] += vel[ji][0][i] * ak * om[ki][i] + vel[ji][1][i] * dom[ki][i];
                    }
                }
                acc
            })
            .collect()
    }

    pub fn energy(&self, state: &MultiModeState) -> f64 {
        let m = self.n_max as i64;
        (-m..=m).map(|n| self.op(n).energy(state.mode(n))).sum()
    }

    /// `(n, ||P_n||)` with the velocity norm of each mode.
    pub fn mode_norms(&self, state: &MultiModeState) -> Vec<(i64, f64)> {
        let m = self.n_max as i64;
        (-m..=m).map(|n| (n, self.op(n).energy(state.mode(n)).sqrt())).collect()
    }

    fn lu(&mut self, idx: usize, h: f64) -> Result<()> {
        let key = h.to_bits();
        if self.lus[idx].as_ref().map(|c| c.0) != Some(key) {
            let lu = self.ops[idx].implicit(&self.vs, h)?;
            self.lus[idx] = Some((key, lu));
        }
        Ok(())
    }

    /// One IMEX step: diffusion and the linearized advection implicit,
    /// the convolution explicit.
    pub fn step(&mut self, state: &MultiModeState, dt: f64) -> Result<MultiModeState> {
        let g = ARS_GAMMA;
        let d = 1.0 - 1.0 / (2.0 * g);
        let h = dt * g;
        for idx in 0..self.ops.len() {
            self.lu(idx, h)?;
        }
        let n1 = self.nonlinear_term(state);
        let mk: Vec<Vec<C64>> = self.ops.iter().zip(&state.modes).map(|(o, p)| o.ld.apply(p)).collect();
        let solve = |this: &Self, idx: usize, rhs: &[C64]| this.ops[idx].solve(&this.lus[idx].as_ref().unwrap().1, rhs);
        let mut s2 = state.clone();
        for idx in 0..self.ops.len() {
            let rhs: Vec<C64> = mk[idx].iter().zip(&n1[idx]).map(|(a, b)| a + b * h).collect();
            s2.modes[idx] = solve(self, idx, &rhs);
        }
        let n2 = self.nonlinear_term(&s2);
        let mut s3 = state.clone();
        for idx in 0..self.ops.len() {
            let a2 = self.ops[idx].apply_a(&self.vs, &s2.modes[idx]);
            let rhs: Vec<C64> = (0..mk[idx].len())
                .map(|i| mk[idx][i] + (n1[idx][i] * d + n2[idx][i] * (1.0 - d)) * dt + a2[i] * (dt * (1.0 - g)))
                .collect();
            s3.modes[idx] = solve(self, idx, &rhs);
        }
        s3.tau = state.tau + dt;
        Ok(s3)
    }
}

/// One IMEX step of the truncated system.
pub fn step_nonlinear(stepper: &mut NonlinearStepper, state: &MultiModeState, dt: f64) -> Result<MultiModeState> {
    stepper.step(state, dt)
}

/// `sup_n (1 + |n|^d) e^{K theta} ||P_n||` of a state.
pub fn gevrey_norm(stepper: &NonlinearStepper, state: &MultiModeState, gn: &GevreyNorm) -> f64 {
    gn.eval(&stepper.mode_norms(state))
}

/// One row of the time series.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeRow {
    /// Physical time `sqrt(nu) tau`.
    pub t: f64,
    pub tau: f64,
    pub mode_norms: Vec<f64>,
    pub gevrey: f64,
    pub energy: f64,
}

#[derive(Clone, Debug)]
pub struct NonlinearRun {
    pub rows: Vec<TimeRow>,
    pub state: MultiModeState,
}

/// Steps to `tau_end` in equal steps of at most `dt_max`; the Gevrey radius
/// follows `gn(t)`. Aborts when the energy exceeds `blowup_factor^2` times its start.
pub fn run_nonlinear(
    stepper: &mut NonlinearStepper,
    state0: &MultiModeState,
    tau_end: f64,
    dt_max: f64,
    gn: impl Fn(f64) -> GevreyNorm,
) -> Result<NonlinearRun> {
    let m = state0.n_max as i64;
    if state0.support().iter().any(|n| n.unsigned_abs() as f64 > 0.5 * state0.n_max as f64) {
        return Err(Error::invalid("initial support exceeds n_max / 2"));
    }
    let sq = stepper.nu.sqrt();
    let row = |st: &MultiModeState, stp: &NonlinearStepper| {
        let norms = stp.mode_norms(st);
        TimeRow {
            t: sq * st.tau,
            tau: st.tau,
            gevrey: gn(sq * st.tau).eval(&norms),
            energy: stp.energy(st),
            mode_norms: norms.iter().map(|x| x.1).collect(),
        }
    };
    let steps = ((tau_end - state0.tau) / dt_max).ceil().max(0.0) as usize;
    let dt = if steps > 0 { (tau_end - state0.tau) / steps as f64 } else { 0.0 };
    let mut st = state0.clone();
    let mut rows = vec![row(&st, stepper)];
    let e0 = rows[0].energy;
    for _ in 0..steps {
        st = stepper.step(&st, dt)?;
        let r = row(&st, stepper);
        if !(r.energy <= stepper.blowup_factor.powi(2) * e0.max(f64::MIN_POSITIVE)) {
            return Err(Error::Blowup(format!(
                "energy {:.3e} at tau = {:.4} exceeds {:.0e} times the initial norm",
                r.energy, st.tau, stepper.blowup_factor
            )));
        }
        rows.push(r);
    }
    debug_assert_eq!(st.modes.len(), (2 * m + 1) as usize);
    Ok(NonlinearRun { rows, state: st })
}

pub fn write_time_series_csv<W: Write>(w: W, n_max: usize, rows: &[TimeRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let m = n_max as i64;
    let mut head = vec!["t".to_string(), "tau".into(), "gevrey".into(), "energy".into()];
    head.extend((-m..=m).map(|n| format!("norm_{n}")));
    out.write_record(&head)?;
    for r in rows {
        let mut rec = vec![
            format!("{:.16e}", r.t),
            format!("{:.16e}", r.tau),
            format!("{:.16e}", r.gevrey),
            format!("{:.16e}", r.energy),
        ];
        rec.extend(r.mode_norms.iter().map(|v| format!("{v:.16e}")));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

const MAGIC: &[u8; 8] = b"PROSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Header `PROSCKPT`, version, grid hash, `n_max`, grid length, `tau`, then
/// the modes as little-endian `(re, im)` pairs.
pub fn write_checkpoint<W: Write>(mut w: W, grid: &HalfLineGrid, state: &MultiModeState) -> Result<()> {
    let hash = grid.hash();
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(hash.len() as u32).to_le_bytes())?;
    w.write_all(hash.as_bytes())?;
    w.write_all(&(state.n_max as u32).to_le_bytes())?;
    w.write_all(&(grid.len() as u32).to_le_bytes())?;
    w.write_all(&state.tau.to_le_bytes())?;
    for m in &state.modes {
        for z in m {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R, grid: &HalfLineGrid) -> Result<MultiModeState> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::invalid("not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let hl = read_u32(&mut r)? as usize;
    let mut hash = vec![0u8; hl];
    r.read_exact(&mut hash)?;
    if hash != grid.hash().as_bytes() {
        return Err(Error::invalid("checkpoint grid hash does not match the grid"));
    }
    let n_max = read_u32(&mut r)? as usize;
    let len = read_u32(&mut r)? as usize;
    if len != grid.len() {
        return Err(Error::invalid("checkpoint length does not match the grid"));
    }
    let tau = read_f64(&mut r)?;
    let mut modes = Vec::with_capacity(2 * n_max + 1);
    for _ in 0..2 * n_max + 1 {
        let mut m = Vec::with_capacity(len);
        for _ in 0..len {
            let re = read_f64(&mut r)?;
            let im = read_f64(&mut r)?;
            m.push(C64::new(re, im));
        }
        modes.push(m);
    }
    Ok(MultiModeState { n_max, tau, modes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halfline_grid::{make_grid, Stretch};
    use crate::profiles::build_profile;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn grid(n: usize) -> Arc<HalfLineGrid> {
        Arc::new(make_grid(n, 40.0, Stretch::Tanh { beta: 3.0 }).unwrap())
    }

    fn bump(g: &HalfLineGrid, c: f64, s: f64, a: C64) -> Vec<C64> {
        g.sample(|y| a * (y * y * (-(y - c).powi(2) / (2.0 * s * s)).exp()))
    }

    fn zero_track(g: &HalfLineGrid, nu: f64) -> ProfileTrack {
        let z = vec![0.0; g.len()];
        let vs = VSamples { v: z.clone(), dv: z.clone(), d2v: z.clone(), d3v: z.clone(), dv_outer: z.clone(), du: z };
        ProfileTrack { nu, taus: vec![0.0], samples: vec![vs] }
    }

    #[test]
    fn tableau_is_consistent() {
        let (c, a) = sdirk_tableau();
        for i in 0..3 {
            assert!((a[i].iter().sum::<f64>() - c[i]).abs() < 1e-14);
        }
        // Third-order conditions for the last row as weights.
        let b = a[2];
        assert!((b.iter().zip(&c).map(|(b, c)| b * c).sum::<f64>() - 0.5).abs() < 1e-12);
        assert!((b.iter().zip(&c).map(|(b, c)| b * c * c).sum::<f64>() - 1.0 / 3.0).abs() < 1e-12);
        let bac: f64 = (0..3).map(|i| b[i] * (0..3).map(|j| a[i][j] * c[j]).sum::<f64>()).sum();
        assert!((bac - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn theta_examples() {
        assert_eq!(theta(1.0, 5), 5.0);
        let want = 8f64.powf(2.0 / 3.0) * (1.0 + 9f64.ln() / 3.0);
        assert!((theta(2.0 / 3.0, 8) - want).abs() < 1e-13 * want);
        let gn = GevreyNorm { d: 2.0, gamma: 7.0 / 9.0, k: 1.0 };
        assert_eq!(gn.eval(&[(0, 0.3)]), 0.3);
        assert!((gn.beta() - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn theta_superadditive_exhaustive() {
        for &g in &[2.0 / 3.0, 5.0 / 7.0, 7.0 / 9.0, 1.0] {
            for n in -64i64..=64 {
                for j in -64i64..=64 {
                    if j == 0 || j == n || (n - j).abs() > 64 {
                        continue;
                    }
                    assert!(theta(g, j) + theta(g, n - j) >= theta(g, n) * (1.0 - 1e-14), "g {g} j {j} n {n}");
                }
            }
        }
    }

    // Least-damped eigenpair of the discrete Stokes pencil by inverse iteration.
    fn stokes_eigen(op: &mut ModeOperator, vs: &VSamples) -> (C64, Vec<C64>) {
        // (M - h A) x = M y has eigenvalues 1/(1 - h lambda); the largest belongs to the least-damped lambda.
        let h = 50.0;
        let lu = op.implicit(vs, h).unwrap();
        let mut x = bump(&op.grid, 3.0, 1.0, ONE);
        let mut lam = ZERO;
        for _ in 0..400 {
            let y = op.solve(&lu, &op.ld.apply(&x));
            let nrm = op.energy(&y).sqrt();
            let ratio = op.grid.inner(&y, &x) / op.grid.inner(&x, &x);
            lam = (ONE - ONE / ratio) / h;
            x = y.iter().map(|z| z / nrm).collect();
        }
        (lam, x)
    }

    #[test]
    fn stokes_mode_decays_at_discrete_eigenvalue() {
        let g = grid(160);
        let nu = 1e-2;
        let track = zero_track(&g, nu);
        let mut st = LinearStepper::new(g.clone(), 8, nu).unwrap();
        let (lam, x) = stokes_eigen(&mut st.op, &track.samples[0]);
        assert!(lam.re < 0.0 && lam.im.abs() < 1e-8 * lam.norm());
        let s0 = ModeState { n: 8, tau: 0.0, phi: x.clone() };
        let (s1, _) = st.advance(&track, &s0, 1.0, 0.01).unwrap();
        let want = (lam.re).exp();
        let got = (st.op.energy(&s1.phi) / st.op.energy(&x)).sqrt();
        assert!((got - want).abs() < 1e-6 * want, "{got} vs {want}");
    }

    #[test]
    fn self_convergence_is_third_order() {
        let g = grid(160);
        let p = build_profile("exp", &BTreeMap::new()).unwrap();
        let nu = 1e-3;
        let track = ProfileTrack::frozen(&p, nu, &g);
        let s0 = ModeState { n: 16, tau: 0.0, phi: bump(&g, 3.0, 1.0, C64::new(1.0, 0.5)) };
        let run = |dt: f64| LinearStepper::new(g.clone(), 16, nu).unwrap().advance(&track, &s0, 1.0, dt).unwrap().0;
        let (a, b, c) = (run(0.1), run(0.05), run(0.025));
        let e = |x: &ModeState, y: &ModeState| {
            let d: Vec<C64> = x.phi.iter().zip(&y.phi).map(|(p, q)| p - q).collect();
            g.norm(&d)
        };
        let order = (e(&a, &b) / e(&b, &c)).log2();
        assert!((order - 3.0).abs() < 0.3, "order {order}");
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let g = grid(64);
        let p = build_profile("exp", &BTreeMap::new()).unwrap();
        let track = ProfileTrack::frozen(&p, 1e-2, &g);
        let s0 = ModeState { n: 100, tau: 0.0, phi: vec![ZERO; g.len()] };
        assert!(step_linear(&track, g.clone(), 1e-2, &s0, 0.5).is_err());
    }

    #[test]
    fn energy_identity_is_tracked() {
        let g = grid(200);
        let p = build_profile("exp", &BTreeMap::new()).unwrap();
        let track = ProfileTrack::frozen(&p, 1e-3, &g);
        let s0 = ModeState { n: 16, tau: 0.0, phi: bump(&g, 3.0, 1.0, ONE) };
        let (_, log) = LinearStepper::new(g.clone(), 16, 1e-3).unwrap().advance(&track, &s0, 0.5, 0.01).unwrap();
        assert!(log.iter().all(|r| r.identity_residual < 1e-4), "{:?}", log.iter().map(|r| r.identity_residual).fold(0.0, f64::max));
    }

    #[test]
    fn nonlinear_zero_stays_zero_and_single_mode_populates_zero_and_double() {
        let g = grid(96);
        let p = build_profile("exp", &BTreeMap::new()).unwrap();
        let mut st = NonlinearStepper::new(&p, g.clone(), 1e-3, 8).unwrap();
        let z = MultiModeState::zeros(8, g.len());
        assert_eq!(st.step(&z, 0.1).unwrap().support(), Vec::<i64>::new());
        let mut s = MultiModeState::zeros(8, g.len());
        // A tilted phase; an untilted wave has no mean stress.
        let tilted: Vec<C64> = bump(&g, 2.0, 1.0, C64::new(0.01, 0.0))
            .iter()
            .zip(bump(&g, 3.0, 1.0, C64::new(0.0, 0.01)))
            .map(|(a, b)| a + b)
            .collect();
        s.set_real_pair(3, &tilted);
        let nl = st.nonlinear_term(&s);
        let live: Vec<i64> = (-8i64..=8).filter(|&n| nl[(n + 8) as usize].iter().any(|z| z.norm() > 0.0)).collect();
        assert_eq!(live, vec![-6, 0, 6]);
    }

    #[test]
    fn conjugation_symmetry_over_many_steps() {
        let g = grid(64);
        let p = build_profile("exp", &BTreeMap::new()).unwrap();
        let mut st = NonlinearStepper::new(&p, g.clone(), 1e-3, 4).unwrap();
        let mut s = MultiModeState::zeros(4, g.len());
        s.set_real_pair(1, &bump(&g, 2.0, 1.0, C64::new(0.02, 0.01)));
        s.set_real_pair(2, &bump(&g, 4.0, 1.5, C64::new(-0.01, 0.02)));
        let mut s = s;
        for _ in 0..1000 {
            s = st.step(&s, 0.05).unwrap();
        }
        let scale = s.modes.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(s.conjugation_defect() <= 1e-12 * scale, "{} vs {scale}", s.conjugation_defect());
    }

    #[test]
    fn support_limit_and_blowup_abort() {
        let g = grid(64);
        let p = build_profile("exp", &BTreeMap::new()).unwrap();
        let mut st = NonlinearStepper::new(&p, g.clone(), 1e-3, 4).unwrap();
        let mut s = MultiModeState::zeros(4, g.len());
        s.set_real_pair(3, &bump(&g, 2.0, 1.0, ONE));
        let gn = |_t: f64| GevreyNorm { d: 0.0, gamma: 1.0, k: 0.0 };
        assert!(run_nonlinear(&mut st, &s, 1.0, 0.1, gn).is_err());
        let mut s = MultiModeState::zeros(4, g.len());
        s.set_real_pair(1, &bump(&g, 2.0, 1.0, C64::new(1e-3, 0.0)));
        st.blowup_factor = 1e-3;
        assert!(matches!(run_nonlinear(&mut st, &s, 1.0, 0.1, gn), Err(Error::Blowup(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = grid(48);
        let mut s = MultiModeState::zeros(2, g.len());
        s.tau = 1.25;
        s.set_real_pair(1, &bump(&g, 2.0, 1.0, C64::new(0.3, -0.7)));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &g, &s).unwrap();
        assert_eq!(read_checkpoint(&buf[..], &g).unwrap(), s);
        let other = make_grid(48, 30.0, Stretch::Uniform).unwrap();
        assert!(read_checkpoint(&buf[..], &other).is_err());
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(read_checkpoint(&bad[..], &g).is_err());
    }

    proptest! {
        #[test]
        fn theta_superadditive_random(g in 0.5f64..=1.0, j in 1i64..5000, k in 1i64..5000) {
            prop_assert!(theta(g, j) + theta(g, k) >= theta(g, j + k) * (1.0 - 1e-14));
        }
    }
}
