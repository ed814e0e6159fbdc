// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Stretched grids on `[0, Y_max]`, summation-by-parts differentiation,
//! banded complex LU and constrained boundary-value assembly.
//!
//! The first-derivative operator is the diagonal-norm SBP operator with a
//! fourth-order interior and second-order closure. On the mapped grid the
//! weights `W = diag(Y_s) H_s` make `W D + (W D)^T = diag(-1, 0, .., 0, 1)`
//! hold exactly, so every integration by parts has an exact discrete twin.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Node placement on `[0, Y_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stretch {
    Uniform,
    /// `Y(s) = Y_max (1 - tanh(beta (1 - s)) / tanh(beta))`.
    Tanh { beta: f64 },
}

impl Stretch {
    pub fn parse(tag: &str, beta: f64) -> Result<Self> {
        match tag {
            "uniform" => Ok(Stretch::Uniform),
            "tanh" | "tanh-clustered" => Ok(Stretch::Tanh { beta }),
            other => Err(Error::invalid(format!("unknown stretch `{other}`"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Stretch::Uniform => "uniform",
            Stretch::Tanh { .. } => "tanh",
        }
    }

    /// Returns `(Y(s), dY/ds)`.
    fn map(&self, s: f64, y_max: f64) -> (f64, f64) {
        match *self {
            Stretch::Uniform => (y_max * s, y_max),
            Stretch::Tanh { beta } => {
                let tb = beta.tanh();
                let arg = beta * (1.0 - s);
                let sech = 1.0 / arg.cosh();
                (y_max * (1.0 - arg.tanh() / tb), y_max * beta * sech * sech / tb)
            }
        }
    }
}

/// Boundary tag carried by a field at `Y = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeftBc {
    Free,
    Dirichlet,
    DirichletNeumann,
}

/// Boundary tag carried by a field at `Y = Y_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RightBc {
    Free,
    Dirichlet,
    Decay,
}

/// Complex grid function.
#[derive(Clone, Debug)]
pub struct ComplexField {
    pub values: Vec<C64>,
    pub bc_left: LeftBc,
    pub bc_right: RightBc,
}

impl ComplexField {
    pub fn new(values: Vec<C64>) -> Self {
        Self { values, bc_left: LeftBc::Free, bc_right: RightBc::Free }
    }

    pub fn with_bc(values: Vec<C64>, bc_left: LeftBc, bc_right: RightBc) -> Self {
        Self { values, bc_left, bc_right }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![ZERO; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self, g: &HalfLineGrid) -> f64 {
        g.norm(&self.values)
    }
}

struct GridOps {
    d1: Banded,
    d2: Banded,
    d4: Banded,
}

/// Discretized half-line.
pub struct HalfLineGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `dY/ds` at the nodes.
    pub jacobian: Vec<f64>,
    pub stretch: Stretch,
    pub order: usize,
    pub y_max: f64,
    hs: f64,
    ops: OnceLock<GridOps>,
}

impl Clone for HalfLineGrid {
    fn clone(&self) -> Self {
        Self {
            nodes: self.nodes.clone(),
            weights: self.weights.clone(),
            jacobian: self.jacobian.clone(),
            stretch: self.stretch,
            order: self.order,
            y_max: self.y_max,
            hs: self.hs,
            ops: OnceLock::new(),
        }
    }
}

impl std::fmt::Debug for HalfLineGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HalfLineGrid")
            .field("n", &self.nodes.len())
            .field("y_max", &self.y_max)
            .field("stretch", &self.stretch)
            .finish()
    }
}

const SBP_NORM: [f64; 4] = [17.0 / 48.0, 59.0 / 48.0, 43.0 / 48.0, 49.0 / 48.0];

const SBP_CLOSURE: [[f64; 6]; 4] = [
    [-24.0 / 17.0, 59.0 / 34.0, -4.0 / 17.0, -3.0 / 34.0, 0.0, 0.0],
    [-0.5, 0.0, 0.5, 0.0, 0.0, 0.0],
    [4.0 / 43.0, -59.0 / 86.0, 0.0, 59.0 / 86.0, -4.0 / 43.0, 0.0],
    [3.0 / 98.0, 0.0, -59.0 / 98.0, 0.0, 32.0 / 49.0, -4.0 / 49.0],
];

const SBP_INTERIOR: [f64; 5] = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];

/// Builds a grid with `n` nodes on `[0, y_max]`.
pub fn make_grid(n: usize, y_max: f64, stretch: Stretch) -> Result<HalfLineGrid> {
    if n < 16 {
        return Err(Error::invalid(format!("grid needs at least 16 nodes, got {n}")));
    }
    if !(y_max > 0.0) || !y_max.is_finite() {
        return Err(Error::invalid(format!("Y_max must be positive, got {y_max}")));
    }
    if let Stretch::Tanh { beta } = stretch {
        if !(beta > 0.0) {
            return Err(Error::invalid(format!("tanh stretch needs beta > 0, got {beta}")));
        }
    }
    let hs = 1.0 / (n - 1) as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut jacobian = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let s = if i == n - 1 { 1.0 } else { i as f64 * hs };
        let (y, ys) = stretch.map(s, y_max);
        nodes.push(if i == 0 { 0.0 } else { y });
        jacobian.push(ys);
        let k = i.min(n - 1 - i);
        let c = if k < 4 { SBP_NORM[k] } else { 1.0 };
        weights.push(ys * hs * c);
    }
    nodes[n - 1] = y_max;
    Ok(HalfLineGrid { nodes, weights, jacobian, stretch, order: 4, y_max, hs, ops: OnceLock::new() })
}

impl HalfLineGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn min_spacing(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Spacing of the cell containing `y`.
    pub fn local_spacing(&self, y: f64) -> f64 {
        let i = self.nodes.partition_point(|&x| x <= y).clamp(1, self.len() - 1);
        self.nodes[i] - self.nodes[i - 1]
    }

    /// SHA-256 of the node coordinates, hex encoded.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for y in &self.nodes {
            hasher.update(y.to_le_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn ops(&self) -> &GridOps {
        self.ops.get_or_init(|| {
            let n = self.len();
            let mut d1 = Banded::zeros(n, 3, 3);
            for i in 0..n {
                let k = i.min(n - 1 - i);
                let sign = if i == k { 1.0 } else { -1.0 };
                if k < 4 {
                    for (m, &c) in SBP_CLOSURE[k].iter().enumerate() {
                        if c != 0.0 {
                            let j = if i == k { m } else { n - 1 - m };
                            d1.set(i, j, C64::new(sign * c / self.hs, 0.0));
                        }
                    }
                } else {
                    for (m, &c) in SBP_INTERIOR.iter().enumerate() {
                        if c != 0.0 {
                            d1.set(i, i + m - 2, C64::new(c / self.hs, 0.0));
                        }
                    }
                }
            }
            let inv: Vec<C64> = self.jacobian.iter().map(|&j| C64::new(1.0 / j, 0.0)).collect();
            let d1 = d1.scale_rows(&inv);
            let d2 = d1.matmul(&d1);
            let d4 = d2.matmul(&d2);
            GridOps { d1, d2, d4 }
        })
    }

    pub fn d1(&self) -> &Banded {
        &self.ops().d1
    }

    pub fn d2(&self) -> &Banded {
        &self.ops().d2
    }

    pub fn d4(&self) -> &Banded {
        &self.ops().d4
    }

    /// `<a, b> = sum_i w_i a_i conj(b_i)`.
    pub fn inner(&self, a: &[C64], b: &[C64]) -> C64 {
        self.weights.iter().zip(a.iter().zip(b)).map(|(w, (x, y))| x * y.conj() * *w).sum()
    }

    pub fn norm(&self, a: &[C64]) -> f64 {
        self.weights.iter().zip(a).map(|(w, x)| w * x.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn norm_real(&self, a: &[f64]) -> f64 {
        self.weights.iter().zip(a).map(|(w, x)| w * x * x).sum::<f64>().sqrt()
    }

    /// Weighted norm restricted to rows where `mask` is true.
    pub fn norm_masked(&self, a: &[C64], mask: &[bool]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(mask))
            .filter(|(_, (_, m))| **m)
            .map(|(w, (x, _))| w * x.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn sample<F: Fn(f64) -> C64>(&self, f: F) -> Vec<C64> {
        self.nodes.iter().map(|&y| f(y)).collect()
    }

    pub fn sample_real<F: Fn(f64) -> f64>(&self, f: F) -> Vec<C64> {
        self.nodes.iter().map(|&y| C64::new(f(y), 0.0)).collect()
    }
}

/// Square banded complex matrix in row-major band storage.
#[derive(Clone, Debug)]
pub struct Banded {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    data: Vec<C64>,
}

impl Banded {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![ZERO; n * (kl + ku + 1)] }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![C64::new(1.0, 0.0); n])
    }

    pub fn diag(d: &[C64]) -> Self {
        let mut m = Self::zeros(d.len(), 0, 0);
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    /// Column range `[lo, hi)` stored for row `i`.
    pub fn row_range(&self, i: usize) -> (usize, usize) {
        (i.saturating_sub(self.kl), (i + self.ku + 1).min(self.n))
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku && i < self.n && j < self.n
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        if self.in_band(i, j) {
            self.data[i * self.width() + j + self.kl - i]
        } else {
            ZERO
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        assert!(self.in_band(i, j), "entry ({i},{j}) outside band");
        let w = self.width();
        self.data[i * w + j + self.kl - i] = v;
    }

    pub fn add_to(&mut self, i: usize, j: usize, v: C64) {
        assert!(self.in_band(i, j), "entry ({i},{j}) outside band");
        let w = self.width();
        self.data[i * w + j + self.kl - i] += v;
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.n);
        let w = self.width();
        (0..self.n)
            .map(|i| {
                let (lo, hi) = self.row_range(i);
                let base = i * w + self.kl - i;
                (lo..hi).map(|j| self.data[base + j] * x[j]).sum()
            })
            .collect()
    }

    pub fn apply_real(&self, x: &[f64]) -> Vec<C64> {
        let xc: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.apply(&xc)
    }

    pub fn matmul(&self, b: &Banded) -> Banded {
        assert_eq!(self.n, b.n);
        let mut c = Banded::zeros(self.n, self.kl + b.kl, self.ku + b.ku);
        for i in 0..self.n {
            let (lo, hi) = self.row_range(i);
            for k in lo..hi {
                let a = self.get(i, k);
                if a == ZERO {
                    continue;
                }
                let (lo2, hi2) = b.row_range(k);
                for j in lo2..hi2 {
                    c.add_to(i, j, a * b.get(k, j));
                }
            }
        }
        c
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Banded, s: C64) -> Banded {
        assert_eq!(self.n, other.n);
        let mut c = Banded::zeros(self.n, self.kl.max(other.kl), self.ku.max(other.ku));
        for i in 0..self.n {
            let (lo, hi) = self.row_range(i);
            for j in lo..hi {
                c.add_to(i, j, self.get(i, j));
            }
            let (lo, hi) = other.row_range(i);
            for j in lo..hi {
                c.add_to(i, j, s * other.get(i, j));
            }
        }
        c
    }

    /// `diag(d) * self`.
    pub fn scale_rows(&self, d: &[C64]) -> Banded {
        let mut c = self.clone();
        let w = self.width();
        for i in 0..self.n {
            for v in &mut c.data[i * w..(i + 1) * w] {
                *v *= d[i];
            }
        }
        c
    }

    pub fn scaled(&self, s: C64) -> Banded {
        let mut c = self.clone();
        for v in &mut c.data {
            *v *= s;
        }
        c
    }

    pub fn conj_transpose(&self) -> Banded {
        let mut c = Banded::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            let (lo, hi) = self.row_range(i);
            for j in lo..hi {
                c.set(j, i, self.get(i, j).conj());
            }
        }
        c
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let (lo, hi) = self.row_range(i);
                (lo..hi).map(|j| self.get(i, j).norm()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<C64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }
}

/// LU factors of a banded matrix with partial pivoting.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    // Row-major storage of width 2*kl + ku + 1, offset kl.
    a: Vec<C64>,
    piv: Vec<usize>,
    lmul: Vec<C64>,
}

impl BandedLu {
    pub fn factor(m: &Banded) -> Result<Self> {
        let (n, kl, ku) = (m.n, m.kl, m.ku);
        let w = 2 * kl + ku + 1;
        let mut a = vec![ZERO; n * w];
        for i in 0..n {
            let (lo, hi) = m.row_range(i);
            for j in lo..hi {
                a[i * w + j + kl - i] = m.get(i, j);
            }
        }
        let idx = |i: usize, j: usize| i * w + j + kl - i;
        let mut piv = vec![0usize; n];
        let mut lmul = vec![ZERO; n * kl.max(1)];
        let scale = m.norm_inf().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = a[idx(k, k)].norm();
            for i in k + 1..=last {
                let v = a[idx(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > scale * 1e-300) || !best.is_finite() {
                return Err(Error::Singular(format!("zero pivot at row {k} of {n}")));
            }
            piv[k] = p;
            let jmax = (k + ku + kl).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    a.swap(idx(k, j), idx(p, j));
                }
            }
            let pivot = a[idx(k, k)];
            for i in k + 1..=last {
                let mult = a[idx(i, k)] / pivot;
                lmul[k * kl.max(1) + (i - k - 1)] = mult;
                a[idx(i, k)] = ZERO;
                if mult != ZERO {
                    for j in k + 1..=jmax {
                        let t = a[idx(k, j)];
                        a[idx(i, j)] -= mult * t;
                    }
                }
            }
        }
        Ok(Self { n, kl, ku, a, piv, lmul })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn solve_in_place(&self, b: &mut [C64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let w = 2 * kl + ku + 1;
        let stride = kl.max(1);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != ZERO {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.lmul[k * stride + (i - k - 1)] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let base = i * w + kl - i;
            let mut s = b[i];
            for j in i + 1..=(i + ku + kl).min(n - 1) {
                s -= self.a[base + j] * b[j];
            }
            b[i] = s / self.a[base + i];
        }
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Estimate of the infinity-norm condition number from one inverse
/// power step on a seeded random vector.
pub fn condition_estimate(m: &Banded, lu: &BandedLu) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x: Vec<C64> =
        (0..m.n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
    let nx = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
    lu.solve_in_place(&mut x);
    let ny = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
    m.norm_inf() * ny / nx.max(f64::MIN_POSITIVE)
}

/// Linear side condition `sum_j coeffs_j phi_j = value`, eliminating the
/// unknown at `index`.
#[derive(Clone, Debug)]
pub struct Constraint {
    pub index: usize,
    pub coeffs: Vec<(usize, C64)>,
    pub value: C64,
}

impl Constraint {
    pub fn dirichlet(index: usize, value: C64) -> Self {
        Self { index, coeffs: vec![(index, C64::new(1.0, 0.0))], value }
    }

    /// Row `row` of `op` plus `shift * e_row`, set equal to `value`.
    pub fn from_row(index: usize, op: &Banded, row: usize, shift: C64, value: C64) -> Self {
        let (lo, hi) = op.row_range(row);
        let mut coeffs: Vec<(usize, C64)> =
            (lo..hi).map(|j| (j, op.get(row, j))).filter(|(_, v)| *v != ZERO).collect();
        if shift != ZERO {
            match coeffs.iter_mut().find(|(j, _)| *j == row) {
                Some(e) => e.1 += shift,
                None => coeffs.push((row, shift)),
            }
        }
        Self { index, coeffs, value }
    }

    pub fn eval(&self, phi: &[C64]) -> C64 {
        self.coeffs.iter().map(|&(j, c)| c * phi[j]).sum()
    }
}

/// Square system that imposes constraints by elimination and keeps the
/// remaining rows in weighted Galerkin form.
///
/// Row `j` of a kept unknown reads `(A phi)_j + sum_i conj(P_ij) (w_i / w_j) (A phi)_i`
/// where `phi_E = -C_E^{-1} C_K phi_K` defines `P`. Rows untouched by the
/// elimination are plain collocation rows.
#[derive(Clone, Debug)]
pub struct ConstrainedSystem {
    n: usize,
    constraints: Vec<Constraint>,
    scales: Vec<f64>,
    eliminated: Vec<bool>,
    // For each eliminated index i: (i, [(kept j, P_ij)]).
    pmap: Vec<(usize, Vec<(usize, C64)>)>,
    weights: Vec<f64>,
    spread: usize,
}

impl ConstrainedSystem {
    pub fn new(weights: &[f64], constraints: Vec<Constraint>) -> Result<Self> {
        let n = weights.len();
        let mut eliminated = vec![false; n];
        for c in &constraints {
            if c.index >= n || eliminated[c.index] {
                return Err(Error::invalid(format!("bad or repeated eliminated index {}", c.index)));
            }
            eliminated[c.index] = true;
        }
        let m = constraints.len();
        let e_idx: Vec<usize> = constraints.iter().map(|c| c.index).collect();
        // Dense C_E and the kept columns.
        let mut ce = vec![vec![ZERO; m]; m];
        let mut kept_cols: Vec<usize> = Vec::new();
        for (r, c) in constraints.iter().enumerate() {
            for &(j, v) in &c.coeffs {
                if let Some(q) = e_idx.iter().position(|&e| e == j) {
                    ce[r][q] += v;
                } else if !kept_cols.contains(&j) {
                    kept_cols.push(j);
                }
            }
        }
        kept_cols.sort_unstable();
        let ce_inv = dense_inverse(&ce)
            .ok_or_else(|| Error::Singular("constraint block is singular".into()))?;
        let mut pmap: Vec<(usize, Vec<(usize, C64)>)> = e_idx.iter().map(|&i| (i, Vec::new())).collect();
        let mut spread = 0usize;
        for &j in &kept_cols {
            let col: Vec<C64> = constraints
                .iter()
                .map(|c| c.coeffs.iter().filter(|(jj, _)| *jj == j).map(|(_, v)| *v).sum())
                .collect();
            for (q, entry) in pmap.iter_mut().enumerate() {
                let p: C64 = -(0..m).map(|r| ce_inv[q][r] * col[r]).sum::<C64>();
                if p.norm() > 0.0 {
                    entry.1.push((j, p));
                    spread = spread.max(entry.0.abs_diff(j));
                }
            }
        }
        let scales = constraints
            .iter()
            .map(|c| 1.0 / c.coeffs.iter().map(|(_, v)| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE))
            .collect();
        Ok(Self { n, constraints, scales, eliminated, pmap, weights: weights.to_vec(), spread })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn is_eliminated(&self, i: usize) -> bool {
        self.eliminated[i]
    }

    /// Rows that coincide with plain collocation of the operator.
    pub fn exact_rows(&self) -> Vec<bool> {
        let mut mask: Vec<bool> = self.eliminated.iter().map(|e| !e).collect();
        for (_, entries) in &self.pmap {
            for &(j, _) in entries {
                mask[j] = false;
            }
        }
        mask
    }

    /// Assembles the square system for operator `a`; constraint rows are
    /// written only when `with_constraints` is set (otherwise zero rows).
    /// Constraint rows are scaled to the size of the operator row they
    /// replace, so partial pivoting keeps them exact.
    pub fn assemble(&mut self, a: &Banded, with_constraints: bool) -> Banded {
        if with_constraints {
            for (c, sc) in self.constraints.iter().zip(self.scales.iter_mut()) {
                let (lo, hi) = a.row_range(c.index);
                let row = (lo..hi).map(|j| a.get(c.index, j).norm()).fold(0.0, f64::max);
                let cmax = c.coeffs.iter().map(|(_, v)| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
                *sc = if row > 0.0 { row / cmax } else { 1.0 / cmax };
            }
        }
        let kl = a.kl + self.spread + 4;
        let ku = a.ku + self.spread + 4;
        let mut out = Banded::zeros(self.n, kl.min(self.n - 1), ku.min(self.n - 1));
        for i in 0..self.n {
            if self.eliminated[i] {
                continue;
            }
            let (lo, hi) = a.row_range(i);
            for j in lo..hi {
                out.add_to(i, j, a.get(i, j));
            }
        }
        for (i, entries) in &self.pmap {
            let (lo, hi) = a.row_range(*i);
            for &(j, p) in entries {
                let s = p.conj() * (self.weights[*i] / self.weights[j]);
                for col in lo..hi {
                    out.add_to(j, col, s * a.get(*i, col));
                }
            }
        }
        if with_constraints {
            for (c, &sc) in self.constraints.iter().zip(&self.scales) {
                for &(j, v) in &c.coeffs {
                    out.add_to(c.index, j, v * sc);
                }
            }
        }
        out
    }

    /// Right-hand side for source `h` and the constraint values.
    pub fn rhs(&self, h: &[C64]) -> Vec<C64> {
        let mut out = self.rhs_homogeneous(h);
        for (c, &sc) in self.constraints.iter().zip(&self.scales) {
            out[c.index] = c.value * sc;
        }
        out
    }

    /// Right-hand side with constraint values overridden, in constraint order.
    pub fn rhs_with_values(&self, h: &[C64], values: &[C64]) -> Vec<C64> {
        let mut out = self.rhs_homogeneous(h);
        for ((c, &sc), v) in self.constraints.iter().zip(&self.scales).zip(values) {
            out[c.index] = v * sc;
        }
        out
    }

    /// Right-hand side with zero constraint values.
    pub fn rhs_homogeneous(&self, h: &[C64]) -> Vec<C64> {
        let mut out: Vec<C64> =
            h.iter().enumerate().map(|(i, &v)| if self.eliminated[i] { ZERO } else { v }).collect();
        for (i, entries) in &self.pmap {
            for &(j, p) in entries {
                out[j] += p.conj() * (self.weights[*i] / self.weights[j]) * h[*i];
            }
        }
        out
    }

    /// [`Self::rhs_homogeneous`] as a banded matrix.
    pub fn rhs_matrix(&self) -> Banded {
        let b = self.spread.min(self.n.saturating_sub(1));
        let mut m = Banded::zeros(self.n, b, b);
        for i in 0..self.n {
            if !self.eliminated[i] {
                m.add_to(i, i, C64::new(1.0, 0.0));
            }
        }
        for (i, entries) in &self.pmap {
            for &(j, p) in entries {
                m.add_to(j, *i, p.conj() * (self.weights[*i] / self.weights[j]));
            }
        }
        m
    }

    /// Adjoint of [`Self::rhs_homogeneous`] in the Euclidean pairing.
    pub fn rhs_homogeneous_adjoint(&self, g: &[C64]) -> Vec<C64> {
        let mut out: Vec<C64> =
            g.iter().enumerate().map(|(i, &v)| if self.eliminated[i] { ZERO } else { v }).collect();
        for (i, entries) in &self.pmap {
            for &(j, p) in entries {
                out[*i] += p * (self.weights[*i] / self.weights[j]) * g[j];
            }
        }
        out
    }

    /// Weak residual `P^T W r` (zero for an exact Galerkin solution).
    pub fn weak_residual(&self, r: &[C64]) -> Vec<C64> {
        let scaled = self.rhs_homogeneous(r);
        scaled.iter().zip(&self.weights).map(|(v, w)| v * *w).collect()
    }
}

fn dense_inverse(a: &[Vec<C64>]) -> Option<Vec<Vec<C64>>> {
    let m = a.len();
    let mut aug: Vec<Vec<C64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..m).map(|j| if i == j { C64::new(1.0, 0.0) } else { ZERO }));
            r
        })
        .collect();
    for k in 0..m {
        let p = (k..m).max_by(|&x, &y| aug[x][k].norm().total_cmp(&aug[y][k].norm()))?;
        if aug[p][k].norm() == 0.0 {
            return None;
        }
        aug.swap(k, p);
        let piv = aug[k][k];
        for v in aug[k].iter_mut() {
            *v /= piv;
        }
        for i in 0..m {
            if i != k {
                let f = aug[i][k];
                if f != ZERO {
                    let rowk = aug[k].clone();
                    for (v, rk) in aug[i].iter_mut().zip(rowk) {
                        *v -= f * rk;
                    }
                }
            }
        }
    }
    Some(aug.into_iter().map(|r| r[m..].to_vec()).collect())
}

/// Differential operator together with its boundary rows.
#[derive(Clone, Debug)]
pub struct BandedOperator {
    pub matrix: Banded,
    pub constraints: Vec<Constraint>,
}

impl BandedOperator {
    pub fn bandwidth(&self) -> (usize, usize) {
        (self.matrix.kl, self.matrix.ku)
    }

    pub fn with_constraints(mut self, constraints: Vec<Constraint>) -> Self {
        self.constraints = constraints;
        self
    }
}

/// Banded differentiation matrix of order `k` without boundary rows.
pub fn diff_matrix(g: &HalfLineGrid, k: usize) -> Result<BandedOperator> {
    let matrix = match k {
        1 => g.d1().clone(),
        2 => g.d2().clone(),
        4 => g.d4().clone(),
        _ => return Err(Error::invalid(format!("unsupported derivative order {k}"))),
    };
    Ok(BandedOperator { matrix, constraints: Vec::new() })
}

/// Result of a boundary-value solve.
#[derive(Clone, Debug)]
pub struct BvpSolution {
    pub field: ComplexField,
    /// Relative residual of the assembled square system.
    pub residual: f64,
    pub condition: f64,
}

/// Solves `op phi = rhs` with the constraint rows of `op`.
pub fn solve_bvp(g: &HalfLineGrid, op: &BandedOperator, rhs: &ComplexField) -> Result<BvpSolution> {
    if rhs.len() != g.len() || op.matrix.n != g.len() {
        return Err(Error::invalid("operator, field and grid sizes differ"));
    }
    let mut sys = ConstrainedSystem::new(&g.weights, op.constraints.clone())?;
    let a = sys.assemble(&op.matrix, true);
    let b = sys.rhs(&rhs.values);
    let lu = BandedLu::factor(&a)?;
    let x = lu.solve(&b);
    let residual = relative_residual(&a, &x, &b);
    let condition = condition_estimate(&a, &lu);
    if !(residual <= 1e-6) {
        return Err(Error::Singular(format!(
            "residual {residual:.3e} after solve, condition estimate {condition:.3e}"
        )));
    }
    Ok(BvpSolution { field: ComplexField::new(x), residual, condition })
}

pub fn relative_residual(a: &Banded, x: &[C64], b: &[C64]) -> f64 {
    let ax = a.apply(x);
    let num = ax.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
    let den = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn sbp_property_holds_on_mapped_grid() {
        let g = make_grid(40, 10.0, Stretch::Tanh { beta: 2.5 }).unwrap();
        let n = g.len();
        let d = g.d1();
        for i in 0..n {
            for j in 0..n {
                let q = g.weights[i] * d.get(i, j).re + g.weights[j] * d.get(j, i).re;
                let expect = if i == j && i == 0 {
                    -1.0
                } else if i == j && i == n - 1 {
                    1.0
                } else {
                    0.0
                };
                assert!((q - expect).abs() < 1e-11, "({i},{j}) {q}");
            }
        }
    }

    #[test]
    fn uniform_spacing_and_small_grid_error() {
        let g = make_grid(17, 16.0, Stretch::Uniform).unwrap();
        for w in g.nodes.windows(2) {
            assert_relative_eq!(w[1] - w[0], 1.0, epsilon = 1e-14);
        }
        assert_relative_eq!(g.weights.iter().sum::<f64>(), 16.0, epsilon = 1e-10);
        assert!(make_grid(8, 16.0, Stretch::Uniform).is_err());
        assert!(make_grid(32, 0.0, Stretch::Uniform).is_err());
    }

    #[test]
    fn tanh_grid_clusters_near_wall() {
        let g = make_grid(512, 40.0, Stretch::Tanh { beta: 3.0 }).unwrap();
        let beta: f64 = 3.0;
        let first = 40.0 * (1.0 - (beta * (1.0 - 1.0 / 511.0)).tanh() / beta.tanh());
        assert_relative_eq!(g.nodes[1], first, epsilon = 1e-12);
        assert!(g.min_spacing() < 40.0 / 5000.0);
    }

    #[test]
    fn derivatives_exact_on_low_degree_polynomials() {
        let g = make_grid(33, 8.0, Stretch::Uniform).unwrap();
        let y2 = g.sample_real(|y| y * y);
        let d = g.d1().apply(&y2);
        for (i, &y) in g.nodes.iter().enumerate() {
            assert!((d[i] - c(2.0 * y)).norm() < 1e-10);
        }
        let ones = vec![c(1.0); g.len()];
        assert!(g.d4().apply(&ones).iter().all(|v| v.norm() < 1e-9));
        assert!(diff_matrix(&g, 3).is_err());
    }

    #[test]
    fn second_derivative_interior_order_four() {
        let err = |n: usize| {
            let g = make_grid(n, 16.0, Stretch::Uniform).unwrap();
            let f = g.sample_real(|y| (-y).exp());
            let d2 = g.d2().apply(&f);
            (10..n - 10)
                .filter(|&i| g.nodes[i] > 2.0 && g.nodes[i] < 14.0)
                .map(|i| (d2[i].re - (-g.nodes[i]).exp()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(129), err(257));
        let slope = (e1 / e2).log2();
        assert!((slope - 4.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn banded_lu_matches_dense_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 60;
        let mut m = Banded::zeros(n, 4, 3);
        for i in 0..n {
            let (lo, hi) = m.row_range(i);
            for j in lo..hi {
                m.set(i, j, C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            }
        }
        let x: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let b = m.apply(&x);
        let lu = BandedLu::factor(&m).unwrap();
        let y = lu.solve(&b);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).norm() < 1e-8 * (1.0 + p.norm()));
        }
        let mh = m.conj_transpose();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(mh.get(j, i), m.get(i, j).conj());
            }
        }
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let g = make_grid(20, 5.0, Stretch::Uniform).unwrap();
        let op = BandedOperator { matrix: Banded::identity(20), constraints: vec![] };
        let rhs = ComplexField::new((0..20).map(|i| C64::new(i as f64, -1.0)).collect());
        let sol = solve_bvp(&g, &op, &rhs).unwrap();
        assert_eq!(sol.field.values, rhs.values);
    }

    #[test]
    fn helmholtz_manufactured_solution() {
        // (-d^2 + 1) phi = exp(-2Y), phi(0) = 0, decay: phi = (e^{-Y} - e^{-2Y}) / 3.
        let g = make_grid(801, 30.0, Stretch::Tanh { beta: 2.0 }).unwrap();
        let n = g.len();
        let a = Banded::identity(n).add_scaled(g.d2(), c(-1.0));
        let right = Constraint::from_row(n - 1, g.d1(), n - 1, c(1.0), c(0.0));
        let op = BandedOperator { matrix: a, constraints: vec![Constraint::dirichlet(0, c(0.0)), right] };
        let rhs = ComplexField::new(g.sample_real(|y| (-2.0 * y).exp()));
        let sol = solve_bvp(&g, &op, &rhs).unwrap();
        assert!(sol.residual < 1e-10);
        let err = g
            .nodes
            .iter()
            .zip(&sol.field.values)
            .map(|(&y, v)| (v.re - ((-y).exp() - (-2.0 * y).exp()) / 3.0).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max error {err}");
    }

    #[test]
    fn discrete_integration_by_parts_is_exact() {
        let g = make_grid(300, 20.0, Stretch::Tanh { beta: 3.0 }).unwrap();
        let f = g.sample(|y| C64::new((-y).exp() * (1.0 + y), y.sin() * (-0.5 * y).exp()));
        let h = g.sample(|y| C64::new(y.cos() * (-y).exp(), 0.3 * (-y * y).exp()));
        let df = g.d1().apply(&f);
        let dh = g.d1().apply(&h);
        let n = g.len();
        let boundary = f[n - 1] * h[n - 1].conj() - f[0] * h[0].conj();
        let defect = g.inner(&df, &h) + g.inner(&f, &dh) - boundary;
        assert!(defect.norm() < 1e-12, "{defect}");
    }

    #[test]
    fn constrained_galerkin_rows_are_weakly_exact() {
        let g = make_grid(200, 20.0, Stretch::Tanh { beta: 3.0 }).unwrap();
        let n = g.len();
        let d1 = g.d1();
        let cons = vec![
            Constraint::dirichlet(0, c(0.0)),
            Constraint::from_row(1, d1, 0, c(0.0), c(0.0)),
            Constraint::from_row(n - 1, d1, n - 1, c(0.5), c(0.0)),
        ];
        let mut sys = ConstrainedSystem::new(&g.weights, cons).unwrap();
        let op = g.d4().add_scaled(&Banded::identity(n), c(1.0));
        let h = g.sample(|y| C64::new((-y).exp(), y * (-y).exp()));
        let a = sys.assemble(&op, true);
        let lu = BandedLu::factor(&a).unwrap();
        let phi = lu.solve(&sys.rhs(&h));
        let r: Vec<C64> = op.apply(&phi).iter().zip(&h).map(|(p, q)| p - q).collect();
        assert!(g.inner(&r, &phi).norm() < 1e-9 * g.norm(&h) * g.norm(&phi));
        let mask = sys.exact_rows();
        let scale = op.norm_inf() * g.norm(&phi);
        assert!(g.norm_masked(&r, &mask) < 1e-13 * scale);
        for con in sys.constraints() {
            assert!(con.eval(&phi).norm() < 1e-10);
        }
    }
}
