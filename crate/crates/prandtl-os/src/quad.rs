// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Gauss-Legendre panel quadrature on top of `gauss-quad`, with cached rules.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::legendre::GaussLegendre;

use crate::C64;

/// Nodes and weights on `[-1, 1]`.
#[derive(Debug)]
pub struct Rule {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

pub fn gl(n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("quadrature cache poisoned");
    map.entry(n)
        .or_insert_with(|| {
            let q = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
            let (x, w) = q.as_node_weight_pairs().iter().copied().unzip();
            Arc::new(Rule { x, w })
        })
        .clone()
}

impl Rule {
    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
        self.x.iter().zip(&self.w).map(move |(x, w)| (m + h * x, h * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    pub fn integrate_c<F: FnMut(f64) -> C64>(&self, a: f64, b: f64, mut f: F) -> C64 {
        self.mapped(a, b).map(|(x, w)| f(x) * w).sum()
    }
}

/// Integral over the panels delimited by sorted `breaks`.
pub fn panels<F: FnMut(f64) -> f64>(breaks: &[f64], n: usize, mut f: F) -> f64 {
    let rule = gl(n);
    breaks.windows(2).filter(|w| w[1] > w[0]).map(|w| rule.integrate(w[0], w[1], &mut f)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let r = gl(5);
        let v = r.integrate(0.0, 2.0, |x| x.powi(9));
        assert!((v - 102.4).abs() < 1e-11);
        let s = panels(&[0.0, 1.0, 3.0], 8, |x| (-x).exp());
        assert!((s - (1.0 - (-3.0f64).exp())).abs() < 1e-14);
    }
}
