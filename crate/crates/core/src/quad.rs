//! Shared one-dimensional quadrature machinery: Golub-Welsch construction of
//! Gauss-Legendre and Gauss-Hermite rules, and a globally adaptive integrator
//! for complex (possibly vector-valued) integrands built on a nested
//! Gauss-Legendre pair.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::collections::BinaryHeap;
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("adaptive quadrature did not reach tolerance {tol:e}: error estimate {err:e} after {panels} panels")]
    NonConvergence { tol: f64, err: f64, panels: usize },
}

/// Nodes and weights of a one-dimensional rule.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn golub_welsch(diag: &[f64], offdiag: &[f64], weight_total: f64) -> Rule {
    let n = diag.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = diag[i];
    }
    for i in 0..n.saturating_sub(1) {
        m[(i, i + 1)] = offdiag[i];
        m[(i + 1, i)] = offdiag[i];
    }
    let eig = m.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            (
                eig.eigenvalues[j],
                weight_total * eig.eigenvectors[(0, j)].powi(2),
            )
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

#[derive(PartialEq, Eq, Hash, Clone, Copy)]
enum RuleKind {
    Legendre01,
    HermiteNormal,
}

fn rule_cache() -> &'static Mutex<HashMap<(RuleKind, usize), Rule>> {
    static CACHE: OnceLock<Mutex<HashMap<(RuleKind, usize), Rule>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn cached(kind: RuleKind, order: usize) -> Rule {
    let mut cache = rule_cache().lock().unwrap();
    cache
        .entry((kind, order))
        .or_insert_with(|| match kind {
            RuleKind::Legendre01 => {
                // Legendre on [-1,1]: beta_k = k / sqrt(4k^2 - 1), total weight 2.
                let diag = vec![0.0; order];
                let off: Vec<f64> = (1..order)
                    .map(|k| {
                        let k = k as f64;
                        k / (4.0 * k * k - 1.0).sqrt()
                    })
                    .collect();
                let mut r = golub_welsch(&diag, &off, 2.0);
                for x in r.nodes.iter_mut() {
                    *x = 0.5 * (*x + 1.0);
                }
                for w in r.weights.iter_mut() {
                    *w *= 0.5;
                }
                r
            }
            RuleKind::HermiteNormal => {
                // Physicists' Hermite: beta_k = sqrt(k/2), total weight sqrt(pi).
                // Rescaled so that sum_i w_i f(x_i) ~ E[f(X)] with X ~ N(0,1).
                let diag = vec![0.0; order];
                let off: Vec<f64> = (1..order).map(|k| (k as f64 / 2.0).sqrt()).collect();
                let mut r = golub_welsch(&diag, &off, std::f64::consts::PI.sqrt());
                let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
                for x in r.nodes.iter_mut() {
                    *x *= std::f64::consts::SQRT_2;
                }
                for w in r.weights.iter_mut() {
                    *w *= inv_sqrt_pi;
                }
                r
            }
        })
        .clone()
}

/// Gauss-Legendre rule on [0, 1].
pub fn gauss_legendre_01(order: usize) -> Rule {
    cached(RuleKind::Legendre01, order)
}

/// Gauss-Hermite rule normalised against the standard normal density:
/// `E[f(X)] ~ sum_i w_i f(x_i)` for `X ~ N(0, 1)`.
pub fn gauss_hermite_normal(order: usize) -> Rule {
    cached(RuleKind::HermiteNormal, order)
}

/// Values an adaptive integrator can accumulate.
pub trait QuadValue: Clone {
    fn zero() -> Self;
    fn add_assign(&mut self, other: &Self);
    fn sub(&self, other: &Self) -> Self;
    fn scale(&self, s: f64) -> Self;
    fn norm(&self) -> f64;
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn scale(&self, s: f64) -> Self {
        self * s
    }
    fn norm(&self) -> f64 {
        num_complex::Complex::norm(*self)
    }
}

impl QuadValue for Vec<Complex64> {
    fn zero() -> Self {
        Vec::new()
    }
    fn add_assign(&mut self, other: &Self) {
        if self.len() < other.len() {
            self.resize(other.len(), Complex64::new(0.0, 0.0));
        }
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }
    fn sub(&self, other: &Self) -> Self {
        let n = self.len().max(other.len());
        (0..n)
            .map(|i| {
                self.get(i).copied().unwrap_or_default() - other.get(i).copied().unwrap_or_default()
            })
            .collect()
    }
    fn scale(&self, s: f64) -> Self {
        self.iter().map(|v| v * s).collect()
    }
    fn norm(&self) -> f64 {
        self.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

struct Panel<V> {
    err: f64,
    a: f64,
    b: f64,
    value: V,
}

impl<V> PartialEq for Panel<V> {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl<V> Eq for Panel<V> {}
impl<V> PartialOrd for Panel<V> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<V> Ord for Panel<V> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn panel_estimate<V: QuadValue>(f: &mut impl FnMut(f64) -> V, a: f64, b: f64) -> (V, f64) {
    let lo = gauss_legendre_01(7);
    let hi = gauss_legendre_01(15);
    let width = b - a;
    let mut coarse = V::zero();
    for (x, w) in lo.nodes.iter().zip(lo.weights.iter()) {
        coarse.add_assign(&f(a + width * x).scale(w * width));
    }
    let mut fine = V::zero();
    for (x, w) in hi.nodes.iter().zip(hi.weights.iter()) {
        fine.add_assign(&f(a + width * x).scale(w * width));
    }
    let err = fine.sub(&coarse).norm();
    (fine, err)
}

/// Globally adaptive integration of `f` over `[a, b]`.
///
/// Splits the panel with the largest nested-pair error estimate until the
/// total estimate falls below `rel_tol * |I| + abs_tol`. Returns the value
/// and the final error estimate.
pub fn adaptive<V: QuadValue>(
    mut f: impl FnMut(f64) -> V,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<(V, f64), QuadError> {
    const MAX_PANELS: usize = 4000;
    let mut heap: BinaryHeap<Panel<V>> = BinaryHeap::new();
    // Seed with a few panels so an oscillatory or peaked integrand is not
    // judged from a single estimate.
    let seeds = 8;
    for i in 0..seeds {
        let pa = a + (b - a) * i as f64 / seeds as f64;
        let pb = a + (b - a) * (i + 1) as f64 / seeds as f64;
        let (v, e) = panel_estimate(&mut f, pa, pb);
        heap.push(Panel {
            err: e,
            a: pa,
            b: pb,
            value: v,
        });
    }
    loop {
        let total_err: f64 = heap.iter().map(|p| p.err).sum();
        let mut total = V::zero();
        for p in heap.iter() {
            total.add_assign(&p.value);
        }
        let target = rel_tol * total.norm() + abs_tol;
        if total_err <= target {
            return Ok((total, total_err));
        }
        if heap.len() >= MAX_PANELS {
            return Err(QuadError::NonConvergence {
                tol: target,
                err: total_err,
                panels: heap.len(),
            });
        }
        let worst = heap.pop().expect("nonempty heap");
        let mid = 0.5 * (worst.a + worst.b);
        for (pa, pb) in [(worst.a, mid), (mid, worst.b)] {
            let (v, e) = panel_estimate(&mut f, pa, pb);
            heap.push(Panel {
                err: e,
                a: pa,
                b: pb,
                value: v,
            });
        }
    }
}
