//! Exact verification of the forest interpolation formula on polynomial test
//! functions, and exact integration of min-over-path weight monomials over
//! the interpolation parameters.
//!
//! Polynomial test functions make both sides of the formula exactly
//! computable: derivatives are exact, and on each edge-ordering simplex every
//! weight entry collapses to a single parameter, so each forest integral is a
//! monomial integral with a rational closed form.

use crate::combin::{enumerate_forests, Forest, LabelledTree};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BkarError {
    #[error("vertex count {n} exceeds cap {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("edge variable index out of range for n = {n}")]
    BadEdgeIndex { n: usize },
}

pub const BKAR_VERTEX_CAP: usize = 4;
pub const SIMPLEX_VERTEX_CAP: usize = 6;

/// Index of the variable x_{ij} (i < j) in the n(n-1)/2 edge-slot layout.
pub fn edge_slot(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = (i.min(j), i.max(j));
    debug_assert!(j < n && i != j);
    // Slots ordered lexicographically: (0,1), (0,2), ..., (0,n-1), (1,2), ...
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// A multivariate polynomial in the edge variables with rational coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgePolynomial {
    n: usize,
    /// monomial exponents (length n(n-1)/2) -> coefficient
    terms: HashMap<Vec<u32>, BigRational>,
}

impl EdgePolynomial {
    pub fn new(n: usize) -> Self {
        EdgePolynomial {
            n,
            terms: HashMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_slots(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    pub fn add_term(&mut self, exponents: Vec<u32>, coeff: BigRational) {
        assert_eq!(exponents.len(), self.num_slots());
        if coeff.is_zero() {
            return;
        }
        let now_zero = {
            let e = self
                .terms
                .entry(exponents.clone())
                .or_insert_with(BigRational::zero);
            *e += coeff;
            e.is_zero()
        };
        if now_zero {
            self.terms.remove(&exponents);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &BigRational)> {
        self.terms.iter()
    }

    /// Evaluation at the all-ones point: the sum of the coefficients.
    pub fn eval_ones(&self) -> BigRational {
        let mut s = BigRational::zero();
        for c in self.terms.values() {
            s += c;
        }
        s
    }

    /// First partial derivative in each listed edge slot (once per slot).
    pub fn derivative(&self, slots: &[usize]) -> EdgePolynomial {
        let mut out = EdgePolynomial::new(self.n);
        'term: for (exps, coeff) in &self.terms {
            let mut e = exps.clone();
            let mut c = coeff.clone();
            for &s in slots {
                if e[s] == 0 {
                    continue 'term;
                }
                c *= BigRational::from_integer(BigInt::from(e[s]));
                e[s] -= 1;
            }
            let entry = out.terms.entry(e).or_insert_with(BigRational::zero);
            *entry += c;
        }
        out.terms.retain(|_, v| !v.is_zero());
        out
    }
}

/// Runs `f` on every permutation of 0..m (Heap's algorithm).
pub(crate) fn for_each_permutation(m: usize, mut f: impl FnMut(&[usize])) {
    let mut a: Vec<usize> = (0..m).collect();
    let mut c = vec![0usize; m];
    f(&a);
    let mut i = 0;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            f(&a);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Exact integral over the ordered simplex u_{perm[0]} > ... > u_{perm[m-1]}
/// of prod_j u_{perm[j]}^{q[perm[j]]}: the iterated closed form
/// prod_k 1 / (sum_{j >= k} (q[perm[j]] + 1)).
fn ordered_simplex_integral(perm: &[usize], q: &[u64]) -> BigRational {
    let m = perm.len();
    let mut denom = BigInt::one();
    let mut suffix = 0u64;
    for k in (0..m).rev() {
        suffix += q[perm[k]] + 1;
        denom *= BigInt::from(suffix);
    }
    BigRational::new(BigInt::one(), denom)
}

/// Exact integral over u in [0,1]^{|E(F)|} of prod over vertex pairs of
/// (w^F_{ij}(u))^{p_ij}.
///
/// Pairs in different components force the value 0 (unless their exponent is
/// zero); within components the exponent is routed, per edge ordering, to the
/// path edge carrying the smallest parameter.
pub fn forest_monomial_integral(
    forest: &Forest,
    pair_exponents: &HashMap<(usize, usize), u64>,
) -> BigRational {
    let m = forest.edges().len();
    // Resolve each pair to its path once.
    let mut paths: Vec<(Vec<usize>, u64)> = Vec::new();
    for (&(i, j), &p) in pair_exponents {
        if p == 0 || i == j {
            continue;
        }
        match forest.path_edges(i, j) {
            Some(path) => paths.push((path, p)),
            None => return BigRational::zero(),
        }
    }
    if m == 0 {
        return BigRational::one();
    }
    let mut total = BigRational::zero();
    for_each_permutation(m, |perm| {
        // position[e] = rank of edge e in the ordering (0 = largest u).
        let mut position = vec![0usize; m];
        for (rank, &e) in perm.iter().enumerate() {
            position[e] = rank;
        }
        let mut q = vec![0u64; m];
        for (path, p) in &paths {
            // min u on the path = edge with the largest rank
            let e_min = *path
                .iter()
                .max_by_key(|&&e| position[e])
                .expect("nonempty path");
            q[e_min] += p;
        }
        total += ordered_simplex_integral(perm, &q);
    });
    total
}

/// Exact integral of a weight monomial over a tree's parameter cube.
pub fn simplex_integrate_monomial(
    tree: &LabelledTree,
    pair_exponents: &HashMap<(usize, usize), u64>,
) -> Result<BigRational, BkarError> {
    let n = tree.n();
    if n > SIMPLEX_VERTEX_CAP {
        return Err(BkarError::CapExceeded {
            n,
            cap: SIMPLEX_VERTEX_CAP,
        });
    }
    let forest = Forest::new(n, tree.edges()).expect("tree is a forest");
    Ok(forest_monomial_integral(&forest, pair_exponents))
}

/// The forest-formula right-hand side, evaluated exactly.
pub fn bkar_rhs(f: &EdgePolynomial) -> Result<BigRational, BkarError> {
    let n = f.n();
    if n > BKAR_VERTEX_CAP {
        return Err(BkarError::CapExceeded {
            n,
            cap: BKAR_VERTEX_CAP,
        });
    }
    let forests = enumerate_forests(n).map_err(|_| BkarError::CapExceeded {
        n,
        cap: BKAR_VERTEX_CAP,
    })?;
    // Slot -> vertex pair table.
    let mut pair_of_slot = vec![(0usize, 0usize); f.num_slots()];
    for i in 0..n {
        for j in i + 1..n {
            pair_of_slot[edge_slot(n, i, j)] = (i, j);
        }
    }
    let mut total = BigRational::zero();
    for forest in &forests {
        let slots: Vec<usize> = forest
            .edges()
            .iter()
            .map(|&(i, j)| edge_slot(n, i, j))
            .collect();
        let deriv = f.derivative(&slots);
        for (exps, coeff) in deriv.terms() {
            let mut pair_exponents: HashMap<(usize, usize), u64> = HashMap::new();
            for (slot, &e) in exps.iter().enumerate() {
                if e > 0 {
                    pair_exponents.insert(pair_of_slot[slot], e as u64);
                }
            }
            let integral = forest_monomial_integral(forest, &pair_exponents);
            total += coeff * integral;
        }
    }
    Ok(total)
}

/// Both sides of the forest formula and their exact equality.
pub fn bkar_check(f: &EdgePolynomial) -> Result<(BigRational, BigRational, bool), BkarError> {
    let lhs = f.eval_ones();
    let rhs = bkar_rhs(f)?;
    let equal = lhs == rhs;
    Ok((lhs, rhs, equal))
}
