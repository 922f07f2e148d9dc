//! The loop vertex expansion of the rescaled cumulants: the convergent
//! ciliated-tree series with interpolation-parameter integrals and
//! complex-covariance Gaussian integrals per tree.
//!
//! Three evaluation paths per expansion order n:
//! - exhaustive trees with deterministic quadrature (edge-ordering simplices
//!   for the parameter integral, tensor Gauss-Hermite after a Cholesky root
//!   for the Gaussian) at low orders;
//! - the exact per-order epsilon series, whose coefficients are pure
//!   combinatorial rationals computed once and cached (used when the local
//!   series converges fast enough, and by the coefficient extraction);
//! - seeded joint Monte Carlo over (parameters, Gaussian) with antithetic
//!   pairs and common random numbers across couplings and tilts.
//!
//! The Gaussian factor uses the root-scaling substitution `sigma -> sqrt(z) X`
//! with `z = eps e^{-i psi}`; the resulting per-vertex factor depends on the
//! tilt only through phases that cancel, which is asserted numerically.

use crate::bkar::for_each_permutation;
use crate::combin::{canonical_form, enumerate_trees, factorial, CombinError, LabelledTree};
use crate::quad::{gauss_hermite_normal, gauss_legendre_01};
use crate::surface::{lift_sqrt, project, EpsParam, SurfacePoint, Tilt};
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

/// Exhaustive tree enumeration stops here; beyond it trees are sampled.
pub const EXHAUSTIVE_TREE_CAP: usize = 8;
/// The exact-series path is available up to this order.
pub const SERIES_ORDER_CAP: usize = 6;

/// Depth of the cached epsilon series per order.
pub fn series_q_cap(n: usize) -> usize {
    if n <= 4 {
        12
    } else {
        6
    }
}

#[derive(Debug, Error)]
pub enum LveError {
    #[error("domain violation: {0}")]
    DomainViolation(String),
    #[error("order {n} exceeds cap {cap} (enable sampled trees for higher orders)")]
    CapExceeded { n: usize, cap: usize },
    #[error("convergence ratio gamma = {gamma} >= 1: outside the cardioid for this tilt")]
    GammaTooLarge { gamma: f64 },
    #[error("per-order epsilon series not convergent at order {n} (ratio {ratio})")]
    SeriesNotConvergent { n: usize, ratio: f64 },
    #[error(transparent)]
    Combin(#[from] CombinError),
}

/// Evaluation controls for the tree sum.
#[derive(Clone, Debug)]
pub struct LveScheme {
    /// Seed for all Monte Carlo paths; per-(order, tree) streams are derived
    /// from it, independent of coupling, epsilon and tilt (common random
    /// numbers across parameter values).
    pub seed: u64,
    /// Deterministic-quadrature path for n <= this.
    pub det_n_max: usize,
    /// Base Monte Carlo sample count per tree at order 5; halved per extra order.
    pub mc_samples_per_tree: usize,
    /// Force the exact-series path for every order (error if not convergent).
    pub force_series: bool,
    /// Accept the series path when the last term ratio stays below this.
    pub series_ratio_max: f64,
    /// ... and the estimated series tail is below this relative level.
    pub series_tail_rel: f64,
    /// Allow Prufer-sampled trees beyond the exhaustive cap.
    pub allow_sampled_trees: bool,
    /// Number of sampled trees per order beyond the cap.
    pub sampled_tree_count: usize,
}

impl Default for LveScheme {
    fn default() -> Self {
        LveScheme {
            seed: 0x00C0_FFEE,
            det_n_max: 4,
            mc_samples_per_tree: 768,
            force_series: false,
            series_ratio_max: 0.7,
            series_tail_rel: 1e-6,
            allow_sampled_trees: false,
            sampled_tree_count: 4000,
        }
    }
}

impl LveScheme {
    fn u_order(&self, n: usize) -> usize {
        match n {
            0..=2 => 16,
            3 => 12,
            _ => 6,
        }
    }

    fn sigma_order(&self, n: usize) -> usize {
        match n {
            0..=1 => 32,
            2 => 24,
            3 => 14,
            _ => 8,
        }
    }

    fn mc_samples(&self, n: usize) -> usize {
        (self.mc_samples_per_tree >> n.saturating_sub(5)).max(32)
    }

    fn tree_rng(&self, n: usize, tree_idx: u64) -> ChaCha8Rng {
        // splitmix-style mix so streams are independent of scheduling.
        let mut x = self
            .seed
            .wrapping_add((n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add(tree_idx.wrapping_mul(0xBF58_476D_1CE4_E5B9));
        x ^= x >> 30;
        x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x ^= x >> 27;
        x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
        ChaCha8Rng::seed_from_u64(x)
    }
}

/// One order of the tree sum.
#[derive(Clone, Debug)]
pub struct TreeTerm {
    pub order: usize,
    pub value: Complex64,
    pub err_estimate: f64,
    /// Partial sums per tree class (degree multiset), before the order prefactor.
    pub breakdown: Vec<(String, Complex64)>,
}

/// Epsilon-expansion coefficients of a cumulant at fixed coupling.
#[derive(Clone, Debug)]
pub struct SeriesData {
    pub k: usize,
    pub g: SurfacePoint,
    /// a_0 .. a_Q.
    pub coefficients: Vec<Complex64>,
    /// Per-coefficient estimate of the truncated order tail.
    pub truncation: Vec<f64>,
}

/// The summed expansion with its geometric tail bound.
#[derive(Clone, Debug)]
pub struct LveCumulant {
    pub value: Complex64,
    pub tail_bound: f64,
    pub gamma: f64,
    pub terms: Vec<TreeTerm>,
}

const MAXN: usize = 9;

struct TreeGeometry {
    n: usize,
    degrees: Vec<usize>,
    /// prod (d_v - 1)! over the bare tree degrees.
    deg_fact: f64,
    /// (i, j, edge indices of the path).
    pair_paths: Vec<(usize, usize, Vec<usize>)>,
    label: String,
}

fn geometry(tree: &LabelledTree) -> TreeGeometry {
    let n = tree.n();
    let degrees = tree.degrees();
    let mut deg_fact = 1.0;
    for &d in &degrees {
        for t in 2..d {
            deg_fact *= t as f64;
        }
    }
    let mut pair_paths = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pair_paths.push((i, j, tree.path_edges(i, j)));
        }
    }
    let mut sorted = degrees.clone();
    sorted.sort_unstable();
    let label = format!("deg{sorted:?}");
    TreeGeometry {
        n,
        degrees,
        deg_fact,
        pair_paths,
        label,
    }
}

#[allow(clippy::needless_range_loop)]
fn fill_weight_matrix(geom: &TreeGeometry, u: &[f64], w: &mut [[f64; MAXN]; MAXN]) {
    let n = geom.n;
    for i in 0..n {
        for j in 0..n {
            w[i][j] = if i == j { 1.0 } else { 0.0 };
        }
    }
    for (i, j, path) in &geom.pair_paths {
        let mut m = f64::INFINITY;
        for &e in path {
            m = m.min(u[e]);
        }
        w[*i][*j] = m;
        w[*j][*i] = m;
    }
}

/// In-place Cholesky of the leading n x n block; false when not positive.
#[allow(clippy::needless_range_loop)]
fn cholesky(w: &[[f64; MAXN]; MAXN], n: usize, l: &mut [[f64; MAXN]; MAXN]) -> bool {
    for i in 0..n {
        for j in 0..n {
            l[i][j] = 0.0;
        }
    }
    for i in 0..n {
        for j in 0..=i {
            let mut s = w[i][j];
            for t in 0..j {
                s -= l[i][t] * l[j][t];
            }
            if i == j {
                if s <= 0.0 {
                    return false;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    true
}

/// The per-sample tree integrand: prod_v R_v^{d_v} * k! e_k({d_v R_v}) with
/// R_v = (1 - b x_v)^{-1}.
fn sigma_integrand(
    n: usize,
    k: usize,
    degrees: &[usize],
    b: Complex64,
    x: &[f64; MAXN],
) -> Complex64 {
    let mut prod = Complex64::new(1.0, 0.0);
    let mut elem = [Complex64::new(0.0, 0.0); MAXN];
    elem[0] = Complex64::new(1.0, 0.0);
    for v in 0..n {
        let r = (Complex64::new(1.0, 0.0) - b * x[v]).inv();
        let d = degrees[v];
        if d > 0 {
            let mut rp = r;
            for _ in 1..d {
                rp *= r;
            }
            prod *= rp;
        }
        // Attaching a cilium at v multiplies the summand by d_v R_v for
        // d_v >= 1; an isolated vertex (order 1 only) contributes R_v.
        let xv = if d == 0 { r } else { r * d as f64 };
        let top = k.min(v + 1);
        for j in (1..=top).rev() {
            let lower = elem[j - 1];
            elem[j] += lower * xv;
        }
    }
    let mut kfact = 1.0;
    for t in 2..=k {
        kfact *= t as f64;
    }
    prod * elem[k] * kfact
}

/// `b = i lift_sqrt(g) e^{i psi/2} sqrt(eps e^{-i psi})`: the effective
/// per-vertex coupling after root-scaling. The psi phases cancel analytically.
fn effective_b(g: &SurfacePoint, eps: &EpsParam, psi: Tilt) -> Complex64 {
    let z = eps.to_complex() * Complex64::from_polar(1.0, -psi.0);
    Complex64::i() * lift_sqrt(g) * Complex64::from_polar(1.0, psi.0 / 2.0) * z.sqrt()
}

/// The order prefactor 2^{k-1} / n! * (-g/2)^{n-1}.
fn order_prefactor(g: &SurfacePoint, k: usize, n: usize) -> Complex64 {
    let gp = project(g);
    let mut pre = Complex64::new(2.0f64.powi(k as i32 - 1), 0.0);
    for t in 1..=n {
        pre /= t as f64;
    }
    let half_g = -gp / 2.0;
    let mut pw = Complex64::new(1.0, 0.0);
    for _ in 1..n {
        pw *= half_g;
    }
    pre * pw
}

fn domain_checks(
    g: &SurfacePoint,
    eps: &EpsParam,
    psi: Tilt,
    k: usize,
    n: usize,
) -> Result<(), LveError> {
    if k == 0 || n < k {
        return Err(LveError::DomainViolation(format!(
            "need 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let phi = g.lifted_arg();
    let theta = eps.arg();
    if !((psi.0 - theta).abs() < FRAC_PI_2) {
        return Err(LveError::DomainViolation(format!(
            "|psi - arg eps| = {} >= pi/2",
            (psi.0 - theta).abs()
        )));
    }
    if !((phi + psi.0).abs() < PI) {
        return Err(LveError::DomainViolation(format!(
            "|arg g + psi| = {} >= pi",
            (phi + psi.0).abs()
        )));
    }
    if !((phi + theta).abs() < PI) {
        return Err(LveError::DomainViolation(format!(
            "|arg g + arg eps| = {} >= pi: contour rotation would cross the resolvent pole",
            (phi + theta).abs()
        )));
    }
    Ok(())
}

/// Deterministic quadrature for one tree: edge-ordering simplices with a
/// Duffy map and tensor Gauss-Legendre in the parameters, tensor
/// Gauss-Hermite after a Cholesky root in the Gaussian variables.
fn tree_value_quadrature(
    geom: &TreeGeometry,
    k: usize,
    b: Complex64,
    u_order: usize,
    s_order_hi: usize,
) -> (Complex64, f64) {
    let n = geom.n;
    let m = n - 1;
    let s_order_lo = (s_order_hi * 2 / 3).max(3);
    let gh_hi = gauss_hermite_normal(s_order_hi);
    let gh_lo = gauss_hermite_normal(s_order_lo);

    let mut w = [[0.0; MAXN]; MAXN];
    let mut l = [[0.0; MAXN]; MAXN];
    let mut x = [0.0f64; MAXN];

    let mut gauss_pair = |u: &[f64]| -> (Complex64, Complex64) {
        fill_weight_matrix(geom, u, &mut w);
        if !cholesky(&w, n, &mut l) {
            // Interior nodes keep W positive definite; a failure can only be
            // a rounding artifact at an extreme node.
            for (i, row) in l.iter_mut().enumerate().take(n) {
                for (j, entry) in row.iter_mut().enumerate().take(n) {
                    *entry = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        let mut out = [Complex64::new(0.0, 0.0); 2];
        for (slot, rule) in [&gh_hi, &gh_lo].iter().enumerate() {
            let order = rule.nodes.len();
            let mut idx = [0usize; MAXN];
            let mut sum = Complex64::new(0.0, 0.0);
            'nodes: loop {
                let mut wt = 1.0;
                for v in x.iter_mut().take(n) {
                    *v = 0.0;
                }
                for d in 0..n {
                    let y = rule.nodes[idx[d]];
                    wt *= rule.weights[idx[d]];
                    for v in d..n {
                        x[v] += l[v][d] * y;
                    }
                }
                sum += sigma_integrand(n, k, &geom.degrees, b, &x) * wt;
                let mut d = 0;
                loop {
                    if d == n {
                        break 'nodes;
                    }
                    idx[d] += 1;
                    if idx[d] < order {
                        break;
                    }
                    idx[d] = 0;
                    d += 1;
                }
            }
            out[slot] = sum;
        }
        (out[0], out[1])
    };

    if m == 0 {
        let (hi, lo) = gauss_pair(&[]);
        return (hi * geom.deg_fact, (hi - lo).norm() * geom.deg_fact);
    }

    let gl = gauss_legendre_01(u_order);
    let mut total_hi = Complex64::new(0.0, 0.0);
    let mut total_lo = Complex64::new(0.0, 0.0);
    let mut u = vec![0.0f64; m];
    for_each_permutation(m, |perm| {
        // Duffy map: u_{perm[0]} = v_0, u_{perm[j]} = u_{perm[j-1]} v_j;
        // Jacobian prod_l v_l^{m-1-l}.
        let mut idx = vec![0usize; m];
        'unodes: loop {
            let mut wt = 1.0;
            let mut cur = 1.0;
            for (lvl, &i) in idx.iter().enumerate() {
                let v = gl.nodes[i];
                wt *= gl.weights[i] * v.powi((m - 1 - lvl) as i32);
                cur *= v;
                u[perm[lvl]] = cur;
            }
            let (hi, lo) = gauss_pair(&u);
            total_hi += hi * wt;
            total_lo += lo * wt;
            let mut d = 0;
            loop {
                if d == m {
                    break 'unodes;
                }
                idx[d] += 1;
                if idx[d] < u_order {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    });
    (
        total_hi * geom.deg_fact,
        (total_hi - total_lo).norm() * geom.deg_fact,
    )
}

/// Seeded antithetic Monte Carlo over (parameters, Gaussian) for one tree.
fn tree_value_mc(
    geom: &TreeGeometry,
    k: usize,
    b: Complex64,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> (Complex64, f64) {
    let n = geom.n;
    let m = n - 1;
    let mut w = [[0.0; MAXN]; MAXN];
    let mut l = [[0.0; MAXN]; MAXN];
    let mut x = [0.0f64; MAXN];
    let mut u = vec![0.0f64; m];
    let mut zeta = [0.0f64; MAXN];
    let pairs = (samples / 2).max(1);
    let mut mean = Complex64::new(0.0, 0.0);
    let mut m2 = 0.0f64;
    for s in 0..pairs {
        for ui in u.iter_mut() {
            *ui = rng.gen::<f64>().clamp(1e-12, 1.0 - 1e-12);
        }
        fill_weight_matrix(geom, &u, &mut w);
        if !cholesky(&w, n, &mut l) {
            for (i, row) in w.iter_mut().enumerate().take(n) {
                row[i] += 1e-10;
            }
            if !cholesky(&w, n, &mut l) {
                continue;
            }
        }
        for z in zeta.iter_mut().take(n) {
            *z = rng.sample(StandardNormal);
        }
        let mut pair_val = Complex64::new(0.0, 0.0);
        for sign in [1.0f64, -1.0] {
            for v in 0..n {
                x[v] = 0.0;
                for d in 0..=v {
                    x[v] += l[v][d] * zeta[d] * sign;
                }
            }
            pair_val += sigma_integrand(n, k, &geom.degrees, b, &x);
        }
        pair_val *= 0.5;
        let delta = pair_val - mean;
        mean += delta / (s as f64 + 1.0);
        m2 += delta.norm_sqr() * (1.0 - 1.0 / (s as f64 + 1.0));
    }
    let var = if pairs > 1 {
        m2 / (pairs as f64 - 1.0)
    } else {
        0.0
    };
    (
        mean * geom.deg_fact,
        (var / pairs as f64).sqrt() * geom.deg_fact,
    )
}

// ---------------------------------------------------------------------------
// Exact epsilon-series coefficients per order.
//
// Per ciliated tree with coordination degrees D, the Gaussian factor expands
// as E_{zW}[prod (1 - c sigma_v)^{-D_v}] = sum_q w^q H_q with w = -eps g and
//
//   H_q = (1/2^q) sum over (diagonal powers b, off-diagonal pair multiset mu)
//         with |b| + |mu| = q of
//         [prod_i rising(D_i, 2 b_i + deg_i(mu)) / b_i!] *
//         [2^{|mu|} / prod mu!] * int du prod W^mu.
//
// This is the Gamma-representation of the resolvent powers; its q-th
// coefficient is algebraically identical to the Isserlis pairing sum with
// exact parameter integrals (cross-checked in tests). The parameter integrals
// depend only on the tree, so they are aggregated once per canonical tree
// shape into deg(mu)-keyed weights.
// ---------------------------------------------------------------------------

type MuTable = HashMap<Vec<u16>, BigRational>;
type CanonicalEdges = Vec<(usize, usize)>;
type MuTableCache = Mutex<HashMap<CanonicalEdges, Arc<MuTable>>>;
type CoeffCache = Mutex<HashMap<(usize, usize), Arc<Vec<BigRational>>>>;

fn mu_table_cache() -> &'static MuTableCache {
    static CACHE: OnceLock<MuTableCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn coeff_cache() -> &'static CoeffCache {
    static CACHE: OnceLock<CoeffCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn for_each_bounded_composition(len: usize, max_total: usize, f: &mut impl FnMut(&[u32], u32)) {
    fn rec(
        idx: usize,
        used: u32,
        max_total: u32,
        cur: &mut Vec<u32>,
        f: &mut impl FnMut(&[u32], u32),
    ) {
        if idx == cur.len() {
            f(cur, used);
            return;
        }
        for v in 0..=(max_total - used) {
            cur[idx] = v;
            rec(idx + 1, used + v, max_total, cur, f);
        }
        cur[idx] = 0;
    }
    let mut cur = vec![0u32; len];
    rec(0, 0, max_total as u32, &mut cur, f);
}

/// Aggregated parameter integrals of one canonical tree: for every pair
/// multiset mu (up to total degree q_cap), the weight
/// `2^{|mu|} / prod mu! * int du prod W^mu`, keyed by the vertex degree
/// vector of mu.
fn build_mu_table(edges: &[(usize, usize)], n: usize, q_cap: usize) -> MuTable {
    let mut table = MuTable::new();
    if n == 1 {
        table.insert(vec![0u16], BigRational::one());
        return table;
    }
    let tree = LabelledTree::new(n, edges).expect("canonical edges form a tree");
    let m = n - 1;
    let mut pairs: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((i, j, tree.path_edges(i, j)));
        }
    }
    // Per-ordering: the permutation and the min-edge of each pair.
    let mut orderings: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for_each_permutation(m, |perm| {
        let mut pos = vec![0usize; m];
        for (rank, &e) in perm.iter().enumerate() {
            pos[e] = rank;
        }
        let map: Vec<usize> = pairs
            .iter()
            .map(|(_, _, path)| *path.iter().max_by_key(|&&e| pos[e]).expect("nonempty path"))
            .collect();
        orderings.push((perm.to_vec(), map));
    });
    let p_count = pairs.len();
    let mut q_edge = vec![0u64; m];
    for_each_bounded_composition(p_count, q_cap, &mut |mu, total| {
        let mu_len = total as usize;
        let integral = if mu_len == 0 {
            BigRational::one()
        } else {
            let mut acc = FracAcc::new();
            for (perm, map) in &orderings {
                for qe in q_edge.iter_mut() {
                    *qe = 0;
                }
                for (p, &mv) in mu.iter().enumerate() {
                    if mv > 0 {
                        q_edge[map[p]] += mv as u64;
                    }
                }
                let mut denom: u128 = 1;
                let mut suffix: u128 = 0;
                for r in (0..m).rev() {
                    suffix += (q_edge[perm[r]] + 1) as u128;
                    denom *= suffix;
                }
                acc.add_unit_fraction(denom);
            }
            acc.into_rational()
        };
        // weight = 2^{|mu|} / prod mu! * integral
        let mut weight = integral;
        if mu_len > 0 {
            let mut num = BigInt::one();
            let mut den = BigInt::one();
            for _ in 0..mu_len {
                num *= 2;
            }
            for &mv in mu {
                den *= factorial(mv as usize);
            }
            weight *= BigRational::new(num, den);
        }
        let mut degvec = vec![0u16; n];
        for (p, &mv) in mu.iter().enumerate() {
            if mv > 0 {
                degvec[pairs[p].0] += mv as u16;
                degvec[pairs[p].1] += mv as u16;
            }
        }
        let entry = table.entry(degvec).or_insert_with(BigRational::zero);
        *entry += weight;
    });
    table
}

/// Exact accumulator for sums of unit fractions; stays in u128 arithmetic
/// and spills into a big rational on (rare) overflow.
struct FracAcc {
    num: u128,
    den: u128,
    spill: BigRational,
}

fn gcd_u128(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

impl FracAcc {
    fn new() -> Self {
        FracAcc {
            num: 0,
            den: 1,
            spill: BigRational::zero(),
        }
    }

    fn add_unit_fraction(&mut self, d: u128) {
        let g = gcd_u128(self.den, d);
        let dg = d / g;
        let scaled = self.num.checked_mul(dg).and_then(|n| {
            let add = self.den / g;
            n.checked_add(add).zip(self.den.checked_mul(dg))
        });
        match scaled {
            Some((num, den)) => {
                let g2 = gcd_u128(num, den);
                self.num = num / g2;
                self.den = den / g2;
            }
            None => {
                self.spill += BigRational::new(BigInt::from(self.num), BigInt::from(self.den));
                self.num = 1;
                self.den = d;
            }
        }
    }

    fn into_rational(self) -> BigRational {
        self.spill + BigRational::new(BigInt::from(self.num), BigInt::from(self.den))
    }
}

fn rising(base: u64, count: usize) -> BigInt {
    let mut r = BigInt::one();
    for t in 0..count as u64 {
        r *= BigInt::from(base + t);
    }
    r
}

/// Convolution coefficients DS(r) = sum over diagonal powers |b| = r of
/// prod_i rising(D_i, 2 b_i + deg_i) / b_i!.
fn diag_series(dvec: &[u64], degvec: &[u16], r_max: usize) -> Vec<BigRational> {
    let mut poly = vec![BigRational::one()];
    for (i, &d) in dvec.iter().enumerate() {
        let fi: Vec<BigRational> = (0..=r_max)
            .map(|bq| BigRational::new(rising(d, 2 * bq + degvec[i] as usize), factorial(bq)))
            .collect();
        let mut next = vec![BigRational::zero(); r_max + 1];
        for (a, pa) in poly.iter().enumerate() {
            if pa.is_zero() {
                continue;
            }
            for (bq, fb) in fi.iter().enumerate() {
                if a + bq > r_max {
                    break;
                }
                next[a + bq] += pa * fb;
            }
        }
        poly = next;
    }
    poly
}

/// `prod (D_i - 1)! * H_q` for q = 0..=q_cap on a canonical decorated tree.
fn class_series(edges: &[(usize, usize)], dvec: &[u64], q_cap: usize) -> Vec<BigRational> {
    let n = dvec.len();
    let table = {
        let mut cache = mu_table_cache().lock().unwrap();
        cache
            .entry(edges.to_vec())
            .or_insert_with(|| Arc::new(build_mu_table(edges, n, series_q_cap(n))))
            .clone()
    };
    let mut h = vec![BigRational::zero(); q_cap + 1];
    for (degvec, weight) in table.iter() {
        let deg_total: usize = degvec.iter().map(|&d| d as usize).sum();
        let mu_len = deg_total / 2;
        if mu_len > q_cap {
            continue;
        }
        let ds = diag_series(dvec, degvec, q_cap - mu_len);
        for (r, dsr) in ds.iter().enumerate() {
            h[mu_len + r] += weight * dsr;
        }
    }
    let mut dfact = BigInt::one();
    for &d in dvec {
        dfact *= factorial(d as usize - 1);
    }
    let mut pow2 = BigInt::one();
    for (q, hq) in h.iter_mut().enumerate() {
        if q > 0 {
            pow2 *= 2;
        }
        *hq *= BigRational::new(dfact.clone(), pow2.clone());
    }
    h
}

fn subsets_of_size(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for v in start..n {
            cur.push(v);
            rec(v + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// The exact order-n series coefficients: C_{n,k,q} such that the order-n
/// term of the cumulant is `prefactor(n) * sum_q C_{n,k,q} (-g eps)^q`.
///
/// C_{n,k,q} = sum over trees and ordered cilia of prod (D_i - 1)! H_q; pure
/// rationals, independent of coupling, epsilon and tilt. Cached per (n, k).
pub fn tree_sum_coefficients(n: usize, k: usize) -> Result<Arc<Vec<BigRational>>, LveError> {
    if n > SERIES_ORDER_CAP {
        return Err(LveError::CapExceeded {
            n,
            cap: SERIES_ORDER_CAP,
        });
    }
    if k == 0 || k > n {
        return Err(LveError::DomainViolation(format!(
            "need 1 <= k <= n, got k = {k}"
        )));
    }
    if let Some(v) = coeff_cache().lock().unwrap().get(&(n, k)) {
        return Ok(v.clone());
    }
    let q_cap = series_q_cap(n);
    let trees = enumerate_trees(n)?;
    let subsets = subsets_of_size(n, k);
    // Group (tree, cilia) pairs into isomorphism classes with multiplicities.
    let mut classes: HashMap<(CanonicalEdges, Vec<u64>), u64> = HashMap::new();
    for tree in &trees {
        let base = tree.degrees();
        for subset in &subsets {
            let mut dvec: Vec<u64> = base.iter().map(|&d| d as u64).collect();
            for &v in subset {
                dvec[v] += 1;
            }
            *classes.entry(canonical_form(tree, &dvec)).or_insert(0) += 1;
        }
    }
    // Build the per-shape parameter tables in parallel, then cache them.
    let mut shapes: Vec<CanonicalEdges> = classes
        .keys()
        .map(|(edges, _)| edges.clone())
        .collect::<std::collections::HashSet<_>>()
        .into_iter()
        .collect();
    shapes.sort();
    let missing: Vec<CanonicalEdges> = {
        let cache = mu_table_cache().lock().unwrap();
        shapes
            .into_iter()
            .filter(|e| !cache.contains_key(e))
            .collect()
    };
    let built: Vec<(CanonicalEdges, MuTable)> = missing
        .into_par_iter()
        .map(|edges| {
            let table = build_mu_table(&edges, n, series_q_cap(n));
            (edges, table)
        })
        .collect();
    {
        let mut cache = mu_table_cache().lock().unwrap();
        for (edges, table) in built {
            cache.entry(edges).or_insert_with(|| Arc::new(table));
        }
    }
    // Evaluate every class in parallel and accumulate with multiplicities.
    let entries: Vec<((CanonicalEdges, Vec<u64>), u64)> = {
        let mut v: Vec<_> = classes.into_iter().collect();
        v.sort();
        v
    };
    let kfact = BigRational::from_integer(factorial(k));
    let per_class: Vec<Vec<BigRational>> = entries
        .par_iter()
        .map(|((edges, dvec), _)| class_series(edges, dvec, q_cap))
        .collect();
    let mut coeffs = vec![BigRational::zero(); q_cap + 1];
    for (((_, _), count), value) in entries.iter().zip(per_class.iter()) {
        let mult = &kfact * BigRational::from_integer(BigInt::from(*count));
        for (q, vq) in value.iter().enumerate() {
            coeffs[q] += &mult * vq;
        }
    }
    let arc = Arc::new(coeffs);
    coeff_cache().lock().unwrap().insert((n, k), arc.clone());
    Ok(arc)
}

/// The tilt phase that multiplies (g eps)^q in the expansion; analytically
/// (-1)^q for every tilt, computed numerically as an invariance assertion.
fn series_phase(psi: Tilt) -> Complex64 {
    let ph = Complex64::i() * Complex64::from_polar(1.0, psi.0 / 2.0);
    ph * ph * Complex64::from_polar(1.0, -psi.0)
}

/// Per-order evaluation through the exact epsilon series. Returns the value,
/// the series tail estimate, and the last term ratio.
fn term_series_eval(
    g: &SurfacePoint,
    eps: &EpsParam,
    psi: Tilt,
    k: usize,
    n: usize,
) -> Result<(Complex64, f64, f64), LveError> {
    let coeffs = tree_sum_coefficients(n, k)?;
    let phase = series_phase(psi);
    debug_assert!((phase + Complex64::new(1.0, 0.0)).norm() < 1e-10);
    let w = project(g) * eps.to_complex() * phase;
    let mut sum = Complex64::new(0.0, 0.0);
    let mut wq = Complex64::new(1.0, 0.0);
    let mut last = 0.0f64;
    let mut prev = 0.0f64;
    for c in coeffs.iter() {
        let term = wq * c.to_f64().unwrap_or(f64::NAN);
        sum += term;
        prev = last;
        last = term.norm();
        wq *= w;
    }
    let ratio = if prev > 0.0 { last / prev } else { 0.0 };
    let tail = if ratio < 1.0 {
        last * ratio / (1.0 - ratio)
    } else {
        f64::INFINITY
    };
    Ok((sum, tail, ratio))
}

/// One order of the loop vertex expansion.
pub fn lve_term(
    g: &SurfacePoint,
    eps: &EpsParam,
    psi: Tilt,
    k: usize,
    n: usize,
    scheme: &LveScheme,
) -> Result<TreeTerm, LveError> {
    domain_checks(g, eps, psi, k, n)?;
    let pre = order_prefactor(g, k, n);
    let b = effective_b(g, eps, psi);

    // Deterministic quadrature at low orders.
    if n <= scheme.det_n_max && !scheme.force_series {
        let trees = enumerate_trees(n)?;
        let u_order = scheme.u_order(n);
        let s_order = scheme.sigma_order(n);
        let per_tree: Vec<(Complex64, f64, String)> = trees
            .par_iter()
            .map(|t| {
                let geom = geometry(t);
                let (v, e) = tree_value_quadrature(&geom, k, b, u_order, s_order);
                (v, e, geom.label)
            })
            .collect();
        return Ok(assemble_term(n, pre, per_tree));
    }

    // Exact series when it converges fast enough at this (g, eps).
    if n <= SERIES_ORDER_CAP {
        let (value, tail, ratio) = term_series_eval(g, eps, psi, k, n)?;
        let ok = ratio < scheme.series_ratio_max
            && tail <= scheme.series_tail_rel * value.norm().max(1e-300);
        if ok {
            return Ok(TreeTerm {
                order: n,
                value: pre * value,
                err_estimate: pre.norm() * tail,
                breakdown: vec![("series".to_string(), value)],
            });
        }
        if scheme.force_series {
            return Err(LveError::SeriesNotConvergent { n, ratio });
        }
    } else if scheme.force_series {
        return Err(LveError::CapExceeded {
            n,
            cap: SERIES_ORDER_CAP,
        });
    }

    // Monte Carlo.
    let samples = scheme.mc_samples(n);
    if n <= EXHAUSTIVE_TREE_CAP {
        let trees = enumerate_trees(n)?;
        let per_tree: Vec<(Complex64, f64, String)> = trees
            .par_iter()
            .enumerate()
            .map(|(idx, t)| {
                let geom = geometry(t);
                let mut rng = scheme.tree_rng(n, idx as u64);
                let (v, e) = tree_value_mc(&geom, k, b, samples, &mut rng);
                (v, e, geom.label)
            })
            .collect();
        return Ok(assemble_term(n, pre, per_tree));
    }
    if !scheme.allow_sampled_trees {
        return Err(LveError::CapExceeded {
            n,
            cap: EXHAUSTIVE_TREE_CAP,
        });
    }
    // Prufer-sampled trees: value = n^{n-2} E_T[tree value].
    let count = scheme.sampled_tree_count.max(2);
    let per_tree: Vec<(Complex64, f64)> = (0..count)
        .into_par_iter()
        .map(|idx| {
            let mut rng = scheme.tree_rng(n, idx as u64);
            let tree = LabelledTree::random(n, &mut rng);
            let geom = geometry(&tree);
            tree_value_mc(&geom, k, b, samples.max(8), &mut rng)
        })
        .collect();
    let mut mean = Complex64::new(0.0, 0.0);
    for (v, _) in &per_tree {
        mean += v;
    }
    mean /= count as f64;
    let mut var = 0.0;
    for (v, _) in &per_tree {
        var += (v - mean).norm_sqr();
    }
    var /= (count as f64 - 1.0).max(1.0);
    let tree_count = (n as f64).powi(n as i32 - 2);
    let value = pre * mean * tree_count;
    let err = pre.norm() * tree_count * (var / count as f64).sqrt();
    Ok(TreeTerm {
        order: n,
        value,
        err_estimate: err,
        breakdown: vec![("sampled".to_string(), mean * tree_count)],
    })
}

fn assemble_term(n: usize, pre: Complex64, per_tree: Vec<(Complex64, f64, String)>) -> TreeTerm {
    let mut by_label: HashMap<String, Complex64> = HashMap::new();
    let mut total = Complex64::new(0.0, 0.0);
    let mut err = 0.0;
    for (v, e, label) in per_tree {
        total += v;
        err += e;
        *by_label.entry(label).or_insert(Complex64::new(0.0, 0.0)) += v;
    }
    let mut breakdown: Vec<(String, Complex64)> = by_label.into_iter().collect();
    breakdown.sort_by(|a, b| a.0.cmp(&b.0));
    TreeTerm {
        order: n,
        value: pre * total,
        err_estimate: pre.norm() * err,
        breakdown,
    }
}

/// The convergence ratio of the expansion bound at the given tilt:
/// gamma = 4 |g| / ((1 + cos(phi + psi)) sqrt(cos(psi - theta))).
pub fn convergence_gamma(g: &SurfacePoint, eps: &EpsParam, psi: Tilt) -> f64 {
    let denom = (1.0 + (g.lifted_arg() + psi.0).cos()) * (psi.0 - eps.arg()).cos().max(0.0).sqrt();
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    4.0 * g.modulus() / denom
}

/// The summed loop vertex expansion up to order n_max with a geometric tail
/// bound fitted to the last computed orders.
pub fn lve_cumulant(
    g: &SurfacePoint,
    eps: &EpsParam,
    psi: Tilt,
    k: usize,
    n_max: usize,
    scheme: &LveScheme,
) -> Result<LveCumulant, LveError> {
    let gamma = convergence_gamma(g, eps, psi);
    if !(gamma < 1.0) {
        return Err(LveError::GammaTooLarge { gamma });
    }
    let mut terms = Vec::new();
    let mut value = Complex64::new(0.0, 0.0);
    for n in k..=n_max {
        let term = lve_term(g, eps, psi, k, n, scheme)?;
        value += term.value;
        terms.push(term);
    }
    // Tail: amplitude fitted on the last computed orders against the bound
    // shape n^{k-2} gamma^{n-1}.
    let shape = |n: usize| (n as f64).powi(k as i32 - 2) * gamma.powi(n as i32 - 1);
    let mut amp = 0.0f64;
    for term in terms.iter().rev().take(3) {
        let s = shape(term.order);
        if s > 0.0 {
            amp = amp.max((term.value.norm() + term.err_estimate) / s);
        }
    }
    let mut tail = 0.0;
    for n in n_max + 1..n_max + 600 {
        let t = amp * shape(n);
        tail += t;
        if t < 1e-300 {
            break;
        }
    }
    Ok(LveCumulant {
        value,
        tail_bound: tail,
        gamma,
        terms,
    })
}

/// Exact epsilon-Taylor coefficients a_0..a_{q_max} of the order-summed
/// cumulant at fixed coupling, with per-coefficient order-tail estimates.
pub fn eps_coefficients(
    g: &SurfacePoint,
    psi: Tilt,
    k: usize,
    q_max: usize,
    n_max: usize,
) -> Result<SeriesData, LveError> {
    if q_max > 0 && n_max > SERIES_ORDER_CAP {
        return Err(LveError::CapExceeded {
            n: n_max,
            cap: SERIES_ORDER_CAP,
        });
    }
    if n_max > EXHAUSTIVE_TREE_CAP {
        return Err(LveError::CapExceeded {
            n: n_max,
            cap: EXHAUSTIVE_TREE_CAP,
        });
    }
    if n_max >= 5 && q_max > series_q_cap(5) {
        return Err(LveError::DomainViolation(format!(
            "q_max = {q_max} beyond cached depth for n_max = {n_max}"
        )));
    }
    let phase = series_phase(psi);
    let phase_err = (phase + Complex64::new(1.0, 0.0)).norm();
    if phase_err > 1e-10 {
        return Err(LveError::DomainViolation(format!(
            "tilt phases failed to cancel: residual {phase_err:e}"
        )));
    }
    let gp = project(g);
    let mut coefficients = vec![Complex64::new(0.0, 0.0); q_max + 1];
    let mut last_contrib = vec![0.0f64; q_max + 1];
    let mut prev_contrib = vec![0.0f64; q_max + 1];
    for n in k..=n_max {
        let pre = order_prefactor(g, k, n);
        std::mem::swap(&mut prev_contrib, &mut last_contrib);
        if q_max == 0 {
            let c0 = if n <= SERIES_ORDER_CAP {
                tree_sum_coefficients(n, k)?[0].clone()
            } else {
                order_q0_coefficient(n, k)?
            };
            let contrib = pre * c0.to_f64().unwrap_or(f64::NAN);
            last_contrib[0] = contrib.norm();
            coefficients[0] += contrib;
            continue;
        }
        let coeffs = tree_sum_coefficients(n, k)?;
        let mut gq = Complex64::new(1.0, 0.0);
        for q in 0..=q_max {
            let contrib = pre * coeffs[q].to_f64().unwrap_or(f64::NAN) * gq;
            coefficients[q] += contrib;
            last_contrib[q] = contrib.norm();
            gq *= gp * phase;
        }
    }
    let truncation = (0..=q_max)
        .map(|q| {
            let last = last_contrib[q];
            let prev = prev_contrib[q];
            if prev > 0.0 && last > 0.0 {
                let r = (last / prev).min(0.95);
                last * r / (1.0 - r)
            } else {
                last
            }
        })
        .collect();
    Ok(SeriesData {
        k,
        g: *g,
        coefficients,
        truncation,
    })
}

/// The q = 0 tree-sum coefficient for orders beyond the cached series range:
/// `sum over trees and ordered cilia of prod (D_i - 1)!` (the Gaussian factor
/// is 1 at q = 0).
fn order_q0_coefficient(n: usize, k: usize) -> Result<BigRational, LveError> {
    let trees = enumerate_trees(n)?;
    let subsets = subsets_of_size(n, k);
    let mut total = BigInt::zero();
    for tree in &trees {
        let base = tree.degrees();
        for subset in &subsets {
            let mut prod = BigInt::one();
            for (v, &d) in base.iter().enumerate() {
                let dd = d + usize::from(subset.contains(&v));
                prod *= factorial(dd - 1);
            }
            total += prod;
        }
    }
    total *= factorial(k);
    Ok(BigRational::from_integer(total))
}

/// Taylor remainder of order q in the difference form: the order-summed value
/// minus the partial epsilon sum, both evaluated through the exact series so
/// the subtraction is free of quadrature noise.
pub fn remainder(
    g: &SurfacePoint,
    eps: &EpsParam,
    psi: Tilt,
    k: usize,
    q: usize,
    n_max: usize,
    scheme: &LveScheme,
) -> Result<Complex64, LveError> {
    let mut forced = scheme.clone();
    forced.force_series = true;
    forced.det_n_max = 0;
    // The absolute series tail stays negligible against the remainder even
    // when it exceeds a tight fraction of the (much larger) order value.
    forced.series_tail_rel = forced.series_tail_rel.max(3e-5);
    let full = lve_cumulant(g, eps, psi, k, n_max, &forced)?;
    let mut partial = Complex64::new(0.0, 0.0);
    if q > 0 {
        let series = eps_coefficients(g, psi, k, q - 1, n_max)?;
        let e = eps.to_complex();
        let mut ep = Complex64::new(1.0, 0.0);
        for c in series.coefficients.iter() {
            partial += c * ep;
            ep *= e;
        }
    }
    Ok(full.value - partial)
}
