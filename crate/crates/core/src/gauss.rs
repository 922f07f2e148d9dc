//! Gaussian expectations for possibly degenerate real covariances and for
//! complex-scaled covariances, the copies trick, and exact Wick moments.
//!
//! Degenerate covariances are handled by eigendecomposition: integration runs
//! only over directions with eigenvalue above the degeneracy threshold, and
//! kernel directions are pinned to zero (the Dirac limit). Complex scalings
//! `z C` with `Re z > 0` are evaluated by the root-scaling substitution
//! `X -> sqrt(z) X`, which agrees with the reweighted-density definition for
//! integrands analytic in the swept sector.

use crate::quad::gauss_hermite_normal;
use nalgebra::DMatrix;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Eigenvalues below this (in absolute terms) count as kernel directions.
pub const DEGENERACY_EPS: f64 = 1e-10;
/// Symmetry tolerance for covariance validation.
pub const SYMMETRY_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GaussError {
    #[error("covariance is not symmetric: |C - C^T| max entry {asym:e}")]
    NotSymmetric { asym: f64 },
    #[error("covariance is indefinite: eigenvalue {eig:e} below -{tol:e}")]
    Indefinite { eig: f64, tol: f64 },
    #[error("complex scale must have positive real part, got {z}")]
    BadScale { z: Complex64 },
    #[error("dimension mismatch: covariance is {cov} but got {other}")]
    DimensionMismatch { cov: usize, other: usize },
}

/// A validated symmetric positive semi-definite covariance.
#[derive(Clone, Debug)]
pub struct Covariance {
    n: usize,
    mat: DMatrix<f64>,
}

impl Covariance {
    pub fn new(mat: DMatrix<f64>) -> Result<Self, GaussError> {
        let n = mat.nrows();
        assert_eq!(n, mat.ncols());
        let mut asym: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                asym = asym.max((mat[(i, j)] - mat[(j, i)]).abs());
            }
        }
        if asym > SYMMETRY_EPS {
            return Err(GaussError::NotSymmetric { asym });
        }
        let min_eig = mat
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig < -DEGENERACY_EPS {
            return Err(GaussError::Indefinite {
                eig: min_eig,
                tol: DEGENERACY_EPS,
            });
        }
        Ok(Covariance { n, mat })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GaussError> {
        let n = rows.len();
        let mat = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Covariance::new(mat)
    }

    pub fn identity(n: usize) -> Self {
        Covariance {
            n,
            mat: DMatrix::identity(n, n),
        }
    }

    /// The all-ones matrix (the copies-trick covariance).
    pub fn all_ones(n: usize) -> Self {
        Covariance {
            n,
            mat: DMatrix::from_element(n, n, 1.0),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    /// Factor C = sum_d lambda_d q_d q_d^T restricted to lambda_d above the
    /// degeneracy threshold; returns per-direction sqrt(lambda_d) * q_d.
    fn reduced_columns(&self) -> Vec<Vec<f64>> {
        let eig = self.mat.clone().symmetric_eigen();
        let mut cols = Vec::new();
        for d in 0..self.n {
            let lam = eig.eigenvalues[d];
            if lam > DEGENERACY_EPS {
                let s = lam.sqrt();
                cols.push((0..self.n).map(|i| s * eig.eigenvectors[(i, d)]).collect());
            }
        }
        cols
    }
}

/// A complex covariance scale with positive real part.
#[derive(Clone, Copy, Debug)]
pub struct ComplexScale {
    z: Complex64,
}

impl ComplexScale {
    pub fn new(z: Complex64) -> Result<Self, GaussError> {
        if !(z.re > 0.0) {
            return Err(GaussError::BadScale { z });
        }
        Ok(ComplexScale { z })
    }

    pub fn z(&self) -> Complex64 {
        self.z
    }
}

/// Quadrature scheme for expectation values.
#[derive(Clone, Copy, Debug)]
pub enum QuadSpec {
    GaussHermite { order: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

impl QuadSpec {
    /// Defaults: tensor Gauss-Hermite order 40 for n <= 3, order 20 for
    /// n = 4..6, Monte Carlo with antithetic pairs beyond.
    pub fn default_for_dim(n: usize) -> QuadSpec {
        if n <= 3 {
            QuadSpec::GaussHermite { order: 40 }
        } else if n <= 6 {
            QuadSpec::GaussHermite { order: 20 }
        } else {
            QuadSpec::MonteCarlo {
                samples: 1_000_000,
                seed: 0x0101,
            }
        }
    }
}

/// An expectation value with an error estimate.
#[derive(Clone, Copy, Debug)]
pub struct Estimate {
    pub value: Complex64,
    pub error: f64,
}

fn tensor_gh<F: Fn(&[f64]) -> Complex64>(
    cols: &[Vec<f64>],
    n: usize,
    order: usize,
    f: &F,
) -> Complex64 {
    let r = cols.len();
    if r == 0 {
        return f(&vec![0.0; n]);
    }
    let rule = gauss_hermite_normal(order);
    let mut idx = vec![0usize; r];
    let mut sum = Complex64::zero();
    let mut x = vec![0.0f64; n];
    loop {
        let mut w = 1.0;
        for v in x.iter_mut() {
            *v = 0.0;
        }
        for (d, &i) in idx.iter().enumerate() {
            let y = rule.nodes[i];
            w *= rule.weights[i];
            for (xi, c) in x.iter_mut().zip(cols[d].iter()) {
                *xi += y * c;
            }
        }
        sum += f(&x) * w;
        // odometer
        let mut d = 0;
        loop {
            if d == r {
                return sum;
            }
            idx[d] += 1;
            if idx[d] < order {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Expectation of `f` against the centered Gaussian of covariance `cov`.
pub fn expect_real<F: Fn(&[f64]) -> Complex64>(
    cov: &Covariance,
    f: F,
    spec: &QuadSpec,
) -> Result<Estimate, GaussError> {
    let cols = cov.reduced_columns();
    let n = cov.n();
    match *spec {
        QuadSpec::GaussHermite { order } => {
            let hi = tensor_gh(&cols, n, order, &f);
            let lo_order = (order * 3 / 4).max(4);
            let lo = tensor_gh(&cols, n, lo_order, &f);
            Ok(Estimate {
                value: hi,
                error: (hi - lo).norm(),
            })
        }
        QuadSpec::MonteCarlo { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = cols.len();
            let pairs = (samples / 2).max(1);
            let mut mean = Complex64::zero();
            let mut m2 = 0.0f64;
            let mut x = vec![0.0f64; n];
            for s in 0..pairs {
                let y: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
                let mut pair_val = Complex64::zero();
                for sign in [1.0, -1.0] {
                    for v in x.iter_mut() {
                        *v = 0.0;
                    }
                    for (d, yd) in y.iter().enumerate() {
                        for (xi, c) in x.iter_mut().zip(cols[d].iter()) {
                            *xi += sign * yd * c;
                        }
                    }
                    pair_val += f(&x);
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
            Ok(Estimate {
                value: mean,
                error: (var / pairs as f64).sqrt(),
            })
        }
    }
}

/// Expectation against the complex-scaled covariance `z C` via the
/// root-scaling substitution.
pub fn expect_complex<F: Fn(&[Complex64]) -> Complex64>(
    scale: &ComplexScale,
    cov: &Covariance,
    f: F,
    spec: &QuadSpec,
) -> Result<Estimate, GaussError> {
    let lambda = scale.z().sqrt();
    let n = cov.n();
    let g = move |x: &[f64]| -> Complex64 {
        let mut xc = vec![Complex64::zero(); n];
        for (c, &v) in xc.iter_mut().zip(x.iter()) {
            *c = lambda * v;
        }
        f(&xc)
    };
    expect_real(cov, g, spec)
}

/// The bound constant of the complex Gaussian estimate: 1 / cos^{n/2}(arg z).
pub fn complex_gaussian_bound(scale: &ComplexScale, n: usize) -> f64 {
    1.0 / scale.z().arg().cos().powf(n as f64 / 2.0)
}

/// Result of a copies-trick comparison.
#[derive(Clone, Copy, Debug)]
pub struct CopiesCheck {
    pub lhs: Complex64,
    pub rhs: Complex64,
    pub diff: f64,
}

/// Compares `E_z[F^n(x)]` with `E_{z * ones}[prod F(X_i)]` through the
/// degenerate-covariance path.
pub fn copies_check<F: Fn(Complex64) -> Complex64>(
    scale: &ComplexScale,
    f: F,
    n: usize,
    spec: &QuadSpec,
) -> Result<CopiesCheck, GaussError> {
    let one = Covariance::identity(1);
    let lhs = expect_complex(scale, &one, |x| f(x[0]).powi(n as i32), spec)?;
    let ones = Covariance::all_ones(n);
    let rhs = expect_complex(scale, &ones, |x| x.iter().map(|&xi| f(xi)).product(), spec)?;
    Ok(CopiesCheck {
        lhs: lhs.value,
        rhs: rhs.value,
        diff: (lhs.value - rhs.value).norm(),
    })
}

/// Visits every perfect pairing of `items`, passing the list of index pairs.
pub fn for_each_pairing(items: &[usize], f: &mut impl FnMut(&[(usize, usize)])) {
    fn rec(
        remaining: &mut Vec<usize>,
        current: &mut Vec<(usize, usize)>,
        f: &mut impl FnMut(&[(usize, usize)]),
    ) {
        if remaining.is_empty() {
            f(current);
            return;
        }
        let a = remaining.remove(0);
        for i in 0..remaining.len() {
            let b = remaining.remove(i);
            current.push((a, b));
            rec(remaining, current, f);
            current.pop();
            remaining.insert(i, b);
        }
        remaining.insert(0, a);
    }
    let mut rem = items.to_vec();
    rec(&mut rem, &mut Vec::new(), f);
}

/// Exact Gaussian moment `E_C[prod x_i^{m_i}]` by the Isserlis pairing sum.
pub fn wick_moment(cov: &Covariance, multidegree: &[usize]) -> Result<f64, GaussError> {
    if multidegree.len() != cov.n() {
        return Err(GaussError::DimensionMismatch {
            cov: cov.n(),
            other: multidegree.len(),
        });
    }
    let total: usize = multidegree.iter().sum();
    if total % 2 == 1 {
        return Ok(0.0);
    }
    let mut indices = Vec::with_capacity(total);
    for (i, &m) in multidegree.iter().enumerate() {
        for _ in 0..m {
            indices.push(i);
        }
    }
    let mut sum = 0.0;
    for_each_pairing(&indices, &mut |pairs| {
        let mut prod = 1.0;
        for &(a, b) in pairs {
            prod *= cov.entry(a, b);
        }
        sum += prod;
    });
    Ok(sum)
}

/// Exact-rational Isserlis moment for a rational covariance given entrywise.
pub fn wick_moment_rational(
    n: usize,
    entry: &dyn Fn(usize, usize) -> BigRational,
    multidegree: &[usize],
) -> BigRational {
    assert_eq!(multidegree.len(), n);
    let total: usize = multidegree.iter().sum();
    if total % 2 == 1 {
        return BigRational::zero();
    }
    let mut indices = Vec::with_capacity(total);
    for (i, &m) in multidegree.iter().enumerate() {
        for _ in 0..m {
            indices.push(i);
        }
    }
    let mut sum = BigRational::zero();
    for_each_pairing(&indices, &mut |pairs| {
        let mut prod = BigRational::from_integer(1.into());
        for &(a, b) in pairs {
            prod *= entry(a, b);
        }
        sum += prod;
    });
    sum
}
