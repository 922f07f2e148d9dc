//! Borel transform, Pade continuation of the Borel transform, and Laplace
//! reconstruction, with the pole diagnostics required for a valid
//! resummation along the positive real axis.

use crate::quad;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ResumError {
    #[error("Pade system singular at every attempted denominator degree")]
    SingularPade,
    #[error("need at least {need} coefficients, got {got}")]
    TooFewCoefficients { need: usize, got: usize },
    #[error("Pade pole at {pole} lies within {dist:e} of the Laplace contour")]
    PoleOnContour { pole: Complex64, dist: f64 },
    #[error("quadrature failure: {0}")]
    Quadrature(#[from] quad::QuadError),
}

/// Distance below which a pole-zero pair counts as a spurious doublet.
pub const FROISSART_EPS: f64 = 1e-6;
/// Poles closer than this to the positive real axis invalidate the contour.
pub const CONTOUR_POLE_EPS: f64 = 1e-6;

/// The Borel transform: b_q = a_q / q!.
pub fn borel_transform(a: &[Complex64]) -> Vec<Complex64> {
    let mut fact = 1.0;
    a.iter()
        .enumerate()
        .map(|(q, &aq)| {
            if q > 1 {
                fact *= q as f64;
            }
            aq / fact
        })
        .collect()
}

/// A rational approximant of the Borel transform.
#[derive(Clone, Debug)]
pub struct PadeApproximant {
    /// Numerator coefficients, ascending.
    pub num: Vec<Complex64>,
    /// Denominator coefficients, ascending; den[0] = 1.
    pub den: Vec<Complex64>,
    /// All denominator roots.
    pub poles: Vec<Complex64>,
    /// Numerator roots.
    pub zeros: Vec<Complex64>,
    /// Poles with a numerator zero closer than the doublet threshold.
    pub spurious: Vec<Complex64>,
    /// Effective orders after any singularity-driven reduction.
    pub order: (usize, usize),
}

impl PadeApproximant {
    pub fn eval(&self, t: Complex64) -> Complex64 {
        let horner = |c: &[Complex64]| {
            let mut acc = Complex64::new(0.0, 0.0);
            for &ci in c.iter().rev() {
                acc = acc * t + ci;
            }
            acc
        };
        horner(&self.num) / horner(&self.den)
    }

    /// Genuine poles (spurious doublets removed).
    pub fn physical_poles(&self) -> Vec<Complex64> {
        self.poles
            .iter()
            .copied()
            .filter(|p| !self.spurious.iter().any(|s| (s - p).norm() < 1e-14))
            .collect()
    }
}

/// Roots of a complex polynomial (ascending coefficients) by the
/// Durand-Kerner iteration. Degenerate leading zeros are trimmed.
fn polynomial_roots(coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut c: Vec<Complex64> = coeffs.to_vec();
    while c.last().is_some_and(|l| l.norm() < 1e-300) {
        c.pop();
    }
    if c.len() <= 1 {
        return Vec::new();
    }
    let deg = c.len() - 1;
    let lead = c[deg];
    let monic: Vec<Complex64> = c.iter().map(|x| x / lead).collect();
    // Initial guesses on a non-real circle.
    let radius = 1.0
        + monic
            .iter()
            .take(deg)
            .map(|x| x.norm())
            .fold(0.0f64, f64::max);
    let mut roots: Vec<Complex64> = (0..deg)
        .map(|i| {
            Complex64::from_polar(
                radius,
                0.4 + 2.0 * std::f64::consts::PI * i as f64 / deg as f64,
            )
        })
        .collect();
    let eval = |r: Complex64| {
        let mut acc = Complex64::new(0.0, 0.0);
        for &ci in monic.iter().rev() {
            acc = acc * r + ci;
        }
        acc
    };
    for _ in 0..200 {
        let mut shift = 0.0f64;
        let old = roots.clone();
        for i in 0..deg {
            let mut denom = Complex64::new(1.0, 0.0);
            for (j, &rj) in old.iter().enumerate() {
                if j != i {
                    denom *= old[i] - rj;
                }
            }
            if denom.norm() < 1e-280 {
                continue;
            }
            let delta = eval(old[i]) / denom;
            roots[i] = old[i] - delta;
            shift = shift.max(delta.norm());
        }
        if shift < 1e-14 * radius {
            break;
        }
    }
    roots
}

/// The [l/m] Pade approximant of the series `b` by the linear (Hankel-type)
/// system for the denominator. A numerically singular system reduces the
/// denominator degree and retries, reporting the effective order.
pub fn pade(b: &[Complex64], l: usize, m: usize) -> Result<PadeApproximant, ResumError> {
    if b.len() < l + m + 1 {
        return Err(ResumError::TooFewCoefficients {
            need: l + m + 1,
            got: b.len(),
        });
    }
    let coeff = |i: isize| -> Complex64 {
        if i < 0 {
            Complex64::new(0.0, 0.0)
        } else {
            b[i as usize]
        }
    };
    let mut m_eff = m;
    loop {
        // Solve sum_{s=1..m} den_s b_{l+j-s} = -b_{l+j}, j = 1..m.
        let mut den = vec![Complex64::new(1.0, 0.0)];
        let solved = if m_eff == 0 {
            true
        } else {
            let a = nalgebra::DMatrix::from_fn(m_eff, m_eff, |j, s| {
                coeff(l as isize + j as isize - s as isize)
            });
            let rhs = nalgebra::DVector::from_fn(m_eff, |j, _| -coeff(l as isize + 1 + j as isize));
            let lu = a.lu();
            match lu.solve(&rhs) {
                Some(sol) if sol.iter().all(|x| x.norm().is_finite()) => {
                    den.extend(sol.iter().copied());
                    true
                }
                _ => false,
            }
        };
        if !solved {
            if m_eff == 0 {
                return Err(ResumError::SingularPade);
            }
            m_eff -= 1;
            continue;
        }
        // Numerator from the convolution up to degree l.
        let mut num = vec![Complex64::new(0.0, 0.0); l + 1];
        for (i, ni) in num.iter_mut().enumerate() {
            let mut s = Complex64::new(0.0, 0.0);
            for (j, dj) in den.iter().enumerate().take(i + 1) {
                s += dj * coeff(i as isize - j as isize);
            }
            *ni = s;
        }
        let poles = polynomial_roots(&den);
        let zeros = polynomial_roots(&num);
        let spurious: Vec<Complex64> = poles
            .iter()
            .copied()
            .filter(|p| zeros.iter().any(|z| (z - p).norm() < FROISSART_EPS))
            .collect();
        return Ok(PadeApproximant {
            num,
            den,
            poles,
            zeros,
            spurious,
            order: (l, m_eff),
        });
    }
}

/// Wait-free check used before Laplace integration: distance from a point to
/// the positive real axis.
fn distance_to_positive_axis(p: Complex64) -> f64 {
    if p.re >= 0.0 {
        p.im.abs()
    } else {
        p.norm()
    }
}

/// Laplace reconstruction `(1/eps) int_0^inf exp(-t/eps) B(t) dt` of the
/// Pade-continued Borel transform, by adaptive quadrature on [0, T] with
/// T = eps ln(1e18) plus the constant tail of the rational function.
pub fn laplace_reconstruct(p: &PadeApproximant, eps: f64) -> Result<Complex64, ResumError> {
    assert!(eps > 0.0, "Laplace reconstruction along the positive axis");
    for pole in p.physical_poles() {
        let dist = distance_to_positive_axis(pole);
        if dist < CONTOUR_POLE_EPS {
            return Err(ResumError::PoleOnContour { pole, dist });
        }
    }
    let t_max = eps * 1e18f64.ln();
    let (val, _err) = quad::adaptive(
        |t| p.eval(Complex64::new(t, 0.0)) * (-t / eps).exp() / eps,
        0.0,
        t_max,
        1e-12,
        1e-250,
    )?;
    // Tail: B(t) tends to num_l/den_m t^{l-m}; for l <= m the dominant
    // constant bound gives a contribution below the 1e-18 truncation level.
    let c_inf = if p.num.len() == p.den.len() {
        p.num.last().unwrap() / p.den.last().unwrap()
    } else {
        Complex64::new(0.0, 0.0)
    };
    Ok(val + c_inf * (-t_max / eps).exp())
}

/// End-to-end reconstruction record.
#[derive(Clone, Debug)]
pub struct BorelRecon {
    pub pade: PadeApproximant,
    pub laplace_value: Complex64,
    /// Reference value when the caller has an independent evaluation.
    pub direct_value: Option<Complex64>,
}

/// Convenience pipeline: Borel transform, [l/m] Pade, Laplace at eps.
pub fn reconstruct(
    a: &[Complex64],
    l: usize,
    m: usize,
    eps: f64,
    direct: Option<Complex64>,
) -> Result<BorelRecon, ResumError> {
    let b = borel_transform(a);
    let p = pade(&b, l, m)?;
    let laplace_value = laplace_reconstruct(&p, eps)?;
    Ok(BorelRecon {
        pade: p,
        laplace_value,
        direct_value: direct,
    })
}

/// Root-test radius proxy: max |b_q|^{1/q} over q >= 1.
pub fn root_test_bound(b: &[Complex64]) -> f64 {
    b.iter()
        .enumerate()
        .skip(1)
        .map(|(q, bq)| bq.norm().powf(1.0 / q as f64))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn borel_of_factorial_series_is_geometric() {
        // a_q = (-1)^q q! -> b_q = (-1)^q.
        let mut a = Vec::new();
        let mut f = 1.0;
        for q in 0..7 {
            if q > 0 {
                f *= q as f64;
            }
            a.push(c(if q % 2 == 0 { f } else { -f }));
        }
        let b = borel_transform(&a);
        for (q, bq) in b.iter().enumerate() {
            assert_relative_eq!(bq.re, if q % 2 == 0 { 1.0 } else { -1.0 }, epsilon = 1e-14);
        }
    }

    #[test]
    fn pade_of_geometric_series() {
        let b: Vec<Complex64> = (0..6)
            .map(|q| c(if q % 2 == 0 { 1.0 } else { -1.0 }))
            .collect();
        let p = pade(&b, 0, 1).unwrap();
        // 1/(1+t): pole at -1.
        assert_eq!(p.poles.len(), 1);
        assert!((p.poles[0] - c(-1.0)).norm() < 1e-12);
        assert!((p.eval(c(0.5)) - c(2.0 / 3.0)).norm() < 1e-12);
    }

    #[test]
    fn pade_with_zero_denominator_degree_is_the_polynomial() {
        let b = vec![c(1.0), c(2.0), c(3.0)];
        let p = pade(&b, 2, 0).unwrap();
        assert_eq!(p.order, (2, 0));
        assert!((p.eval(c(2.0)) - c(1.0 + 4.0 + 12.0)).norm() < 1e-12);
    }

    #[test]
    fn laplace_of_stieltjes_borel_function() {
        // B(t) = 1/(1+t), eps = 0.2: value = (1/eps) int e^{-t/eps}/(1+t) dt.
        let b: Vec<Complex64> = (0..8)
            .map(|q| c(if q % 2 == 0 { 1.0 } else { -1.0 }))
            .collect();
        let p = pade(&b, 0, 1).unwrap();
        let eps = 0.2;
        let got = laplace_reconstruct(&p, eps).unwrap();
        // Independent oracle: direct quadrature with a different substitution
        // t = eps * s.
        let (oracle, _) = crate::quad::adaptive(
            |s: f64| c((-s).exp() / (1.0 + eps * s)),
            0.0,
            60.0,
            1e-13,
            1e-300,
        )
        .unwrap();
        assert!(
            (got - oracle).norm() < 1e-10,
            "laplace {} oracle {}",
            got,
            oracle
        );
        // Known value: 5 e^5 E1(5) ~ 0.85211088098.
        assert!((got.re - 0.852110880975).abs() < 1e-9);
    }

    #[test]
    fn exactness_on_rational_functions() {
        // f(eps) = 1/(1 + K eps): a_q = (-K)^q, B(t) = e^{-Kt};
        // reconstruction at eps = 0.01/K must return f to 1e-10.
        for k_const in [1.0, 5.0, 20.0] {
            let mut a = Vec::new();
            let mut p = 1.0;
            for _ in 0..7 {
                a.push(c(p));
                p *= -k_const;
            }
            let eps = 0.01 / k_const;
            let rec = reconstruct(&a, 3, 3, eps, None).unwrap();
            let exact = 1.0 / (1.0 + k_const * eps);
            assert!(
                (rec.laplace_value - c(exact)).norm() < 1e-10,
                "K={k_const}: {} vs {exact}",
                rec.laplace_value
            );
        }
    }

    #[test]
    fn reconstruction_error_decreases_with_order() {
        // Branch-cut model B(t) = 1/sqrt(1+t): the Pade continuation is not
        // exact at any finite order, so the error must fall with the order.
        let mut a = Vec::new();
        let mut binom = 1.0; // C(-1/2, q)
        let mut fact = 1.0;
        for q in 0..9 {
            if q > 0 {
                fact *= q as f64;
                binom *= (-0.5 - (q as f64 - 1.0)) / q as f64;
            }
            a.push(c(fact * binom));
        }
        let eps = 0.3;
        let (exact, _) = crate::quad::adaptive(
            |s: f64| c((-s).exp() / (1.0 + eps * s).sqrt()),
            0.0,
            60.0,
            1e-13,
            1e-300,
        )
        .unwrap();
        let mut errs = Vec::new();
        for order in 1..=4usize {
            let rec = reconstruct(&a[..2 * order + 1], order, order, eps, None).unwrap();
            errs.push((rec.laplace_value - exact).norm());
        }
        assert!(
            errs[3] < errs[0] * 0.2 || errs[3] < 1e-12,
            "errors did not improve: {errs:?}"
        );
    }

    #[test]
    fn doubling_the_cutoff_changes_nothing() {
        let b: Vec<Complex64> = (0..8)
            .map(|q| c(if q % 2 == 0 { 1.0 } else { -1.0 }))
            .collect();
        let p = pade(&b, 0, 1).unwrap();
        let eps = 0.2;
        let t1 = eps * 1e18f64.ln();
        let one = |t: f64| p.eval(c(t)) * (-t / eps).exp() / eps;
        let (v1, _) = crate::quad::adaptive(one, 0.0, t1, 1e-13, 1e-300).unwrap();
        let (v2, _) = crate::quad::adaptive(one, 0.0, 2.0 * t1, 1e-13, 1e-300).unwrap();
        assert!((v1 - v2).norm() < 1e-12);
    }

    #[test]
    fn pole_on_contour_is_rejected() {
        // B(t) = 1/(1-t): pole at +1.
        let b: Vec<Complex64> = (0..6).map(|_| c(1.0)).collect();
        let p = pade(&b, 0, 1).unwrap();
        assert!(matches!(
            laplace_reconstruct(&p, 0.2),
            Err(ResumError::PoleOnContour { .. })
        ));
    }

    #[test]
    fn root_test_is_bounded_for_geometric() {
        let b: Vec<Complex64> = (0..7).map(|q| c(0.5f64.powi(q))).collect();
        let bound = root_test_bound(&b);
        assert!(bound <= 0.5 + 1e-12);
    }
}
