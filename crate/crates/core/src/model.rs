//! Direct quadrature oracles: the partition function as a one-dimensional
//! tilted-contour integral, the rescaled cumulants from the log of its
//! source-norm series, and the radial reduction at integer N.

use crate::quad::{self, QuadError};
use crate::surface::{lift_sqrt, project, EpsParam, SurfacePoint, Tilt};
use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("domain violation: {0}")]
    DomainViolation(String),
    #[error("quadrature did not converge: {0}")]
    NonConvergence(#[from] QuadError),
    #[error("integrand truncation scan failed to find decay")]
    TruncationScanFailed,
}

/// Evaluation point for the tilted-contour partition function.
#[derive(Clone, Copy, Debug)]
pub struct ModelPoint {
    pub g: SurfacePoint,
    pub eps: EpsParam,
    pub psi: Tilt,
    /// Source-norm parameter t = |J|^2.
    pub t: f64,
}

impl ModelPoint {
    pub fn new(g: SurfacePoint, eps: EpsParam, psi: Tilt, t: f64) -> Result<Self, ModelError> {
        if !psi.admissible_for(&eps) {
            return Err(ModelError::DomainViolation(format!(
                "|psi - arg eps| = {} >= pi/2",
                (psi.0 - eps.arg()).abs()
            )));
        }
        if !((g.lifted_arg() + psi.0).abs() < PI) {
            return Err(ModelError::DomainViolation(format!(
                "|arg g + psi| = {} >= pi",
                (g.lifted_arg() + psi.0).abs()
            )));
        }
        if !(t >= 0.0) {
            return Err(ModelError::DomainViolation(format!("t = {t} < 0")));
        }
        Ok(ModelPoint { g, eps, psi, t })
    }
}

/// A value with an error estimate.
#[derive(Clone, Copy, Debug)]
pub struct PartitionResult {
    pub value: Complex64,
    pub error: f64,
}

struct ContourIntegrand {
    /// c = i * lift_sqrt(g) * exp(i psi / 2): resolvent denominator 1 - c sigma.
    c: Complex64,
    /// z = eps * exp(-i psi): Gaussian covariance along the tilted contour.
    z: Complex64,
    inv_two_eps: Complex64,
    t: f64,
}

impl ContourIntegrand {
    fn new(p: &ModelPoint) -> Self {
        let eps = p.eps.to_complex();
        let phase = Complex64::from_polar(1.0, p.psi.0);
        ContourIntegrand {
            c: Complex64::i() * lift_sqrt(&p.g) * Complex64::from_polar(1.0, p.psi.0 / 2.0),
            z: eps * phase.conj(),
            inv_two_eps: (eps * 2.0).inv(),
            t: p.t,
        }
    }

    /// The resolvent along the tilted contour at real sigma.
    fn resolvent(&self, sigma: f64) -> Complex64 {
        (Complex64::new(1.0, 0.0) - self.c * sigma).inv()
    }

    /// Full exponent at real sigma. The principal log of (1 - c sigma) is the
    /// continuous branch along the contour: the denominator traces a line
    /// through 1 that meets the real axis only at sigma = 0.
    fn exponent(&self, sigma: f64) -> Complex64 {
        let denom = Complex64::new(1.0, 0.0) - self.c * sigma;
        let log_r = -denom.ln();
        let r = denom.inv();
        -sigma * sigma / (2.0 * self.z) + self.inv_two_eps * (log_r + r * self.t)
    }
}

/// Finds a half-width beyond which the integrand is negligible relative to
/// its peak, by outward doubling from the Gaussian width.
fn truncation_radius(f: &ContourIntegrand, base_width: f64) -> Result<(f64, f64), ModelError> {
    let mut peak = f.exponent(0.0).re;
    let mut radius = base_width;
    for _ in 0..60 {
        for s in [-radius, -0.5 * radius, 0.5 * radius, radius] {
            peak = peak.max(f.exponent(s).re);
        }
        let edge = f.exponent(radius).re.max(f.exponent(-radius).re);
        if edge < peak - 43.0 {
            return Ok((radius, peak));
        }
        radius *= 2.0;
    }
    Err(ModelError::TruncationScanFailed)
}

/// The partition function `Z_psi(g, eps; t)` by adaptive contour quadrature.
pub fn partition(p: &ModelPoint, tol: f64) -> Result<PartitionResult, ModelError> {
    let f = ContourIntegrand::new(p);
    let width = (p.eps.modulus() / (p.psi.0 - p.eps.arg()).cos()).sqrt();
    let (radius, peak) = truncation_radius(&f, width)?;
    let prefactor = (2.0 * PI * f.z).sqrt().inv();
    // The peak-normalised integrand is O(1) pointwise, so the achievable
    // absolute accuracy is bounded by the rounding floor over the interval;
    // oscillatory cancellation can make the integral itself much smaller.
    let floor = 4e-15 * radius;
    let (val, err) = quad::adaptive(
        |sigma| (f.exponent(sigma) - peak).exp(),
        -radius,
        radius,
        tol,
        floor,
    )?;
    let scale = prefactor * peak.exp();
    Ok(PartitionResult {
        value: val * scale,
        error: err * scale.norm(),
    })
}

/// Diagnostics attached to a cumulant evaluation.
#[derive(Clone, Debug)]
pub struct CumulantResult {
    pub value: Complex64,
    pub error: f64,
    /// Ratios |m_{j+1}| / |m_j| of the scaled source-series moments; the
    /// t-series term ratio at t is `ratio * t / (2 |eps|)` per step.
    pub moment_ratios: Vec<f64>,
}

impl CumulantResult {
    /// Largest t-series term ratio at the given t (absolute-convergence monitor).
    pub fn series_ratio_at(&self, t: f64, eps: &EpsParam) -> f64 {
        self.moment_ratios
            .iter()
            .fold(0.0f64, |a, &r| a.max(r * t / (2.0 * eps.modulus())))
    }
}

/// The rescaled cumulant of order 2k from the t-series of ln Z.
///
/// Moments are computed in the scaled variable tau = t/(2 eps): the j-th
/// integrand is `exp(ln R / (2 eps)) R^j / j!`, all in one adaptive pass; the
/// cumulant recursion then uses only moment ratios, so the overall scale of Z
/// cancels.
pub fn cumulant_oracle(
    g: &SurfacePoint,
    eps: &EpsParam,
    psi: Tilt,
    k: usize,
    tol: f64,
) -> Result<CumulantResult, ModelError> {
    if k == 0 {
        return Err(ModelError::DomainViolation("k must be >= 1".into()));
    }
    let p = ModelPoint::new(*g, *eps, psi, 0.0)?;
    let f = ContourIntegrand::new(&p);
    let j_max = k + 8;
    let width = (eps.modulus() / (psi.0 - eps.arg()).cos()).sqrt();
    let (radius, peak) = truncation_radius(&f, width)?;
    let integrand = |sigma: f64| -> Vec<Complex64> {
        let base = (f.exponent(sigma) - peak).exp();
        let r = f.resolvent(sigma);
        let mut out = Vec::with_capacity(j_max + 1);
        let mut cur = base;
        out.push(cur);
        for j in 1..=j_max {
            cur = cur * r / j as f64;
            out.push(cur);
        }
        out
    };
    let floor = 4e-15 * radius;
    let (moments, err) = quad::adaptive(integrand, -radius, radius, tol, floor)?;
    // Log-series recursion: with M(tau) = sum m_j tau^j and L = ln M,
    // j m_j = sum_{l=1..j} l c_l m_{j-l}.
    let m0 = moments[0];
    if m0.norm() == 0.0 {
        return Err(ModelError::DomainViolation(
            "partition function vanished at the evaluation point".into(),
        ));
    }
    let mut c = vec![Complex64::new(0.0, 0.0); j_max + 1];
    for j in 1..=j_max {
        let mut s = moments[j] * j as f64;
        for l in 1..j {
            s -= c[l] * l as f64 * moments[j - l];
        }
        c[j] = s / (j as f64 * m0);
    }
    // K^{2k} = 2^k k! eps c_k with c_k in t-units; the tau-units coefficient
    // computed above carries (2 eps)^{-k}, so the assembled factor is
    // k! eps^{1-k}.
    let eps_c = eps.to_complex();
    let mut factor = eps_c;
    for _ in 0..k {
        factor /= eps_c;
    }
    let kfact: f64 = (1..=k).map(|i| i as f64).product();
    let value = c[k] * factor * kfact;
    let ratios: Vec<f64> = (0..j_max)
        .map(|j| {
            if moments[j].norm() > 0.0 {
                moments[j + 1].norm() / moments[j].norm()
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let rel_err = err / m0.norm();
    Ok(CumulantResult {
        value,
        error: value.norm() * rel_err * 4.0 + rel_err,
        moment_ratios: ratios,
    })
}

/// Cumulants at integer N from the radial reduction of the O(N) integral.
///
/// Radial moments `M_p = E[r^{2p}]` under `r^{N-1} exp(-r^2/2 - g r^4 / 8N)`
/// give `K^2 = M_1 / N` and `K^4 = M_2/(N+2) - M_1^2/N` (the tensor constant
/// is pinned by the pairing structure of the 4-point function).
pub fn radial_oracle(
    n_dim: u32,
    g: &SurfacePoint,
    k: usize,
    tol: f64,
) -> Result<Complex64, ModelError> {
    if !(k == 1 || k == 2) {
        return Err(ModelError::DomainViolation(
            "radial oracle supports k <= 2".into(),
        ));
    }
    let gp = project(g);
    if !(gp.re > 0.0) {
        return Err(ModelError::DomainViolation(
            "radial reduction needs Re(g) > 0".into(),
        ));
    }
    let n = n_dim as f64;
    let kappa = gp / (8.0 * n);
    let p_max = 2 * k as i32;
    let exponent = |r: f64| -> Complex64 {
        Complex64::new((n - 1.0) * r.max(1e-300).ln() - r * r / 2.0, 0.0) - kappa * r.powi(4)
    };
    let mut r_max = (2.0 * (n + p_max as f64 * 2.0)).sqrt().max(4.0);
    let mut peak = exponent(1.0).re;
    for _ in 0..60 {
        let steps = 64;
        for i in 1..=steps {
            let r = r_max * i as f64 / steps as f64;
            peak = peak.max(exponent(r).re);
        }
        if exponent(r_max).re < peak - 45.0 {
            break;
        }
        r_max *= 1.5;
    }
    let integrand = |r: f64| -> Vec<Complex64> {
        let base = (exponent(r) - peak).exp();
        (0..=p_max).map(|p| base * r.powi(2 * p)).collect()
    };
    let (moments, _err) = quad::adaptive(integrand, 0.0, r_max, tol, 1e-300)?;
    let m1 = moments[1] / moments[0];
    if k == 1 {
        return Ok(m1 / n);
    }
    let m2 = moments[2] / moments[0];
    Ok(m2 / (n + 2.0) - m1 * m1 / n)
}

/// Admissible tilt for the pair (g, eps) from the cardioid search.
pub fn auto_tilt(g: &SurfacePoint, eps: &EpsParam) -> Option<Tilt> {
    let rep = crate::surface::cardioid_contains(g, eps, 0.0);
    rep.psi_used.map(Tilt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sp(m: f64, a: f64) -> SurfacePoint {
        SurfacePoint::new(m, a).unwrap()
    }
    fn ep(m: f64, a: f64) -> EpsParam {
        EpsParam::new(m, a).unwrap()
    }

    #[test]
    fn partition_gaussian_limit() {
        let p = ModelPoint::new(sp(1e-12, 0.0), ep(0.3, 0.1), Tilt(0.0), 0.0).unwrap();
        let z = partition(&p, 1e-10).unwrap();
        assert!((z.value - Complex64::new(1.0, 0.0)).norm() < 1e-8);
    }

    #[test]
    fn partition_matches_one_dimensional_phi_integral() {
        // N = 1 (eps = 1): Z = int dmu_1(phi) exp(-g phi^4 / 8).
        let g = 0.2;
        let p = ModelPoint::new(sp(g, 0.0), ep(1.0, 0.0), Tilt(0.0), 0.0).unwrap();
        let z = partition(&p, 1e-11).unwrap();
        let (direct, _) = quad::adaptive(
            |x: f64| {
                Complex64::new(
                    (-x * x / 2.0 - g * x.powi(4) / 8.0).exp() / (2.0 * PI).sqrt(),
                    0.0,
                )
            },
            -12.0,
            12.0,
            1e-13,
            1e-300,
        )
        .unwrap();
        assert!(
            (z.value - direct).norm() < 1e-9,
            "contour {} vs direct {}",
            z.value,
            direct
        );
    }

    #[test]
    fn partition_is_tilt_independent() {
        let g = sp(0.2, 0.4);
        let eps = ep(0.5, 0.1);
        let vals: Vec<Complex64> = [-0.4, 0.0, 0.4]
            .iter()
            .map(|&psi| {
                let p = ModelPoint::new(g, eps, Tilt(psi), 0.3).unwrap();
                partition(&p, 1e-11).unwrap().value
            })
            .collect();
        for w in vals.windows(2) {
            assert!((w[0] - w[1]).norm() < 1e-8 * w[0].norm());
        }
    }

    #[test]
    fn free_cumulant_is_one() {
        let r = cumulant_oracle(&sp(1e-12, 0.0), &ep(0.2, 0.0), Tilt(0.0), 1, 1e-10).unwrap();
        assert!((r.value - Complex64::new(1.0, 0.0)).norm() < 1e-8);
    }

    #[test]
    fn cumulant_matches_radial_at_integer_n() {
        for (n, k, tol) in [(4u32, 1usize, 1e-6), (2, 2, 1e-5), (1, 1, 1e-6)] {
            let g = sp(0.1, 0.0);
            let eps = ep(1.0 / n as f64, 0.0);
            let o = cumulant_oracle(&g, &eps, Tilt(0.0), k, 1e-11).unwrap();
            let r = radial_oracle(n, &g, k, 1e-11).unwrap();
            assert!(
                (o.value - r).norm() < tol * r.norm().max(1e-3),
                "n={n} k={k}: oracle {} radial {}",
                o.value,
                r
            );
        }
    }

    #[test]
    fn cumulant_approaches_catalan_limit() {
        // K^2 -> a0(g) = (sqrt(1+2g)-1)/g as eps -> 0.
        let g = 0.1;
        let a0 = ((1.0f64 + 2.0 * g).sqrt() - 1.0) / g;
        let r = cumulant_oracle(&sp(g, 0.0), &ep(1e-3, 0.0), Tilt(0.0), 1, 1e-11).unwrap();
        assert!((r.value.re - a0).abs() < 2e-3);
        assert!(r.value.im.abs() < 1e-9);
    }

    #[test]
    fn reality_on_real_axis() {
        let r = cumulant_oracle(&sp(0.15, 0.0), &ep(0.25, 0.0), Tilt(0.0), 2, 1e-11).unwrap();
        assert!(r.value.im.abs() < 1e-10);
        let p = ModelPoint::new(sp(0.15, 0.0), ep(0.25, 0.0), Tilt(0.0), 0.7).unwrap();
        let z = partition(&p, 1e-11).unwrap();
        assert!(z.value.im.abs() < 1e-10);
    }

    #[test]
    fn conjugation_symmetry() {
        for (gm, ga, em, ea, t) in [
            (0.12, 0.7, 0.3, 0.2, 0.4),
            (0.08, -1.2, 0.5, -0.3, 0.0),
            (0.2, 0.3, 1.0, 0.4, 1.1),
        ] {
            let g = sp(gm, ga);
            let eps = ep(em, ea);
            let psi = 0.5 * ea;
            let p = ModelPoint::new(g, eps, Tilt(psi), t).unwrap();
            let z = partition(&p, 1e-11).unwrap().value;
            let pc = ModelPoint::new(g.conj(), eps.conj(), Tilt(-psi), t).unwrap();
            let zc = partition(&pc, 1e-11).unwrap().value;
            assert!(
                (zc - z.conj()).norm() < 1e-8 * z.norm(),
                "Z(conj) = {zc}, conj(Z) = {}",
                z.conj()
            );
        }
    }

    #[test]
    fn partition_monotone_in_t_at_real_parameters() {
        let g = sp(0.2, 0.0);
        let eps = ep(0.5, 0.0);
        let mut prev = 0.0;
        for &t in &[0.0, 0.3, 0.7, 1.5] {
            let p = ModelPoint::new(g, eps, Tilt(0.0), t).unwrap();
            let z = partition(&p, 1e-10).unwrap().value;
            assert!(z.re > prev);
            prev = z.re;
        }
    }

    #[test]
    fn moment_ratio_monitor_is_summable_at_moderate_point() {
        let r = cumulant_oracle(&sp(0.1, 0.0), &ep(0.25, 0.0), Tilt(0.0), 1, 1e-10).unwrap();
        let rho = r.series_ratio_at(0.5, &ep(0.25, 0.0));
        assert!(rho.is_finite());
        let tail = r.moment_ratios.last().copied().unwrap() * 0.5 / (2.0 * 0.25);
        assert!(tail < 1.0, "tail ratio {tail}");
    }

    #[test]
    fn radial_free_theory() {
        for n in [1u32, 3, 8] {
            let r = radial_oracle(n, &sp(1e-13, 0.0), 1, 1e-11).unwrap();
            assert_relative_eq!(r.re, 1.0, epsilon = 1e-7);
            let r4 = radial_oracle(n, &sp(1e-13, 0.0), 2, 1e-11).unwrap();
            assert!(r4.norm() < 1e-6);
        }
    }

    #[test]
    fn domain_violations_are_rejected() {
        assert!(ModelPoint::new(sp(0.1, 3.0), ep(0.2, 0.0), Tilt(0.5), 0.0).is_err());
        assert!(ModelPoint::new(sp(0.1, 0.0), ep(0.2, 0.0), Tilt(1.6), 0.0).is_err());
    }
}
