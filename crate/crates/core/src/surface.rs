//! The two-sheeted Riemann surface of the square root, the resolvent, and the
//! geometry of the analyticity domains: cardioid conditions, their
//! alpha-shrunk variants, Sokal disks, and the rho_xi boundary curves.
//!
//! A point of the surface carries a modulus and a *lifted* argument in
//! (-2pi, 2pi]; the lifted square root is `sqrt(|g|) * exp(i*arg/2)`, which is
//! the analytic continuation of the principal branch across both sheets.

use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("invalid surface point: modulus {modulus}, lifted argument {lifted_arg} (need modulus > 0, arg in (-2pi, 2pi])")]
    InvalidSurfacePoint { modulus: f64, lifted_arg: f64 },
    #[error("invalid epsilon parameter: modulus {modulus}, argument {arg} (need modulus > 0, |arg| < pi/2)")]
    InvalidEps { modulus: f64, arg: f64 },
    #[error("resolvent pole: 1 - i*sigma*sqrt(g) vanished at sigma = {sigma}")]
    ResolventPole { sigma: Complex64 },
    #[error("empty admissible tilt interval for phi = {phi}, theta = {theta}")]
    EmptyTiltInterval { phi: f64, theta: f64 },
}

/// A point `g` on the Riemann surface of the square root.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    modulus: f64,
    lifted_arg: f64,
}

impl SurfacePoint {
    pub fn new(modulus: f64, lifted_arg: f64) -> Result<Self, SurfaceError> {
        if !(modulus > 0.0) || !(lifted_arg > -2.0 * PI) || !(lifted_arg <= 2.0 * PI) {
            return Err(SurfaceError::InvalidSurfacePoint {
                modulus,
                lifted_arg,
            });
        }
        Ok(SurfacePoint {
            modulus,
            lifted_arg,
        })
    }

    pub fn modulus(&self) -> f64 {
        self.modulus
    }

    /// The lifted argument, in (-2pi, 2pi].
    pub fn lifted_arg(&self) -> f64 {
        self.lifted_arg
    }

    /// Mirror point (conjugate coupling): same modulus, opposite lifted argument.
    pub fn conj(&self) -> SurfacePoint {
        let arg = if self.lifted_arg == 2.0 * PI {
            2.0 * PI
        } else {
            -self.lifted_arg
        };
        SurfacePoint {
            modulus: self.modulus,
            lifted_arg: arg,
        }
    }
}

/// The complex 1/N parameter, restricted to the right half plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsParam {
    modulus: f64,
    arg: f64,
}

impl EpsParam {
    pub fn new(modulus: f64, arg: f64) -> Result<Self, SurfaceError> {
        if !(modulus > 0.0) || !(arg.abs() < FRAC_PI_2) {
            return Err(SurfaceError::InvalidEps { modulus, arg });
        }
        Ok(EpsParam { modulus, arg })
    }

    pub fn modulus(&self) -> f64 {
        self.modulus
    }

    pub fn arg(&self) -> f64 {
        self.arg
    }

    pub fn to_complex(&self) -> Complex64 {
        Complex64::from_polar(self.modulus, self.arg)
    }

    pub fn conj(&self) -> EpsParam {
        EpsParam {
            modulus: self.modulus,
            arg: -self.arg,
        }
    }
}

/// Contour tilt psi (radians).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tilt(pub f64);

impl Tilt {
    /// The tilted-contour integral converges iff |psi - arg eps| < pi/2.
    pub fn admissible_for(&self, eps: &EpsParam) -> bool {
        (self.0 - eps.arg()).abs() < FRAC_PI_2
    }
}

/// Outcome of a cardioid membership search.
#[derive(Clone, Copy, Debug)]
pub struct DomainReport {
    pub in_cardioid: bool,
    pub psi_used: Option<f64>,
    /// Best achieved slack: (1-alpha)*bound(psi) - |g|, maximised over psi.
    pub margin: f64,
}

/// Projection onto the base: `|g| * exp(i * arg)`.
pub fn project(g: &SurfacePoint) -> Complex64 {
    Complex64::from_polar(g.modulus, g.lifted_arg)
}

/// Lifted square root: `sqrt(|g|) * exp(i * arg / 2)`.
///
/// For a lifted argument in (-pi, pi) this is the principal square root of
/// the projection; on the other sheet it is minus that; its square is always
/// the projection.
pub fn lift_sqrt(g: &SurfacePoint) -> Complex64 {
    Complex64::from_polar(g.modulus.sqrt(), 0.5 * g.lifted_arg)
}

/// The resolvent `(1 - i*sigma*lift_sqrt(g))^{-1}`.
pub fn resolvent(sigma: Complex64, g: &SurfacePoint) -> Result<Complex64, SurfaceError> {
    let denom = Complex64::new(1.0, 0.0) - Complex64::i() * sigma * lift_sqrt(g);
    if denom.norm_sqr() < f64::MIN_POSITIVE {
        return Err(SurfaceError::ResolventPole { sigma });
    }
    Ok(denom.inv())
}

/// The cardioid bound `(1/4)(1 + cos(phi + psi)) sqrt(cos(psi - theta))`.
///
/// Returns 0 outside the square-root's domain of definition.
pub fn cardioid_bound(phi: f64, theta: f64, psi: f64) -> f64 {
    let c = (psi - theta).cos();
    if c <= 0.0 {
        return 0.0;
    }
    // Half-angle form of (1/4)(1 + cos x): stays positive where the naive
    // form rounds to zero near x = pi.
    let half = (0.5 * (phi + psi)).cos();
    0.5 * half * half * c.sqrt()
}

/// Golden-section maximisation of a smooth unimodal function on [lo, hi].
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..120 {
        if hi - lo < 1e-13 {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    let xm = 0.5 * (lo + hi);
    (xm, f(xm))
}

/// Searches the tilt over the admissible interval of the (alpha-shrunk)
/// conditions and reports whether the point lies in the cardioid domain.
pub fn cardioid_contains(g: &SurfacePoint, eps: &EpsParam, alpha: f64) -> DomainReport {
    let phi = g.lifted_arg();
    let theta = eps.arg();
    let s = 1.0 - alpha;
    let lo = (theta - FRAC_PI_2 * s).max(-PI * s - phi).max(-PI);
    let hi = (theta + FRAC_PI_2 * s).min(PI * s - phi).min(PI);
    if !(lo < hi) {
        return DomainReport {
            in_cardioid: false,
            psi_used: None,
            margin: -g.modulus(),
        };
    }
    let obj = |psi: f64| s * cardioid_bound(phi, theta, psi);
    const GRID: usize = 64;
    let mut best_i = 0;
    let mut best = f64::NEG_INFINITY;
    let at = |i: usize| lo + (hi - lo) * (i as f64 + 0.5) / GRID as f64;
    for i in 0..GRID {
        let v = obj(at(i));
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let blo = if best_i == 0 { lo } else { at(best_i - 1) };
    let bhi = if best_i + 1 == GRID {
        hi
    } else {
        at(best_i + 1)
    };
    let (psi, val) = golden_max(obj, blo, bhi);
    let (psi, val) = if val >= best {
        (psi, val)
    } else {
        (at(best_i), best)
    };
    let margin = val - g.modulus();
    DomainReport {
        in_cardioid: margin > 0.0,
        psi_used: Some(psi),
        margin,
    }
}

/// Maximum of the cardioid bound over the tilt, and the maximising tilt.
///
/// The tilt runs over (theta - pi/2, theta + pi/2), where the bound is
/// defined; the `1 + cos(phi + psi)` factor already vanishes on the boundary
/// of the sheet condition, so no separate clipping is applied. Exact ties
/// between two symmetric maximisers (phi on the negative axis) are broken
/// toward the tilt whose sign matches phi, which keeps the map odd under the
/// simultaneous mirror (phi, theta) -> (-phi, -theta).
pub fn max_radius(phi: f64, theta: f64) -> Result<(f64, f64), SurfaceError> {
    if !(theta.abs() < FRAC_PI_2) {
        return Err(SurfaceError::EmptyTiltInterval { phi, theta });
    }
    let lo = theta - FRAC_PI_2 + 1e-12;
    let hi = theta + FRAC_PI_2 - 1e-12;
    let obj = |psi: f64| cardioid_bound(phi, theta, psi);
    const GRID: usize = 257;
    let at = |i: usize| lo + (hi - lo) * i as f64 / (GRID - 1) as f64;
    let vals: Vec<f64> = (0..GRID).map(|i| obj(at(i))).collect();
    // Refine every interior local maximum, then break near-exact ties by the
    // sign convention.
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    for i in 0..GRID {
        let left = if i == 0 {
            f64::NEG_INFINITY
        } else {
            vals[i - 1]
        };
        let right = if i + 1 == GRID {
            f64::NEG_INFINITY
        } else {
            vals[i + 1]
        };
        if vals[i] >= left && vals[i] >= right {
            let blo = if i == 0 { lo } else { at(i - 1) };
            let bhi = if i + 1 == GRID { hi } else { at(i + 1) };
            candidates.push(golden_max(obj, blo, bhi));
        }
    }
    let best_val = candidates.iter().fold(f64::NEG_INFINITY, |m, c| m.max(c.1));
    let tie_sign = if phi != 0.0 {
        phi.signum()
    } else if theta != 0.0 {
        theta.signum()
    } else {
        0.0
    };
    let mut best: Option<(f64, f64)> = None;
    for (psi, val) in candidates {
        if val < best_val - 1e-11 * (1.0 + best_val.abs()) {
            continue;
        }
        best = Some(match best {
            None => (psi, val),
            Some((bp, bv)) => {
                if psi * tie_sign > bp * tie_sign {
                    (psi, val)
                } else {
                    (bp, bv)
                }
            }
        });
    }
    let (psi, val) = best.expect("grid produced at least one candidate");
    Ok((val, psi))
}

/// Boundary curve rho_xi(phi) for the linear tilt family psi = xi * theta,
/// discretised on an open uniform theta-grid of `n_theta` points.
///
/// The infimum over theta is taken over grid points satisfying the sheet
/// condition |phi + xi*theta| < pi; `refine` runs one golden-section descent
/// in the bracket around the grid argmin, which can only decrease the value.
pub fn rho_xi_at(xi: f64, phi: f64, n_theta: usize, refine: bool) -> f64 {
    let obj = |theta: f64| {
        let psi = xi * theta;
        let half = (0.5 * (phi + psi)).cos();
        0.5 * half * half * ((1.0 - xi) * theta).cos().max(0.0).sqrt()
    };
    let admissible = |theta: f64| (phi + xi * theta).abs() < PI;
    let at = |j: usize| -FRAC_PI_2 + PI * j as f64 / n_theta as f64;
    let mut best = f64::INFINITY;
    let mut best_j = None;
    for j in 1..n_theta {
        let th = at(j);
        if !admissible(th) {
            continue;
        }
        let v = obj(th);
        if v < best {
            best = v;
            best_j = Some(j);
        }
    }
    let Some(j) = best_j else {
        return 0.0;
    };
    // Refine only when the argmin is interior to the admissible set; when it
    // sits against the open sheet-condition boundary the infimum is a limit
    // there, and the grid value is the reported discretisation.
    if refine && j >= 2 && j + 3 <= n_theta && admissible(at(j - 1)) && admissible(at(j + 1)) {
        let lo = at(j - 1);
        let hi = at(j + 1);
        let (_, v) = golden_max(|theta| -obj(theta), lo, hi);
        best = best.min(-v);
    }
    best
}

/// The rho_xi curve on a caller-supplied phi grid (512 theta points, refined).
pub fn rho_xi_curve(xi: f64, phi_grid: &[f64]) -> Vec<(f64, f64)> {
    phi_grid
        .iter()
        .map(|&phi| (phi, rho_xi_at(xi, phi, 512, true)))
        .collect()
}

/// Serialises a rho_xi curve with the `phi,rho,xi` header, 17 significant digits.
pub fn rho_curve_to_csv(rows: &[(f64, f64)], xi: f64) -> String {
    let mut out = String::from("phi,rho,xi\n");
    for (phi, rho) in rows {
        out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", phi, rho, xi));
    }
    out
}

/// Sokal disk membership: Re(1/eps) > 1/R.
pub fn sokal_disk_contains(eps: &EpsParam, radius: f64) -> bool {
    eps.arg().cos() / eps.modulus() > 1.0 / radius
}
