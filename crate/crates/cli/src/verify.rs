//! Named verification suites behind `ovm verify`: compact versions of the
//! exact identities and bound checks, one pass/fail line per check.

use crate::CliError;
use num_complex::Complex64;
use ovm_core::bkar::{bkar_check, edge_slot, EdgePolynomial};
use ovm_core::combin;
use ovm_core::gauss;
use ovm_core::lve::{self, LveScheme};
use ovm_core::model;
use ovm_core::surface::{self, EpsParam, SurfacePoint, Tilt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Report {
    pub lines: Vec<String>,
    pub total: usize,
    pub failed: usize,
}

impl Report {
    fn new() -> Self {
        Report {
            lines: Vec::new(),
            total: 0,
            failed: 0,
        }
    }

    fn check(&mut self, suite: &str, name: &str, pass: bool, detail: String) {
        self.total += 1;
        if !pass {
            self.failed += 1;
        }
        self.lines.push(format!(
            "[{suite}] {name}: {} ({detail})",
            if pass { "PASS" } else { "FAIL" }
        ));
    }
}

pub fn run_suites(suite: &str, nmax: usize, seed: u64) -> Result<Report, CliError> {
    let mut report = Report::new();
    let all = suite == "all";
    let mut known = false;
    if all || suite == "combinatorics" {
        known = true;
        combinatorics(&mut report, nmax);
    }
    if all || suite == "bkar" {
        known = true;
        bkar(&mut report, seed);
    }
    if all || suite == "bounds" {
        known = true;
        bounds(&mut report, seed);
    }
    if all || suite == "copies" {
        known = true;
        copies(&mut report);
    }
    if all || suite == "psi-invariance" {
        known = true;
        psi_invariance(&mut report);
    }
    if all || suite == "oracle-equivalence" {
        known = true;
        oracle_equivalence(&mut report, seed);
    }
    if !known {
        return Err(CliError::Config(format!("unknown suite {suite}")));
    }
    Ok(report)
}

fn combinatorics(report: &mut Report, nmax: usize) {
    let nmax = nmax.clamp(2, 6);
    let mut all_eq = true;
    for n in 1..=nmax {
        for k in 1..=n {
            let closed = combin::ciliated_sum(n, k).unwrap();
            let brute = combin::ciliated_sum_bruteforce(n, k).unwrap();
            if closed != brute {
                all_eq = false;
            }
        }
    }
    report.check(
        "combinatorics",
        &format!("ciliated sums exact, n <= {nmax}"),
        all_eq,
        "closed form vs enumeration".into(),
    );
    let mut all_eq = true;
    for n in 1..=nmax.min(4) {
        for k in 1..=n {
            for q in 0..=2 {
                if combin::marked_sum(n, k, q).unwrap()
                    != combin::marked_sum_bruteforce(n, k, q).unwrap()
                {
                    all_eq = false;
                }
            }
        }
    }
    report.check(
        "combinatorics",
        &format!("marked sums exact, n <= {}", nmax.min(4)),
        all_eq,
        "closed form vs enumeration".into(),
    );
    let mut all_eq = true;
    for n in 2..=nmax {
        if combin::cayley_sum(n).unwrap() != combin::cayley_closed_form(n) {
            all_eq = false;
        }
    }
    report.check(
        "combinatorics",
        &format!("degree-factorial tree sums, n <= {nmax}"),
        all_eq,
        "enumeration vs composition count".into(),
    );
}

fn bkar(report: &mut Report, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut ok = 0;
    for _ in 0..60 {
        let n = rng.gen_range(2..=3);
        let f = random_polynomial(n, 6, 3, &mut rng);
        let (_, _, eq) = bkar_check(&f).unwrap();
        checked += 1;
        if eq {
            ok += 1;
        }
    }
    report.check(
        "bkar",
        "forest formula on random polynomials",
        ok == checked,
        format!("{ok}/{checked} exact"),
    );
}

pub fn random_polynomial(
    n: usize,
    max_terms: usize,
    max_deg: u32,
    rng: &mut impl Rng,
) -> EdgePolynomial {
    let slots = n * (n - 1) / 2;
    let mut p = EdgePolynomial::new(n);
    let terms = rng.gen_range(1..=max_terms);
    for _ in 0..terms {
        let mut exps = vec![0u32; slots];
        let deg = rng.gen_range(0..=max_deg);
        for _ in 0..deg {
            exps[rng.gen_range(0..slots)] += 1;
        }
        let num: i64 = rng.gen_range(-9..=9);
        let den: i64 = rng.gen_range(1..=9);
        p.add_term(exps, num_rational::BigRational::new(num.into(), den.into()));
    }
    let _ = edge_slot(n, 0, 1);
    p
}

fn bounds(report: &mut Report, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB0);
    let mut violations = 0;
    let samples = 2000;
    for _ in 0..samples {
        let sig = Complex64::from_polar(
            10f64.powf(rng.gen_range(-2.0..1.0)),
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        let g = SurfacePoint::new(
            10f64.powf(rng.gen_range(-2.0..0.5)),
            rng.gen_range(-2.0 * std::f64::consts::PI..=2.0 * std::f64::consts::PI),
        )
        .unwrap();
        let denom = (sig.arg() + g.lifted_arg() / 2.0).cos();
        if denom.abs() < 1e-6 {
            continue;
        }
        if let Ok(r) = surface::resolvent(sig, &g) {
            if r.norm() > 1.0 / denom.abs() + 1e-12 {
                violations += 1;
            }
        }
    }
    report.check(
        "bounds",
        "resolvent bound",
        violations == 0,
        format!("{violations} violations in {samples} samples"),
    );

    let mut violations = 0;
    let samples = 300;
    for _ in 0..samples {
        let n = rng.gen_range(1..=2usize);
        let z = gauss::ComplexScale::new(Complex64::from_polar(
            10f64.powf(rng.gen_range(-1.0..0.5)),
            rng.gen_range(-1.4..1.4),
        ))
        .unwrap();
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let c = gauss::Covariance::identity(n);
        let e = gauss::expect_complex(
            &z,
            &c,
            |x| {
                let mut s = Complex64::new(0.0, 0.0);
                for (ai, xi) in a.iter().zip(x.iter()) {
                    s += ai * xi;
                }
                (Complex64::i() * s).exp()
            },
            &gauss::QuadSpec::GaussHermite { order: 24 },
        )
        .unwrap();
        if e.value.norm() > gauss::complex_gaussian_bound(&z, n) + 1e-12 {
            violations += 1;
        }
    }
    report.check(
        "bounds",
        "complex Gaussian bound",
        violations == 0,
        format!("{violations} violations in {samples} samples"),
    );
}

fn copies(report: &mut Report) {
    let z = gauss::ComplexScale::new(Complex64::new(1.0, 0.0)).unwrap();
    let spec = gauss::QuadSpec::GaussHermite { order: 32 };
    type BoundedFn = Box<dyn Fn(Complex64) -> Complex64>;
    let cases: Vec<(&str, BoundedFn, usize)> = vec![
        (
            "exp(iax), n=3",
            Box::new(|x| (Complex64::i() * 0.6 * x).exp()),
            3,
        ),
        ("x, n=2", Box::new(|x| x), 2),
        ("x^2, n=2", Box::new(|x| x * x), 2),
        ("cos(x), n=4", Box::new(|x| x.cos()), 4),
    ];
    for (name, f, n) in cases {
        let chk = gauss::copies_check(&z, f, n, &spec).unwrap();
        report.check(
            "copies",
            name,
            chk.diff < 1e-8,
            format!("diff {:.2e}", chk.diff),
        );
    }
}

fn psi_invariance(report: &mut Report) {
    let g = SurfacePoint::new(0.1, 0.5).unwrap();
    let eps = EpsParam::new(0.2, 0.3).unwrap();
    let psis = [-0.8, -0.3, 0.3, 0.9, 1.5];
    let zs: Vec<Complex64> = psis
        .iter()
        .map(|&p| {
            let mp = model::ModelPoint::new(g, eps, Tilt(p), 0.5).unwrap();
            model::partition(&mp, 1e-11).unwrap().value
        })
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..zs.len() {
        for j in i + 1..zs.len() {
            worst = worst.max((zs[i] - zs[j]).norm() / zs[i].norm());
        }
    }
    report.check(
        "psi-invariance",
        "partition function across 5 tilts",
        worst < 1e-7,
        format!("worst pairwise rel {:.2e}", worst),
    );
    let ks: Vec<Complex64> = psis
        .iter()
        .map(|&p| {
            model::cumulant_oracle(&g, &eps, Tilt(p), 1, 1e-11)
                .unwrap()
                .value
        })
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..ks.len() {
        for j in i + 1..ks.len() {
            worst = worst.max((ks[i] - ks[j]).norm() / ks[i].norm());
        }
    }
    report.check(
        "psi-invariance",
        "order-2 cumulant across 5 tilts",
        worst < 1e-7,
        format!("worst pairwise rel {:.2e}", worst),
    );
}

fn oracle_equivalence(report: &mut Report, seed: u64) {
    let scheme = LveScheme {
        seed,
        ..LveScheme::default()
    };
    let points = [(0.03, 0.0), (0.05, 0.4), (0.08, -0.6), (0.05, 0.0)];
    let mut worst: f64 = 0.0;
    for &(gm, ga) in &points {
        let g = SurfacePoint::new(gm, ga).unwrap();
        let eps = EpsParam::new(0.1, 0.0).unwrap();
        let rep = surface::cardioid_contains(&g, &eps, 0.2);
        let psi = Tilt(rep.psi_used.unwrap());
        let l = lve::lve_cumulant(&g, &eps, psi, 1, 6, &scheme).unwrap();
        let o = model::cumulant_oracle(&g, &eps, psi, 1, 1e-11).unwrap();
        worst = worst.max((l.value - o.value).norm() / o.value.norm());
    }
    report.check(
        "oracle-equivalence",
        "tree sum vs direct quadrature at 4 points",
        worst < 1e-4,
        format!("worst rel {:.2e}", worst),
    );
}
