//! Values frozen against closed forms and independent computations.

use std::f64::consts::PI;

use critjump::continuation::{k_of_a, nonexistence_bound};
use critjump::discretization::{bessel_first_zero, eigen_first, Grid, E1_SUP_DEFAULT};
use critjump::mountain_pass::{sobolev_constants, threshold};
use critjump::nonlinearity::{
    critical_exponent, hark_profile, talenti_constant, talenti_radial, Domain, ProblemSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma;

fn closed_form_s(n: usize) -> f64 {
    let nf = n as f64;
    PI * nf * (nf - 2.0) * (gamma(nf / 2.0) / gamma(nf)).powf(2.0 / nf)
}

#[test]
fn sobolev_constant_matches_gamma_formula() {
    for n in 3..=5 {
        let s = sobolev_constants(n).unwrap().s;
        assert!((s - closed_form_s(n)).abs() < 1e-10 * s, "N={n}: {s} vs {}", closed_form_s(n));
    }
    assert!((sobolev_constants(3).unwrap().s - 5.477904089531332).abs() < 1e-12);
}

#[test]
fn talenti_integrals_agree_with_monte_carlo() {
    // ∫|∇V|² and ∫V^{2*} over R³ for ε = 1, by sampling r = tan(θ) radially.
    let n = 3;
    let c = talenti_constant(n);
    let q = critical_exponent(n);
    let area = 4.0 * PI;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples = 400_000;
    let (mut a, mut b) = (0.0, 0.0);
    for _ in 0..samples {
        let th: f64 = rng.gen_range(0.0..PI / 2.0);
        let r = th.tan();
        let jac = area * r * r / th.cos().powi(2) * (PI / 2.0);
        let v = talenti_radial(r, 1.0, n, c);
        let dv = c * (-r) * (1.0 + r * r).powf(-1.5);
        a += v.powf(q) * jac;
        b += dv * dv * jac;
    }
    a /= samples as f64;
    b /= samples as f64;
    let sc = sobolev_constants(n).unwrap();
    assert!((a - sc.a).abs() < 0.02 * sc.a, "A: {a} vs {}", sc.a);
    assert!((b - sc.b).abs() < 0.02 * sc.b, "B: {b} vs {}", sc.b);
    assert!((sc.a - 12.82099).abs() < 1e-4 && (sc.b - 12.82099).abs() < 1e-4);
}

#[test]
fn threshold_closed_form() {
    let s = sobolev_constants(3).unwrap().s;
    let spec = ProblemSpec::new(3, 0.5, 1.0, 1.0, Domain::RadialBall).unwrap();
    assert!((threshold(&spec, s) - s.powf(1.5) / 3.0).abs() < 1e-14);
    assert!((threshold(&spec, s) - 4.273663).abs() < 1e-5);
    let quarter = spec.with_lambda(4.0);
    assert!((threshold(&quarter, s) - 0.5 * threshold(&spec, s)).abs() < 1e-14);
}

fn scan_k(n: usize, delta: f64, a: f64) -> f64 {
    let p = critical_exponent(n) - 2.0;
    let g = |t: f64| t.powf(p) + if t < a { t.powf(-1.0 - delta) } else { 0.0 };
    // log-spaced scan over (1e-4, 1e2), refined around the best sample
    let (lo, hi) = (1e-4f64.ln(), 1e2f64.ln());
    let m = 200_000;
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=m {
        let t = (lo + (hi - lo) * k as f64 / m as f64).exp();
        let v = g(t);
        if v < best.0 {
            best = (v, t);
        }
    }
    let dt = best.1 * (hi - lo) / m as f64;
    for k in -2000..=2000 {
        let t = best.1 + dt * k as f64 / 1000.0;
        if t > 0.0 {
            best.0 = best.0.min(g(t));
        }
    }
    // the infimum may sit at the jump itself, from either side
    best.0.min(g(a)).min(g(a - 1e-13 * a))
}

#[test]
fn k_of_a_matches_dense_scan() {
    for &a in &[0.5, 1.0, 2.0, 4.0, 50.0] {
        let k = k_of_a(3, 0.5, a);
        let s = scan_k(3, 0.5, a);
        assert!(k > 0.0);
        assert!((k - s).abs() < 1e-8 * s.max(1.0), "a={a}: {k} vs scan {s}");
    }
    assert!((k_of_a(3, 0.5, 0.5) - 0.0625).abs() < 1e-12);
    assert!((k_of_a(3, 0.5, 1.0) - 1.0).abs() < 1e-12);
}

#[test]
fn k_of_a_is_nondecreasing_in_a() {
    let ks: Vec<f64> = [0.5, 1.0, 2.0, 4.0].iter().map(|&a| k_of_a(3, 0.5, a)).collect();
    for w in ks.windows(2) {
        assert!(w[1] >= w[0] - 1e-12, "{ks:?}");
    }
    // beyond the interior minimizer the level no longer matters
    assert!((ks[2] - ks[3]).abs() < 1e-10);
}

#[test]
fn nonexistence_bound_is_lambda1_over_k() {
    let spec = ProblemSpec::new(3, 0.5, 1.0, 1.0, Domain::RadialBall).unwrap();
    let b = nonexistence_bound(&spec, PI * PI);
    assert!((b - PI * PI).abs() < 1e-12);
}

#[test]
fn singular_profile_solves_its_ode() {
    for &d in &[1.5, 2.0, 2.5, 3.0] {
        for &t in &[0.1, 0.5, 1.0, 2.0] {
            let h = 1e-4 * t;
            let p = |x: f64| hark_profile(x, d).unwrap();
            let ppp = (p(t + h) - 2.0 * p(t) + p(t - h)) / (h * h);
            let res = (-ppp - p(t).powf(-d)).abs();
            assert!(res < 1e-5 * p(t).powf(-d), "δ={d} t={t}: {res}");
        }
    }
    assert!((hark_profile(1.0, 3.0).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    assert!(hark_profile(1.0, 0.5).is_err());
}

#[test]
fn bessel_zero_and_radial_eigenvalue() {
    assert!((bessel_first_zero(3) - PI).abs() < 1e-10);
    assert!((bessel_first_zero(4) - 3.831705970207512).abs() < 1e-9);
    let grid = Grid::radial(3, 1024).unwrap();
    let e = eigen_first(&grid, E1_SUP_DEFAULT).unwrap();
    assert!((e.lambda1 - PI * PI).abs() < 1e-4, "{}", e.lambda1);
    let grid = Grid::radial(4, 1024).unwrap();
    let e = eigen_first(&grid, E1_SUP_DEFAULT).unwrap();
    let j = bessel_first_zero(4);
    assert!((e.lambda1 - j * j).abs() < 1e-3 * j * j);
}

#[test]
fn cube_eigenvalue_approaches_three_pi_squared() {
    let grid = Grid::box3d(24).unwrap();
    let e = eigen_first(&grid, E1_SUP_DEFAULT).unwrap();
    assert!((e.lambda1 - 3.0 * PI * PI).abs() < 0.02 * 3.0 * PI * PI, "{}", e.lambda1);
}
