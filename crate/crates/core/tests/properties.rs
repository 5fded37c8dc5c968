//! Randomized invariants.

use std::sync::{Arc, OnceLock};

use critjump::continuation::{k_of_a, scaled_warm_start};
use critjump::discretization::{Field, Grid};
use critjump::energy::{energy_E, Translation};
use critjump::mountain_pass::{sobolev_constants, threshold};
use critjump::nonlinearity::{
    chi_eps, cutoff_eta, pow_diff, primitive_G, talenti_constant, talenti_radial, Domain,
    JumpRegularization, ProblemSpec,
};
use critjump::singular_solvers::{first_solution, level_set_fraction, Context};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec(lambda: f64) -> ProblemSpec {
    ProblemSpec::new(3, 0.5, 1.0, lambda, Domain::RadialBall).unwrap()
}

/// First solution at λ = 1 on a coarse grid, shared by the field properties.
fn base() -> &'static (Context, Field) {
    static CELL: OnceLock<(Context, Field)> = OnceLock::new();
    CELL.get_or_init(|| {
        let ctx = Context::radial(3, 128).unwrap();
        let u = first_solution(&ctx, &spec(1.0)).unwrap().solution;
        (ctx, u)
    })
}

/// Smoothed noise flipped so that its largest magnitude is positive.
fn oriented_noise(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let z = grid.smoothed_noise(rng);
    let top = z.iter().cloned().fold(f64::MIN, f64::max);
    let bottom = z.iter().cloned().fold(f64::MAX, f64::min);
    if top >= -bottom {
        z
    } else {
        z.iter().map(|x| -x).collect()
    }
}

/// Oriented noise shifted to change sign, with the smaller endpoint of every
/// sign-changing edge set to zero.
fn separated_field(grid: &Grid, seed: u64, shift: f64, amp: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = oriented_noise(grid, &mut rng);
    let top = z.iter().cloned().fold(f64::MIN, f64::max);
    let raw: Vec<f64> = z.iter().map(|x| amp * (x - shift * top)).collect();
    let mut v = raw.clone();
    for i in 0..raw.len() - 1 {
        if raw[i] * raw[i + 1] < 0.0 {
            let k = if raw[i].abs() < raw[i + 1].abs() { i } else { i + 1 };
            v[k] = 0.0;
        }
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pow_diff_matches_direct_difference(x in 0.1f64..10.0, y in 0.1f64..10.0, e in -2.0f64..3.0) {
        prop_assume!(e.abs() > 1e-3);
        let direct = (x.powf(e) - y.powf(e)) / e;
        prop_assert!((pow_diff(x, y, e) - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
    }

    #[test]
    fn threshold_decreases_in_lambda(l1 in 1e-3f64..20.0, f in 1.001f64..10.0) {
        let s = sobolev_constants(3).unwrap().s;
        prop_assert!(threshold(&spec(l1 * f), s) < threshold(&spec(l1), s));
    }

    #[test]
    fn k_is_positive_and_monotone(a in 0.01f64..10.0, f in 1.0f64..5.0) {
        let k1 = k_of_a(3, 0.5, a);
        let k2 = k_of_a(3, 0.5, a * f);
        prop_assert!(k1 > 0.0 && k1.is_finite());
        prop_assert!(k2 >= k1 - 1e-12 * k1);
    }

    #[test]
    fn smoothed_indicator_is_a_monotone_ramp(t in -2.0f64..2.0, s in 1e-4f64..1.0, eps in 1e-3f64..0.4) {
        let reg = JumpRegularization::new(eps).unwrap();
        let c = chi_eps(t, reg);
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!(chi_eps(t + s, reg) <= c);
    }

    #[test]
    fn cutoff_stays_in_unit_interval(rho in 0.0f64..1.0, r in 0.01f64..0.4) {
        let e = cutoff_eta(rho, r);
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!(cutoff_eta(rho + 1e-3, r) <= e);
    }

    #[test]
    fn talenti_is_positive_and_radially_decreasing(r in 0.0f64..5.0, eps in 1e-3f64..2.0) {
        let c = talenti_constant(3);
        let v = talenti_radial(r, eps, 3, c);
        prop_assert!(v > 0.0);
        prop_assert!(talenti_radial(r + 0.01, eps, 3, c) < v);
    }

    #[test]
    fn primitive_is_continuous_across_the_level(a in 0.1f64..3.0) {
        let sp = ProblemSpec::new(3, 0.5, a, 1.0, Domain::RadialBall).unwrap();
        let below = primitive_G(a * (1.0 - 1e-12), &sp);
        let above = primitive_G(a * (1.0 + 1e-12), &sp);
        prop_assert!((below - above).abs() < 1e-10);
    }

    #[test]
    fn warm_start_scaling_composes(from in 0.1f64..5.0, mid in 0.1f64..5.0, to in 0.1f64..5.0, d in 0.1f64..3.0) {
        let u = vec![0.3, 1.0, 2.5];
        let two = scaled_warm_start(&scaled_warm_start(&u, from, mid, d), mid, to, d);
        let one = scaled_warm_start(&u, from, to, d);
        for (a, b) in two.iter().zip(&one) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn translated_energy_splits_on_separated_fields(seed in any::<u64>(), shift in 0.05f64..0.9, amp in 0.05f64..1.0) {
        let (ctx, u) = base();
        let sp = spec(1.0);
        let v = separated_field(&ctx.grid, seed, shift, amp);
        let tr = Translation::new(u, &sp).unwrap();
        let i = tr.energy(&v, &sp).total;
        let vp: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
        let vm: Vec<f64> = v.iter().map(|x| (-x).max(0.0)).collect();
        let w: Vec<f64> = u.values.iter().zip(&vp).map(|(a, b)| a + b).collect();
        let rhs = energy_E(&Field::new(u.grid.clone(), w).unwrap(), &sp).total
            - energy_E(u, &sp).total
            + ctx.grid.dirichlet(&vm);
        prop_assert!((i - rhs).abs() <= 1e-9 * i.abs().max(1e-12), "{} vs {}", i, rhs);
    }

    #[test]
    fn translated_energy_on_nonpositive_fields_is_dirichlet(seed in any::<u64>()) {
        let (ctx, u) = base();
        let sp = spec(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = ctx.grid.smoothed_noise(&mut rng).iter().map(|x| -x.abs()).collect();
        let tr = Translation::new(u, &sp).unwrap();
        let i = tr.energy(&w, &sp).total;
        let d = ctx.grid.dirichlet(&w);
        prop_assert!((i - d).abs() <= 1e-13 * d);
    }

    #[test]
    fn level_set_fraction_is_a_fraction(a in 0.0f64..2.0) {
        let (ctx, u) = base();
        let f = level_set_fraction(&ctx.grid, &u.values, a);
        prop_assert!((0.0..=1.0).contains(&f));
    }
}

#[test]
fn general_split_defect_is_the_discrete_cross_term() {
    // Without separation the identity is off by exactly -<∇v⁺, ∇v⁻>.
    let (ctx, u) = base();
    let sp = spec(1.0);
    let grid: &Arc<Grid> = &ctx.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let z = oriented_noise(grid, &mut rng);
        let top = z.iter().cloned().fold(f64::MIN, f64::max);
        let v: Vec<f64> = z.iter().map(|x| 0.3 * (x - 0.4 * top)).collect();
        let vp: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
        let vm: Vec<f64> = v.iter().map(|x| (-x).max(0.0)).collect();
        let tr = Translation::new(u, &sp).unwrap();
        let i = tr.energy(&v, &sp).total;
        let w: Vec<f64> = u.values.iter().zip(&vp).map(|(a, b)| a + b).collect();
        let rhs = energy_E(&Field::new(u.grid.clone(), w).unwrap(), &sp).total
            - energy_E(u, &sp).total
            + grid.dirichlet(&vm);
        let cross = grid.h1_inner(&vp, &vm);
        assert!(cross < 0.0);
        assert!(((i - rhs) + cross).abs() <= 1e-9 * i.abs(), "{} {} {}", i, rhs, cross);
    }
}
