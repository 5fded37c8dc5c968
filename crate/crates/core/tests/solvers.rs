//! Solver pipeline on coarse grids.

use std::sync::Arc;

use critjump::continuation::{
    estimate_lambda_max, nonexistence_bound, sweep, BranchCase, LambdaMaxOptions, SpecFamily,
    SweepOptions,
};
use critjump::discretization::{sup_norm, Field, Grid};
use critjump::energy::local_min_probe;
use critjump::mountain_pass::{
    classify_case, second_solution, za_solve, Case, ClassifyOptions, CubicHarness, DescentOptions,
    Functional, QuadraticHarness, RingHarness, SecondOptions,
};
use critjump::nonlinearity::{BubbleSpec, Domain, ProblemSpec};
use critjump::singular_solvers::{
    build_supersolution, first_solution, monotone_iterate, solve_pure_singular,
    supersolution_violations, weak_residual_random, Bracket, Context,
};
use critjump::Error;

fn spec(lambda: f64) -> ProblemSpec {
    ProblemSpec::new(3, 0.5, 1.0, lambda, Domain::RadialBall).unwrap()
}

fn family() -> SpecFamily {
    SpecFamily {
        n: 3,
        delta: 0.5,
        a: 1.0,
        domain: Domain::RadialBall,
    }
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(ProblemSpec::new(2, 0.5, 1.0, 1.0, Domain::RadialBall).is_err());
    assert!(ProblemSpec::new(3, -0.5, 1.0, 1.0, Domain::RadialBall).is_err());
    assert!(ProblemSpec::new(3, 0.5, 0.0, 1.0, Domain::RadialBall).is_err());
    assert!(ProblemSpec::new(3, 0.5, 1.0, -1.0, Domain::RadialBall).is_err());
    assert!(matches!(
        BubbleSpec::new(0.1, vec![0.0; 3], 0.0),
        Err(Error::InvalidParameter(_) | Error::Geometry(_))
    ));
}

#[test]
fn pure_singular_solution_scales_exactly() {
    let ctx = Context::radial(3, 256).unwrap();
    for &d in &[0.5, 2.0] {
        let sp = ProblemSpec::new(3, d, 1.0, 1.0, Domain::RadialBall).unwrap();
        let v1 = solve_pure_singular(&ctx, &sp).unwrap().solution.values;
        let v = solve_pure_singular(&ctx, &sp.with_lambda(7.0)).unwrap().solution.values;
        let f = 7f64.powf(1.0 / (1.0 + d));
        let err = v.iter().zip(&v1).map(|(a, b)| (a - f * b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-8 * sup_norm(&v), "δ={d}: {err}");
    }
}

#[test]
fn first_solution_sits_inside_its_bracket() {
    let ctx = Context::radial(3, 256).unwrap();
    let sp = spec(1.0);
    let rep = first_solution(&ctx, &sp).unwrap();
    assert!(rep.converged && rep.residual_inf < 1e-9);
    let v = solve_pure_singular(&ctx, &sp).unwrap().solution.values;
    let w = build_supersolution(&ctx, &sp).unwrap();
    assert!(supersolution_violations(&ctx, &sp, &w.values).unwrap().is_empty());
    for (i, ((lo, &u), hi)) in v.iter().zip(&rep.solution.values).zip(&w.values).enumerate() {
        assert!(*lo <= u * (1.0 + 1e-12) && u <= hi * (1.0 + 1e-12), "node {i}");
    }
    let weak = weak_residual_random(&ctx, &sp, &rep.solution.values, 10, 3).unwrap();
    assert!(weak < 1e-8, "{weak}");
}

#[test]
fn monotone_iteration_is_certified_at_small_lambda() {
    let ctx = Context::radial(3, 256).unwrap();
    let sp = spec(0.01);
    let v = solve_pure_singular(&ctx, &sp).unwrap().solution;
    let lower = Field::new(v.grid.clone(), v.values.iter().map(|x| 0.5 * x).collect()).unwrap();
    let upper = build_supersolution(&ctx, &sp).unwrap();
    let rep = monotone_iterate(&ctx, &sp, &Bracket::new(lower, upper).unwrap()).unwrap();
    assert!(rep.monotonicity_certificate);
    assert_eq!(rep.forgiven_violations, 0);
    let e = &rep.iterate_energies;
    assert!(e.len() >= 2);
    assert!(rep.residual_inf < 1e-9);
}

#[test]
fn bracket_rejects_crossed_pairs() {
    let grid = Grid::radial(3, 32).unwrap();
    let lo = Field::new(grid.clone(), vec![2.0; grid.dim()]).unwrap();
    let hi = Field::new(grid.clone(), vec![1.0; grid.dim()]).unwrap();
    assert!(matches!(Bracket::new(lo, hi), Err(Error::BracketViolation { .. })));
}

#[test]
fn first_solution_is_a_local_minimum() {
    let ctx = Context::radial(3, 256).unwrap();
    let sp = spec(1.0);
    let u = first_solution(&ctx, &sp).unwrap().solution;
    let rep = local_min_probe(&u, &sp, 60, 1e-3, 9).unwrap();
    assert_eq!(rep.n_probes, 60);
    assert!(rep.violations.is_empty() && rep.min_gap > 0.0);
}

#[test]
fn no_solution_far_above_the_bound() {
    let ctx = Context::radial(3, 128).unwrap();
    let sp = spec(10.0 * nonexistence_bound(&spec(1.0), ctx.eigen.lambda1));
    assert!(matches!(first_solution(&ctx, &sp), Err(Error::NoSolutionEvidence(_))));
}

fn grid() -> Arc<Grid> {
    Grid::radial(3, 64).unwrap()
}

#[test]
fn quadratic_and_cubic_harnesses_are_mountain_passes() {
    let opts = ClassifyOptions::default();
    let q = QuadraticHarness { grid: grid() };
    let c = classify_case(&q, &[0.1, 0.2, 0.4], &opts).unwrap();
    assert!(matches!(c.case, Case::MP { rho1, inf_value } if rho1 == 0.4 && (inf_value - 0.08).abs() < 1e-12));
    let cu = CubicHarness { grid: grid() };
    let c = classify_case(&cu, &[0.05, 0.1, 0.2], &opts).unwrap();
    assert!(matches!(c.case, Case::MP { rho1, .. } if rho1 == 0.2));
    // past ‖v‖ = 1/2 the cubic goes negative
    let c = classify_case(&cu, &[0.1, 0.8], &opts).unwrap();
    assert_eq!(c.rho0, Some(0.8));
}

#[test]
fn ring_harness_is_zero_altitude() {
    let ring = RingHarness {
        grid: grid(),
        radius: 0.5,
        scale: 1.0,
    };
    let c = classify_case(&ring, &[0.5], &ClassifyOptions::default()).unwrap();
    assert!(matches!(c.case, Case::ZA { rho } if rho == 0.5));
    let z = za_solve(&ring, 0.5, 1, &DescentOptions::default()).unwrap();
    assert!(z.value.abs() < 1e-10);
    assert!((ring.norm(&z.v) - 0.5).abs() < 1e-4);
}

#[test]
fn second_solution_lies_above_the_first() {
    let ctx = Context::radial(3, 256).unwrap();
    let sp = spec(2.0);
    let u = first_solution(&ctx, &sp).unwrap().solution;
    let out = second_solution(&ctx, &sp, &u, &SecondOptions::default()).unwrap();
    let c = &out.certificate;
    assert_eq!(c.case, "MP");
    let g = c.gamma0.unwrap();
    assert!(g > 0.0 && g < c.threshold, "{g} vs {}", c.threshold);
    assert!(c.residual <= 1e-6 && c.v_sup_norm > 1e-4);
    assert!(out.composed.sup_norm() > u.sup_norm());
    for (w, x) in out.composed.values.iter().zip(&u.values) {
        assert!(w >= x);
    }
}

#[test]
fn frontier_brackets_below_the_bound() {
    let ctx = Context::radial(3, 256).unwrap();
    let opts = LambdaMaxOptions {
        tol: 1e-2,
        ..LambdaMaxOptions::default()
    };
    let r = estimate_lambda_max(&ctx, &family(), &opts).unwrap();
    assert!(r.lo > 0.0 && r.lo <= r.hi && r.hi <= r.bound);
    assert!(r.hi - r.lo <= opts.tol * r.hi * (1.0 + 1e-12));
    assert!(r.lo > 4.0 && r.hi < 5.0, "[{}, {}]", r.lo, r.hi);
}

#[test]
fn sweep_reports_rows_on_both_sides_of_the_frontier() {
    let ctx = Context::radial(3, 256).unwrap();
    let opts = SweepOptions {
        second: true,
        ..SweepOptions::default()
    };
    let rows = sweep(&ctx, &family(), &[3.0, 6.0], &opts).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].first_found && rows[0].second_found);
    assert_eq!(rows[0].case, BranchCase::MP);
    assert!(rows[0].norm_inf_second > rows[0].norm_inf_first);
    assert!(!rows[1].first_found && !rows[1].second_found);
    assert!(rows[1].error.is_some());
    for r in &rows {
        assert!(!r.second_found || r.first_found);
    }
    assert!(sweep(&ctx, &family(), &[2.0, 1.0], &opts).is_err());
}
