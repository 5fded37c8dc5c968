use std::ffi::c_char;
use std::ptr;

use critjump_ffi::*;

fn last_error() -> String {
    let len = unsafe { cj_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; len + 1];
    unsafe { cj_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..len].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn sobolev_constants_for_three_dimensions() {
    let (mut a, mut b, mut s) = (0.0, 0.0, 0.0);
    assert_eq!(unsafe { cj_sobolev_constants(3, &mut a, &mut b, &mut s) }, CjStatus::Ok);
    assert!((s - 5.477904089531332).abs() < 1e-6);
    assert!((a - b).abs() < 1e-6 * a);
}

#[test]
fn null_outputs_are_rejected() {
    let st = unsafe { cj_sobolev_constants(3, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, CjStatus::NullPointer);
    assert!(last_error().contains("null"));
    assert_eq!(unsafe { cj_context_new_radial(3, 64, ptr::null_mut()) }, CjStatus::NullPointer);
}

#[test]
fn bad_dimension_reports_invalid_argument() {
    let mut ctx = ptr::null_mut();
    let st = unsafe { cj_context_new_radial(2, 64, &mut ctx) };
    assert_eq!(st, CjStatus::InvalidArgument);
    assert!(ctx.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn nonexistence_bound_matches_k() {
    let (mut k, mut bound) = (0.0, 0.0);
    let st = unsafe { cj_nonexistence_bound(3, 0.5, 1.0, 9.8696, &mut k, &mut bound) };
    assert_eq!(st, CjStatus::Ok);
    assert!((k - 1.0).abs() < 1e-9);
    assert!((bound - 9.8696).abs() < 1e-9);
    let st = unsafe { cj_nonexistence_bound(3, 0.5, 1.0, -1.0, &mut k, &mut bound) };
    assert_eq!(st, CjStatus::InvalidArgument);
}

#[test]
fn first_and_second_solution_round_trip() {
    unsafe {
        let mut ctx = ptr::null_mut();
        assert_eq!(cj_context_new_radial(3, 256, &mut ctx), CjStatus::Ok);
        let n = cj_context_len(ctx);
        assert!(n > 0);
        let l1 = cj_context_lambda1(ctx);
        assert!((l1 - std::f64::consts::PI.powi(2)).abs() < 0.05);

        let mut sol = ptr::null_mut();
        assert_eq!(cj_first_solution(ctx, 3, 0.5, 1.0, 1.0, &mut sol), CjStatus::Ok, "{}", last_error());
        assert!(cj_solution_residual(sol) < 1e-8);
        let mut small = vec![0.0; n - 1];
        assert_eq!(cj_solution_values(sol, small.as_mut_ptr(), small.len()), CjStatus::BufferTooSmall);
        let mut u = vec![0.0; n];
        assert_eq!(cj_solution_values(sol, u.as_mut_ptr(), n), CjStatus::Ok);
        assert!(u.iter().all(|&x| x > 0.0));

        let mut sec = ptr::null_mut();
        assert_eq!(cj_second_solution(ctx, sol, 7, &mut sec), CjStatus::Ok, "{}", last_error());
        let mut case = CjCase::ZeroAltitude;
        assert_eq!(cj_second_case(sec, &mut case), CjStatus::Ok);
        assert_eq!(case, CjCase::MountainPass);
        let g = cj_second_gamma0(sec);
        assert!(g > 0.0 && g < cj_second_threshold(sec));
        let mut w = vec![0.0; n];
        assert_eq!(cj_second_values(sec, w.as_mut_ptr(), n), CjStatus::Ok);
        assert!(w.iter().zip(&u).all(|(a, b)| a >= b));

        cj_second_free(sec);
        cj_solution_free(sol);
        cj_context_free(ctx);
        cj_context_free(ptr::null_mut());
    }
}

#[test]
fn no_solution_above_bound() {
    unsafe {
        let mut ctx = ptr::null_mut();
        assert_eq!(cj_context_new_radial(3, 128, &mut ctx), CjStatus::Ok);
        let mut sol = ptr::null_mut();
        let st = cj_first_solution(ctx, 3, 0.5, 1.0, 50.0, &mut sol);
        assert_ne!(st, CjStatus::Ok);
        assert!(sol.is_null());
        cj_context_free(ctx);
    }
}
