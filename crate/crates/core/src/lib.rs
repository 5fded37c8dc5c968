//! Constructive solvers for
//!
//! ```text
//! -Δu = λ (u^(2*-1) + χ{u<a} u^(-δ))  in Ω,   u = 0 on ∂Ω
//! ```
//!
//! on the unit ball (radial reduction) and the unit cube. The first
//! (minimal) solution comes from a regularized monotone iteration inside a
//! sub/supersolution bracket; the second comes from a mountain-pass search
//! on the functional translated by the first one.

// NaN guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod continuation;
pub mod discretization;
pub mod energy;
pub mod error;
pub mod mountain_pass;
pub mod nonlinearity;
pub mod singular_solvers;

pub use error::{Error, Result};
