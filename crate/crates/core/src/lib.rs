//! Finite-difference solver and verification toolkit for second-order mean
//! field games on the torus with the singular coupling `-(m+ε)^{-α}`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Axis loops over `0..d` index several arrays at once.
#![allow(clippy::needless_range_loop)]

pub mod adjoint;
pub mod cli;
pub mod config;
pub mod coupling;
pub mod error;
pub mod estimates;
pub mod gates;
pub mod grid;
pub mod hamiltonian;
pub mod io;
pub mod linalg;
pub mod mc;
pub mod ops;
pub mod stationary;
pub mod time_solver;

pub use error::{MfgError, Result};
