//! Solvers for large nonsymmetric differential Riccati equations
//!
//! ```text
//! X'(t) = -A X - X D + X S X + F G^T,   X(0) = Z01 Z02^T
//! ```
//!
//! with `A` (n x n), `D` (p x p), `S` (p x n) and a low-rank constant term.
//! The main entry points are [`eba::solve_ndre`] (extended block Arnoldi
//! projection) and [`bdf_newton::solve_ndre_bdf_newton`] (full-scale BDF with
//! Newton and low-rank Sylvester solves). Dense reference solutions live in
//! [`oracles`] and a posteriori bounds in [`bounds`].

pub mod bdf_newton;
pub mod bounds;
pub mod dense;
pub mod eba;
pub mod error;
pub mod io;
pub mod krylov;
pub mod lowrank;
pub mod oracles;
pub mod problem;
pub mod projected;
pub mod report;

pub use error::{NdreError, Result};
pub use lowrank::LowRankFactorPair;

/// Dense real matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense real vector.
pub type Vector = nalgebra::DVector<f64>;
