//! Certified fixed-point iteration for monotone, strongly concave operators
//! on the cone of nonnegative grid functions.
//!
//! The pieces are layered: [`cone`] holds vectors and the order,
//! [`concavity`] the scalar characteristic equations, [`engine`] the
//! iteration drivers and their certificates, [`quadrature`] the kernel
//! rules, [`gallery`] the concrete operators and [`cli`] the experiment
//! runner behind the `conefix` binary.

// `!(x > 0.0)` guards are intended: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod concavity;
pub mod cone;
pub mod engine;
pub mod error;
pub mod gallery;
pub mod quadrature;

pub use concavity::{phi_eval, phi_iterate, rate_k, rate_k_general, solve_delta, solve_tau, ConcavityProfile};
pub use cone::{leq, sup_norm, Axis, ConeVector, ConicalSegment, Grid};
pub use engine::{
    audit_concavity, audit_monotone, collapse_check, complement_fixed_point, periodic_points, solve_decreasing,
    solve_general, solve_increasing, solve_sum, uniqueness_probe, verify_bracket, Collapse, ConvergenceReport,
    IterationCertificate, OperatorHandle, Solution, SolveOptions,
};
pub use error::{Error, Result};
