//! Zero-dimensional quartic O(N) vector model, end to end: direct contour
//! evaluation of the partition function and cumulants, the loop vertex
//! expansion as a convergent ciliated-tree series, extraction of the 1/N
//! asymptotic coefficients, and Borel-Pade resummation.
//!
//! Module map:
//! - [`surface`]: the two-sheeted Riemann surface of the square root, the
//!   resolvent, and all analyticity-domain geometry (cardioid, Sokal disks).
//! - [`gauss`]: Gaussian expectations for degenerate real and complex-scaled
//!   covariances, the copies trick, Wick moments.
//! - [`combin`]: labelled trees, forests, cilia and marks, Prufer codes, and
//!   the exact tree-sum identities.
//! - [`bkar`]: the forest interpolation formula verified exactly on
//!   polynomial test functions, and exact simplex integrals of weight
//!   monomials.
//! - [`model`]: direct quadrature oracles for the partition function and the
//!   rescaled cumulants.
//! - [`lve`]: the loop vertex expansion of the cumulants, its epsilon-Taylor
//!   coefficients, and Taylor remainders.
//! - [`resum`]: Borel transform, Pade continuation, Laplace reconstruction.

// Validation uses negated comparisons so that NaN inputs fail the checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bkar;
pub mod combin;
pub mod gauss;
pub mod lve;
pub mod model;
pub mod quad;
pub mod resum;
pub mod surface;

pub use num_complex::Complex64;
