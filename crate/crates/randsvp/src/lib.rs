//! Low-memory affine rank minimization via randomized singular value
//! projection.
//!
//! The solver recovers a rank-`r` matrix from linear measurements
//! `y = A(X*) + noise` by projected gradient descent where the rank
//! projection is a randomized sketch applied to an implicitly represented
//! matrix. Iterates only ever exist as rank-`r` factor triples, so total live
//! state is `O((m + n)(r + rho))` even when `A*` has dense range.
//!
//! Modules:
//! - [`linalg`]: dense QR/SVD/Hermitian-eigen primitives and [`FactorTriple`]
//! - [`rand_approx`]: randomized range finder, factored SVD, `rand_svd` /
//!   `rand_eig`
//! - [`operators`]: Pauli tomography ensemble and a dense Gaussian reference
//! - [`solver`]: the accelerated factored iteration and theory diagnostics
//! - [`metrics`]: factored Frobenius/trace-distance/fidelity and the
//!   epsilon-tilde probe
//!
//! The `parallel` feature (default) backs operator application and
//! seed-parallel studies with rayon; reductions combine fixed-size chunks in
//! index order, so results are bit-identical for any thread count and for the
//! sequential fallback build.

pub mod error;
pub mod linalg;
pub mod metrics;
pub mod operators;
pub mod parallel;
pub mod rand_approx;
pub mod scalar;
pub mod solver;

#[doc(hidden)]
pub mod alloc_hook;

pub use error::{Error, Result};
pub use linalg::{FactorTriple, Spectrum};
pub use operators::{GaussianOperator, MeasurementOperator, MeasurementVector, PauliOperator};
pub use rand_approx::{ImplicitMatrix, RandProjConfig};
pub use scalar::Scalar;
pub use solver::{solve, Constraint, ConvergenceReport, SolverConfig};
