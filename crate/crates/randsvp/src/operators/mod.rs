//! Matrix-free measurement operators `A: K^{m x n} -> R^p` acting on factored
//! inputs, plus R-RIP diagnostics.

mod gaussian;
mod pauli;

pub use gaussian::GaussianOperator;
pub use pauli::{pauli_apply_vector, PauliCode, PauliOperator, PauliSymbol};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{check_finite_vec, thin_qr, FactorTriple};
use crate::rand_approx::gaussian_test_block;
use crate::scalar::Scalar;

/// A length-`p` vector of real measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector(DVector<f64>);

impl MeasurementVector {
    pub fn new(y: DVector<f64>) -> Result<Self> {
        check_finite_vec(&y, "measurement vector")?;
        Ok(Self(y))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

impl From<MeasurementVector> for DVector<f64> {
    fn from(v: MeasurementVector) -> Self {
        v.0
    }
}

/// Matrix-free linear operator with factored apply and block adjoint-apply.
///
/// Implementations must be safe for concurrent calls and must return
/// bit-identical results for any thread count.
pub trait MeasurementOperator<S: Scalar>: Sync {
    /// Row dimension `m` of the matrix space.
    fn nrows(&self) -> usize;
    /// Column dimension `n` of the matrix space.
    fn ncols(&self) -> usize;
    /// Number of measurements `p`.
    fn num_measurements(&self) -> usize;

    /// True when the operator measures Hermitian matrices (Pauli); solvers
    /// then use the eigen path with shared `U = V` storage.
    fn hermitian_only(&self) -> bool {
        false
    }

    /// Bound on `‖A‖²` used for default step sizes; `n²/p` exactly for Pauli,
    /// `mn/p` in expectation for normalized Gaussians.
    fn norm_sq_bound(&self) -> f64;

    /// `A(u diag(d) vᴴ)` on raw (not necessarily orthonormal) factors.
    fn apply_factored(
        &self,
        u: &DMatrix<S>,
        d: &DVector<f64>,
        v: &DMatrix<S>,
    ) -> Result<MeasurementVector>;

    fn apply(&self, f: &FactorTriple<S>) -> Result<MeasurementVector> {
        self.apply_factored(f.left(), f.values(), f.right())
    }

    /// `A*(z) · W` for an `n x s` block, without forming `A*(z)` on the
    /// matrix-free paths.
    fn adjoint_apply(&self, z: &MeasurementVector, w: &DMatrix<S>) -> Result<DMatrix<S>>;

    /// `(A*(z))ᴴ · W` for an `m x s` block.
    fn adjoint_apply_adj(&self, z: &MeasurementVector, w: &DMatrix<S>) -> Result<DMatrix<S>>;

    /// The dense `p x (m·n)` matrix with row `j` equal to the `j`-th
    /// measurement functional against column-major vec. Guarded by size.
    fn densify(&self) -> Result<DMatrix<S>>;
}

/// Monte-Carlo lower bound on the R-RIP constant: max deviation of
/// `‖A X‖²` from 1 over random unit-Frobenius rank-`r` matrices, reported as
/// `(deficit, excess)`. Hermitian-only operators are probed with random
/// Hermitian matrices.
pub fn rip_monte_carlo<S: Scalar, Op: MeasurementOperator<S> + ?Sized, R: Rng + ?Sized>(
    op: &Op,
    r: usize,
    trials: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let (m, n) = (op.nrows(), op.ncols());
    if r > m.min(n) {
        return Err(Error::RankExceeds {
            requested: r,
            available: m.min(n),
        });
    }
    let mut deficit = 0.0f64;
    let mut excess = 0.0f64;
    for _ in 0..trials {
        let u = thin_qr(&gaussian_test_block::<S, _>(m, r, rng))?.q;
        let mut d: DVector<f64> = DVector::from_fn(r, |_, _| f64::standard_normal(rng));
        d /= d.norm();
        let y = if op.hermitian_only() {
            op.apply_factored(&u, &d, &u)?
        } else {
            let v = thin_qr(&gaussian_test_block::<S, _>(n, r, rng))?.q;
            op.apply_factored(&u, &d, &v)?
        };
        let energy = y.as_vector().norm_squared();
        deficit = deficit.max(1.0 - energy);
        excess = excess.max(energy - 1.0);
    }
    Ok((deficit.max(0.0), excess.max(0.0)))
}
