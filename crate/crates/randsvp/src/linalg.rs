//! Dense small-scale decompositions (thin QR, SVD, Hermitian eigen) and the
//! factored-matrix data model used by every other module.
//!
//! Dense factorizations are delegated to nalgebra; this module pins the
//! contracts the rest of the crate relies on: thin shapes, deterministic
//! descending order with ties broken by original index, orthonormality of
//! every factor to [`ORTHO_TOL`], and basis completion for rank-deficient QR
//! inputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Orthonormality tolerance for factor columns, max-norm of `UᴴU - I`.
pub const ORTHO_TOL: f64 = 1e-10;

/// Largest `min(rows, cols)` accepted by [`dense_svd`] and
/// [`dense_eig_hermitian`].
pub const DENSE_SVD_LIMIT: usize = 4096;

/// Largest `rows * cols` for helpers that materialize a full matrix.
pub const DENSE_ENTRY_LIMIT: usize = 1 << 20;

/// Max-norm of `MᴴM - I`.
pub fn ortho_residual<S: Scalar>(m: &DMatrix<S>) -> f64 {
    let k = m.ncols();
    let gram = m.ad_mul(m);
    let mut worst = 0.0f64;
    for j in 0..k {
        for i in 0..k {
            let expect = if i == j { 1.0 } else { 0.0 };
            let d = (gram[(i, j)] - S::from_real(expect)).modulus();
            worst = worst.max(d);
        }
    }
    worst
}

pub(crate) fn check_finite_vec(v: &DVector<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn check_finite_mat<S: Scalar>(m: &DMatrix<S>, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.real().is_finite() && x.imaginary().is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Descending singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: DVector<f64>,
}

impl Spectrum {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        check_finite_vec(&values, "spectrum")?;
        for w in values.as_slice().windows(2) {
            if w[1] > w[0] {
                return Err(Error::InvalidConfig(
                    "spectrum values must be non-increasing".into(),
                ));
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    /// `sum_{j >= r} sigma_j^2`, the squared Frobenius error of rank-`r`
    /// truncation.
    pub fn tail_energy(&self, r: usize) -> f64 {
        self.values.iter().skip(r).map(|s| s * s).sum()
    }
}

/// Thin QR of a tall matrix. `q` always has orthonormal columns; when the
/// input is rank deficient the missing directions are filled with arbitrary
/// orthonormal vectors and `rank_deficient` is set.
#[derive(Debug, Clone)]
pub struct ThinQr<S: Scalar> {
    pub q: DMatrix<S>,
    pub r: DMatrix<S>,
    pub rank_deficient: bool,
}

/// Thin QR decomposition of an `m x k` matrix with `k <= m`.
pub fn thin_qr<S: Scalar>(m: &DMatrix<S>) -> Result<ThinQr<S>> {
    let (rows, cols) = m.shape();
    if cols > rows {
        return Err(Error::DimMismatch(format!(
            "thin_qr needs rows >= cols, got {rows}x{cols}"
        )));
    }
    let (q, r) = nalgebra::linalg::QR::new(m.clone()).unpack();
    let mut max_diag = 0.0f64;
    let mut min_diag = f64::INFINITY;
    for i in 0..cols {
        let d = r[(i, i)].modulus();
        max_diag = max_diag.max(d);
        min_diag = min_diag.min(d);
    }
    let rank_deficient = cols > 0 && min_diag <= 1e-12 * max_diag.max(f64::MIN_POSITIVE);
    // Householder Q is orthonormal by construction, including skipped
    // reflections on zero columns, so deficiency only flags, never fails.
    Ok(ThinQr {
        q,
        r,
        rank_deficient,
    })
}

fn sort_descending_by<F: Fn(f64) -> f64>(values: &[f64], key: F) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    // stable sort: ties keep original index order
    idx.sort_by(|&a, &b| key(values[b]).partial_cmp(&key(values[a])).unwrap());
    idx
}

fn permute_columns<S: Scalar>(m: &DMatrix<S>, perm: &[usize]) -> DMatrix<S> {
    let mut out = DMatrix::zeros(m.nrows(), perm.len());
    for (dst, &src) in perm.iter().enumerate() {
        out.set_column(dst, &m.column(src));
    }
    out
}

fn svd_residual<S: Scalar>(
    m: &DMatrix<S>,
    u: &DMatrix<S>,
    sigma: &DVector<f64>,
    v: &DMatrix<S>,
) -> f64 {
    let mut scaled = u.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col.scale_mut(sigma[k]);
    }
    (scaled * v.adjoint() - m).norm()
}

/// Gram-route SVD of a tall matrix (`rows >= cols`): eigendecompose `MᴴM`
/// for `V` and directions, read singular values off `‖M v_i‖`, and rebuild
/// `U` with a completing QR. Slower but immune to the premature-deflation
/// failures of the bidiagonal SVD on rank-deficient inputs.
fn gram_svd_tall<S: Scalar>(m: &DMatrix<S>) -> Result<(DMatrix<S>, Spectrum, DMatrix<S>)> {
    let (rows, cols) = m.shape();
    let gram = m.ad_mul(m);
    let herm = (&gram + gram.adjoint()).scale(0.5);
    let eig = nalgebra::linalg::SymmetricEigen::try_new(herm, f64::EPSILON, 200_000)
        .ok_or(Error::SvdFailed)?;
    let c = m * &eig.eigenvectors;
    let sigma_raw: Vec<f64> = (0..cols).map(|i| c.column(i).norm()).collect();
    let perm = sort_descending_by(&sigma_raw, |s| s);
    let v = permute_columns(&eig.eigenvectors, &perm);
    let c = permute_columns(&c, &perm);
    let sigma = DVector::from_iterator(cols, perm.iter().map(|&i| sigma_raw[i]));
    let tol = sigma[0] * f64::EPSILON * rows.max(cols) as f64;
    let mut u0 = DMatrix::<S>::zeros(rows, cols);
    for i in 0..cols {
        if sigma[i] > tol {
            u0.set_column(i, &c.column(i).unscale(sigma[i]));
        }
    }
    let qr = thin_qr(&u0)?;
    let mut u = qr.q;
    // realign column phases so completed/re-orthonormalized Q still
    // reconstructs with positive sigma
    for i in 0..cols {
        let rii = qr.r[(i, i)];
        let modulus = rii.modulus();
        if modulus > 0.5 {
            let phase = rii * S::from_real(1.0 / modulus);
            let scaled = u.column(i) * phase;
            u.set_column(i, &scaled);
        }
    }
    Ok((u, Spectrum::new(sigma)?, v))
}

fn gram_svd<S: Scalar>(m: &DMatrix<S>) -> Result<(DMatrix<S>, Spectrum, DMatrix<S>)> {
    if m.nrows() >= m.ncols() {
        gram_svd_tall(m)
    } else {
        let (v, sigma, u) = gram_svd_tall(&m.adjoint())?;
        Ok((u, sigma, v))
    }
}

/// Full thin SVD `M = U Σ Vᴴ` with Σ descending.
pub fn dense_svd<S: Scalar>(m: &DMatrix<S>) -> Result<(DMatrix<S>, Spectrum, DMatrix<S>)> {
    let (rows, cols) = m.shape();
    let small = rows.min(cols);
    if small > DENSE_SVD_LIMIT {
        return Err(Error::SizeLimit {
            entries: small,
            limit: DENSE_SVD_LIMIT,
        });
    }
    let accept = 1e-11 * m.norm().max(f64::MIN_POSITIVE);
    if let Some(svd) = nalgebra::linalg::SVD::try_new(m.clone(), true, true, f64::EPSILON, 100_000)
    {
        if let (Some(u), Some(vt)) = (svd.u, svd.v_t) {
            let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
            let perm = sort_descending_by(&sigma, |s| s);
            let u = permute_columns(&u, &perm);
            let v = permute_columns(&vt.adjoint(), &perm);
            let values = DVector::from_iterator(perm.len(), perm.iter().map(|&i| sigma[i]));
            if svd_residual(m, &u, &values, &v) <= accept {
                return Ok((u, Spectrum::new(values)?, v));
            }
        }
    }
    let (u, sigma, v) = gram_svd(m)?;
    if svd_residual(m, &u, sigma.values(), &v) > 1e3 * accept {
        return Err(Error::SvdFailed);
    }
    Ok((u, sigma, v))
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted by magnitude
/// descending (they may be negative).
pub fn dense_eig_hermitian<S: Scalar>(m: &DMatrix<S>) -> Result<(DMatrix<S>, DVector<f64>)> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(Error::DimMismatch(format!(
            "eig needs a square matrix, got {rows}x{cols}"
        )));
    }
    if rows > DENSE_SVD_LIMIT {
        return Err(Error::SizeLimit {
            entries: rows,
            limit: DENSE_SVD_LIMIT,
        });
    }
    let norm = m.norm();
    let asym = (m - m.adjoint()).norm();
    if asym > 1e-8 * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::NotHermitian(asym / norm.max(f64::MIN_POSITIVE)));
    }
    // work on the Hermitian part so downstream results are exactly real
    let herm = (m + m.adjoint()).scale(0.5);
    let eig = nalgebra::linalg::SymmetricEigen::try_new(herm, f64::EPSILON, 200_000)
        .ok_or(Error::SvdFailed)?;
    let lambda: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let perm = sort_descending_by(&lambda, |x| x.abs());
    let u = permute_columns(&eig.eigenvectors, &perm);
    let values = DVector::from_iterator(perm.len(), perm.iter().map(|&i| lambda[i]));
    Ok((u, values))
}

/// A rank-`k` matrix `U diag(d) Vᴴ` with orthonormal-column factors; the only
/// representation of solver iterates. When symmetric, `U` and `V` are the
/// same storage.
#[derive(Debug, Clone)]
pub struct FactorTriple<S: Scalar> {
    left: DMatrix<S>,
    values: DVector<f64>,
    right: Option<DMatrix<S>>,
}

impl<S: Scalar> FactorTriple<S> {
    pub fn new(left: DMatrix<S>, values: DVector<f64>, right: DMatrix<S>) -> Result<Self> {
        Self::validate(&left, &values, Some(&right))?;
        Ok(Self {
            left,
            values,
            right: Some(right),
        })
    }

    pub fn new_symmetric(left: DMatrix<S>, values: DVector<f64>) -> Result<Self> {
        Self::validate(&left, &values, None)?;
        Ok(Self {
            left,
            values,
            right: None,
        })
    }

    fn validate(left: &DMatrix<S>, values: &DVector<f64>, right: Option<&DMatrix<S>>) -> Result<()> {
        let k = values.len();
        let m = left.nrows();
        let n = right.map_or(m, |r| r.nrows());
        if left.ncols() != k || right.is_some_and(|r| r.ncols() != k) {
            return Err(Error::DimMismatch(format!(
                "factor width mismatch: {} values, {}x{} left, {}x{} right",
                k,
                m,
                left.ncols(),
                n,
                right.map_or(left.ncols(), |r| r.ncols()),
            )));
        }
        if k > m.min(n) {
            return Err(Error::RankExceeds {
                requested: k,
                available: m.min(n),
            });
        }
        check_finite_vec(values, "factor values")?;
        check_finite_mat(left, "left factor")?;
        let res = ortho_residual(left);
        if res > ORTHO_TOL {
            return Err(Error::NotOrthonormal(res));
        }
        if let Some(r) = right {
            check_finite_mat(r, "right factor")?;
            let res = ortho_residual(r);
            if res > ORTHO_TOL {
                return Err(Error::NotOrthonormal(res));
            }
        }
        Ok(())
    }

    /// Zero matrix of shape `m x n` held as a rank-`k` triple with canonical
    /// basis factors and zero values.
    pub fn zero(m: usize, n: usize, k: usize) -> Self {
        Self {
            left: DMatrix::identity(m, k),
            values: DVector::zeros(k),
            right: Some(DMatrix::identity(n, k)),
        }
    }

    pub fn zero_symmetric(n: usize, k: usize) -> Self {
        Self {
            left: DMatrix::identity(n, k),
            values: DVector::zeros(k),
            right: None,
        }
    }

    pub fn left(&self) -> &DMatrix<S> {
        &self.left
    }

    pub fn right(&self) -> &DMatrix<S> {
        self.right.as_ref().unwrap_or(&self.left)
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn is_symmetric(&self) -> bool {
        self.right.is_none()
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    pub fn nrows(&self) -> usize {
        self.left.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.right().nrows()
    }

    /// Replace the values, keeping the (already validated) factors.
    pub fn with_values(&self, values: DVector<f64>) -> Result<Self> {
        if values.len() != self.rank() {
            return Err(Error::DimMismatch(format!(
                "expected {} values, got {}",
                self.rank(),
                values.len()
            )));
        }
        check_finite_vec(&values, "factor values")?;
        Ok(Self {
            left: self.left.clone(),
            values,
            right: self.right.clone(),
        })
    }

    /// `‖X‖_F^2 = Σ d_k^2` (valid because factors are orthonormal).
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|d| d * d).sum()
    }

    /// Materialize the dense matrix; guarded, intended for desk-scale work
    /// and test oracles.
    pub fn to_dense(&self) -> Result<DMatrix<S>> {
        let entries = self.nrows() * self.ncols();
        if entries > DENSE_ENTRY_LIMIT {
            return Err(Error::SizeLimit {
                entries,
                limit: DENSE_ENTRY_LIMIT,
            });
        }
        let mut scaled = self.left.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col.scale_mut(self.values[k]);
        }
        Ok(&scaled * self.right().adjoint())
    }
}

/// Keep the first `r` triples. Callers must present values already sorted by
/// the relevant convention (descending value for SVD triples, descending
/// magnitude for eigen triples); truncation error squared is the dropped
/// `Σ d_j^2`.
pub fn truncate_rank<S: Scalar>(f: &FactorTriple<S>, r: usize) -> Result<FactorTriple<S>> {
    let k = f.rank();
    if r > k {
        return Err(Error::RankExceeds {
            requested: r,
            available: k,
        });
    }
    debug_assert!(
        f.values()
            .as_slice()
            .windows(2)
            .all(|w| if f.is_symmetric() {
                w[0].abs() >= w[1].abs() - 1e-12
            } else {
                w[0] >= w[1] - 1e-12
            }),
        "truncate_rank expects presorted values"
    );
    let left = f.left.columns(0, r).into_owned();
    let values = DVector::from_iterator(r, f.values.iter().take(r).copied());
    let right = f.right.as_ref().map(|m| m.columns(0, r).into_owned());
    Ok(FactorTriple {
        left,
        values,
        right,
    })
}
