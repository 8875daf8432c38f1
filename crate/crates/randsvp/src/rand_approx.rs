//! Randomized fixed-rank SVD/EIG over implicitly given matrices.
//!
//! The range finder sketches `X` with a Gaussian block, optionally sharpens
//! the sketch with power iterations (re-orthogonalizing after every
//! half-step), and finishes with a factored SVD that never materializes an
//! `m x n` array. The rank-`l = r + rho` sketch is the epsilon-approximate
//! projector: `E ||X - sketch||_F^2 <= (1 + r/(rho-1)) ||X - X_r||_F^2`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    dense_eig_hermitian, dense_svd, thin_qr, truncate_rank, FactorTriple, Spectrum,
    DENSE_ENTRY_LIMIT,
};
use crate::scalar::Scalar;

/// Relative tolerance of the probe-based adjoint/Hermitian checks.
pub const ADJOINT_PROBE_TOL: f64 = 1e-8;

type BlockMap<'a, S> = Arc<dyn Fn(&DMatrix<S>) -> DMatrix<S> + 'a>;

/// An `m x n` matrix given only through block products `w -> Xw` and
/// `w -> Xᴴw`.
pub struct ImplicitMatrix<'a, S: Scalar> {
    nrows: usize,
    ncols: usize,
    forward: BlockMap<'a, S>,
    adjoint: BlockMap<'a, S>,
    hermitian: bool,
}

impl<'a, S: Scalar> ImplicitMatrix<'a, S> {
    pub fn new<F, G>(nrows: usize, ncols: usize, forward: F, adjoint: G) -> Self
    where
        F: Fn(&DMatrix<S>) -> DMatrix<S> + 'a,
        G: Fn(&DMatrix<S>) -> DMatrix<S> + 'a,
    {
        Self {
            nrows,
            ncols,
            forward: Arc::new(forward),
            adjoint: Arc::new(adjoint),
            hermitian: false,
        }
    }

    /// Hermitian matrix: one map serves as both `h` and `hᴴ`.
    pub fn new_hermitian<F>(n: usize, forward: F) -> Self
    where
        F: Fn(&DMatrix<S>) -> DMatrix<S> + 'a,
    {
        let map: BlockMap<'a, S> = Arc::new(forward);
        Self {
            nrows: n,
            ncols: n,
            forward: Arc::clone(&map),
            adjoint: map,
            hermitian: true,
        }
    }

    pub fn from_dense(m: &'a DMatrix<S>) -> Self {
        Self::new(
            m.nrows(),
            m.ncols(),
            move |w| m * w,
            move |w| m.ad_mul(w),
        )
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// `X w` for an `n x s` block.
    pub fn apply(&self, w: &DMatrix<S>) -> Result<DMatrix<S>> {
        if w.nrows() != self.ncols {
            return Err(Error::DimMismatch(format!(
                "forward map expects {} rows, got {}",
                self.ncols,
                w.nrows()
            )));
        }
        let out = (self.forward)(w);
        if out.nrows() != self.nrows || out.ncols() != w.ncols() {
            return Err(Error::DimMismatch(format!(
                "forward map returned {}x{}, expected {}x{}",
                out.nrows(),
                out.ncols(),
                self.nrows,
                w.ncols()
            )));
        }
        Ok(out)
    }

    /// `Xᴴ w` for an `m x s` block.
    pub fn apply_adjoint(&self, w: &DMatrix<S>) -> Result<DMatrix<S>> {
        if w.nrows() != self.nrows {
            return Err(Error::DimMismatch(format!(
                "adjoint map expects {} rows, got {}",
                self.nrows,
                w.nrows()
            )));
        }
        let out = (self.adjoint)(w);
        if out.nrows() != self.ncols || out.ncols() != w.ncols() {
            return Err(Error::DimMismatch(format!(
                "adjoint map returned {}x{}, expected {}x{}",
                out.nrows(),
                out.ncols(),
                self.ncols,
                w.ncols()
            )));
        }
        Ok(out)
    }

    /// Probe `<h(w1), w2> = <w1, h_adj(w2)>` on a fixed pseudo-random
    /// two-column block; catches transposition and sign bugs cheaply.
    pub fn check_adjoint(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0xad01);
        let w1: DMatrix<S> = gaussian_test_block(self.ncols, 2, &mut rng);
        let w2: DMatrix<S> = gaussian_test_block(self.nrows, 2, &mut rng);
        let hw1 = self.apply(&w1)?;
        let lhs = frob_inner(&hw1, &w2);
        let rhs = frob_inner(&w1, &self.apply_adjoint(&w2)?);
        let scale = (hw1.norm() * w2.norm()).max(f64::MIN_POSITIVE);
        let resid = (lhs - rhs).modulus() / scale;
        if resid > ADJOINT_PROBE_TOL {
            return Err(Error::AdjointMismatch(resid));
        }
        Ok(())
    }

    /// Probe self-adjointness `<h(w1), w2> = <w1, h(w2)>`.
    pub fn check_hermitian(&self) -> Result<()> {
        if self.nrows != self.ncols {
            return Err(Error::DimMismatch(format!(
                "hermitian matrix must be square, got {}x{}",
                self.nrows, self.ncols
            )));
        }
        if self.hermitian {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0xad02);
        let w1: DMatrix<S> = gaussian_test_block(self.ncols, 2, &mut rng);
        let w2: DMatrix<S> = gaussian_test_block(self.ncols, 2, &mut rng);
        let hw1 = self.apply(&w1)?;
        let lhs = frob_inner(&hw1, &w2);
        let rhs = frob_inner(&w1, &self.apply(&w2)?);
        let scale = (hw1.norm() * w2.norm()).max(f64::MIN_POSITIVE);
        let resid = (lhs - rhs).modulus() / scale;
        if resid > ADJOINT_PROBE_TOL {
            return Err(Error::NotHermitian(resid));
        }
        Ok(())
    }

    /// Materialize by applying the forward map to the identity. Guarded;
    /// desk-scale diagnostics only.
    pub fn to_dense(&self) -> Result<DMatrix<S>> {
        let entries = self.nrows * self.ncols;
        if entries > DENSE_ENTRY_LIMIT {
            return Err(Error::SizeLimit {
                entries,
                limit: DENSE_ENTRY_LIMIT,
            });
        }
        self.apply(&DMatrix::identity(self.ncols, self.ncols))
    }
}

/// `<A, B> = tr(Aᴴ B)`.
fn frob_inner<S: Scalar>(a: &DMatrix<S>, b: &DMatrix<S>) -> S {
    a.iter()
        .zip(b.iter())
        .fold(S::from_real(0.0), |acc, (&x, &y)| acc + x.conjugate() * y)
}

/// Parameters of the randomized projection.
#[derive(Debug, Clone, Copy)]
pub struct RandProjConfig {
    /// Target rank `r` of the truncated output.
    pub rank: usize,
    /// Oversampling `rho`; the sketch has width `r + rho`.
    pub oversample: usize,
    /// Power iterations `q`.
    pub power_iters: usize,
}

impl RandProjConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            oversample: 5,
            power_iters: 0,
        }
    }

    pub fn sketch_width(&self) -> usize {
        self.rank + self.oversample
    }

    /// The bound `epsilon = r / (rho - 1)` of the approximate projector.
    pub fn epsilon_bound(&self) -> f64 {
        self.rank as f64 / (self.oversample as f64 - 1.0)
    }

    pub fn validate(&self, nrows: usize, ncols: usize) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be >= 1".into()));
        }
        if self.oversample < 2 {
            return Err(Error::InvalidConfig(
                "oversampling must be >= 2 for the epsilon bound".into(),
            ));
        }
        if self.sketch_width() > nrows.min(ncols) {
            return Err(Error::InvalidConfig(format!(
                "sketch width {} exceeds min dimension {}",
                self.sketch_width(),
                nrows.min(ncols)
            )));
        }
        Ok(())
    }
}

/// An `rows x cols` block of i.i.d. standard normals, filled column-major so
/// draws are reproducible from the rng state.
pub fn gaussian_test_block<S: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> DMatrix<S> {
    let mut out = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            out[(i, j)] = S::standard_normal(rng);
        }
    }
    out
}

/// SVD of a matrix given in product form `U D Vᴴ` (`D` any `k x k`), without
/// forming the `m x n` product.
pub fn factored_svd<S: Scalar>(
    u: &DMatrix<S>,
    mid: &DMatrix<S>,
    v: &DMatrix<S>,
) -> Result<(DMatrix<S>, Spectrum, DMatrix<S>)> {
    let k = u.ncols();
    if mid.nrows() != k || mid.ncols() != v.ncols() {
        return Err(Error::DimMismatch(format!(
            "middle factor {}x{} does not join {} and {} columns",
            mid.nrows(),
            mid.ncols(),
            k,
            v.ncols()
        )));
    }
    if k > u.nrows().min(v.nrows()) {
        return Err(Error::RankExceeds {
            requested: k,
            available: u.nrows().min(v.nrows()),
        });
    }
    let qu = thin_qr(u)?;
    let qv = thin_qr(v)?;
    let small = &qu.r * mid * qv.r.adjoint();
    let (us, sigma, vs) = dense_svd(&small)?;
    Ok((&qu.q * us, sigma, &qv.q * vs))
}

/// Output of the randomized projections: the rank-`l` sketch and its rank-`r`
/// truncation.
#[derive(Debug, Clone)]
pub struct RandProjOutput<S: Scalar> {
    /// Best-effort rank-`r` projection (what the solver iterates on).
    pub truncated: FactorTriple<S>,
    /// The full rank-`l` sketch `U Σ Vᴴ` before truncation; this is the
    /// quantity the expectation bound speaks about.
    pub sketch: FactorTriple<S>,
}

/// Randomized fixed-rank SVD of an implicit matrix.
pub fn rand_svd<S: Scalar, R: Rng + ?Sized>(
    x: &ImplicitMatrix<'_, S>,
    cfg: &RandProjConfig,
    rng: &mut R,
) -> Result<RandProjOutput<S>> {
    cfg.validate(x.nrows(), x.ncols())?;
    x.check_adjoint()?;
    let ell = cfg.sketch_width();
    let omega: DMatrix<S> = gaussian_test_block(x.ncols(), ell, rng);
    let mut q = thin_qr(&x.apply(&omega)?)?.q;
    for _ in 0..cfg.power_iters {
        let z = thin_qr(&x.apply_adjoint(&q)?)?.q;
        q = thin_qr(&x.apply(&z)?)?.q;
    }
    let z = x.apply_adjoint(&q)?;
    // sketch = Q Zᴴ = Q Qᴴ X
    let (u, sigma, v) = factored_svd(&q, &DMatrix::identity(ell, ell), &z)?;
    let sketch = FactorTriple::new(u, sigma.values().clone(), v)?;
    let truncated = truncate_rank(&sketch, cfg.rank)?;
    Ok(RandProjOutput { truncated, sketch })
}

/// Randomized fixed-rank eigendecomposition of an implicit Hermitian matrix:
/// shared `U = V` storage, values sorted by magnitude and possibly negative.
pub fn rand_eig<S: Scalar, R: Rng + ?Sized>(
    x: &ImplicitMatrix<'_, S>,
    cfg: &RandProjConfig,
    rng: &mut R,
) -> Result<RandProjOutput<S>> {
    cfg.validate(x.nrows(), x.ncols())?;
    x.check_hermitian()?;
    let ell = cfg.sketch_width();
    let omega: DMatrix<S> = gaussian_test_block(x.ncols(), ell, rng);
    let mut q = thin_qr(&x.apply(&omega)?)?.q;
    for _ in 0..cfg.power_iters {
        let z = thin_qr(&x.apply(&q)?)?.q;
        q = thin_qr(&x.apply(&z)?)?.q;
    }
    // B = Qᴴ X Q is l x l Hermitian; sketch = Q B Qᴴ
    let b = q.ad_mul(&x.apply(&q)?);
    let (w, lambda) = dense_eig_hermitian(&b)?;
    let sketch = FactorTriple::new_symmetric(&q * w, lambda)?;
    let truncated = truncate_rank(&sketch, cfg.rank)?;
    Ok(RandProjOutput { truncated, sketch })
}
