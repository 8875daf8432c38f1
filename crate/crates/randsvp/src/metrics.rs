//! Factored-form error metrics: squared Frobenius distance, trace distance
//! and rank-1 fidelity, all in `O(n·r²)` without materializing `n x n`
//! matrices, plus the epsilon-tilde approximation-quality probe.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dense_svd, FactorTriple};
use crate::parallel::map_indexed;
use crate::rand_approx::{factored_svd, rand_svd, ImplicitMatrix, RandProjConfig};
use crate::scalar::Scalar;

/// The three error metrics of a recovery run. Fidelity is reported both as
/// `F` and `F²` since both conventions appear in the literature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord {
    pub frob: f64,
    pub trace_dist: f64,
    pub fidelity: f64,
    pub fidelity_sq: f64,
}

/// `‖X - Y‖_F²` from factors only, via `r x r` Gram matrices.
pub fn frob_sq_factored<S: Scalar>(x: &FactorTriple<S>, y: &FactorTriple<S>) -> Result<f64> {
    if x.nrows() != y.nrows() || x.ncols() != y.ncols() {
        return Err(Error::DimMismatch(format!(
            "{}x{} vs {}x{}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    // <X, Y> = sum_{k,l} dx_k dy_l (ux_k' uy_l) conj(vx_k' vy_l)
    let gu = x.left().ad_mul(y.left());
    let gv = x.right().ad_mul(y.right());
    let mut cross = 0.0;
    for k in 0..x.rank() {
        for l in 0..y.rank() {
            cross += x.values()[k] * y.values()[l] * (gu[(k, l)] * gv[(k, l)].conjugate()).real();
        }
    }
    Ok((x.norm_sq() + y.norm_sq() - 2.0 * cross).max(0.0))
}

/// Nuclear norm of `X - Y` for symmetric factor triples, via a factored SVD
/// of the stacked width-`(r_x + r_y)` factors.
pub fn trace_distance_factored<S: Scalar>(x: &FactorTriple<S>, y: &FactorTriple<S>) -> Result<f64> {
    if !x.is_symmetric() || !y.is_symmetric() {
        return Err(Error::ConstraintNeedsSymmetric("trace distance"));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::DimMismatch(format!(
            "{} vs {} rows",
            x.nrows(),
            y.nrows()
        )));
    }
    let n = x.nrows();
    let k = x.rank() + y.rank();
    let mut stacked = DMatrix::<S>::zeros(n, k);
    stacked.columns_mut(0, x.rank()).copy_from(x.left());
    stacked.columns_mut(x.rank(), y.rank()).copy_from(y.left());
    let mut mid = DMatrix::<S>::zeros(k, k);
    for i in 0..x.rank() {
        mid[(i, i)] = S::from_real(x.values()[i]);
    }
    for i in 0..y.rank() {
        let j = x.rank() + i;
        mid[(j, j)] = S::from_real(-y.values()[i]);
    }
    let (_, sigma, _) = factored_svd(&stacked, &mid, &stacked)?;
    Ok(sigma.values().iter().sum())
}

/// Fidelity `‖√X √Y‖_*` in the closed form for `X = x xᴴ` a rank-1
/// projector: `sqrt(xᴴ Y x)`. `Y` must be PSD.
pub fn fidelity_rank1<S: Scalar>(x: &DVector<S>, y: &FactorTriple<S>) -> Result<f64> {
    if x.len() != y.nrows() {
        return Err(Error::DimMismatch(format!(
            "vector length {} vs factor rows {}",
            x.len(),
            y.nrows()
        )));
    }
    if (x.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidConfig(format!(
            "fidelity needs a unit vector, got norm {}",
            x.norm()
        )));
    }
    if y.values().iter().any(|&d| d < 0.0) {
        return Err(Error::InvalidConfig(
            "fidelity needs a PSD factor (nonnegative values)".into(),
        ));
    }
    let overlaps = y.left().ad_mul(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()));
    let mut quad = 0.0;
    for k in 0..y.rank() {
        quad += y.values()[k] * overlaps[(k, 0)].modulus_squared();
    }
    Ok(quad.max(0.0).sqrt())
}

/// Sample statistics of the approximation-quality probe
/// `eps~ = ‖X - X~‖_F² / ‖X - X_r‖_F² - 1` over a list of seeds, where `X~`
/// is the rank-`l` sketch (not the truncation) of the randomized projector.
#[derive(Debug, Clone)]
pub struct EpsilonTildeStats {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std_err: f64,
    /// The bound `epsilon = r/(rho-1)`.
    pub bound: f64,
}

pub fn epsilon_tilde(
    x: &DMatrix<f64>,
    rank: usize,
    oversample: usize,
    power_iters: usize,
    seeds: &[u64],
) -> Result<EpsilonTildeStats> {
    let cfg = RandProjConfig {
        rank,
        oversample,
        power_iters,
    };
    cfg.validate(x.nrows(), x.ncols())?;
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("need at least one seed".into()));
    }
    let (_, sigma, _) = dense_svd(x)?;
    let denom = sigma.tail_energy(rank);
    let total = x.norm_squared();
    if denom <= 1e-20 * total.max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateRank(format!(
            "matrix is numerically rank <= {rank}; eps~ undefined"
        )));
    }
    let results = map_indexed(seeds.len(), |i| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds[i]);
        let implicit = ImplicitMatrix::from_dense(x);
        let out = rand_svd(&implicit, &cfg, &mut rng)?;
        let err = (out.sketch.to_dense()? - x).norm_squared();
        Ok(err / denom - 1.0)
    });
    let per_seed: Vec<f64> = results.into_iter().collect::<Result<_>>()?;
    let n = per_seed.len() as f64;
    let mean = per_seed.iter().sum::<f64>() / n;
    let var = if per_seed.len() > 1 {
        per_seed.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(EpsilonTildeStats {
        per_seed,
        mean,
        std_err: (var / n).sqrt(),
        bound: cfg.epsilon_bound(),
    })
}
