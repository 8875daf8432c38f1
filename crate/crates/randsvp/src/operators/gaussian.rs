//! Dense Gaussian reference operator: `p x (m·n)` i.i.d. N(0, 1/p) entries
//! against column-major vec. Desk scale only; parameterized by a seed so the
//! serialized form is just dims + seed.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MeasurementOperator, MeasurementVector};
use crate::error::{Error, Result};
use crate::rand_approx::gaussian_test_block;


/// Largest `p * m * n` a Gaussian operator will materialize.
pub const GAUSSIAN_ENTRY_LIMIT: usize = 1 << 24;

#[derive(Debug, Clone)]
pub struct GaussianOperator {
    mat: DMatrix<f64>,
    m: usize,
    n: usize,
    seed: u64,
}

impl GaussianOperator {
    pub fn sample(m: usize, n: usize, p: usize, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 || p == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".into()));
        }
        let entries = p
            .checked_mul(m * n)
            .ok_or_else(|| Error::InvalidConfig("operator size overflows".into()))?;
        if entries > GAUSSIAN_ENTRY_LIMIT {
            return Err(Error::SizeLimit {
                entries,
                limit: GAUSSIAN_ENTRY_LIMIT,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mat = gaussian_test_block::<f64, _>(p, m * n, &mut rng).scale(1.0 / (p as f64).sqrt());
        Ok(Self { mat, m, n, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn to_text(&self) -> String {
        format!(
            "gaussian m={} n={} p={} seed={}\n",
            self.m,
            self.n,
            self.mat.nrows(),
            self.seed
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let line = text
            .lines()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| Error::Parse("empty operator file".into()))?;
        let mut fields = line.split_whitespace();
        if fields.next() != Some("gaussian") {
            return Err(Error::Parse("expected 'gaussian' header".into()));
        }
        let (mut m, mut n, mut p, mut seed) = (None, None, None, None);
        for field in fields {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse("header fields must be key=value".into()))?;
            let parsed: u64 = v.parse().map_err(|_| Error::Parse(format!("bad value {v}")))?;
            match k {
                "m" => m = Some(parsed as usize),
                "n" => n = Some(parsed as usize),
                "p" => p = Some(parsed as usize),
                "seed" => seed = Some(parsed),
                other => return Err(Error::Parse(format!("unknown field '{other}'"))),
            }
        }
        match (m, n, p, seed) {
            (Some(m), Some(n), Some(p), Some(seed)) => Self::sample(m, n, p, seed),
            _ => Err(Error::Parse("header must set m, n, p, seed".into())),
        }
    }

    fn check_factors(&self, u: &DMatrix<f64>, d: &DVector<f64>, v: &DMatrix<f64>) -> Result<()> {
        if u.nrows() != self.m || v.nrows() != self.n || u.ncols() != d.len() || v.ncols() != d.len()
        {
            return Err(Error::DimMismatch(format!(
                "factors {}x{} / {}x{} with {} values against {}x{} operator",
                u.nrows(),
                u.ncols(),
                v.nrows(),
                v.ncols(),
                d.len(),
                self.m,
                self.n
            )));
        }
        Ok(())
    }

    /// `A*(z)` as an explicit `m x n` matrix (fine here: the operator itself
    /// is dense).
    fn adjoint_matrix(&self, z: &MeasurementVector) -> Result<DMatrix<f64>> {
        if z.len() != self.mat.nrows() {
            return Err(Error::DimMismatch(format!(
                "residual has {} entries, operator has p = {}",
                z.len(),
                self.mat.nrows()
            )));
        }
        let mvec = self.mat.tr_mul(z.as_vector());
        Ok(DMatrix::from_column_slice(self.m, self.n, mvec.as_slice()))
    }
}

impl MeasurementOperator<f64> for GaussianOperator {
    fn nrows(&self) -> usize {
        self.m
    }

    fn ncols(&self) -> usize {
        self.n
    }

    fn num_measurements(&self) -> usize {
        self.mat.nrows()
    }

    fn norm_sq_bound(&self) -> f64 {
        (self.m * self.n) as f64 / self.mat.nrows() as f64
    }

    fn apply_factored(
        &self,
        u: &DMatrix<f64>,
        d: &DVector<f64>,
        v: &DMatrix<f64>,
    ) -> Result<MeasurementVector> {
        self.check_factors(u, d, v)?;
        let mut scaled = u.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col.scale_mut(d[k]);
        }
        let x = &scaled * v.transpose();
        let y = &self.mat * DVector::from_column_slice(x.as_slice());
        MeasurementVector::new(y)
    }

    fn adjoint_apply(&self, z: &MeasurementVector, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if w.nrows() != self.n {
            return Err(Error::DimMismatch(format!(
                "adjoint block has {} rows, expected {}",
                w.nrows(),
                self.n
            )));
        }
        Ok(self.adjoint_matrix(z)? * w)
    }

    fn adjoint_apply_adj(&self, z: &MeasurementVector, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if w.nrows() != self.m {
            return Err(Error::DimMismatch(format!(
                "adjoint block has {} rows, expected {}",
                w.nrows(),
                self.m
            )));
        }
        Ok(self.adjoint_matrix(z)?.tr_mul(w))
    }

    fn densify(&self) -> Result<DMatrix<f64>> {
        Ok(self.mat.clone())
    }
}
