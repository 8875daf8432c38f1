//! Accelerated singular value projection on factors only.
//!
//! Each iteration represents the momentum point `Y = (1+b) X_i - b X_{i-1}`
//! as a raw width-2r factor product, captures the residual once, exposes the
//! gradient-mapped matrix `h(w) = Y w - mu A*(z) w` implicitly, and projects
//! it back to rank r with the randomized sketch (`rand_svd`, or `rand_eig`
//! with shared `U = V` storage on Hermitian measurement paths). Optional
//! convex constraints act on the retained spectrum only.
//!
//! The gradient map follows the factored iteration literally: its step size
//! `mu` absorbs the factor 2 of the gradient `2 A*(A X - y)`, and defaults to
//! `1 / ‖A‖²`, inside the `mu <~ 2/‖A‖²` stability region.

use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::FactorTriple;
use crate::operators::{MeasurementOperator, MeasurementVector};
use crate::rand_approx::{rand_eig, rand_svd, ImplicitMatrix, RandProjConfig};
use crate::scalar::Scalar;

/// Divergence guard: abort when `f` grows by this factor over `f(X_0)`.
const DIVERGENCE_FACTOR: f64 = 1e3;

/// Default step size of the factored iteration.
///
/// Both bundled operator families are RIP-normalized (`E ‖A X‖² = ‖X‖²` on
/// low-rank inputs), so the iteration-invariant step `1/(2(1 + delta_cr))`
/// evaluated at the pessimistic end of admissible constants gives a flat
/// 1/4. Callers with differently scaled operators should set
/// [`SolverConfig::step_size`] explicitly; `2 / ‖A‖²` is a conservative safe
/// choice there.
pub const DEFAULT_STEP_SIZE: f64 = 0.25;

/// Convex constraint applied to the retained spectrum after projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Constraint {
    #[default]
    None,
    /// Positive semidefinite cone: clip negative eigenvalues.
    Psd,
    /// Density matrices: eigenvalues projected onto the probability simplex.
    Simplex,
}

impl FromStr for Constraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "psd" => Ok(Self::Psd),
            "simplex" => Ok(Self::Simplex),
            other => Err(Error::Parse(format!("unknown constraint '{other}'"))),
        }
    }
}

impl std::fmt::Display for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::None => write!(f, "none"),
            Self::Psd => write!(f, "psd"),
            Self::Simplex => write!(f, "simplex"),
        }
    }
}

/// Run parameters of the solver.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Target rank `r`.
    pub rank: usize,
    /// Oversampling `rho` of the randomized projector.
    pub oversample: usize,
    /// Power iterations `q` of the randomized projector.
    pub power_iters: usize,
    /// Step size of the factored iteration; `None` means
    /// [`DEFAULT_STEP_SIZE`].
    pub step_size: Option<f64>,
    pub constraint: Constraint,
    /// Nesterov momentum on/off.
    pub acceleration: bool,
    pub max_iters: usize,
    /// Stop when `f(X_i) <= f_tol_rel * ‖y‖²`.
    pub f_tol_rel: f64,
    /// Stall when the running best of `f` improves by less than this
    /// (relative) over `stall_window` iterations. The window must cover the
    /// slow ripple the momentum sequence puts on `f`.
    pub stall_tol: f64,
    pub stall_window: usize,
    /// Noise-floor constant `C >= 4` used by the theory diagnostics.
    pub noise_constant: f64,
    /// Master seed; recorded for provenance (callers drive the rng).
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rank: 1,
            oversample: 5,
            power_iters: 2,
            step_size: None,
            constraint: Constraint::None,
            acceleration: true,
            max_iters: 500,
            f_tol_rel: 1e-12,
            stall_tol: 1e-8,
            stall_window: 40,
            noise_constant: 4.0,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn rand_proj(&self) -> RandProjConfig {
        RandProjConfig {
            rank: self.rank,
            oversample: self.oversample,
            power_iters: self.power_iters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if self.stall_window == 0 {
            return Err(Error::InvalidConfig("stall_window must be >= 1".into()));
        }
        if let Some(mu) = self.step_size {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::InvalidConfig(format!("step size {mu} must be > 0")));
            }
        }
        if !(self.f_tol_rel >= 0.0) || !(self.stall_tol >= 0.0) {
            return Err(Error::InvalidConfig("tolerances must be >= 0".into()));
        }
        Ok(())
    }
}

/// One Nesterov update: `alpha_next = (1 + sqrt(4 alpha² + 1)) / 2` and
/// `beta = (alpha - 1) / alpha_next`, with `alpha_0 = 1` giving `beta = 0` on
/// the first step.
pub fn nesterov_step_scalars(alpha_prev: f64) -> (f64, f64) {
    debug_assert!(alpha_prev >= 1.0);
    let alpha_next = 0.5 * (1.0 + (4.0 * alpha_prev * alpha_prev + 1.0).sqrt());
    let beta = (alpha_prev - 1.0) / alpha_next;
    (alpha_next, beta)
}

/// The momentum point `Y = (1+b) X_i - b X_{i-1}` as a raw width-2r product
/// `left diag(weights) rightᴴ`; columns are generally not orthonormal.
#[derive(Debug, Clone)]
pub struct MomentumFactors<S: Scalar> {
    left: DMatrix<S>,
    weights: DVector<f64>,
    right: Option<DMatrix<S>>,
}

impl<S: Scalar> MomentumFactors<S> {
    pub fn left(&self) -> &DMatrix<S> {
        &self.left
    }

    pub fn right(&self) -> &DMatrix<S> {
        self.right.as_ref().unwrap_or(&self.left)
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn is_symmetric(&self) -> bool {
        self.right.is_none()
    }

    /// `Y w` for an `n x s` block.
    pub fn apply(&self, w: &DMatrix<S>) -> DMatrix<S> {
        let mut t = self.right().ad_mul(w);
        for (k, mut row) in t.row_iter_mut().enumerate() {
            row.scale_mut(self.weights[k]);
        }
        &self.left * t
    }

    /// `Yᴴ w` for an `m x s` block.
    pub fn apply_adjoint(&self, w: &DMatrix<S>) -> DMatrix<S> {
        let mut t = self.left.ad_mul(w);
        for (k, mut row) in t.row_iter_mut().enumerate() {
            row.scale_mut(self.weights[k]);
        }
        self.right() * t
    }

    pub fn to_dense(&self) -> Result<DMatrix<S>> {
        let mut scaled = self.left.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col.scale_mut(self.weights[k]);
        }
        Ok(&scaled * self.right().adjoint())
    }
}

/// Solver state: the current and previous rank-r iterates with their cached
/// measurements, and the Nesterov scalar.
#[derive(Debug, Clone)]
pub struct IterateState<S: Scalar> {
    current: FactorTriple<S>,
    previous: FactorTriple<S>,
    ax_current: DVector<f64>,
    ax_previous: DVector<f64>,
    alpha: f64,
    iteration: usize,
}

impl<S: Scalar> IterateState<S> {
    /// Start from the zero matrix (both `X_0` and `X_{-1}` are zero factors).
    pub fn initial(m: usize, n: usize, rank: usize, symmetric: bool, p: usize) -> Self {
        let zero = if symmetric {
            FactorTriple::zero_symmetric(n, rank)
        } else {
            FactorTriple::zero(m, n, rank)
        };
        Self {
            current: zero.clone(),
            previous: zero,
            ax_current: DVector::zeros(p),
            ax_previous: DVector::zeros(p),
            alpha: 1.0,
            iteration: 0,
        }
    }

    /// Start exactly at a given point (`X_0 = X_{-1} = point`), e.g. to probe
    /// fixed points.
    pub fn at<Op: MeasurementOperator<S> + ?Sized>(
        point: FactorTriple<S>,
        op: &Op,
    ) -> Result<Self> {
        let ax = op.apply(&point)?.into_vector();
        Ok(Self {
            current: point.clone(),
            previous: point,
            ax_current: ax.clone(),
            ax_previous: ax,
            alpha: 1.0,
            iteration: 0,
        })
    }

    pub fn current(&self) -> &FactorTriple<S> {
        &self.current
    }

    pub fn previous(&self) -> &FactorTriple<S> {
        &self.previous
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }
}

/// Concatenate the current and previous factors into the raw momentum
/// product; `beta = 0` zeroes the second block.
pub fn build_momentum_factors<S: Scalar>(state: &IterateState<S>, beta: f64) -> MomentumFactors<S> {
    let r_cur = state.current.rank();
    let r_prev = state.previous.rank();
    let m = state.current.nrows();
    let mut left = DMatrix::zeros(m, r_cur + r_prev);
    left.columns_mut(0, r_cur).copy_from(state.current.left());
    left.columns_mut(r_cur, r_prev).copy_from(state.previous.left());
    let mut weights = DVector::zeros(r_cur + r_prev);
    for k in 0..r_cur {
        weights[k] = (1.0 + beta) * state.current.values()[k];
    }
    for k in 0..r_prev {
        weights[r_cur + k] = -beta * state.previous.values()[k];
    }
    let right = if state.current.is_symmetric() && state.previous.is_symmetric() {
        None
    } else {
        let n = state.current.ncols();
        let mut right = DMatrix::zeros(n, r_cur + r_prev);
        right.columns_mut(0, r_cur).copy_from(state.current.right());
        right
            .columns_mut(r_cur, r_prev)
            .copy_from(state.previous.right());
        Some(right)
    };
    MomentumFactors {
        left,
        weights,
        right,
    }
}

#[derive(Default)]
struct WorkCounters {
    applies: AtomicU64,
    adjoints: AtomicU64,
}

fn gradient_map_with_residual<'a, S: Scalar, Op: MeasurementOperator<S> + ?Sized>(
    op: &'a Op,
    momentum: &'a MomentumFactors<S>,
    z: Arc<MeasurementVector>,
    mu: f64,
    adjoints: Option<&'a AtomicU64>,
) -> ImplicitMatrix<'a, S> {
    let (m, n) = (op.nrows(), op.ncols());
    if op.hermitian_only() && momentum.is_symmetric() {
        // h is Hermitian by construction: Y is symmetric and A*(z) is too
        return ImplicitMatrix::new_hermitian(n, move |w| {
            if let Some(c) = adjoints {
                c.fetch_add(1, Ordering::Relaxed);
            }
            let grad = op.adjoint_apply(&z, w).expect("gradient map dims fixed");
            momentum.apply(w) - grad.scale(mu)
        });
    }
    let zf = Arc::clone(&z);
    let za = z;
    ImplicitMatrix::new(
        m,
        n,
        move |w| {
            if let Some(c) = adjoints {
                c.fetch_add(1, Ordering::Relaxed);
            }
            let grad = op.adjoint_apply(&zf, w).expect("gradient map dims fixed");
            momentum.apply(w) - grad.scale(mu)
        },
        move |w| {
            if let Some(c) = adjoints {
                c.fetch_add(1, Ordering::Relaxed);
            }
            let grad = op
                .adjoint_apply_adj(&za, w)
                .expect("gradient map dims fixed");
            momentum.apply_adjoint(w) - grad.scale(mu)
        },
    )
}

/// The implicit matrix `h(w) = Y w - mu A*(z) w` with `z = A(Y) - y` computed
/// once and captured; returns the map together with the residual.
pub fn build_gradient_map<'a, S: Scalar, Op: MeasurementOperator<S> + ?Sized>(
    op: &'a Op,
    y: &MeasurementVector,
    momentum: &'a MomentumFactors<S>,
    mu: f64,
) -> Result<(ImplicitMatrix<'a, S>, MeasurementVector)> {
    let ay = op.apply_factored(momentum.left(), momentum.weights(), momentum.right())?;
    let z = MeasurementVector::new(ay.as_vector() - y.as_vector())?;
    let map = gradient_map_with_residual(op, momentum, Arc::new(z.clone()), mu, None);
    Ok((map, z))
}

/// Project a spectrum onto the constraint set. `Psd` clips negatives,
/// `Simplex` is the Euclidean projection onto `{d >= 0, sum d = 1}`.
pub fn project_constraint(values: &DVector<f64>, constraint: Constraint) -> DVector<f64> {
    match constraint {
        Constraint::None => values.clone(),
        Constraint::Psd => values.map(|d| d.max(0.0)),
        Constraint::Simplex => DVector::from_vec(simplex_project(values.as_slice())),
    }
}

/// Sort-and-threshold Euclidean projection onto the probability simplex.
pub fn simplex_project(d: &[f64]) -> Vec<f64> {
    let mut sorted = d.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut prefix = 0.0;
    let mut support = 0;
    let mut shift = 0.0;
    for (j, &v) in sorted.iter().enumerate() {
        prefix += v;
        let candidate = (1.0 - prefix) / (j + 1) as f64;
        if v + candidate > 0.0 {
            support = j + 1;
            shift = candidate;
        }
    }
    debug_assert!(support >= 1);
    d.iter().map(|&v| (v + shift).max(0.0)).collect()
}

/// Per-iteration trace entry.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `f(X_i) = ‖y - A(X_i)‖²`.
    pub f: f64,
    /// `‖z‖` at the momentum point used to build this iterate.
    pub residual_norm: f64,
    /// Retained spectrum after constraint projection.
    pub spectrum: Vec<f64>,
    /// `‖X_i - X*‖_F²` when the ground truth was supplied.
    pub true_error_sq: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Reached `f <= f_tol`.
    Converged,
    /// Relative decrease of `f` below `stall_tol` over the stall window.
    Stalled,
    MaxIters,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Converged => write!(f, "converged"),
            Self::Stalled => write!(f, "stalled"),
            Self::MaxIters => write!(f, "max_iters"),
        }
    }
}

/// Full convergence trace of a solve.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub final_f: f64,
    pub step_size: f64,
    /// Operator applications (`A`) and block adjoint applications (`A*`).
    pub applies: u64,
    pub adjoint_applies: u64,
}

fn step_inner<S: Scalar, Op: MeasurementOperator<S> + ?Sized, R: Rng + ?Sized>(
    state: &mut IterateState<S>,
    op: &Op,
    y: &MeasurementVector,
    cfg: &SolverConfig,
    mu: f64,
    rng: &mut R,
    truth: Option<&FactorTriple<S>>,
    counters: &WorkCounters,
) -> Result<IterationRecord> {
    let beta = if cfg.acceleration {
        let (alpha_next, beta) = nesterov_step_scalars(state.alpha);
        state.alpha = alpha_next;
        beta
    } else {
        0.0
    };
    let momentum = build_momentum_factors(state, beta);
    // z = A(Y) - y from the cached per-iterate measurements
    let z_vec = &state.ax_current * (1.0 + beta) - &state.ax_previous * beta - y.as_vector();
    let residual_norm = z_vec.norm();
    let z = Arc::new(MeasurementVector::new(z_vec)?);
    let map = gradient_map_with_residual(op, &momentum, z, mu, Some(&counters.adjoints));
    let projected = if op.hermitian_only() {
        rand_eig(&map, &cfg.rand_proj(), rng)?
    } else {
        rand_svd(&map, &cfg.rand_proj(), rng)?
    };
    let values = project_constraint(projected.truncated.values(), cfg.constraint);
    let next = projected.truncated.with_values(values)?;
    counters.applies.fetch_add(1, Ordering::Relaxed);
    let ax_next = op.apply(&next)?.into_vector();
    let f = (&ax_next - y.as_vector()).norm_squared();
    if !f.is_finite() {
        return Err(Error::NonFinite("objective f(X)"));
    }
    let true_error_sq = match truth {
        Some(t) => Some(crate::metrics::frob_sq_factored(&next, t)?),
        None => None,
    };
    state.previous = std::mem::replace(&mut state.current, next);
    state.ax_previous = std::mem::replace(&mut state.ax_current, ax_next);
    state.iteration += 1;
    Ok(IterationRecord {
        iteration: state.iteration,
        f,
        residual_norm,
        spectrum: state.current.values().iter().copied().collect(),
        true_error_sq,
    })
}

/// One full iteration: momentum, residual, gradient map, randomized rank-r
/// projection, constraint projection, state advance.
pub fn svp_step<S: Scalar, Op: MeasurementOperator<S> + ?Sized, R: Rng + ?Sized>(
    state: &mut IterateState<S>,
    op: &Op,
    y: &MeasurementVector,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<IterationRecord> {
    let mu = cfg.step_size.unwrap_or(DEFAULT_STEP_SIZE);
    let counters = WorkCounters::default();
    step_inner(state, op, y, cfg, mu, rng, None, &counters)
}

/// Iterate until `f_tol`, stall, or `max_iters`; divergence aborts with an
/// error rather than a report.
pub fn solve<S: Scalar, Op: MeasurementOperator<S> + ?Sized, R: Rng + ?Sized>(
    op: &Op,
    y: &MeasurementVector,
    cfg: &SolverConfig,
    rng: &mut R,
    truth: Option<&FactorTriple<S>>,
) -> Result<(FactorTriple<S>, ConvergenceReport)> {
    cfg.validate()?;
    let (m, n, p) = (op.nrows(), op.ncols(), op.num_measurements());
    if y.len() != p {
        return Err(Error::DimMismatch(format!(
            "measurement vector has {} entries, operator has p = {p}",
            y.len()
        )));
    }
    cfg.rand_proj().validate(m, n)?;
    if cfg.constraint != Constraint::None && !op.hermitian_only() {
        return Err(Error::ConstraintNeedsSymmetric(match cfg.constraint {
            Constraint::Psd => "psd",
            Constraint::Simplex => "simplex",
            Constraint::None => unreachable!(),
        }));
    }
    if op.hermitian_only() && m != n {
        return Err(Error::DimMismatch(format!(
            "hermitian operator must be square, got {m}x{n}"
        )));
    }
    if let Some(t) = truth {
        if t.nrows() != m || t.ncols() != n {
            return Err(Error::DimMismatch("ground truth dims".into()));
        }
    }
    let mu = cfg.step_size.unwrap_or(DEFAULT_STEP_SIZE);
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidConfig(format!("step size {mu} must be > 0")));
    }

    let counters = WorkCounters::default();
    let mut state = IterateState::initial(m, n, cfg.rank, op.hermitian_only(), p);
    let f0 = y.as_vector().norm_squared();
    let f_tol = cfg.f_tol_rel * f0;
    let mut records = vec![IterationRecord {
        iteration: 0,
        f: f0,
        residual_norm: f0.sqrt(),
        spectrum: vec![0.0; cfg.rank],
        true_error_sq: truth.map(|t| t.norm_sq()),
    }];

    let mut termination = Termination::MaxIters;
    if f0 <= f_tol {
        termination = Termination::Converged;
    } else {
        for _ in 0..cfg.max_iters {
            let rec = step_inner(&mut state, op, y, cfg, mu, rng, truth, &counters)?;
            let f = rec.f;
            records.push(rec);
            if f > DIVERGENCE_FACTOR * f0 {
                return Err(Error::StepTooLarge { f0, f });
            }
            if f <= f_tol {
                termination = Termination::Converged;
                break;
            }
            if records.len() > cfg.stall_window + 1 {
                // stalled when the last `stall_window` iterations improved
                // the running best by less than `stall_tol` relative; robust
                // to the wobble of individual randomized steps
                let split = records.len() - cfg.stall_window;
                let best_before = records[..split].iter().map(|r| r.f).fold(f64::INFINITY, f64::min);
                let best_recent = records[split..].iter().map(|r| r.f).fold(f64::INFINITY, f64::min);
                if best_recent >= best_before * (1.0 - cfg.stall_tol) {
                    termination = Termination::Stalled;
                    break;
                }
            }
        }
    }

    let final_f = records.last().map(|r| r.f).unwrap_or(f0);
    let report = ConvergenceReport {
        records,
        termination,
        final_f,
        step_size: mu,
        applies: counters.applies.load(Ordering::Relaxed),
        adjoint_applies: counters.adjoints.load(Ordering::Relaxed),
    };
    Ok((state.current, report))
}

/// Closed-form contraction diagnostics.
///
/// `theta`/`tau` are the values the iteration invariant speaks about: with
/// exact projections (`epsilon = 0`, no extra constraint) they specialize to
/// `theta = 2 d2r/(1-d2r) (1 + 2/C)` and `tau = 1 + 2 d2r/(1-d2r)`; otherwise
/// they equal the general bounds, which are also always reported separately.
#[derive(Debug, Clone, Copy)]
pub struct TheoryDiagnostics {
    pub delta_2r: f64,
    pub delta_cr: f64,
    pub epsilon: f64,
    /// Smallest integer with `l <= (c-1) r`, when ranks are known.
    pub c: Option<usize>,
    pub theta: f64,
    pub tau: f64,
    pub theta_general: f64,
    pub tau_general: f64,
    /// `max{C², tau/(1-theta)}`; multiply by `‖noise‖²` for the floor on
    /// `lim E f(X_i)`. `None` when `theta >= 1`.
    pub noise_floor_factor: Option<f64>,
}

impl TheoryDiagnostics {
    /// Noise floor `max{C², tau/(1-theta)} ‖noise‖²`.
    pub fn noise_floor(&self, noise_norm_sq: f64) -> Option<f64> {
        self.noise_floor_factor.map(|f| f * noise_norm_sq)
    }

    /// Attach `c = ceil(l / r) + 1` computed from the projector ranks.
    pub fn with_ranks(mut self, rank: usize, oversample: usize) -> Self {
        let ell = rank + oversample;
        self.c = Some(ell.div_ceil(rank) + 1);
        self
    }
}

/// Evaluate the iteration-invariant bounds at given R-RIP constants.
pub fn theory_bounds(
    delta_2r: f64,
    delta_cr: f64,
    epsilon: f64,
    m: usize,
    n: usize,
    p: usize,
    noise_c: f64,
) -> Result<TheoryDiagnostics> {
    for (name, d) in [("delta_2r", delta_2r), ("delta_cr", delta_cr)] {
        if !(0.0..1.0).contains(&d) {
            return Err(Error::InvalidConfig(format!("{name} = {d} must be in [0, 1)")));
        }
    }
    if noise_c < 4.0 {
        return Err(Error::InvalidConfig(format!(
            "noise constant C = {noise_c} must be >= 4"
        )));
    }
    if epsilon < 0.0 {
        return Err(Error::InvalidConfig(format!("epsilon = {epsilon} must be >= 0")));
    }
    let mn_over_p = (m as f64) * (n as f64) / (p as f64);
    let ratio = (1.0 + delta_2r) / (1.0 - delta_cr);
    let theta_general = 12.0
        * ratio
        * (epsilon / (1.0 + delta_cr) * mn_over_p
            + (1.0 + epsilon) * 3.0 * delta_cr / (1.0 - delta_2r));
    let tau_general =
        ratio * (12.0 * (1.0 + epsilon) * (1.0 + 2.0 * delta_cr / (1.0 - delta_2r)) + 8.0);
    let (theta, tau) = if epsilon == 0.0 {
        let spread = 2.0 * delta_2r / (1.0 - delta_2r);
        (spread * (1.0 + 2.0 / noise_c), 1.0 + spread)
    } else {
        (theta_general, tau_general)
    };
    let noise_floor_factor = if theta < 1.0 {
        Some((noise_c * noise_c).max(tau / (1.0 - theta)))
    } else {
        None
    };
    Ok(TheoryDiagnostics {
        delta_2r,
        delta_cr,
        epsilon,
        c: None,
        theta,
        tau,
        theta_general,
        tau_general,
        noise_floor_factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::thin_qr;
    use crate::operators::{GaussianOperator, PauliOperator};
    use crate::rand_approx::gaussian_test_block;
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_psd_unit_trace(n: usize, r: usize, rg: &mut ChaCha8Rng) -> FactorTriple<f64> {
        let u = thin_qr(&gaussian_test_block::<f64, _>(n, r, rg)).unwrap().q;
        let mut d = DVector::from_fn(r, |_, _| rg.random::<f64>() + 0.2);
        let tr: f64 = d.iter().sum();
        d /= tr;
        FactorTriple::new_symmetric(u, d).unwrap()
    }

    #[test]
    fn nesterov_scalar_examples() {
        let (a1, b1) = nesterov_step_scalars(1.0);
        assert_relative_eq!(a1, (1.0 + 5f64.sqrt()) / 2.0, epsilon = 1e-12);
        assert_eq!(b1, 0.0);
        // direct evaluation of the recurrence one step further
        let (a2, b2) = nesterov_step_scalars(a1);
        assert_relative_eq!(a2, 2.193527085331054, epsilon = 1e-12);
        assert_relative_eq!(b2, (a1 - 1.0) / a2, epsilon = 1e-15);
        assert_relative_eq!(b2, 0.2817535251253208, epsilon = 1e-12);
    }

    #[test]
    fn nesterov_scalars_grow_and_beta_stays_in_unit_interval() {
        let mut alpha = 1.0;
        for _ in 0..10_000 {
            let (next, beta) = nesterov_step_scalars(alpha);
            assert!(next > alpha);
            assert!((0.0..1.0).contains(&beta), "beta {beta}");
            alpha = next;
        }
    }

    #[test]
    fn momentum_factor_examples() {
        let mut rg = rng(1);
        let u = thin_qr(&gaussian_test_block::<f64, _>(12, 2, &mut rg)).unwrap().q;
        let v = thin_qr(&gaussian_test_block::<f64, _>(9, 2, &mut rg)).unwrap().q;
        let cur = FactorTriple::new(u, DVector::from_column_slice(&[2.0, 1.0]), v).unwrap();
        let u2 = thin_qr(&gaussian_test_block::<f64, _>(12, 2, &mut rg)).unwrap().q;
        let v2 = thin_qr(&gaussian_test_block::<f64, _>(9, 2, &mut rg)).unwrap().q;
        let prev = FactorTriple::new(u2, DVector::from_column_slice(&[0.5, 0.3]), v2).unwrap();

        let mut state = IterateState {
            current: cur.clone(),
            previous: prev.clone(),
            ax_current: DVector::zeros(1),
            ax_previous: DVector::zeros(1),
            alpha: 1.0,
            iteration: 5,
        };

        // beta = 0: the second block carries zero weight
        let m0 = build_momentum_factors(&state, 0.0);
        assert_eq!(m0.weights().as_slice(), &[2.0, 1.0, 0.0, 0.0]);
        assert!((m0.to_dense().unwrap() - cur.to_dense().unwrap()).norm() <= 1e-12);

        // i = 0 with zero previous factor: Y = X_0
        state.previous = FactorTriple::zero(12, 9, 2);
        let (_, beta0) = nesterov_step_scalars(1.0);
        let mi = build_momentum_factors(&state, beta0);
        assert!((mi.to_dense().unwrap() - cur.to_dense().unwrap()).norm() <= 1e-12);

        // generic beta against the dense combination
        state.previous = prev.clone();
        let beta = 0.3;
        let my = build_momentum_factors(&state, beta);
        let want = cur.to_dense().unwrap().scale(1.3) - prev.to_dense().unwrap().scale(0.3);
        assert!((my.to_dense().unwrap() - want).norm() <= 1e-12);
    }

    #[test]
    fn gradient_map_examples() {
        let mut rg = rng(2);
        let op = GaussianOperator::sample(10, 8, 30, 77).unwrap();
        let u = thin_qr(&gaussian_test_block::<f64, _>(10, 2, &mut rg)).unwrap().q;
        let v = thin_qr(&gaussian_test_block::<f64, _>(8, 2, &mut rg)).unwrap().q;
        let cur = FactorTriple::new(u, DVector::from_column_slice(&[1.5, 0.7]), v).unwrap();
        let state = IterateState::at(cur.clone(), &op).unwrap();
        let momentum = build_momentum_factors(&state, 0.25);

        // mu = 0 leaves the pure momentum matrix
        let y = op.apply(&cur).unwrap();
        let (map, _z) = build_gradient_map(&op, &y, &momentum, 0.0).unwrap();
        let w: DMatrix<f64> = gaussian_test_block(8, 3, &mut rg);
        let hw = map.apply(&w).unwrap();
        assert!((hw - momentum.apply(&w)).norm() <= 1e-12);

        // exact fit (z = 0) leaves Y w even with mu > 0
        let ym = op
            .apply_factored(momentum.left(), momentum.weights(), momentum.right())
            .unwrap();
        let (map, z) = build_gradient_map(&op, &ym, &momentum, 0.8).unwrap();
        assert!(z.norm() <= 1e-12);
        let hw = map.apply(&w).unwrap();
        assert!((hw - momentum.apply(&w)).norm() <= 1e-10);

        // dense oracle: h(w) = (Y - mu A*(z)) w from explicit matrices
        let mu = 0.6;
        let (map, z) = build_gradient_map(&op, &y, &momentum, mu).unwrap();
        map.check_adjoint().unwrap();
        let dense_y = momentum.to_dense().unwrap();
        let zc = z.as_vector();
        let mvec = op.densify().unwrap().transpose() * zc;
        let mz = DMatrix::from_column_slice(10, 8, mvec.as_slice());
        let want = (dense_y - mz.scale(mu)) * &w;
        assert!((map.apply(&w).unwrap() - &want).norm() <= 1e-10 * want.norm().max(1.0));
    }

    #[test]
    fn constraint_projections() {
        let psd = project_constraint(&DVector::from_column_slice(&[1.0, -1.0]), Constraint::Psd);
        assert_eq!(psd.as_slice(), &[1.0, 0.0]);

        let s = simplex_project(&[0.6, 0.6, -0.2]);
        assert_relative_eq!(s[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(s[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(s[2], 0.0, epsilon = 1e-12);

        // already feasible point is fixed
        let s = simplex_project(&[1.0, 0.0]);
        assert_relative_eq!(s[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s[1], 0.0, epsilon = 1e-12);

        let none = project_constraint(&DVector::from_column_slice(&[2.0, -3.0]), Constraint::None);
        assert_eq!(none.as_slice(), &[2.0, -3.0]);
    }

    /// Brute-force simplex oracle: scan every prefix support size, keep the
    /// feasible candidate closest to `d`.
    fn simplex_oracle(d: &[f64]) -> Vec<f64> {
        let mut sorted = d.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut best: Option<(f64, Vec<f64>)> = None;
        for support in 1..=d.len() {
            let prefix: f64 = sorted[..support].iter().sum();
            let shift = (1.0 - prefix) / support as f64;
            let candidate: Vec<f64> = d.iter().map(|&v| (v + shift).max(0.0)).collect();
            let sum: f64 = candidate.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                continue;
            }
            let dist: f64 = candidate
                .iter()
                .zip(d.iter())
                .map(|(c, v)| (c - v) * (c - v))
                .sum();
            if best.as_ref().is_none_or(|(b, _)| dist < *b) {
                best = Some((dist, candidate));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn simplex_matches_brute_force_oracle() {
        let mut rg = rng(3);
        for _ in 0..1000 {
            let k = rg.random_range(1..=8);
            let d: Vec<f64> = (0..k).map(|_| rg.random::<f64>() * 4.0 - 2.0).collect();
            let fast = simplex_project(&d);
            let want = simplex_oracle(&d);
            let sum: f64 = fast.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
            assert!(fast.iter().all(|&x| x >= 0.0));
            for (f, w) in fast.iter().zip(want.iter()) {
                assert_relative_eq!(f, w, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn exact_fit_is_a_fixed_point() {
        let mut rg = rng(4);
        let n = 32;
        let op = PauliOperator::<f64>::sample(5, 4 * n, &mut rg).unwrap();
        let x0 = random_psd_unit_trace(n, 2, &mut rg);
        let y = op.apply(&x0).unwrap();
        let mut state = IterateState::at(x0.clone(), &op).unwrap();
        let cfg = SolverConfig {
            rank: 2,
            power_iters: 2,
            ..SolverConfig::default()
        };
        for _ in 0..3 {
            let rec = svp_step(&mut state, &op, &y, &cfg, &mut rg).unwrap();
            assert!(rec.f <= 1e-18, "f = {}", rec.f);
        }
        // fixed point up to rotation: compare as matrices
        let err = crate::metrics::frob_sq_factored(state.current(), &x0).unwrap();
        assert!(err <= 1e-16, "moved by {err}");
    }

    #[test]
    fn single_step_matches_dense_reference_path() {
        // explicit X and dense h, with rand_svd sharing the same seed
        let mut rg = rng(5);
        let (m, n, p) = (16, 12, 64);
        let op = GaussianOperator::sample(m, n, p, 5).unwrap();
        let u = thin_qr(&gaussian_test_block::<f64, _>(m, 2, &mut rg)).unwrap().q;
        let v = thin_qr(&gaussian_test_block::<f64, _>(n, 2, &mut rg)).unwrap().q;
        let xstar = FactorTriple::new(u, DVector::from_column_slice(&[1.0, 0.6]), v).unwrap();
        let y = op.apply(&xstar).unwrap();
        let cfg = SolverConfig {
            rank: 2,
            oversample: 4,
            power_iters: 1,
            ..SolverConfig::default()
        };
        let mu = DEFAULT_STEP_SIZE;

        let mut state = IterateState::initial(m, n, 2, false, p);
        let mut rng_solver = rng(42);
        svp_step(&mut state, &op, &y, &cfg, &mut rng_solver).unwrap();

        // dense reference of the same step
        let dense_a = op.densify().unwrap();
        let x_dense = DMatrix::<f64>::zeros(m, n);
        let z = &dense_a * DVector::from_column_slice(x_dense.as_slice()) - y.as_vector();
        let g = &x_dense
            - DMatrix::from_column_slice(m, n, (dense_a.transpose() * z).as_slice()).scale(mu);
        let implicit = ImplicitMatrix::from_dense(&g);
        let mut rng_ref = rng(42);
        let out = rand_svd(&implicit, &cfg.rand_proj(), &mut rng_ref).unwrap();
        let want = out.truncated.to_dense().unwrap();
        let got = state.current().to_dense().unwrap();
        assert!(
            (got - &want).norm() <= 1e-9 * want.norm(),
            "dense and factored paths disagree"
        );
    }

    #[test]
    fn noiseless_pauli_objective_drops_fast() {
        // 8-qubit, r = 1, p = 4n, q = 2: f falls by 10x within 50 iterations
        let mut rg = rng(6);
        let n = 256;
        let op = PauliOperator::<f64>::sample(8, 4 * n, &mut rg).unwrap();
        let xstar = random_psd_unit_trace(n, 1, &mut rg);
        let y = op.apply(&xstar).unwrap();
        let cfg = SolverConfig {
            rank: 1,
            oversample: 5,
            power_iters: 2,
            constraint: Constraint::Simplex,
            max_iters: 50,
            f_tol_rel: 0.0,
            stall_tol: 0.0,
            ..SolverConfig::default()
        };
        let (_, report) = solve(&op, &y, &cfg, &mut rng(7), None).unwrap();
        let f0 = report.records[0].f;
        let f_last = report.final_f;
        assert!(
            f_last * 10.0 <= f0,
            "f only went from {f0} to {f_last} in 50 iterations"
        );
    }

    #[test]
    fn full_information_complex_recovery() {
        // p = 4^qb = n² distinct codes: orthogonal-scaled full measurement,
        // recovery in a couple of iterations on the complex Hermitian path
        let mut rg = rng(8);
        let qb = 3;
        let n = 1 << qb;
        let op = PauliOperator::<Complex64>::sample(qb, 1 << (2 * qb), &mut rg).unwrap();
        let u = thin_qr(&gaussian_test_block::<Complex64, _>(n, 2, &mut rg)).unwrap().q;
        let xstar =
            FactorTriple::new_symmetric(u, DVector::from_column_slice(&[0.7, 0.3])).unwrap();
        let y = op.apply(&xstar).unwrap();
        let cfg = SolverConfig {
            rank: 2,
            oversample: 3,
            power_iters: 1,
            max_iters: 100,
            ..SolverConfig::default()
        };
        let (xhat, report) = solve(&op, &y, &cfg, &mut rng(9), Some(&xstar)).unwrap();
        assert_eq!(report.termination, Termination::Converged);
        assert!(report.final_f <= 1e-12 * y.as_vector().norm_squared());
        let err = crate::metrics::frob_sq_factored(&xhat, &xstar).unwrap();
        assert!(err <= 1e-10, "error {err}");
    }

    #[test]
    fn eight_qubit_simplex_recovery() {
        let mut rg = rng(10);
        let n = 256;
        let op = PauliOperator::<f64>::sample(8, 4 * n, &mut rg).unwrap();
        let xstar = random_psd_unit_trace(n, 1, &mut rg);
        let y = op.apply(&xstar).unwrap();
        let cfg = SolverConfig {
            rank: 1,
            oversample: 5,
            power_iters: 2,
            constraint: Constraint::Simplex,
            max_iters: 500,
            ..SolverConfig::default()
        };
        let (xhat, report) = solve(&op, &y, &cfg, &mut rng(11), Some(&xstar)).unwrap();
        let rel = (crate::metrics::frob_sq_factored(&xhat, &xstar).unwrap()
            / xstar.norm_sq())
        .sqrt();
        assert!(rel <= 1e-4, "relative error {rel}, stopped {:?}", report.termination);
        // simplex feasibility held at every iterate
        for rec in &report.records[1..] {
            let sum: f64 = rec.spectrum.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            assert!(rec.spectrum.iter().all(|&d| d >= 0.0));
        }
    }

    #[test]
    fn undersampled_run_reports_nonconvergence() {
        // marginal p with tiny sketch: stalls or exhausts iterations, no panic
        let mut rg = rng(12);
        let n = 64;
        let op = PauliOperator::<f64>::sample(6, n / 2, &mut rg).unwrap();
        let xstar = random_psd_unit_trace(n, 1, &mut rg);
        let y = op.apply(&xstar).unwrap();
        let cfg = SolverConfig {
            rank: 1,
            oversample: 2,
            power_iters: 0,
            constraint: Constraint::Simplex,
            max_iters: 120,
            ..SolverConfig::default()
        };
        let (_, report) = solve(&op, &y, &cfg, &mut rng(13), None).unwrap();
        assert_ne!(report.termination, Termination::Converged);
    }

    #[test]
    fn oversized_step_aborts() {
        let mut rg = rng(14);
        let n = 32;
        let op = PauliOperator::<f64>::sample(5, 2 * n, &mut rg).unwrap();
        let xstar = random_psd_unit_trace(n, 1, &mut rg);
        let y = op.apply(&xstar).unwrap();
        let cfg = SolverConfig {
            rank: 1,
            step_size: Some(40.0),
            max_iters: 400,
            stall_window: 1000,
            ..SolverConfig::default()
        };
        assert!(matches!(
            solve(&op, &y, &cfg, &mut rng(15), None),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn constraint_requires_hermitian_path() {
        let op = GaussianOperator::sample(8, 8, 32, 1).unwrap();
        let y = MeasurementVector::new(DVector::from_element(32, 1.0)).unwrap();
        let cfg = SolverConfig {
            rank: 1,
            constraint: Constraint::Simplex,
            ..SolverConfig::default()
        };
        assert!(matches!(
            solve(&op, &y, &cfg, &mut rng(16), None),
            Err(Error::ConstraintNeedsSymmetric(_))
        ));
    }

    #[test]
    fn theory_bound_examples() {
        // exact-projection corollary at the quoted operating point
        let d = theory_bounds(0.2, 0.2, 0.0, 64, 64, 256, 4.0).unwrap();
        assert_eq!(d.theta, 0.75);
        assert_eq!(d.tau, 1.5);
        assert_eq!(d.noise_floor_factor, Some(16.0));

        // contraction threshold: theta < 1 iff delta_2r < 1/(3 + 4/C)
        for c in [4.0, 8.0, 100.0] {
            let threshold = 1.0 / (3.0 + 4.0 / c);
            for scale in [0.5, 1.0 - 1e-9, 1.0 + 1e-9, 1.5] {
                let delta = threshold * scale;
                if delta >= 1.0 {
                    continue;
                }
                let d = theory_bounds(delta, delta, 0.0, 16, 16, 64, c).unwrap();
                assert_eq!(d.theta < 1.0, delta < threshold, "delta {delta} C {c}");
            }
        }

        // perfect isometry with exact projection: general bound gives
        // theta = 0 and tau = 12 + 8 = 20
        let d = theory_bounds(0.0, 0.0, 0.0, 16, 16, 64, 4.0).unwrap();
        assert_eq!(d.theta_general, 0.0);
        assert_eq!(d.tau_general, 20.0);
        assert_eq!(d.theta, 0.0);
        assert_eq!(d.tau, 1.0);

        // c bookkeeping: l = r + rho <= (c-1) r
        let d = d.with_ranks(3, 5);
        assert_eq!(d.c, Some(4));

        assert!(theory_bounds(1.0, 0.2, 0.0, 4, 4, 4, 4.0).is_err());
        assert!(theory_bounds(0.2, 0.2, 0.0, 4, 4, 4, 2.0).is_err());
    }

    #[test]
    fn noiseless_contraction_in_the_mean() {
        // Gaussian m = n = 32, r = 2, p = 6rn, q = 2, rho = 5: mean per-step
        // ratio f_{i+1}/f_i < 1 over 50 seeds until f < 1e-10
        let (m, n, r) = (32usize, 32usize, 2usize);
        let p = 6 * r * n;
        let seeds = 50u64;
        let mut ratio_sums: Vec<f64> = Vec::new();
        let mut ratio_counts: Vec<u32> = Vec::new();
        for seed in 0..seeds {
            let op = GaussianOperator::sample(m, n, p, 900 + seed).unwrap();
            let mut rg = rng(7000 + seed);
            let u = thin_qr(&gaussian_test_block::<f64, _>(m, r, &mut rg)).unwrap().q;
            let v = thin_qr(&gaussian_test_block::<f64, _>(n, r, &mut rg)).unwrap().q;
            let xstar =
                FactorTriple::new(u, DVector::from_column_slice(&[1.0, 0.5]), v).unwrap();
            let y = op.apply(&xstar).unwrap();
            let cfg = SolverConfig {
                rank: r,
                oversample: 5,
                power_iters: 2,
                max_iters: 60,
                stall_tol: 0.0,
                ..SolverConfig::default()
            };
            let (_, report) = solve(&op, &y, &cfg, &mut rg, None).unwrap();
            for w in report.records.windows(2) {
                if w[0].f < 1e-10 {
                    break;
                }
                let i = w[0].iteration;
                if ratio_sums.len() <= i {
                    ratio_sums.resize(i + 1, 0.0);
                    ratio_counts.resize(i + 1, 0);
                }
                ratio_sums[i] += w[1].f / w[0].f;
                ratio_counts[i] += 1;
            }
        }
        for (i, (&s, &c)) in ratio_sums.iter().zip(ratio_counts.iter()).enumerate() {
            if c == 0 {
                continue;
            }
            let mean = s / c as f64;
            assert!(mean < 1.0, "mean ratio {mean} at iteration {i} ({c} seeds)");
        }
    }

    #[test]
    fn noise_floor_inequality_holds() {
        // AWGN at 30 dB: final ‖X - X*‖² <= (sqrt(f) + ‖noise‖)² / (1 - delta_2r_hat)
        let (m, n, r) = (16usize, 16usize, 2usize);
        let p = 6 * r * n;
        let op = GaussianOperator::sample(m, n, p, 31).unwrap();
        let mut rg = rng(32);
        let u = thin_qr(&gaussian_test_block::<f64, _>(m, r, &mut rg)).unwrap().q;
        let v = thin_qr(&gaussian_test_block::<f64, _>(n, r, &mut rg)).unwrap().q;
        let xstar = FactorTriple::new(u, DVector::from_column_slice(&[1.0, 0.7]), v).unwrap();
        let clean = op.apply(&xstar).unwrap();
        let snr_db = 30.0;
        let mut noise = gaussian_test_block::<f64, _>(p, 1, &mut rg).column(0).into_owned();
        let target = clean.as_vector().norm_squared() * 10f64.powf(-snr_db / 10.0);
        noise *= (target / noise.norm_squared()).sqrt();
        let y = MeasurementVector::new(clean.as_vector() + &noise).unwrap();
        let cfg = SolverConfig {
            rank: r,
            oversample: 5,
            power_iters: 2,
            max_iters: 200,
            ..SolverConfig::default()
        };
        let (xhat, report) = solve(&op, &y, &cfg, &mut rg, Some(&xstar)).unwrap();
        let (deficit, excess) =
            crate::operators::rip_monte_carlo(&op, 2 * r, 200, &mut rng(33)).unwrap();
        let delta_hat = deficit.max(excess);
        assert!(delta_hat < 1.0);
        let err = crate::metrics::frob_sq_factored(&xhat, &xstar).unwrap();
        let bound = (report.final_f.sqrt() + noise.norm()).powi(2) / (1.0 - delta_hat);
        assert!(err <= bound, "err {err} bound {bound}");
    }

    #[test]
    fn work_counters_are_recorded() {
        let mut rg = rng(17);
        let n = 16;
        let op = PauliOperator::<f64>::sample(4, 2 * n, &mut rg).unwrap();
        let xstar = random_psd_unit_trace(n, 1, &mut rg);
        let y = op.apply(&xstar).unwrap();
        let cfg = SolverConfig {
            rank: 1,
            oversample: 3,
            power_iters: 1,
            max_iters: 5,
            f_tol_rel: 0.0,
            stall_tol: 0.0,
            ..SolverConfig::default()
        };
        let (_, report) = solve(&op, &y, &cfg, &mut rg, None).unwrap();
        let iters = (report.records.len() - 1) as u64;
        assert_eq!(report.applies, iters);
        // rand_eig: q+1 forward rounds of 2 calls... exactly 2q + 2 map
        // applications per iteration, each hitting the operator once
        assert_eq!(report.adjoint_applies, iters * (2 * cfg.power_iters as u64 + 2));
    }
}
