//! Scalar field abstraction: everything downstream is written once over
//! `f64` or `Complex64`.

use nalgebra::ComplexField;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

/// Scalar field of the factored-matrix stack.
///
/// The real instantiation doubles as the "real mode" of the Pauli operator:
/// quarter-phase coefficients with a purely imaginary phase collapse to zero
/// there, which is exactly "take the real part of the adjoint matrix".
pub trait Scalar: ComplexField<RealField = f64> + Copy + Send + Sync + 'static {
    const COMPLEX: bool;

    /// One standard normal draw. The complex case uses independent N(0,1)
    /// real and imaginary parts.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// `w * (-i)^quarter` projected into the field; the real field keeps the
    /// real part (so odd quarters give zero).
    fn from_quarter_phase(w: f64, quarter: u8) -> Self;
}

impl Scalar for f64 {
    const COMPLEX: bool = false;

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn from_quarter_phase(w: f64, quarter: u8) -> Self {
        match quarter & 3 {
            0 => w,
            2 => -w,
            _ => 0.0,
        }
    }
}

impl Scalar for Complex64 {
    const COMPLEX: bool = true;

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    }

    fn from_quarter_phase(w: f64, quarter: u8) -> Self {
        match quarter & 3 {
            0 => Complex64::new(w, 0.0),
            1 => Complex64::new(0.0, -w),
            2 => Complex64::new(-w, 0.0),
            _ => Complex64::new(0.0, w),
        }
    }
}

/// Rotate the parts of a scalar by `(-i)^quarter`, returning `(re, im)`.
pub(crate) fn rotate_quarter(re: f64, im: f64, quarter: u8) -> (f64, f64) {
    match quarter & 3 {
        0 => (re, im),
        1 => (im, -re),
        2 => (-re, -im),
        _ => (-im, re),
    }
}
