//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All channel, filter, rate and LP code is written against [`Real`], so the
//! same routines run in `f32` or `f64`. Complex baseband quantities are
//! [`Complex<T>`] and matrices are dense column-major nalgebra matrices.

use nalgebra::{DMatrix, DVector, RealField};
use num_traits::{FromPrimitive, ToPrimitive};

pub use nalgebra::Complex;

/// Real floating-point scalar usable throughout the crate.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or configuration value.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Real type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type CMatrix<T> = DMatrix<Complex<T>>;
pub type CVector<T> = DVector<Complex<T>>;
pub type RVector<T> = DVector<T>;

#[inline]
pub(crate) fn cplx<T: Real>(re: T, im: T) -> Complex<T> {
    Complex::new(re, im)
}

#[inline]
pub(crate) fn creal<T: Real>(re: T) -> Complex<T> {
    Complex::new(re, T::zero())
}

/// `|z|^2` without the square root.
#[inline]
pub(crate) fn norm_sqr<T: Real>(z: Complex<T>) -> T {
    z.re * z.re + z.im * z.im
}

/// Squared Frobenius norm of a complex matrix.
pub(crate) fn frob_sqr<T: Real>(m: &CMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| acc + norm_sqr(*z))
}

/// Squared Euclidean norm of row `k`.
pub(crate) fn row_norm_sqr<T: Real>(m: &CMatrix<T>, k: usize) -> T {
    m.row(k).iter().fold(T::zero(), |acc, z| acc + norm_sqr(*z))
}
