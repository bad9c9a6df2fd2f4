//! Scalar abstraction shared by the matrix kernels.
//!
//! The passage-probability machinery runs unchanged over real scalars
//! (`f32`, `f64`) and over `Complex<f64>`, which the Laplace inversion needs
//! when it evaluates transforms off the real axis.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex;

/// Field scalar usable by the Riccati, exponential and passage kernels.
pub trait Scalar: ComplexField + Copy {
    /// True for real scalar types.
    const REAL: bool;

    fn of(x: f64) -> Self {
        nalgebra::convert(x)
    }

    /// Modulus as `f64`, used for convergence tests.
    fn abs_f64(self) -> f64 {
        nalgebra::try_convert::<Self::RealField, f64>(self.modulus()).unwrap_or(f64::NAN)
    }

    /// Real part as `f64`.
    fn re_f64(self) -> f64 {
        nalgebra::try_convert::<Self::RealField, f64>(self.real()).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const REAL: bool = true;
}
impl Scalar for f64 {
    const REAL: bool = true;
}
impl Scalar for Complex<f32> {
    const REAL: bool = false;
}
impl Scalar for Complex<f64> {
    const REAL: bool = false;
}

/// Max-norm of a matrix, zero for empty matrices.
pub fn max_abs<T: Scalar>(m: &DMatrix<T>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs_f64()))
}

/// Lift a real matrix into another scalar type.
pub fn lift<T: Scalar>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(T::of)
}

/// True when every entry is finite.
pub fn all_finite<T: Scalar>(m: &DMatrix<T>) -> bool {
    m.iter().all(|x| x.abs_f64().is_finite())
}
