//! Numerical Laplace inversion by Euler summation of the Bromwich integral.

use num_complex::Complex64;

use crate::error::{FluidError, Result};

/// Parameters of the Euler algorithm. The discretization error is about `e^{-a}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Euler {
    pub a: f64,
    pub n: usize,
    pub m: usize,
}

impl Default for Euler {
    fn default() -> Self {
        Self { a: 18.4, n: 15, m: 11 }
    }
}

impl Euler {
    /// Transform arguments needed to invert at `t`, in summation order.
    pub fn nodes(&self, t: f64) -> Vec<Complex64> {
        (0..=self.n + self.m)
            .map(|k| Complex64::new(self.a, 2.0 * std::f64::consts::PI * k as f64) / (2.0 * t))
            .collect()
    }

    /// Combine transform values at [`Euler::nodes`] into `f(t)`.
    pub fn combine(&self, t: f64, values: &[Complex64]) -> Result<f64> {
        if values.len() != self.n + self.m + 1 || values.iter().any(|v| !v.re.is_finite()) {
            return Err(FluidError::Domain(format!("laplace inversion at t = {t}: bad transform values")));
        }
        let scale = (self.a / 2.0).exp() / t;
        let mut partial = Vec::with_capacity(self.m + 1);
        let mut sum = 0.5 * values[0].re;
        for (k, v) in values.iter().enumerate().skip(1) {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * v.re;
            if k >= self.n {
                partial.push(sum);
            }
        }
        let mut binom = 1.0;
        let mut acc = 0.0;
        for (j, s) in partial.iter().enumerate() {
            acc += binom * s;
            binom *= (self.m - j) as f64 / (j + 1) as f64;
        }
        Ok(scale * acc / 2f64.powi(self.m as i32))
    }

    /// Invert `f_hat` at `t > 0`.
    pub fn invert(&self, t: f64, f_hat: impl Fn(Complex64) -> Result<Complex64>) -> Result<f64> {
        if !(t > 0.0) {
            return Err(FluidError::Domain(format!("laplace inversion needs t > 0, got {t}")));
        }
        let values = self.nodes(t).into_iter().map(f_hat).collect::<Result<Vec<_>>>()?;
        self.combine(t, &values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverts_exponential_density() {
        let e = Euler::default();
        for &t in &[0.1, 0.5, 1.0, 3.0, 7.0] {
            let f = e.invert(t, |s| Ok(2.0 / (s + 2.0))).unwrap();
            assert!((f - 2.0 * (-2.0 * t).exp()).abs() < 1e-7, "t = {t}: {f}");
        }
    }

    #[test]
    fn inverts_tail_and_erlang() {
        let e = Euler::default();
        for &t in &[0.2, 1.0, 2.5] {
            // tail of Erlang(2, 1.5): transform (1 - (µ/(s+µ))²)/s
            let mu = 1.5;
            let tail = e.invert(t, |s| Ok((1.0 - (mu / (s + mu)).powi(2)) / s)).unwrap();
            let want = (-mu * t).exp() * (1.0 + mu * t);
            assert!((tail - want).abs() < 1e-7, "t = {t}: {tail} vs {want}");
        }
    }

    #[test]
    fn longer_series_is_at_least_as_good() {
        let e = Euler { n: 38, ..Euler::default() };
        let f = e.invert(2.0, |s| Ok(1.0 / (s * s + 1.0))).unwrap();
        assert!((f - 2f64.sin()).abs() < 1e-7);
    }

    #[test]
    fn rejects_nonpositive_time() {
        assert!(Euler::default().invert(0.0, |s| Ok(1.0 / s)).is_err());
    }
}
