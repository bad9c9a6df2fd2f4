//! Exponential bounds on the stationary tail of Buffer 2.
//!
//! Buffer 2 is turned into a constant-output queue by adding a compensating
//! source driven by the boundary jump chain of Buffer 1. Its effective
//! bandwidth, together with that of the exponential sources, fixes the decay
//! rate η; the prefactors come from the Perron vector of the kernel at η.

pub mod inversion;
mod xi;

#[cfg(test)]
mod tests;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::buffer1::{assemble_omega, gth_null_vector, Boundary, BoundaryState, Buffer1Model, Exit, RowGroup};
use crate::error::{FluidError, Result};
use crate::mamcore::RICCATI_TOL;
use crate::model::ModelParams;
use crate::scalar::Scalar;

pub use inversion::Euler;
pub use xi::{FailureClass, XiEntry};

/// Input rate of the compensating source in every boundary state, in layout order.
///
/// Sticky states at 0 and x* pass their whole input `iR1` to Buffer 2's share;
/// states leaving 0 upward or x* downward run the lower band (output `c1`);
/// everything in the upper band or at V runs at full capacity `c`.
pub fn compensating_rates(params: &ModelParams, states: &[BoundaryState]) -> Vec<f64> {
    states
        .iter()
        .map(|st| match (st.boundary, st.exit) {
            (Boundary::Cap, _) => params.c(),
            (_, Exit::Sticky) => st.phase as f64 * params.r1,
            (Boundary::Zero, Exit::Up) | (Boundary::Star, Exit::Down) => params.c1,
            (Boundary::Star, Exit::Up) => params.c(),
            (Boundary::Zero, Exit::Down) => unreachable!("no downward exit at 0"),
        })
        .collect()
}

/// Effective bandwidth of one exponential ON-OFF source with peak `r`,
/// ON-to-OFF rate `alpha` and OFF-to-ON rate `beta`.
pub fn eb_exponential(v: f64, r: f64, alpha: f64, beta: f64) -> f64 {
    let q = r * v - alpha - beta;
    let root = (q * q + 4.0 * beta * r * v).sqrt();
    if q >= 0.0 {
        (q + root) / (2.0 * v)
    } else {
        // rationalized to avoid cancellation for small v
        2.0 * beta * r / (root - q)
    }
}

/// Largest real part among the eigenvalues.
pub fn chi(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Semi-Markov compensating source on the boundary states of Buffer 1.
#[derive(Debug, Clone)]
pub struct CompensatingSource {
    pub model: Buffer1Model,
    pub states: Vec<BoundaryState>,
    pub a_dot: Vec<f64>,
    /// Jump chain: the kernel transform at 0.
    pub omega: DMatrix<f64>,
}

impl CompensatingSource {
    pub fn new(params: &ModelParams, tol: f64) -> Result<Self> {
        let model = Buffer1Model::new(params, tol)?;
        let chain = assemble_omega(&model)?;
        let states = chain.layout.states.clone();
        let a_dot = compensating_rates(params, &states);
        Ok(Self { model, states, a_dot, omega: chain.omega })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn params(&self) -> &ModelParams {
        &self.model.params
    }

    /// Kernel transform at a common argument.
    pub fn kernel_lst<T: Scalar>(&self, s: T) -> Result<DMatrix<T>> {
        self.model.kernel_lst(s)
    }

    /// Kernel transform with only the rows of `group` filled in.
    pub fn group_lst<T: Scalar>(&self, group: RowGroup, s: T) -> Result<DMatrix<T>> {
        self.model.kernel_group(group, s)
    }

    /// Φ(v, u): row `i` of the kernel transform at `v(u − ȧ_i)`.
    pub fn phi(&self, v: f64, u: f64) -> Result<DMatrix<f64>> {
        let phi = self.model.kernel_with(|k| v * (u - self.a_dot[k]))?;
        if phi.iter().any(|x| !x.is_finite() || *x < -1e-12) {
            return Err(FluidError::Divergence { what: "kernel transform", s: v * (u - self.max_rate()) });
        }
        Ok(phi)
    }

    fn max_rate(&self) -> f64 {
        self.a_dot.iter().cloned().fold(0.0, f64::max)
    }

    /// χ(Φ(v, u)), with `+∞` left of the abscissa of convergence.
    pub fn chi_at(&self, v: f64, u: f64) -> Result<f64> {
        match self.phi(v, u) {
            Ok(m) => Ok(chi(&m)),
            Err(FluidError::Divergence { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    /// Effective bandwidth of the compensating source: the `u` in `[0, c]`
    /// with χ(Φ(v, u)) = 1.
    pub fn eb_compensating(&self, v: f64) -> Result<f64> {
        if !(v > 0.0) {
            return Err(FluidError::Domain(format!("effective bandwidth needs v > 0, got {v}")));
        }
        let c = self.params().c();
        let (mut lo, mut hi) = (0.0, c);
        if self.chi_at(v, hi)? > 1.0 {
            return Err(FluidError::Bracket { what: "compensating effective bandwidth", detail: format!("χ > 1 at u = c (v = {v})") });
        }
        if self.chi_at(v, lo)? < 1.0 {
            return Ok(0.0);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.chi_at(v, mid)? > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // `hi` always has a convergent transform, even when the root sits at
        // the abscissa and χ jumps there
        Ok(hi)
    }

    /// `eb_c(v) + N eb_e(v) − c`.
    pub fn eta_residual(&self, v: f64) -> Result<f64> {
        let p = self.params();
        Ok(self.eb_compensating(v)? + p.n as f64 * eb_exponential(v, p.r2, p.alpha2, p.beta2) - p.c())
    }

    /// Smallest positive root of [`CompensatingSource::eta_residual`], by bisection.
    pub fn solve_eta(&self, tol: f64) -> Result<f64> {
        let mut lo = 1e-6;
        if self.eta_residual(lo)? >= 0.0 {
            return Err(FluidError::Bracket {
                what: "decay rate",
                detail: "system too heavily loaded for bracket: residual already nonnegative near 0".into(),
            });
        }
        // The residual is increasing; walk up until it changes sign.
        let mut hi = 1.0;
        let mut r_hi = self.eta_residual(hi)?;
        while r_hi < 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e6 {
                return Err(FluidError::Bracket {
                    what: "decay rate",
                    detail: "system too lightly loaded for bracket: unbounded decay (no sign change up to 1e6)".into(),
                });
            }
            r_hi = self.eta_residual(hi)?;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let r = self.eta_residual(mid)?;
            if r.abs() < tol || hi - lo < 1e-15 * hi {
                return Ok(mid);
            }
            if r < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Mean sojourn time in each state, from the slope of the kernel transform at 0.
    pub fn sojourn_means(&self) -> Result<DVector<f64>> {
        let slope = |h: f64| -> Result<DMatrix<f64>> {
            Ok((self.kernel_lst(h)? - self.kernel_lst(-h)?) / (2.0 * h))
        };
        let (d1, d2) = (slope(1e-4)?, slope(5e-5)?);
        let d = (d2 * 4.0 - d1) / 3.0;
        let tau = DVector::from_iterator(self.len(), d.row_iter().map(|r| -r.sum()));
        if tau.iter().any(|t| !(*t > 0.0)) {
            return Err(FluidError::Domain(format!("nonpositive mean sojourn time: {tau}")));
        }
        Ok(tau)
    }

    /// Stationary vector of the jump chain, summing to 1.
    pub fn jump_stationary(&self) -> Result<DVector<f64>> {
        let q = &self.omega - DMatrix::identity(self.len(), self.len());
        let w = gth_null_vector(&q)?;
        let s = w.sum();
        Ok(w / s)
    }

    /// Failure rate `λ_ij(x)` of the sojourn in `i` that ends in `j`.
    pub fn failure_rate(&self, i: usize, j: usize, x: f64, euler: &Euler) -> Result<f64> {
        xi::failure_rate(self, i, j, x, euler)
    }
}

/// Settings for [`Buffer2Bounds::compute`].
#[derive(Debug, Clone)]
pub struct Buffer2Options {
    pub tol: f64,
    pub eta_tol: f64,
    /// Points of the x-grid used for failure rates and Ξ.
    pub grid_points: usize,
    pub euler: Euler,
}

impl Default for Buffer2Options {
    fn default() -> Self {
        Self { tol: RICCATI_TOL, eta_tol: 1e-10, grid_points: 200, euler: Euler::default() }
    }
}

/// Decay rate, prefactors and every intermediate of the Buffer-2 bounds.
#[derive(Debug, Clone)]
pub struct Buffer2Bounds {
    pub states: Vec<BoundaryState>,
    pub a_dot: Vec<f64>,
    /// Jump chain of the boundary states.
    pub jump: DMatrix<f64>,
    pub eta: f64,
    pub eb_c: f64,
    pub eb_e: f64,
    /// Φ(η, eb_c(η)) and its largest real eigenvalue.
    pub phi: DMatrix<f64>,
    pub chi: f64,
    pub omega: DVector<f64>,
    pub tau: DVector<f64>,
    pub p: DVector<f64>,
    pub h: DVector<f64>,
    /// `η(ȧ_i − eb_c(η))`.
    pub theta: DVector<f64>,
    pub xi: Vec<XiEntry>,
    pub h_c: f64,
    /// `(R2 / (eb_e α2))^N H_c`.
    pub prefactor: f64,
    pub k_lower: f64,
    pub k_upper: f64,
}

/// `D(s)` of the bound prefactors.
pub fn d_factor(params: &ModelParams, eb_e: f64, s: usize) -> f64 {
    let (a, b, r) = (params.alpha2, params.beta2, params.r2);
    ((a + b) / (a * b)).powi(s as i32) * ((a + b) * (r - eb_e) / (eb_e * a * a)).powi((params.n - s) as i32)
}

/// Left eigenvector for eigenvalue `lambda`, nonnegative and summing to 1.
fn left_perron(m: &DMatrix<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = m.nrows();
    let a = m.transpose() - DMatrix::identity(n, n) * lambda;
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or(FluidError::Singular("left eigenvector"))?;
    let k = svd.singular_values.imin();
    let mut h: DVector<f64> = vt.row(k).transpose();
    if h.sum() < 0.0 {
        h = -h;
    }
    let scale = h.iter().map(|x| x.abs()).sum::<f64>();
    if h.iter().any(|x| *x < -1e-8 * scale) {
        return Err(FluidError::Eigen { what: "left Perron vector has mixed signs", value: lambda });
    }
    Ok(h.map(|x| x.max(0.0)) / scale)
}

impl Buffer2Bounds {
    pub fn compute(params: &ModelParams, opts: &Buffer2Options) -> Result<Self> {
        let src = CompensatingSource::new(params, opts.tol)?;
        Self::from_source(&src, opts)
    }

    pub fn from_source(src: &CompensatingSource, opts: &Buffer2Options) -> Result<Self> {
        let p = src.params();
        let eta = src.solve_eta(opts.eta_tol)?;
        let eb_c = src.eb_compensating(eta)?;
        let eb_e = eb_exponential(eta, p.r2, p.alpha2, p.beta2);
        log::info!("decay rate {eta:.6} (eb_c {eb_c:.6}, eb_e {eb_e:.6})");

        let phi = src.phi(eta, eb_c)?;
        let chi = chi(&phi);
        if (chi - 1.0).abs() > 1e-6 {
            return Err(FluidError::Eigen { what: "Perron root of Φ at the decay rate", value: chi });
        }
        let h = left_perron(&phi, chi)?;
        let omega = src.jump_stationary()?;
        let tau = src.sojourn_means()?;
        let wt = omega.component_mul(&tau);
        let p_vec = &wt / wt.sum();
        let theta = DVector::from_iterator(src.len(), src.a_dot.iter().map(|a| eta * (a - eb_c)));

        let mut h_c = 0.0;
        for i in 0..src.len() {
            let excess = phi.row(i).sum() - 1.0;
            // (Σ_j Φ_ij − 1)/θ_i tends to τ_i as θ_i → 0
            let term = if theta[i].abs() < 1e-9 { tau[i] } else { excess / theta[i] };
            h_c += h[i] * term;
        }
        let prefactor = (p.r2 / (eb_e * p.alpha2)).powi(p.n as i32) * h_c;

        let ctx = xi::XiContext { src, phi: &phi, h: &h, tau: &tau, p: &p_vec, theta: &theta, opts };
        let xi = xi::all_coefficients(&ctx)?;

        let c = p.c();
        let mut best_max = f64::NEG_INFINITY;
        let mut best_min = f64::INFINITY;
        for s in 1..=p.n {
            let d = d_factor(p, eb_e, s);
            for e in xi.iter().filter(|e| src.a_dot[e.i] + s as f64 * p.r2 > c) {
                best_max = best_max.max(d * e.max);
                best_min = best_min.min(d * e.min);
            }
        }
        if !best_max.is_finite() || !best_min.is_finite() {
            return Err(FluidError::Domain("no admissible (s, i, j) for the bound prefactors".into()));
        }
        let k_lower = prefactor / best_max;
        let k_upper = prefactor / best_min;
        if !(k_lower > 0.0 && k_lower <= k_upper) {
            return Err(FluidError::Domain(format!("inconsistent prefactors: K_lower {k_lower}, K_upper {k_upper}")));
        }
        Ok(Self {
            states: src.states.clone(),
            a_dot: src.a_dot.clone(),
            jump: src.omega.clone(),
            eta,
            eb_c,
            eb_e,
            phi,
            chi,
            omega,
            tau,
            p: p_vec,
            h,
            theta,
            xi,
            h_c,
            prefactor,
            k_lower,
            k_upper,
        })
    }

    /// `(K_lower e^{−ηx}, K_upper e^{−ηx})`.
    pub fn tail_bounds(&self, x: f64) -> (f64, f64) {
        let e = (-self.eta * x).exp();
        (self.k_lower * e, self.k_upper * e)
    }
}

/// Invert several transforms that share their kernel evaluations.
///
/// `f_hat(s, kernel)` maps a node and the kernel rows of `group` at that node to
/// the transform values; returns one vector of time-domain values per `x`.
pub(crate) fn invert_group(
    src: &CompensatingSource,
    group: RowGroup,
    xs: &[f64],
    euler: &Euler,
    f_hat: impl Fn(Complex64, &DMatrix<Complex64>) -> Vec<Complex64> + Sync,
) -> Result<Vec<Vec<f64>>> {
    xs.par_iter()
        .map(|&x| {
            let nodes = euler.nodes(x);
            let mut columns: Vec<Vec<Complex64>> = Vec::new();
            for s in nodes {
                let k = src.group_lst(group, s)?;
                let vals = f_hat(s, &k);
                if columns.is_empty() {
                    columns = vec![Vec::with_capacity(euler.n + euler.m + 1); vals.len()];
                }
                for (c, v) in columns.iter_mut().zip(vals) {
                    c.push(v);
                }
            }
            columns.iter().map(|c| euler.combine(x, c)).collect::<Result<Vec<f64>>>()
        })
        .collect()
}
