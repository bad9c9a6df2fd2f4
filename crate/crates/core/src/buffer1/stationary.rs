use nalgebra::{DMatrix, DVector};

use super::{assemble_omega, censor, solve_sticky_weights, Boundary, BoundaryChain, BoundaryState, Buffer1Model, CensoredChain};
use crate::error::{FluidError, Result};
use crate::mamcore::{
    expected_visits_finite, expected_visits_infinite, finite_passage, visits_integral_finite, visits_integral_infinite,
    FinitePassage, PassageOperators, RICCATI_TOL,
};
use crate::model::{BandBlocks, ModelParams};

/// Fluid fluxes entering the bands at their boundaries (per unit time, not
/// yet normalized).
#[derive(Debug, Clone)]
pub struct Fluxes {
    /// Upward flux leaving 0, over the lower-band plus phases.
    pub from_zero: DVector<f64>,
    /// Downward flux leaving x*, over the phases that go down there.
    pub down: DVector<f64>,
    /// Upward flux leaving x*, over the phases that go up there.
    pub up: DVector<f64>,
    /// Downward flux leaving V, over the upper-band minus phases.
    pub from_cap: Option<DVector<f64>>,
}

/// Density coefficients: fluxes divided by the matching absolute rates.
#[derive(Debug, Clone)]
pub struct DensityCoeffs {
    pub d: DVector<f64>,
    pub u: DVector<f64>,
    /// Only for a finite buffer.
    pub gamma3: Option<DVector<f64>>,
}

fn cols(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    m.select_columns(idx)
}

fn positions(of: &[usize], inside: &[usize]) -> Vec<usize> {
    of.iter().map(|p| inside.iter().position(|q| q == p).expect("phase subset")).collect()
}

fn row_times(x: &DVector<f64>, t: &DMatrix<f64>, rows: &[usize], c: &[usize]) -> DVector<f64> {
    let mut out = DVector::zeros(c.len());
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in c.iter().enumerate() {
            out[b] += x[a] * t[(i, j)];
        }
    }
    out
}

/// Upper-band passage data used by the flux balance.
pub enum UpperPassage<'a> {
    Unbounded(&'a PassageOperators<f64>),
    Finite(&'a FinitePassage<f64>),
}

/// Solve the flux balance at x* given the sticky weights.
///
/// `x0`, `x_star`, `x_cap` are the sticky weights at 0, x* and V in phase order.
pub fn density_coeffs(
    model: &Buffer1Model,
    lower: &FinitePassage<f64>,
    upper: UpperPassage<'_>,
    x0: &DVector<f64>,
    x_star: &DVector<f64>,
    x_cap: Option<&DVector<f64>>,
) -> Result<(Fluxes, DensityCoeffs)> {
    let part = &model.partition;
    let t = &model.generator;
    let sd = &part.star_down;
    let su = &part.star_up;
    let ss = &part.star_sticky;

    let from_zero = row_times(x0, t, &part.zero_sticky, &part.lower_plus);
    let mut c_down = row_times(x_star, t, ss, sd);
    let mut c_up = row_times(x_star, t, ss, su);

    let u_cols_lower = positions(su, &part.lower_plus);
    let d_cols_upper = positions(sd, &part.upper_minus);
    c_up += (from_zero.transpose() * cols(&lower.lambda_pp, &u_cols_lower)).transpose();

    let (psi_up, from_cap) = match upper {
        UpperPassage::Unbounded(ops) => (cols(&ops.psi, &d_cols_upper), None),
        UpperPassage::Finite(f) => {
            let xv = x_cap.ok_or(FluidError::Domain("finite buffer needs weights at V".into()))?;
            let cap = row_times(xv, t, part.cap_sticky.as_ref().unwrap(), &part.upper_minus);
            c_down += (cap.transpose() * cols(&f.lambda_hat_mm, &d_cols_upper)).transpose();
            (cols(&f.psi_pm, &d_cols_upper), Some(cap))
        }
    };
    let psi_hat_down = cols(&lower.psi_hat_mp, &u_cols_lower);

    // [down, up] · [[I, −Ψ̂], [−Ψ, I]] = [c_down, c_up]
    let (nd, nu) = (sd.len(), su.len());
    let mut m = DMatrix::<f64>::identity(nd + nu, nd + nu);
    m.view_mut((0, nd), (nd, nu)).copy_from(&(-&psi_hat_down));
    m.view_mut((nd, 0), (nu, nd)).copy_from(&(-&psi_up));
    let mut rhs = DVector::zeros(nd + nu);
    rhs.rows_mut(0, nd).copy_from(&c_down);
    rhs.rows_mut(nd, nu).copy_from(&c_up);
    let sol = m.transpose().lu().solve(&rhs).ok_or(FluidError::Singular("flux balance at x*"))?;
    // backward error: large weights are fine when level 0 is rarely reached
    let res = (sol.transpose() * &m - rhs.transpose()).amax();
    if !(res <= 1e-10 * (m.amax() * sol.amax()).max(rhs.amax()).max(1.0)) {
        return Err(FluidError::Singular("flux balance at x*"));
    }
    let down: DVector<f64> = sol.rows(0, nd).into_owned();
    let up: DVector<f64> = sol.rows(nd, nu).into_owned();

    let lower_minus_rates = select(&model.lower.c_minus, &positions(sd, &part.lower_minus));
    let upper_plus_rates = select(&model.upper.c_plus, &positions(su, &part.upper_plus));
    let coeffs = DensityCoeffs {
        d: down.component_div(&lower_minus_rates),
        u: up.component_div(&upper_plus_rates),
        gamma3: from_cap.as_ref().map(|v| v.component_div(&model.upper.c_minus)),
    };
    Ok((Fluxes { from_zero, down, up, from_cap }, coeffs))
}

fn select(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Stationary distribution of Buffer 1.
#[derive(Debug, Clone)]
pub struct StationaryBuffer1 {
    pub model: Buffer1Model,
    pub chain: BoundaryChain,
    pub censored: CensoredChain,
    /// Unnormalized sticky weights, in the order of `censored.sticky`.
    pub x_s: DVector<f64>,
    pub kappa: f64,
    pub fluxes: Fluxes,
    pub coeffs: DensityCoeffs,
    pub lower_ops: PassageOperators<f64>,
    pub upper_ops: PassageOperators<f64>,
    pub lower_passage: FinitePassage<f64>,
    pub upper_passage: Option<FinitePassage<f64>>,
    int_lower: f64,
    int_upper: f64,
}

fn scatter(v: &DVector<f64>, phases: &[usize], rates: &[f64], n: usize) -> DVector<f64> {
    let mut out = DVector::zeros(n);
    for (k, &ph) in phases.iter().enumerate() {
        out[ph] += v[k] / rates[k];
    }
    out
}

fn scatter_sum(v: &DVector<f64>, rates: &[f64]) -> f64 {
    v.iter().zip(rates).map(|(a, r)| a / r).sum()
}

impl StationaryBuffer1 {
    pub fn solve(params: &ModelParams) -> Result<Self> {
        Self::solve_with_tol(params, RICCATI_TOL)
    }

    pub fn solve_with_tol(params: &ModelParams, tol: f64) -> Result<Self> {
        let model = Buffer1Model::new(params, tol)?;
        let chain = assemble_omega(&model)?;
        let censored = censor(&chain, &model.generator)?;
        let x_s = solve_sticky_weights(&censored)?;
        if x_s.iter().any(|x| *x < -1e-10) {
            return Err(FluidError::NullSpace { what: "sticky weights (negative entry)" });
        }
        let (lower_ops, upper_ops) = model.operators()?;
        let lower_passage = finite_passage(&lower_ops, params.x_star)?;
        let upper_passage = match params.v {
            Some(_) => Some(finite_passage(&upper_ops, model.upper_length())?),
            None => None,
        };

        let n = params.n + 1;
        let mut by_boundary = [DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)];
        for (k, &idx) in censored.sticky.iter().enumerate() {
            let st = chain.layout.states[idx];
            let slot = match st.boundary {
                Boundary::Zero => 0,
                Boundary::Star => 1,
                Boundary::Cap => 2,
            };
            by_boundary[slot][st.phase] = x_s[k];
        }
        let part = &model.partition;
        let pick = |v: &DVector<f64>, idx: &[usize]| select(v, idx);
        let x0 = pick(&by_boundary[0], &part.zero_sticky);
        let xst = pick(&by_boundary[1], &part.star_sticky);
        let xcap = part.cap_sticky.as_ref().map(|c| pick(&by_boundary[2], c));
        let upper = match &upper_passage {
            Some(f) => UpperPassage::Finite(f),
            None => UpperPassage::Unbounded(&upper_ops),
        };
        let (fluxes, coeffs) = density_coeffs(&model, &lower_passage, upper, &x0, &xst, xcap.as_ref())?;

        let mut out = Self {
            model,
            chain,
            censored,
            x_s,
            kappa: f64::NAN,
            fluxes,
            coeffs,
            lower_ops,
            upper_ops,
            lower_passage,
            upper_passage,
            int_lower: 0.0,
            int_upper: 0.0,
        };
        out.int_lower = out.lower_integral(0.0, params.x_star)?;
        out.int_upper = out.upper_integral(params.x_star, params.v.unwrap_or(f64::INFINITY))?;
        if !out.int_upper.is_finite() {
            return Err(FluidError::Domain("upper band density is not integrable (unstable model)".into()));
        }
        out.kappa = 1.0 / (out.x_s.sum() + out.int_lower + out.int_upper);
        Ok(out)
    }

    fn params(&self) -> &ModelParams {
        &self.model.params
    }

    fn lower_rates(&self) -> Vec<f64> {
        self.model.lower.abs_rates_plus_minus()
    }

    fn upper_rates(&self) -> Vec<f64> {
        self.model.upper.abs_rates_plus_minus()
    }

    /// Row vector, in (plus, minus) order, of unnormalized lower-band visits.
    fn lower_row(&self, np: &DMatrix<f64>, nm: &DMatrix<f64>) -> DVector<f64> {
        (self.fluxes.from_zero.transpose() * np + self.fluxes.down.transpose() * nm).transpose()
    }

    fn upper_row_infinite(&self, v: &DMatrix<f64>) -> DVector<f64> {
        (self.fluxes.up.transpose() * v).transpose()
    }

    fn upper_row_finite(&self, np: &DMatrix<f64>, nm: &DMatrix<f64>) -> DVector<f64> {
        let cap = self.fluxes.from_cap.as_ref().expect("finite buffer");
        (self.fluxes.up.transpose() * np + cap.transpose() * nm).transpose()
    }

    /// `∫_a^b` of the unnormalized lower-band density, summed over phases.
    pub fn lower_integral(&self, a: f64, b: f64) -> Result<f64> {
        let (np, nm) = visits_integral_finite(&self.lower_ops, self.params().x_star, a, b)?;
        Ok(scatter_sum(&self.lower_row(&np, &nm), &self.lower_rates()))
    }

    /// `∫_a^b` of the unnormalized upper-band density; `b` may be infinite.
    pub fn upper_integral(&self, a: f64, b: f64) -> Result<f64> {
        let xs = self.params().x_star;
        let row = match self.params().v {
            None => self.upper_row_infinite(&visits_integral_infinite(&self.upper_ops, a - xs, b - xs)?),
            Some(v) => {
                let (np, nm) = visits_integral_finite(&self.upper_ops, v - xs, a - xs, b.min(v) - xs)?;
                self.upper_row_finite(&np, &nm)
            }
        };
        Ok(scatter_sum(&row, &self.upper_rates()))
    }

    /// Stationary density vector (indexed by phase) at a level inside a band.
    pub fn density(&self, x: f64) -> Result<DVector<f64>> {
        let p = self.params();
        let n = p.n + 1;
        let top = p.v.unwrap_or(f64::INFINITY);
        if x == 0.0 || x == p.x_star || x == top {
            return Err(FluidError::AtBoundary(x));
        }
        if x < 0.0 || x > top {
            return Ok(DVector::zeros(n));
        }
        let y = if x < p.x_star {
            let (np, nm) = expected_visits_finite(&self.lower_ops, p.x_star, x)?;
            scatter(&self.lower_row(&np, &nm), &self.model.lower.phases_plus_minus(), &self.lower_rates(), n)
        } else {
            let w = x - p.x_star;
            let row = match p.v {
                None => self.upper_row_infinite(&expected_visits_infinite(&self.upper_ops, w)),
                Some(v) => {
                    let (np, nm) = expected_visits_finite(&self.upper_ops, v - p.x_star, w)?;
                    self.upper_row_finite(&np, &nm)
                }
            };
            scatter(&row, &self.model.upper.phases_plus_minus(), &self.upper_rates(), n)
        };
        Ok(y * self.kappa)
    }

    /// Sum of the unnormalized sticky weights at one boundary.
    fn weight_at(&self, b: Boundary) -> f64 {
        self.censored
            .sticky
            .iter()
            .zip(self.x_s.iter())
            .filter(|(&k, _)| self.chain.layout.states[k].boundary == b)
            .map(|(_, x)| *x)
            .sum()
    }

    /// Probability mass at a boundary level.
    pub fn mass_at(&self, b: Boundary) -> f64 {
        self.kappa * self.weight_at(b)
    }

    /// Probability mass of every sticky boundary state.
    pub fn masses(&self) -> Vec<(BoundaryState, f64)> {
        self.censored
            .sticky
            .iter()
            .zip(self.x_s.iter())
            .map(|(&k, x)| (self.chain.layout.states[k], self.kappa * x))
            .collect()
    }

    /// `P(X > x)`.
    pub fn tail(&self, x: f64) -> Result<f64> {
        let p = self.params();
        let top = p.v.unwrap_or(f64::INFINITY);
        if x < 0.0 {
            return Ok(1.0);
        }
        if x >= top {
            return Ok(0.0);
        }
        if x >= p.x_star {
            let t = self.upper_integral(x, top)? + self.weight_at(Boundary::Cap);
            return Ok(self.kappa * t);
        }
        let below = self.weight_at(Boundary::Zero) + self.lower_integral(0.0, x)?;
        Ok(1.0 - self.kappa * below)
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        Ok(1.0 - self.tail(x)?)
    }

    /// Total probability of masses and band densities (1 up to rounding).
    pub fn total_probability(&self) -> f64 {
        self.kappa * (self.x_s.sum() + self.int_lower + self.int_upper)
    }

    /// Unnormalized integrals of the two band densities.
    pub fn band_integrals(&self) -> (f64, f64) {
        (self.int_lower, self.int_upper)
    }

    pub fn blocks(&self) -> (&BandBlocks, &BandBlocks) {
        (&self.model.lower, &self.model.upper)
    }
}
