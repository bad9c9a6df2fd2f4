//! Failure rates of the compensating source and the Ξ coefficients.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{invert_group, Buffer2Options, CompensatingSource, Euler};
use crate::buffer1::{Exit, RowGroup};
use crate::error::{FluidError, Result};

/// Shape of the failure rate `λ_ij` on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    Constant,
    Increasing,
    Decreasing,
    Neither,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XiEntry {
    pub i: usize,
    pub j: usize,
    pub class: FailureClass,
    pub min: f64,
    pub max: f64,
    /// Failure rate at the end of the grid (exact for exponential sojourns).
    pub lambda_inf: f64,
}

pub(crate) struct XiContext<'a> {
    pub src: &'a CompensatingSource,
    pub phi: &'a DMatrix<f64>,
    pub h: &'a DVector<f64>,
    pub tau: &'a DVector<f64>,
    pub p: &'a DVector<f64>,
    pub theta: &'a DVector<f64>,
    pub opts: &'a Buffer2Options,
}

const MONOTONE_TOL: f64 = 1e-6;
const MIN_DENOM: f64 = 1e-12;

pub(crate) fn classify(lambda: &[f64]) -> FailureClass {
    let scale = lambda.iter().map(|l| l.abs()).fold(0.0, f64::max).max(1e-300);
    let tol = MONOTONE_TOL * scale;
    let inc = lambda.windows(2).all(|w| w[1] >= w[0] - tol);
    let dec = lambda.windows(2).all(|w| w[1] <= w[0] + tol);
    match (inc, dec) {
        (true, true) => FailureClass::Constant,
        (true, false) => FailureClass::Increasing,
        (false, true) => FailureClass::Decreasing,
        (false, false) => FailureClass::Neither,
    }
}

/// Grid on `(0, 1.1 x99]` for a group of rows, where `x99 = τ ln 100`.
pub(crate) fn grid(tau_max: f64, points: usize) -> Vec<f64> {
    let end = 1.1 * tau_max * 100f64.ln();
    (1..=points).map(|k| end * k as f64 / points as f64).collect()
}

pub(crate) fn all_coefficients(ctx: &XiContext<'_>) -> Result<Vec<XiEntry>> {
    let src = ctx.src;
    let lay = &src.model.layout;
    let mut out = Vec::new();
    for (group, range) in &lay.groups {
        if range.is_empty() {
            continue;
        }
        let pairs: Vec<(usize, usize)> =
            range.clone().flat_map(|i| (0..src.len()).filter(move |&j| src.omega[(i, j)] > 0.0).map(move |j| (i, j))).collect();
        if pairs.is_empty() {
            continue;
        }
        if lay.states[range.start].exit == Exit::Sticky {
            for (i, j) in pairs {
                let ph = lay.states[i].phase;
                let mu = -src.model.generator[(ph, ph)];
                let f = mu / (mu - ctx.theta[i]);
                let xi = weight(ctx, i) * f;
                out.push(XiEntry { i, j, class: FailureClass::Constant, min: xi, max: xi, lambda_inf: mu });
            }
        } else {
            out.extend(group_coefficients(ctx, *group, range.clone(), &pairs)?);
        }
    }
    Ok(out)
}

fn weight(ctx: &XiContext<'_>, i: usize) -> f64 {
    ctx.h[i] * ctx.tau[i] / ctx.p[i]
}

fn group_coefficients(
    ctx: &XiContext<'_>,
    group: RowGroup,
    rows: std::ops::Range<usize>,
    pairs: &[(usize, usize)],
) -> Result<Vec<XiEntry>> {
    let src = ctx.src;
    let tau_max = rows.clone().map(|i| ctx.tau[i]).fold(0.0, f64::max);
    let xs = grid(tau_max, ctx.opts.grid_points);
    let omega = &src.omega;
    let phi = ctx.phi;
    let theta = ctx.theta;
    // per pair: density, remaining mass, discounted remaining mass
    let vals = invert_group(src, group, &xs, &ctx.opts.euler, |s, k| {
        let mut v = Vec::with_capacity(3 * pairs.len());
        for &(i, j) in pairs {
            let kij = k[(i, j)];
            v.push(kij);
            v.push((Complex64::from(omega[(i, j)]) - kij) / s);
            v.push((Complex64::from(phi[(i, j)]) - kij) / (s + theta[i]));
        }
        v
    })?;

    let mut out = Vec::with_capacity(pairs.len());
    for (n, &(i, j)) in pairs.iter().enumerate() {
        let mut lambda = Vec::new();
        let mut f = vec![phi[(i, j)] / omega[(i, j)]];
        for (k, row) in vals.iter().enumerate() {
            let (dens, den, num) = (row[3 * n], row[3 * n + 1], row[3 * n + 2]);
            if den < MIN_DENOM * omega[(i, j)].max(1.0) {
                log::info!("pair ({}, {}): remaining mass vanishes at x = {:.4}, grid truncated", src.states[i], src.states[j], xs[k]);
                break;
            }
            lambda.push((dens / den).max(0.0));
            f.push(num / den);
        }
        if lambda.len() < 10 || f.iter().any(|v| !v.is_finite()) {
            log::warn!("pair ({}, {}) excluded: failure rate not resolved on the grid", src.states[i], src.states[j]);
            continue;
        }
        let class = classify(&lambda);
        let lambda_inf = *lambda.last().expect("nonempty");
        let f0 = f[0];
        let f_inf = lambda_inf / (lambda_inf - theta[i]);
        let grid_range = || {
            let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        };
        let (lo, hi) = if lambda_inf <= theta[i] {
            grid_range()
        } else {
            match class {
                FailureClass::Increasing if theta[i] > 0.0 => (f_inf, f0),
                FailureClass::Decreasing if theta[i] <= 0.0 => (f_inf, f0),
                FailureClass::Increasing | FailureClass::Decreasing => (f0, f_inf),
                FailureClass::Constant => (f0.min(f_inf), f0.max(f_inf)),
                FailureClass::Neither => grid_range(),
            }
        };
        let w = weight(ctx, i);
        out.push(XiEntry { i, j, class, min: w * lo, max: w * hi, lambda_inf });
    }
    Ok(out)
}

/// `λ_ij(x)` by inversion of the kernel transform.
pub fn failure_rate(src: &CompensatingSource, i: usize, j: usize, x: f64, euler: &Euler) -> Result<f64> {
    let om = src.omega[(i, j)];
    if !(om > 0.0) {
        return Err(FluidError::Domain(format!("no transition from {} to {}", src.states[i], src.states[j])));
    }
    let group = src.model.layout.group_of(i);
    let v = invert_group(src, group, &[x], euler, |s, k| vec![k[(i, j)], (Complex64::from(om) - k[(i, j)]) / s])?;
    let (dens, den) = (v[0][0], v[0][1]);
    if den < MIN_DENOM {
        return Err(FluidError::Domain(format!("failure rate beyond the end of the sojourn law at x = {x}")));
    }
    Ok((dens / den).max(0.0))
}
