//! Scalar closed forms for a single source and a finite Buffer 1.
//!
//! Every intermediate is kept so the general block machinery can be checked
//! against it.

use crate::error::{FluidError, Result};
use crate::model::{check_assumptions, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct SingleSourceFinite {
    pub psi_hat1: f64,
    pub u_hat1: f64,
    pub k1: f64,
    pub lambda_uu: f64,
    pub psi_us: f64,
    pub psi_hat_du: f64,
    pub lambda_hat_ds: f64,
    pub psi_hat2: f64,
    pub u_hat2: f64,
    pub k2: f64,
    pub lambda_us: f64,
    pub psi_ud: f64,
    pub psi_hat_ds: f64,
    pub lambda_hat_dd: f64,
    /// Jump chain on the two sticky states (0 with the source OFF, V with it ON).
    pub omega_circle: [[f64; 2]; 2],
    pub x_v: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub kappa: f64,
    root1: f64,
    root2: f64,
    params: ModelParams,
}

/// Finite-band passage quantities from `(Ψ̂, Û)` and band length `b`.
fn band(psi_hat: f64, u_hat: f64, b: f64) -> (f64, f64, f64, f64) {
    let e = (u_hat * b).exp();
    let den = 1.0 - psi_hat * e;
    let lambda = (1.0 - psi_hat) / ((-u_hat * b).exp() - psi_hat);
    let psi = (1.0 - e) / den;
    let psi_hat_b = (psi_hat - psi_hat * e) / den;
    let lambda_hat = (1.0 - psi_hat) / den;
    (lambda, psi, psi_hat_b, lambda_hat)
}

/// Minimal `(Ψ̂, Û)`: an upward-drifting band returns up with probability one.
fn minimal(root: f64, u: f64) -> (f64, f64) {
    if root <= 1.0 {
        (root, u)
    } else {
        (1.0, 0.0)
    }
}

/// Expected visits `(N+ plus, N+ minus, N- plus, N- minus)` at `w` in a band of
/// length `b` with `Ψ = 1`, `K̂ = 0`.
fn visits(k: f64, psi_hat: f64, b: f64, w: f64) -> [f64; 4] {
    let ekb = (k * b).exp();
    let ekw = (k * w).exp();
    let den = 1.0 - psi_hat * ekb;
    [
        (ekw - psi_hat * ekb) / den,
        (ekw - ekb) / den,
        (psi_hat - psi_hat * ekw) / den,
        (1.0 - psi_hat * ekw) / den,
    ]
}

/// `∫_a^b` of [`visits`].
fn visits_integral(k: f64, psi_hat: f64, len: f64, a: f64, b: f64) -> [f64; 4] {
    let ekb = (k * len).exp();
    let den = 1.0 - psi_hat * ekb;
    let ie = ((k * b).exp() - (k * a).exp()) / k;
    let w = b - a;
    [
        (ie - psi_hat * ekb * w) / den,
        (ie - ekb * w) / den,
        (psi_hat * w - psi_hat * ie) / den,
        (w - psi_hat * ie) / den,
    ]
}

impl SingleSourceFinite {
    pub fn new(p: &ModelParams) -> Result<Self> {
        check_assumptions(p).into_result()?;
        let v = match (p.n, p.v) {
            (1, Some(v)) => v,
            _ => return Err(FluidError::Domain("closed form needs N = 1 and a finite buffer".into())),
        };
        let (a1, b1, r1, c1, c, xs) = (p.alpha1, p.beta1, p.r1, p.c1, p.c(), p.x_star);

        // The finite-band formulas hold for this root of the quadratic whatever
        // the drift; it is the minimal solution only when the band drifts down.
        let root1 = b1 * (r1 - c1) / (a1 * c1);
        let u_root1 = (-a1 * c1 + b1 * (r1 - c1)) / (c1 * (r1 - c1));
        let k1 = -a1 / (r1 - c1) + b1 / c1;
        let (lambda_uu, psi_us, psi_hat_du, lambda_hat_ds) = band(root1, u_root1, xs);
        let (psi_hat1, u_hat1) = minimal(root1, u_root1);

        let root2 = b1 * (r1 - c) / (a1 * c);
        let u_root2 = (-a1 * c + b1 * (r1 - c)) / (c * (r1 - c));
        let k2 = -a1 / (r1 - c) + b1 / c;
        let (lambda_us, psi_ud, psi_hat_ds, lambda_hat_dd) = band(root2, u_root2, v - xs);
        let (psi_hat2, u_hat2) = minimal(root2, u_root2);

        let den = 1.0 - psi_ud * psi_hat_du;
        let omega_circle = [
            [psi_us + lambda_uu * psi_ud * lambda_hat_ds / den, lambda_uu * lambda_us / den],
            [lambda_hat_dd * lambda_hat_ds / den, psi_hat_ds + lambda_hat_dd * psi_hat_du * lambda_us / den],
        ];
        let x_v = b1 * (1.0 - omega_circle[0][0]) / (a1 * omega_circle[1][0]);

        let g = 1.0 / (1.0 - psi_hat_du * psi_ud);
        let gamma1 = g * (b1 / c1 * psi_ud * lambda_uu + a1 * x_v * lambda_hat_dd / c1);
        let gamma2 = g * (b1 / (r1 - c) * lambda_uu + a1 * x_v / (r1 - c) * psi_hat_du * lambda_hat_dd);
        let gamma3 = a1 / c * x_v;

        let mut out = Self {
            psi_hat1,
            u_hat1,
            k1,
            lambda_uu,
            psi_us,
            psi_hat_du,
            lambda_hat_ds,
            psi_hat2,
            u_hat2,
            k2,
            lambda_us,
            psi_ud,
            psi_hat_ds,
            lambda_hat_dd,
            omega_circle,
            x_v,
            gamma1,
            gamma2,
            gamma3,
            kappa: 1.0,
            root1,
            root2,
            params: p.clone(),
        };
        let total = 1.0 + x_v + out.lower_integral(0.0, xs) + out.upper_integral(xs, v);
        out.kappa = 1.0 / total;
        Ok(out)
    }

    fn v(&self) -> f64 {
        self.params.v.expect("finite buffer")
    }

    /// Unnormalized lower-band density, `[phase 0, phase 1]`.
    pub fn y1(&self, x: f64) -> [f64; 2] {
        let p = &self.params;
        let n = visits(self.k1, self.root1, p.x_star, x);
        let plus = p.beta1 * n[0] + p.c1 * self.gamma1 * n[2];
        let minus = p.beta1 * n[1] + p.c1 * self.gamma1 * n[3];
        [minus / p.c1, plus / (p.r1 - p.c1)]
    }

    /// Unnormalized upper-band density, `[phase 0, phase 1]`.
    pub fn y2(&self, x: f64) -> [f64; 2] {
        let p = &self.params;
        let c = p.c();
        let n = visits(self.k2, self.root2, self.v() - p.x_star, x - p.x_star);
        let plus = (p.r1 - c) * self.gamma2 * n[0] + c * self.gamma3 * n[2];
        let minus = (p.r1 - c) * self.gamma2 * n[1] + c * self.gamma3 * n[3];
        [minus / c, plus / (p.r1 - c)]
    }

    fn lower_integral(&self, a: f64, b: f64) -> f64 {
        let p = &self.params;
        let n = visits_integral(self.k1, self.root1, p.x_star, a, b);
        let plus = p.beta1 * n[0] + p.c1 * self.gamma1 * n[2];
        let minus = p.beta1 * n[1] + p.c1 * self.gamma1 * n[3];
        minus / p.c1 + plus / (p.r1 - p.c1)
    }

    fn upper_integral(&self, a: f64, b: f64) -> f64 {
        let p = &self.params;
        let c = p.c();
        let xs = p.x_star;
        let n = visits_integral(self.k2, self.root2, self.v() - xs, a - xs, b - xs);
        let plus = (p.r1 - c) * self.gamma2 * n[0] + c * self.gamma3 * n[2];
        let minus = (p.r1 - c) * self.gamma2 * n[1] + c * self.gamma3 * n[3];
        minus / c + plus / (p.r1 - c)
    }

    /// `P(X > x)`.
    pub fn tail(&self, x: f64) -> f64 {
        let p = &self.params;
        let v = self.v();
        if x < 0.0 {
            1.0
        } else if x >= v {
            0.0
        } else if x >= p.x_star {
            self.kappa * (self.upper_integral(x, v) + self.x_v)
        } else {
            1.0 - self.kappa * (1.0 + self.lower_integral(0.0, x))
        }
    }

    /// Masses at 0 and at V.
    pub fn masses(&self) -> (f64, f64) {
        (self.kappa, self.kappa * self.x_v)
    }
}
