//! Matrix-analytic kernels for one band of a fluid queue: first-passage
//! matrices from the algebraic Riccati equations, the derived exponent
//! matrices, finite-band passage probabilities and expected-visit matrices.
//!
//! Every routine is generic over [`Scalar`], so the same code evaluates
//! probabilities (`f64`) and Laplace-Stieltjes transforms at real or complex
//! arguments.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{FluidError, Result};
use crate::model::BandBlocks;
use crate::scalar::{all_finite, lift, max_abs, Scalar};

pub const RICCATI_TOL: f64 = 1e-12;
pub const MAX_NEWTON: usize = 200;
pub const MAX_FUNCTIONAL: usize = 1_000_000;

/// Iterates larger than this are treated as divergence.
const BLOWUP: f64 = 1e10;

/// Rate-scaled generator blocks of a band, shifted by `s` on the diagonal.
#[derive(Debug, Clone)]
pub struct ScaledBlocks<T: Scalar> {
    /// `C+⁻¹(T++ − sI)`.
    pub pp: DMatrix<T>,
    /// `C+⁻¹T+-`.
    pub pm: DMatrix<T>,
    /// `C-⁻¹T-+`.
    pub mp: DMatrix<T>,
    /// `C-⁻¹(T-- − sI)`.
    pub mm: DMatrix<T>,
}

fn scale_rows<T: Scalar>(m: &DMatrix<f64>, rates: &DVector<f64>, shift: Option<T>) -> DMatrix<T> {
    let mut out: DMatrix<T> = lift(m);
    if let Some(s) = shift {
        for i in 0..out.nrows() {
            out[(i, i)] -= s;
        }
    }
    for i in 0..out.nrows() {
        let inv = T::of(1.0 / rates[i]);
        for j in 0..out.ncols() {
            out[(i, j)] *= inv;
        }
    }
    out
}

impl<T: Scalar> ScaledBlocks<T> {
    pub fn new(blocks: &BandBlocks, s: T) -> Self {
        Self {
            pp: scale_rows(&blocks.t_pp, &blocks.c_plus, Some(s)),
            pm: scale_rows(&blocks.t_pm, &blocks.c_plus, None),
            mp: scale_rows(&blocks.t_mp, &blocks.c_minus, None),
            mm: scale_rows(&blocks.t_mm, &blocks.c_minus, Some(s)),
        }
    }
}

/// Coefficients of `A + B X + X D + X E X = 0`.
#[derive(Debug, Clone)]
pub struct Riccati<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub d: DMatrix<T>,
    pub e: DMatrix<T>,
}

impl<T: Scalar> Riccati<T> {
    /// Equation whose minimal solution is the plus-to-minus passage matrix.
    pub fn psi(sb: &ScaledBlocks<T>) -> Self {
        Self { a: sb.pm.clone(), b: sb.pp.clone(), d: sb.mm.clone(), e: sb.mp.clone() }
    }

    /// Equation whose minimal solution is the minus-to-plus passage matrix.
    pub fn psi_hat(sb: &ScaledBlocks<T>) -> Self {
        Self { a: sb.mp.clone(), b: sb.mm.clone(), d: sb.pp.clone(), e: sb.pm.clone() }
    }

    pub fn residual(&self, x: &DMatrix<T>) -> DMatrix<T> {
        &self.a + &self.b * x + x * &self.d + x * &self.e * x
    }

    fn scale(&self) -> f64 {
        [&self.a, &self.b, &self.d, &self.e]
            .iter()
            .map(|m| max_abs(m))
            .fold(1.0, f64::max)
    }
}

/// Matrix of the linear map `H -> P H + H Q` acting on column-major `vec(H)`.
fn sylvester_matrix<T: Scalar>(p: &DMatrix<T>, q: &DMatrix<T>) -> DMatrix<T> {
    let r = p.nrows();
    let c = q.nrows();
    let n = r * c;
    let mut m = DMatrix::zeros(n, n);
    for j in 0..c {
        for i in 0..r {
            let row = j * r + i;
            for k in 0..r {
                m[(row, j * r + k)] += p[(i, k)];
            }
            for l in 0..c {
                m[(row, l * r + i)] += q[(l, j)];
            }
        }
    }
    m
}

fn vec_of<T: Scalar>(m: &DMatrix<T>) -> DVector<T> {
    DVector::from_column_slice(m.as_slice())
}

fn unvec<T: Scalar>(v: &DVector<T>, r: usize, c: usize) -> DMatrix<T> {
    DMatrix::from_column_slice(r, c, v.as_slice())
}

fn diverged<T: Scalar>(x: &DMatrix<T>) -> bool {
    !all_finite(x) || max_abs(x) > BLOWUP
}

/// Newton iteration from zero.
fn newton<T: Scalar>(eq: &Riccati<T>, tol: f64) -> Option<DMatrix<T>> {
    let (r, c) = (eq.a.nrows(), eq.a.ncols());
    let mut x = DMatrix::zeros(r, c);
    let mut polish = 0;
    for it in 0..MAX_NEWTON {
        let res = eq.residual(&x);
        let norm = max_abs(&res);
        if norm < tol {
            // near-critical bands are ill-conditioned: a small residual is not
            // yet a small error, so take two more quadratic steps
            if polish == 2 || norm == 0.0 {
                log::trace!("riccati newton converged in {it} steps");
                return Some(x);
            }
            polish += 1;
        }
        let p = &eq.b + &x * &eq.e;
        let q = &eq.d + &eq.e * &x;
        let m = sylvester_matrix(&p, &q);
        let h = m.lu().solve(&(-vec_of(&res)))?;
        x += unvec(&h, r, c);
        if diverged(&x) {
            return None;
        }
    }
    None
}

/// Fixed-point iteration `B X' + X' D = -(A + X E X)` from zero.
fn functional<T: Scalar>(eq: &Riccati<T>, tol: f64, max_iter: usize) -> Result<DMatrix<T>> {
    let (r, c) = (eq.a.nrows(), eq.a.ncols());
    let lu = sylvester_matrix(&eq.b, &eq.d).lu();
    let mut x = DMatrix::zeros(r, c);
    let mut norm = f64::INFINITY;
    for _ in 0..max_iter {
        let rhs = -(&eq.a + &x * &eq.e * &x);
        let next = unvec(
            &lu.solve(&vec_of(&rhs)).ok_or(FluidError::Singular("riccati fixed point"))?,
            r,
            c,
        );
        if diverged(&next) {
            return Err(FluidError::Divergence { what: "riccati", s: f64::NAN });
        }
        let step = max_abs(&(&next - &x));
        x = next;
        if step < tol * 1e-2 {
            norm = max_abs(&eq.residual(&x));
            if norm < tol {
                return Ok(x);
            }
        }
    }
    Err(FluidError::NoConvergence { what: "riccati", iterations: max_iter, residual: norm })
}

/// Minimal solution of a Riccati equation: Newton first, functional iteration
/// as fallback. `tol` is relative to the largest coefficient.
pub fn solve_minimal<T: Scalar>(eq: &Riccati<T>, tol: f64) -> Result<DMatrix<T>> {
    let (r, c) = (eq.a.nrows(), eq.a.ncols());
    if r == 0 || c == 0 {
        return Ok(DMatrix::zeros(r, c));
    }
    let tol = tol * eq.scale();
    let x = match newton(eq, tol) {
        Some(x) => x,
        None => {
            log::debug!("riccati newton failed, falling back to functional iteration");
            functional(eq, tol, MAX_FUNCTIONAL)?
        }
    };
    if T::REAL && x.iter().any(|v| v.re_f64() < -1e-8) {
        // Converged to a non-minimal branch: no nonnegative solution exists here.
        return Err(FluidError::Divergence { what: "riccati", s: f64::NAN });
    }
    Ok(x)
}

/// Left of the origin the transform may not exist; a failed Newton run there
/// is reported as divergence instead of falling back to the slow iteration.
fn solve_shifted<T: Scalar>(eq: &Riccati<T>, s: T, tol: f64) -> Result<DMatrix<T>> {
    if s.re_f64() < 0.0 {
        let (r, c) = (eq.a.nrows(), eq.a.ncols());
        if r == 0 || c == 0 {
            return Ok(DMatrix::zeros(r, c));
        }
        let x = newton(eq, tol * eq.scale()).ok_or(FluidError::Divergence { what: "riccati", s: s.re_f64() })?;
        if !all_finite(&x) || (T::REAL && x.iter().any(|v| v.re_f64() < -1e-8)) {
            return Err(FluidError::Divergence { what: "riccati", s: s.re_f64() });
        }
        return Ok(x);
    }
    tag_shift(solve_minimal(eq, tol), s)
}

fn tag_shift<T: Scalar, R>(r: Result<R>, s: T) -> Result<R> {
    r.map_err(|e| match e {
        FluidError::Divergence { what, .. } => FluidError::Divergence { what, s: s.re_f64() },
        other => other,
    })
}

/// Minimal nonnegative plus-to-minus passage matrix of a band.
pub fn solve_riccati(blocks: &BandBlocks, tol: f64) -> Result<DMatrix<f64>> {
    solve_riccati_lst(blocks, 0.0, tol)
}

/// Minimal nonnegative minus-to-plus passage matrix of a band.
pub fn solve_riccati_hat(blocks: &BandBlocks, tol: f64) -> Result<DMatrix<f64>> {
    solve_riccati_hat_lst(blocks, 0.0, tol)
}

/// Transform of the plus-to-minus passage matrix at argument `s`.
pub fn solve_riccati_lst<T: Scalar>(blocks: &BandBlocks, s: T, tol: f64) -> Result<DMatrix<T>> {
    let sb = ScaledBlocks::new(blocks, s);
    solve_shifted(&Riccati::psi(&sb), s, tol)
}

pub fn solve_riccati_hat_lst<T: Scalar>(blocks: &BandBlocks, s: T, tol: f64) -> Result<DMatrix<T>> {
    let sb = ScaledBlocks::new(blocks, s);
    solve_shifted(&Riccati::psi_hat(&sb), s, tol)
}

/// Passage matrices of a band together with the derived exponent matrices.
#[derive(Debug, Clone)]
pub struct PassageOperators<T: Scalar> {
    pub psi: DMatrix<T>,
    pub psi_hat: DMatrix<T>,
    /// Generator of the level process observed on downward record lows.
    pub u: DMatrix<T>,
    pub u_hat: DMatrix<T>,
    /// Exponent of the upward visit density.
    pub k: DMatrix<T>,
    pub k_hat: DMatrix<T>,
}

pub fn compute_operators<T: Scalar>(
    sb: &ScaledBlocks<T>,
    psi: DMatrix<T>,
    psi_hat: DMatrix<T>,
) -> PassageOperators<T> {
    let u = &sb.mm + &sb.mp * &psi;
    let u_hat = &sb.pp + &sb.pm * &psi_hat;
    let k = &sb.pp + &psi * &sb.mp;
    let k_hat = &sb.mm + &psi_hat * &sb.pm;
    PassageOperators { psi, psi_hat, u, u_hat, k, k_hat }
}

/// Solve both Riccati equations at argument `s` and build the operators.
pub fn passage_operators<T: Scalar>(blocks: &BandBlocks, s: T, tol: f64) -> Result<PassageOperators<T>> {
    let sb = ScaledBlocks::new(blocks, s);
    let psi = solve_shifted(&Riccati::psi(&sb), s, tol)?;
    let psi_hat = solve_shifted(&Riccati::psi_hat(&sb), s, tol)?;
    Ok(compute_operators(&sb, psi, psi_hat))
}

/// Passage probabilities (or transforms) across a band of finite length.
#[derive(Debug, Clone)]
pub struct FinitePassage<T: Scalar> {
    /// Start going up at the bottom, reach the top first.
    pub lambda_pp: DMatrix<T>,
    /// Start going up at the bottom, return to the bottom first.
    pub psi_pm: DMatrix<T>,
    /// Start going down at the top, return to the top first.
    pub psi_hat_mp: DMatrix<T>,
    /// Start going down at the top, reach the bottom first.
    pub lambda_hat_mm: DMatrix<T>,
}

fn block2<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, c: &DMatrix<T>, d: &DMatrix<T>) -> DMatrix<T> {
    let (p, m) = (a.nrows(), d.nrows());
    let mut out = DMatrix::zeros(p + m, p + m);
    out.view_mut((0, 0), (p, p)).copy_from(a);
    out.view_mut((0, p), (p, m)).copy_from(b);
    out.view_mut((p, 0), (m, p)).copy_from(c);
    out.view_mut((p, p), (m, m)).copy_from(d);
    out
}

/// `F M⁻¹` through a factorization of `Mᵀ`.
fn right_divide<T: Scalar>(f: &DMatrix<T>, m: &DMatrix<T>, what: &'static str) -> Result<DMatrix<T>> {
    let xt = m.transpose().lu().solve(&f.transpose()).ok_or(FluidError::Singular(what))?;
    Ok(xt.transpose())
}

pub fn finite_passage<T: Scalar>(ops: &PassageOperators<T>, b: f64) -> Result<FinitePassage<T>> {
    let p = ops.u_hat.nrows();
    let m = ops.u.nrows();
    let bt = T::of(b);
    let eu = matrix_exponential(&(&ops.u * bt));
    let euh = matrix_exponential(&(&ops.u_hat * bt));
    let lhs = block2(&euh, &ops.psi, &ops.psi_hat, &eu);
    let rhs = block2(
        &DMatrix::identity(p, p),
        &(&ops.psi * &eu),
        &(&ops.psi_hat * &euh),
        &DMatrix::identity(m, m),
    );
    let out = right_divide(&lhs, &rhs, "finite band passage")?;
    Ok(FinitePassage {
        lambda_pp: out.view((0, 0), (p, p)).into_owned(),
        psi_pm: out.view((0, p), (p, m)).into_owned(),
        psi_hat_mp: out.view((p, 0), (m, p)).into_owned(),
        lambda_hat_mm: out.view((p, p), (m, m)).into_owned(),
    })
}

/// Transform of the finite-band passage matrices at argument `s`.
///
/// Left of the point where the unbounded-band passage matrices stop existing,
/// the finite-band transforms are still analytic. There they are continued by
/// averaging the complex evaluations at `s ± iε`: the two conjugate branches of
/// the Riccati solutions give conjugate results.
pub fn finite_passage_lst<T: Scalar>(blocks: &BandBlocks, s: T, b: f64, tol: f64) -> Result<FinitePassage<T>> {
    let direct = passage_operators(blocks, s, tol).and_then(|ops| finite_passage(&ops, b));
    match direct {
        Err(FluidError::Divergence { .. }) if T::REAL && s.re_f64() < 0.0 => {
            let f = continued_passage(blocks, s.re_f64(), b, tol)?;
            let lift = |m: &DMatrix<f64>| m.map(T::of);
            Ok(FinitePassage {
                lambda_pp: lift(&f.lambda_pp),
                psi_pm: lift(&f.psi_pm),
                psi_hat_mp: lift(&f.psi_hat_mp),
                lambda_hat_mm: lift(&f.lambda_hat_mm),
            })
        }
        other => other,
    }
}

fn continued_passage(blocks: &BandBlocks, s: f64, b: f64, tol: f64) -> Result<FinitePassage<f64>> {
    let eps = 1e-7 * s.abs().max(1.0);
    let side = |sign: f64| -> Result<FinitePassage<Complex64>> {
        finite_passage(&passage_operators(blocks, Complex64::new(s, sign * eps), tol)?, b)
    };
    let (up, down) = (side(1.0)?, side(-1.0)?);
    let avg = |a: &DMatrix<Complex64>, b: &DMatrix<Complex64>| -> Result<DMatrix<f64>> {
        let m = (a + b) / Complex64::from(2.0);
        let scale = m.iter().map(|z| z.re.abs()).fold(1.0, f64::max);
        if m.iter().any(|z| !z.re.is_finite() || z.im.abs() > 1e-6 * scale) {
            return Err(FluidError::Divergence { what: "finite band transform", s });
        }
        Ok(m.map(|z| z.re))
    };
    Ok(FinitePassage {
        lambda_pp: avg(&up.lambda_pp, &down.lambda_pp)?,
        psi_pm: avg(&up.psi_pm, &down.psi_pm)?,
        psi_hat_mp: avg(&up.psi_hat_mp, &down.psi_hat_mp)?,
        lambda_hat_mm: avg(&up.lambda_hat_mm, &down.lambda_hat_mm)?,
    })
}

/// Expected visits to level `w` of an unbounded band, started at its bottom
/// in a plus phase. Columns are ordered (plus, minus).
pub fn expected_visits_infinite<T: Scalar>(ops: &PassageOperators<T>, w: f64) -> DMatrix<T> {
    let ek = matrix_exponential(&(&ops.k * T::of(w)));
    let p = ek.nrows();
    let m = ops.psi.ncols();
    let mut out = DMatrix::zeros(p, p + m);
    out.view_mut((0, p), (p, m)).copy_from(&(&ek * &ops.psi));
    out.view_mut((0, 0), (p, p)).copy_from(&ek);
    out
}

/// Expected visits to level `w` of a band `[0, b]`: from the bottom in plus
/// phases and from the top in minus phases. Columns are ordered (plus, minus).
pub fn expected_visits_finite<T: Scalar>(
    ops: &PassageOperators<T>,
    b: f64,
    w: f64,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let p = ops.k.nrows();
    let m = ops.k_hat.nrows();
    let ekb = matrix_exponential(&(&ops.k * T::of(b)));
    let ekhb = matrix_exponential(&(&ops.k_hat * T::of(b)));
    let ekw = matrix_exponential(&(&ops.k * T::of(w)));
    let ekhw = matrix_exponential(&(&ops.k_hat * T::of(b - w)));
    let lhs = block2(
        &DMatrix::identity(p, p),
        &(&ekb * &ops.psi),
        &(&ekhb * &ops.psi_hat),
        &DMatrix::identity(m, m),
    );
    let rhs = block2(&ekw, &(&ekw * &ops.psi), &(&ekhw * &ops.psi_hat), &ekhw);
    let out = lhs.lu().solve(&rhs).ok_or(FluidError::Singular("finite band visits"))?;
    Ok((out.rows(0, p).into_owned(), out.rows(p, m).into_owned()))
}

/// `∫_0^x e^{Kt} dt`, read off the exponential of `[[K, I], [0, 0]]·x`.
/// Works for singular `K`.
pub fn exp_integral<T: Scalar>(k: &DMatrix<T>, x: f64) -> DMatrix<T> {
    let n = k.nrows();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(k);
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    let e = matrix_exponential(&(aug * T::of(x)));
    e.view((0, n), (n, n)).into_owned()
}

/// `∫_a^b e^{Kt} dt` for `a <= b`; `b = ∞` needs a stable `K`.
pub fn exp_integral_between<T: Scalar>(k: &DMatrix<T>, a: f64, b: f64) -> Result<DMatrix<T>> {
    let ea = matrix_exponential(&(k * T::of(a)));
    if b.is_infinite() {
        let kinv = k.clone().try_inverse().ok_or(FluidError::Singular("unbounded visit integral"))?;
        return Ok(-(kinv * ea));
    }
    Ok(ea * exp_integral(k, b - a))
}

/// `∫_{w1}^{w2}` of [`expected_visits_infinite`]; `w2` may be infinite.
pub fn visits_integral_infinite<T: Scalar>(ops: &PassageOperators<T>, w1: f64, w2: f64) -> Result<DMatrix<T>> {
    let ik = exp_integral_between(&ops.k, w1, w2)?;
    let p = ik.nrows();
    let m = ops.psi.ncols();
    let mut out = DMatrix::zeros(p, p + m);
    out.view_mut((0, p), (p, m)).copy_from(&(&ik * &ops.psi));
    out.view_mut((0, 0), (p, p)).copy_from(&ik);
    Ok(out)
}

/// `∫_{w1}^{w2}` of [`expected_visits_finite`] for `0 <= w1 <= w2 <= b`.
pub fn visits_integral_finite<T: Scalar>(
    ops: &PassageOperators<T>,
    b: f64,
    w1: f64,
    w2: f64,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let p = ops.k.nrows();
    let m = ops.k_hat.nrows();
    let ekb = matrix_exponential(&(&ops.k * T::of(b)));
    let ekhb = matrix_exponential(&(&ops.k_hat * T::of(b)));
    let ik = exp_integral_between(&ops.k, w1, w2)?;
    let ikh = exp_integral_between(&ops.k_hat, b - w2, b - w1)?;
    let lhs = block2(
        &DMatrix::identity(p, p),
        &(&ekb * &ops.psi),
        &(&ekhb * &ops.psi_hat),
        &DMatrix::identity(m, m),
    );
    let rhs = block2(&ik, &(&ik * &ops.psi), &(&ikh * &ops.psi_hat), &ikh);
    let out = lhs.lu().solve(&rhs).ok_or(FluidError::Singular("finite band visits"))?;
    Ok((out.rows(0, p).into_owned(), out.rows(p, m).into_owned()))
}

/// Transition matrix `I − Δ⁻¹T` of the jump chain of a generator.
pub fn jump_matrix(t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    jump_matrix_lst(t, 0.0)
}

/// Transform `(sI − Δ)⁻¹(T − Δ)` of the jump chain with its holding time.
pub fn jump_matrix_lst<T: Scalar>(t: &DMatrix<f64>, s: T) -> Result<DMatrix<T>> {
    let n = t.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let d = t[(i, i)];
        if d == 0.0 {
            return Err(FluidError::Singular("jump matrix (absorbing phase)"));
        }
        let denom = s - T::of(d);
        if T::REAL && denom.re_f64() <= 0.0 {
            return Err(FluidError::Divergence { what: "sticky sojourn transform", s: s.re_f64() });
        }
        for j in 0..n {
            if j != i {
                out[(i, j)] = T::of(t[(i, j)]) / denom;
            }
        }
    }
    Ok(out)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn norm1<T: Scalar>(m: &DMatrix<T>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs_f64()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn matrix_exponential<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix_exponential needs a square matrix");
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = norm1(m);
    if !norm.is_finite() {
        return DMatrix::from_element(n, n, T::of(f64::NAN));
    }
    let squarings = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = m * T::of(0.5f64.powi(squarings));
    let c = |k: usize| T::of(PADE13[k]);
    let id = DMatrix::<T>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * c(13) + &a4 * c(11) + &a2 * c(9));
    let u = &a * (inner_u + &a6 * c(7) + &a4 * c(5) + &a2 * c(3) + &id * c(1));
    let inner_v = &a6 * (&a6 * c(12) + &a4 * c(10) + &a2 * c(8));
    let v = inner_v + &a6 * c(6) + &a4 * c(4) + &a2 * c(2) + &id * c(0);
    let mut r = match (&v - &u).lu().solve(&(&v + &u)) {
        Some(r) => r,
        None => return DMatrix::from_element(n, n, T::of(f64::NAN)),
    };
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}
