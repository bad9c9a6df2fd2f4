//! Buffer 1: the jump chain on boundary states, its censoring onto the sticky
//! states and the stationary distribution built from them.

pub mod closed_form;
mod stationary;

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{FluidError, Result};
use crate::mamcore::{finite_passage_lst, jump_matrix_lst, passage_operators, FinitePassage, PassageOperators};
use crate::model::{band_blocks, build_generator, check_assumptions, partition_states, Band, BandBlocks, ModelParams, PhasePartition};
use crate::scalar::Scalar;

pub use stationary::{density_coeffs, DensityCoeffs, Fluxes, StationaryBuffer1, UpperPassage};

/// Row-sum tolerance for assembled stochastic matrices.
pub const ROW_SUM_TOL: f64 = 1e-8;

/// Level at which a boundary state sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Boundary {
    Zero,
    Star,
    Cap,
}

/// How the level leaves a boundary in a given phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Exit {
    Up,
    Sticky,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundaryState {
    pub boundary: Boundary,
    pub exit: Exit,
    pub phase: usize,
}

impl fmt::Display for BoundaryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = match self.boundary {
            Boundary::Zero => "0",
            Boundary::Star => "x*",
            Boundary::Cap => "V",
        };
        let e = match self.exit {
            Exit::Up => "u",
            Exit::Sticky => "s",
            Exit::Down => "d",
        };
        write!(f, "({b},{e},{})", self.phase)
    }
}

/// Rows of the kernel that share one construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowGroup {
    ZeroUp,
    ZeroSticky,
    StarUp,
    StarSticky,
    StarDown,
    CapSticky,
    CapDown,
}

/// Ordered boundary states with an index by (boundary, phase).
#[derive(Debug, Clone)]
pub struct BoundaryLayout {
    pub states: Vec<BoundaryState>,
    pub groups: Vec<(RowGroup, std::ops::Range<usize>)>,
    index: [Vec<Option<usize>>; 3],
}

fn slot(b: Boundary) -> usize {
    match b {
        Boundary::Zero => 0,
        Boundary::Star => 1,
        Boundary::Cap => 2,
    }
}

impl BoundaryLayout {
    pub fn new(part: &PhasePartition) -> Self {
        let mut groups: Vec<(RowGroup, Boundary, Exit, &[usize])> = vec![
            (RowGroup::ZeroUp, Boundary::Zero, Exit::Up, &part.zero_up),
            (RowGroup::ZeroSticky, Boundary::Zero, Exit::Sticky, &part.zero_sticky),
            (RowGroup::StarUp, Boundary::Star, Exit::Up, &part.star_up),
            (RowGroup::StarSticky, Boundary::Star, Exit::Sticky, &part.star_sticky),
            (RowGroup::StarDown, Boundary::Star, Exit::Down, &part.star_down),
        ];
        if let (Some(cs), Some(cd)) = (&part.cap_sticky, &part.cap_down) {
            groups.push((RowGroup::CapSticky, Boundary::Cap, Exit::Sticky, cs));
            groups.push((RowGroup::CapDown, Boundary::Cap, Exit::Down, cd));
        }
        let n = part.n_phases();
        let mut index = [vec![None; n], vec![None; n], vec![None; n]];
        let mut states = Vec::new();
        let mut ranges = Vec::new();
        for (g, boundary, exit, phases) in groups {
            let start = states.len();
            for &phase in phases {
                index[slot(boundary)][phase] = Some(states.len());
                states.push(BoundaryState { boundary, exit, phase });
            }
            ranges.push((g, start..states.len()));
        }
        Self { states, groups: ranges, index }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Position of `(boundary, phase)`; every phase appears once per boundary.
    pub fn position(&self, boundary: Boundary, phase: usize) -> usize {
        self.index[slot(boundary)][phase].expect("phase present at boundary")
    }

    pub fn range(&self, group: RowGroup) -> std::ops::Range<usize> {
        self.groups
            .iter()
            .find(|(g, _)| *g == group)
            .map(|(_, r)| r.clone())
            .unwrap_or(0..0)
    }

    pub fn group_of(&self, k: usize) -> RowGroup {
        self.groups.iter().find(|(_, r)| r.contains(&k)).map(|(g, _)| *g).expect("state index in layout")
    }

    pub fn sticky(&self) -> Vec<usize> {
        self.where_exit(|e| e == Exit::Sticky)
    }

    pub fn transient(&self) -> Vec<usize> {
        self.where_exit(|e| e != Exit::Sticky)
    }

    fn where_exit(&self, f: impl Fn(Exit) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&k| f(self.states[k].exit)).collect()
    }
}

/// Everything needed to build the boundary kernel of Buffer 1 at any
/// transform argument.
#[derive(Debug, Clone)]
pub struct Buffer1Model {
    pub params: ModelParams,
    pub partition: PhasePartition,
    pub generator: DMatrix<f64>,
    pub lower: BandBlocks,
    pub upper: BandBlocks,
    pub layout: BoundaryLayout,
    pub tol: f64,
}

/// Passage objects of one band used by a group of kernel rows.
#[derive(Clone)]
enum BandPassage<T: Scalar> {
    Finite(FinitePassage<T>),
    Unbounded(PassageOperators<T>),
}

impl Buffer1Model {
    /// Validate `params` and prepare the band blocks.
    pub fn new(params: &ModelParams, tol: f64) -> Result<Self> {
        check_assumptions(params).into_result()?;
        let partition = partition_states(params);
        Ok(Self {
            params: params.clone(),
            generator: build_generator(params.n, params.alpha1, params.beta1),
            lower: band_blocks(params, &partition, Band::Lower),
            upper: band_blocks(params, &partition, Band::Upper),
            layout: BoundaryLayout::new(&partition),
            partition,
            tol,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.params.v.is_some()
    }

    /// Length of the upper band, infinite without a capacity.
    pub fn upper_length(&self) -> f64 {
        self.params.v.map_or(f64::INFINITY, |v| v - self.params.x_star)
    }

    fn lower_passage<T: Scalar>(&self, s: T) -> Result<FinitePassage<T>> {
        finite_passage_lst(&self.lower, s, self.params.x_star, self.tol)
    }

    fn upper_passage<T: Scalar>(&self, s: T) -> Result<BandPassage<T>> {
        Ok(match self.params.v {
            Some(_) => BandPassage::Finite(finite_passage_lst(&self.upper, s, self.upper_length(), self.tol)?),
            None => BandPassage::Unbounded(passage_operators(&self.upper, s, self.tol)?),
        })
    }

    /// Boundary kernel whose row `k` is evaluated at transform argument
    /// `s_of(k)`. Rows of one non-sticky group must share their argument.
    pub fn kernel_with<T: Scalar>(&self, s_of: impl Fn(usize) -> T) -> Result<DMatrix<T>> {
        self.kernel_impl(s_of, None)
    }

    /// Kernel transform with only the rows of `group` filled in.
    pub fn kernel_group<T: Scalar>(&self, group: RowGroup, s: T) -> Result<DMatrix<T>> {
        self.kernel_impl(|_| s, Some(group))
    }

    fn kernel_impl<T: Scalar>(&self, s_of: impl Fn(usize) -> T, only: Option<RowGroup>) -> Result<DMatrix<T>> {
        let lay = &self.layout;
        let part = &self.partition;
        let m = lay.len();
        let mut out = DMatrix::<T>::zeros(m, m);

        let mut lower_cache: Option<(T, FinitePassage<T>)> = None;
        let mut lower_at = |s: T| -> Result<FinitePassage<T>> {
            if let Some((s0, f)) = &lower_cache {
                if *s0 == s {
                    return Ok(f.clone());
                }
            }
            let f = self.lower_passage(s)?;
            lower_cache = Some((s, f.clone()));
            Ok(f)
        };
        let mut upper_cache: Option<(T, BandPassage<T>)> = None;
        let mut upper_at = |s: T| -> Result<BandPassage<T>> {
            if let Some((s0, f)) = &upper_cache {
                if *s0 == s {
                    return Ok(f.clone());
                }
            }
            let f = self.upper_passage(s)?;
            upper_cache = Some((s, f.clone()));
            Ok(f)
        };

        for (group, range) in &lay.groups {
            if range.is_empty() || only.is_some_and(|g| g != *group) {
                continue;
            }
            let rows: Vec<usize> = range.clone().collect();
            match group {
                RowGroup::ZeroUp => {
                    let f = lower_at(s_of(rows[0]))?;
                    for (a, &r) in rows.iter().enumerate() {
                        for (b, &j) in part.lower_minus.iter().enumerate() {
                            out[(r, lay.position(Boundary::Zero, j))] += f.psi_pm[(a, b)];
                        }
                        for (b, &j) in part.lower_plus.iter().enumerate() {
                            out[(r, lay.position(Boundary::Star, j))] += f.lambda_pp[(a, b)];
                        }
                    }
                }
                RowGroup::StarDown => {
                    let f = lower_at(s_of(rows[0]))?;
                    for (a, &r) in rows.iter().enumerate() {
                        for (b, &j) in part.lower_minus.iter().enumerate() {
                            out[(r, lay.position(Boundary::Zero, j))] += f.lambda_hat_mm[(a, b)];
                        }
                        for (b, &j) in part.lower_plus.iter().enumerate() {
                            out[(r, lay.position(Boundary::Star, j))] += f.psi_hat_mp[(a, b)];
                        }
                    }
                }
                RowGroup::StarUp => match upper_at(s_of(rows[0]))? {
                    BandPassage::Unbounded(ops) => {
                        for (a, &r) in rows.iter().enumerate() {
                            for (b, &j) in part.upper_minus.iter().enumerate() {
                                out[(r, lay.position(Boundary::Star, j))] += ops.psi[(a, b)];
                            }
                        }
                    }
                    BandPassage::Finite(f) => {
                        for (a, &r) in rows.iter().enumerate() {
                            for (b, &j) in part.upper_minus.iter().enumerate() {
                                out[(r, lay.position(Boundary::Star, j))] += f.psi_pm[(a, b)];
                            }
                            for (b, &j) in part.upper_plus.iter().enumerate() {
                                out[(r, lay.position(Boundary::Cap, j))] += f.lambda_pp[(a, b)];
                            }
                        }
                    }
                },
                RowGroup::CapDown => {
                    let BandPassage::Finite(f) = upper_at(s_of(rows[0]))? else {
                        unreachable!("cap rows exist only for a finite buffer")
                    };
                    for (a, &r) in rows.iter().enumerate() {
                        for (b, &j) in part.upper_minus.iter().enumerate() {
                            out[(r, lay.position(Boundary::Star, j))] += f.lambda_hat_mm[(a, b)];
                        }
                        for (b, &j) in part.upper_plus.iter().enumerate() {
                            out[(r, lay.position(Boundary::Cap, j))] += f.psi_hat_mp[(a, b)];
                        }
                    }
                }
                RowGroup::ZeroSticky | RowGroup::StarSticky | RowGroup::CapSticky => {
                    for &r in &rows {
                        let st = lay.states[r];
                        let p = jump_matrix_lst(&self.generator, s_of(r))?;
                        for j in 0..self.generator.ncols() {
                            if j != st.phase {
                                out[(r, lay.position(st.boundary, j))] += p[(st.phase, j)];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Transform of the boundary kernel at a common argument `s`.
    pub fn kernel_lst<T: Scalar>(&self, s: T) -> Result<DMatrix<T>> {
        self.kernel_with(|_| s)
    }

    /// Passage operators of both bands at `s = 0`.
    pub fn operators(&self) -> Result<(PassageOperators<f64>, PassageOperators<f64>)> {
        Ok((
            passage_operators(&self.lower, 0.0, self.tol)?,
            passage_operators(&self.upper, 0.0, self.tol)?,
        ))
    }
}

/// Boundary states together with the transition matrix of the jump chain.
#[derive(Debug, Clone)]
pub struct BoundaryChain {
    pub layout: BoundaryLayout,
    pub omega: DMatrix<f64>,
}

/// Build the jump chain on boundary states and check it is stochastic.
pub fn assemble_omega(model: &Buffer1Model) -> Result<BoundaryChain> {
    let omega = model.kernel_lst(0.0)?;
    check_stochastic(&omega, "Omega", |k| model.layout.states[k].to_string())?;
    Ok(BoundaryChain { layout: model.layout.clone(), omega })
}

pub(crate) fn check_stochastic(m: &DMatrix<f64>, name: &'static str, label: impl Fn(usize) -> String) -> Result<()> {
    for i in 0..m.nrows() {
        let sum = m.row(i).sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || m.row(i).iter().any(|x| *x < -ROW_SUM_TOL) {
            return Err(FluidError::Assembly { matrix: name, row: label(i), sum });
        }
    }
    Ok(())
}

fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Censor a stochastic matrix onto `keep`, removing `drop`:
/// `Ω_KK + Ω_KE (I − Ω_EE)⁻¹ Ω_EK`.
pub fn censor_onto(m: &DMatrix<f64>, keep: &[usize], drop: &[usize]) -> Result<DMatrix<f64>> {
    // states eliminated one at a time; the pivot is the off-diagonal row mass,
    // which equals 1 - m_kk for a stochastic matrix but never cancels
    let order: Vec<usize> = keep.iter().chain(drop.iter()).copied().collect();
    let mut a = sub(m, &order, &order);
    let nk = keep.len();
    for k in (nk..order.len()).rev() {
        let s: f64 = (0..=k).filter(|&j| j != k).map(|j| a[(k, j)]).sum();
        if !(s > 0.0) {
            return Err(FluidError::Singular("censoring (chain not irreducible)"));
        }
        for i in 0..k {
            let f = a[(i, k)] / s;
            if f != 0.0 {
                for j in 0..k {
                    a[(i, j)] += f * a[(k, j)];
                }
            }
        }
    }
    Ok(a.view((0, 0), (nk, nk)).into_owned())
}

/// Jump chain censored on the sticky states, and its generator.
#[derive(Debug, Clone)]
pub struct CensoredChain {
    /// States kept after removing the transient states at x* and V.
    pub star_states: Vec<usize>,
    pub omega_star: DMatrix<f64>,
    /// Sticky states, in layout order.
    pub sticky: Vec<usize>,
    pub omega_circle: DMatrix<f64>,
    /// Diagonal of the phase generator on sticky states (negative).
    pub delta_s: DVector<f64>,
    pub theta: DMatrix<f64>,
}

/// Censor in two steps: first the transient states at x* and V, then those at 0.
pub fn censor(chain: &BoundaryChain, generator: &DMatrix<f64>) -> Result<CensoredChain> {
    let lay = &chain.layout;
    let top: Vec<usize> = lay.transient().into_iter().filter(|&k| lay.states[k].boundary != Boundary::Zero).collect();
    let star_states: Vec<usize> = (0..lay.len()).filter(|k| !top.contains(k)).collect();
    let omega_star = censor_onto(&chain.omega, &star_states, &top)?;

    // Positions inside star_states.
    let keep: Vec<usize> = (0..star_states.len()).filter(|&k| lay.states[star_states[k]].exit == Exit::Sticky).collect();
    let drop: Vec<usize> = (0..star_states.len()).filter(|&k| lay.states[star_states[k]].exit != Exit::Sticky).collect();
    let omega_circle = censor_onto(&omega_star, &keep, &drop)?;
    let sticky: Vec<usize> = keep.iter().map(|&k| star_states[k]).collect();
    check_stochastic(&omega_circle, "censored Omega", |k| lay.states[sticky[k]].to_string())?;

    let delta_s = DVector::from_iterator(sticky.len(), sticky.iter().map(|&k| {
        let ph = lay.states[k].phase;
        generator[(ph, ph)]
    }));
    let mut theta = DMatrix::from_diagonal(&delta_s) * (DMatrix::identity(sticky.len(), sticky.len()) - &omega_circle);
    // Rebuild the diagonal from the off-diagonal rates; `1 − Ω∘_ii` loses tiny exits.
    for i in 0..theta.nrows() {
        let off: f64 = (0..theta.ncols()).filter(|&j| j != i).map(|j| theta[(i, j)]).sum();
        theta[(i, i)] = -off;
    }
    Ok(CensoredChain { star_states, omega_star, sticky, omega_circle, delta_s, theta })
}

/// Censor onto the sticky states in one step.
pub fn censor_one_shot(chain: &BoundaryChain) -> Result<DMatrix<f64>> {
    censor_onto(&chain.omega, &chain.layout.sticky(), &chain.layout.transient())
}

/// Left null vector of Θ with first entry 1.
///
/// Uses Grassmann-Taksar-Heyman elimination, which only adds nonnegative
/// off-diagonal rates and stays accurate when some exits are tiny.
pub fn solve_sticky_weights(cens: &CensoredChain) -> Result<DVector<f64>> {
    let x = gth_null_vector(&cens.theta)?;
    let theta = &cens.theta;
    let n = x.len();
    let terms: Vec<f64> = (0..n).map(|j| (0..n).map(|i| (x[i] * theta[(i, j)]).abs()).sum()).collect();
    // subnormal weights (unreachable boundaries) make per-column checks meaningless
    let scale = terms.iter().cloned().fold(0.0, f64::max);
    for j in 0..n {
        let res: f64 = (0..n).map(|i| x[i] * theta[(i, j)]).sum();
        if !res.is_finite() || res.abs() > (1e-9 * terms[j].max(1e-12 * scale)).max(f64::MIN_POSITIVE) {
            return Err(FluidError::NullSpace { what: "sticky weights" });
        }
    }
    Ok(x)
}

/// Left null vector of an irreducible generator, scaled so its first entry is 1.
pub fn gth_null_vector(q: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = q.nrows();
    let mut a = q.clone();
    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| a[(k, j)]).sum();
        if !(s > 0.0) {
            return Err(FluidError::NullSpace { what: "sticky weights (reducible chain)" });
        }
        for i in 0..k {
            a[(i, k)] /= s;
        }
        for i in 0..k {
            let aik = a[(i, k)];
            if aik != 0.0 {
                for j in 0..k {
                    if j != i {
                        let akj = a[(k, j)];
                        a[(i, j)] += aik * akj;
                    }
                }
            }
        }
    }
    let mut x = DVector::zeros(n);
    if n > 0 {
        x[0] = 1.0;
    }
    for k in 1..n {
        x[k] = (0..k).map(|i| x[i] * a[(i, k)]).sum();
    }
    Ok(x)
}
