//! Model parameters, the ON-OFF birth-death generator, phase partitions per
//! band and boundary, and the validation of the standing assumptions.
//!
//! Phases are numbered by the count of ON sources, `0..=N`. Every phase set is
//! kept in ascending order and every matrix block uses that order.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Tolerance below which a capacity/rate ratio counts as an integer.
pub const INTEGRALITY_TOL: f64 = 1e-9;

/// Scalar inputs of the two-buffer model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Number of ON-OFF sources feeding each buffer.
    pub n: usize,
    /// Buffer-1 ON-to-OFF rate.
    pub alpha1: f64,
    /// Buffer-1 OFF-to-ON rate.
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    /// Per-source fluid rate while ON, Buffer 1.
    pub r1: f64,
    pub r2: f64,
    /// Output capacity of Buffer 1 while below the threshold.
    pub c1: f64,
    pub c2: f64,
    /// Buffer-1 threshold above which Buffer 1 takes the whole capacity.
    pub x_star: f64,
    /// Finite Buffer-1 capacity; `None` for an infinite buffer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
}

impl ModelParams {
    /// Total shared output capacity.
    pub fn c(&self) -> f64 {
        self.c1 + self.c2
    }

    /// Shared single-source Buffer-1 settings of the reference scenarios.
    fn reference(c1: f64, c2: f64) -> Self {
        Self {
            n: 1,
            alpha1: 11.0,
            beta1: 1.0,
            alpha2: 11.0,
            beta2: 1.0,
            r1: 12.48,
            r2: 12.48,
            c1,
            c2,
            x_star: 1.5,
            v: None,
        }
    }

    /// Scenario A (`c1 = 1.6`, `c2 = 1`).
    pub fn scenario_a() -> Self {
        Self::reference(1.6, 1.0)
    }

    /// Scenario E (`c1 = 1.19`, `c2 = 1.41`).
    pub fn scenario_e() -> Self {
        Self::reference(1.19, 1.41)
    }

    /// Scenario F (`c1 = 0.2`, `c2 = 2.4`).
    pub fn scenario_f() -> Self {
        Self::reference(0.2, 2.4)
    }

    pub fn with_capacity(mut self, v: Option<f64>) -> Self {
        self.v = v;
        self
    }

    /// Mean input of both buffers, computed from the stationary phase vectors.
    pub fn mean_load_from_phases(&self) -> f64 {
        let q1 = stationary_onoff(self.n, self.alpha1, self.beta1);
        let q2 = stationary_onoff(self.n, self.alpha2, self.beta2);
        let m1: f64 = q1.iter().enumerate().map(|(i, q)| i as f64 * self.r1 * q).sum();
        let m2: f64 = q2.iter().enumerate().map(|(i, q)| i as f64 * self.r2 * q).sum();
        m1 + m2
    }

    /// Mean input of both buffers in closed form.
    pub fn mean_load(&self) -> f64 {
        let n = self.n as f64;
        n * self.r1 * self.beta1 / (self.alpha1 + self.beta1)
            + n * self.r2 * self.beta2 / (self.alpha2 + self.beta2)
    }

    /// Mean input of Buffer 1 alone.
    pub fn buffer1_load(&self) -> f64 {
        self.n as f64 * self.r1 * self.beta1 / (self.alpha1 + self.beta1)
    }

    /// Signed Buffer-1 net rate of `phase` in the lower band.
    pub fn lower_rate(&self, phase: usize) -> f64 {
        phase as f64 * self.r1 - self.c1
    }

    /// Signed Buffer-1 net rate of `phase` in the upper band.
    pub fn upper_rate(&self, phase: usize) -> f64 {
        phase as f64 * self.r1 - self.c()
    }
}

/// One violated standing assumption.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoSources,
    NotFinite(&'static str),
    NonPositive { field: &'static str, value: f64 },
    /// `N·R1 <= c`: no phase pushes Buffer 1 up above the threshold.
    NoPositiveRateAboveThreshold { peak: f64, capacity: f64 },
    /// `N·R2 <= c`.
    Buffer2PeakBelowCapacity { peak: f64, capacity: f64 },
    /// A capacity/rate ratio is an integer, which creates zero net rates.
    IntegralRatio { ratio: &'static str, value: f64 },
    Unstable { load: f64, capacity: f64 },
    CapacityBelowThreshold { v: f64, x_star: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoSources => write!(f, "N must be at least 1"),
            Violation::NotFinite(field) => write!(f, "{field} is not finite"),
            Violation::NonPositive { field, value } => {
                write!(f, "{field} must be positive (got {value})")
            }
            Violation::NoPositiveRateAboveThreshold { peak, capacity } => write!(
                f,
                "no positive net rate above x*: N*R1 = {peak} <= c = {capacity}"
            ),
            Violation::Buffer2PeakBelowCapacity { peak, capacity } => {
                write!(f, "N*R2 = {peak} <= c = {capacity}")
            }
            Violation::IntegralRatio { ratio, value } => {
                write!(f, "{ratio} integral ({value})")
            }
            Violation::Unstable { load, capacity } => write!(
                f,
                "unstable: mean load {load} >= total capacity {capacity}"
            ),
            Violation::CapacityBelowThreshold { v, x_star } => {
                write!(f, "buffer capacity V = {v} must exceed x* = {x_star}")
            }
        }
    }
}

/// Outcome of [`check_assumptions`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> crate::Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(crate::FluidError::InvalidModel(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

fn near_integer(x: f64) -> bool {
    (x - x.round()).abs() < INTEGRALITY_TOL
}

/// Check every standing assumption and report all violations at once.
pub fn check_assumptions(p: &ModelParams) -> ValidationReport {
    let mut violations = Vec::new();
    if p.n == 0 {
        violations.push(Violation::NoSources);
    }
    let fields = [
        ("alpha1", p.alpha1),
        ("beta1", p.beta1),
        ("alpha2", p.alpha2),
        ("beta2", p.beta2),
        ("R1", p.r1),
        ("R2", p.r2),
        ("c1", p.c1),
        ("c2", p.c2),
        ("x*", p.x_star),
    ];
    for (field, value) in fields {
        if !value.is_finite() {
            violations.push(Violation::NotFinite(field));
        } else if value <= 0.0 {
            violations.push(Violation::NonPositive { field, value });
        }
    }
    if let Some(v) = p.v {
        if !v.is_finite() {
            violations.push(Violation::NotFinite("V"));
        } else if v <= p.x_star {
            violations.push(Violation::CapacityBelowThreshold { v, x_star: p.x_star });
        }
    }
    if !violations.is_empty() {
        // Remaining checks divide by these quantities.
        return ValidationReport { violations };
    }

    let n = p.n as f64;
    let c = p.c();
    if n * p.r1 <= c {
        violations.push(Violation::NoPositiveRateAboveThreshold { peak: n * p.r1, capacity: c });
    }
    if n * p.r2 <= c {
        violations.push(Violation::Buffer2PeakBelowCapacity { peak: n * p.r2, capacity: c });
    }
    let ratios = [
        ("c1/R1", p.c1 / p.r1),
        ("c/R1", c / p.r1),
        ("c2/R2", p.c2 / p.r2),
        ("c/R2", c / p.r2),
    ];
    for (ratio, value) in ratios {
        if near_integer(value) {
            violations.push(Violation::IntegralRatio { ratio, value });
        }
    }
    let load = p.mean_load();
    if load >= c {
        violations.push(Violation::Unstable { load, capacity: c });
    }
    ValidationReport { violations }
}

/// Birth-death generator of `n` independent exponential ON-OFF sources.
pub fn build_generator(n: usize, alpha: f64, beta: f64) -> DMatrix<f64> {
    let dim = n + 1;
    let mut t = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let up = (n - i) as f64 * beta;
        let down = i as f64 * alpha;
        if i + 1 < dim {
            t[(i, i + 1)] = up;
        }
        if i > 0 {
            t[(i, i - 1)] = down;
        }
        t[(i, i)] = -(up + down);
    }
    t
}

/// Stationary law of the number of ON sources: binomial with `p = beta/(alpha+beta)`.
pub fn stationary_onoff(n: usize, alpha: f64, beta: f64) -> Vec<f64> {
    let on = beta / (alpha + beta);
    let off = alpha / (alpha + beta);
    let mut binom = 1.0;
    (0..=n)
        .map(|k| {
            if k > 0 {
                binom *= (n - k + 1) as f64 / k as f64;
            }
            binom * on.powi(k as i32) * off.powi((n - k) as i32)
        })
        .collect()
}

/// Phase sets for every band and boundary of Buffer 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhasePartition {
    /// Sticky phases at level 0 (`i·R1 < c1`).
    pub zero_sticky: Vec<usize>,
    /// Phases leaving level 0 upwards.
    pub zero_up: Vec<usize>,
    pub lower_minus: Vec<usize>,
    pub lower_plus: Vec<usize>,
    /// Phases leaving x* downwards.
    pub star_down: Vec<usize>,
    /// Sticky phases at x* (`c1 < i·R1 < c`).
    pub star_sticky: Vec<usize>,
    /// Phases leaving x* upwards.
    pub star_up: Vec<usize>,
    pub upper_minus: Vec<usize>,
    pub upper_plus: Vec<usize>,
    /// Sticky phases at V (finite buffer only).
    pub cap_sticky: Option<Vec<usize>>,
    /// Phases leaving V downwards (finite buffer only).
    pub cap_down: Option<Vec<usize>>,
}

impl PhasePartition {
    pub fn n_phases(&self) -> usize {
        self.zero_sticky.len() + self.zero_up.len()
    }

    pub fn is_finite(&self) -> bool {
        self.cap_sticky.is_some()
    }
}

/// Split `{0..N}` by the sign of each net rate.
pub fn partition_states(p: &ModelParams) -> PhasePartition {
    let phases: Vec<usize> = (0..=p.n).collect();
    let below = |lim: f64| phases.iter().copied().filter(|&i| (i as f64) * p.r1 < lim).collect::<Vec<_>>();
    let above = |lim: f64| phases.iter().copied().filter(|&i| (i as f64) * p.r1 > lim).collect::<Vec<_>>();
    let c = p.c();

    let zero_sticky = below(p.c1);
    let zero_up = above(p.c1);
    let star_sticky = phases
        .iter()
        .copied()
        .filter(|&i| {
            let r = i as f64 * p.r1;
            r > p.c1 && r < c
        })
        .collect();
    let upper_minus = below(c);
    let upper_plus = above(c);
    let (cap_sticky, cap_down) = match p.v {
        Some(_) => (Some(upper_plus.clone()), Some(upper_minus.clone())),
        None => (None, None),
    };
    PhasePartition {
        lower_minus: zero_sticky.clone(),
        lower_plus: zero_up.clone(),
        star_down: zero_sticky.clone(),
        star_up: upper_plus.clone(),
        zero_sticky,
        zero_up,
        star_sticky,
        upper_minus,
        upper_plus,
        cap_sticky,
        cap_down,
    }
}

/// Which open band of Buffer-1 levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Band {
    /// `0 < x < x*`, output `c1`.
    Lower,
    /// `x > x*`, output `c`.
    Upper,
}

/// Generator blocks and absolute rate matrices of one band.
#[derive(Debug, Clone)]
pub struct BandBlocks {
    pub band: Band,
    pub minus: Vec<usize>,
    pub plus: Vec<usize>,
    /// Full generator, kept for transform shifts.
    pub generator: DMatrix<f64>,
    pub t_mm: DMatrix<f64>,
    pub t_mp: DMatrix<f64>,
    pub t_pm: DMatrix<f64>,
    pub t_pp: DMatrix<f64>,
    /// Absolute net rates of the minus phases.
    pub c_minus: DVector<f64>,
    /// Net rates of the plus phases.
    pub c_plus: DVector<f64>,
}

pub(crate) fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

impl BandBlocks {
    pub fn n_minus(&self) -> usize {
        self.minus.len()
    }

    pub fn n_plus(&self) -> usize {
        self.plus.len()
    }

    /// Absolute rates in (plus, minus) order, the column order of visit matrices.
    pub fn abs_rates_plus_minus(&self) -> Vec<f64> {
        self.c_plus.iter().chain(self.c_minus.iter()).copied().collect()
    }

    /// Phases in (plus, minus) order.
    pub fn phases_plus_minus(&self) -> Vec<usize> {
        self.plus.iter().chain(self.minus.iter()).copied().collect()
    }
}

/// Extract the blocks of the Buffer-1 generator for `band`.
pub fn band_blocks(p: &ModelParams, partition: &PhasePartition, band: Band) -> BandBlocks {
    let t = build_generator(p.n, p.alpha1, p.beta1);
    let (minus, plus, rate): (Vec<usize>, Vec<usize>, Box<dyn Fn(usize) -> f64>) = match band {
        Band::Lower => (
            partition.lower_minus.clone(),
            partition.lower_plus.clone(),
            Box::new(|i| p.lower_rate(i)),
        ),
        Band::Upper => (
            partition.upper_minus.clone(),
            partition.upper_plus.clone(),
            Box::new(|i| p.upper_rate(i)),
        ),
    };
    let c_minus = DVector::from_iterator(minus.len(), minus.iter().map(|&i| rate(i).abs()));
    let c_plus = DVector::from_iterator(plus.len(), plus.iter().map(|&i| rate(i).abs()));
    BandBlocks {
        band,
        t_mm: submatrix(&t, &minus, &minus),
        t_mp: submatrix(&t, &minus, &plus),
        t_pm: submatrix(&t, &plus, &minus),
        t_pp: submatrix(&t, &plus, &plus),
        generator: t,
        minus,
        plus,
        c_minus,
        c_plus,
    }
}
