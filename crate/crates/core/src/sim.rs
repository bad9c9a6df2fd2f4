//! Event-driven simulation of both buffers.
//!
//! Levels move linearly between events, so the only random inputs are the
//! phase-change clocks. Crossings of `0`, `x*` and `V` by Buffer 1 and of `0`
//! by Buffer 2 are located in closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer1::Boundary;
use crate::error::{FluidError, Result};
use crate::model::{check_assumptions, ModelParams, Violation};

fn default_replications() -> usize {
    1
}

fn default_batches() -> usize {
    50
}

/// Run length, seeding and query levels of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub horizon: f64,
    /// Discarded initial time; 10% of the horizon when absent.
    #[serde(default)]
    pub warmup: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default)]
    pub x_grid: Vec<f64>,
    #[serde(default)]
    pub y_grid: Vec<f64>,
}

impl SimConfig {
    pub fn new(horizon: f64, seed: u64) -> Self {
        Self {
            horizon,
            warmup: None,
            seed,
            replications: 1,
            batches: default_batches(),
            x_grid: Vec::new(),
            y_grid: Vec::new(),
        }
    }

    pub fn warmup(&self) -> f64 {
        self.warmup.unwrap_or(0.1 * self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.warmup();
        if !(self.horizon.is_finite() && w >= 0.0 && self.horizon > w) {
            return Err(FluidError::Domain(format!(
                "simulation needs horizon > warmup >= 0 (horizon {}, warmup {w})",
                self.horizon
            )));
        }
        if self.replications == 0 {
            return Err(FluidError::Domain("simulation needs at least one replication".into()));
        }
        if self.batches < 2 {
            return Err(FluidError::Domain("batch means need at least two batches".into()));
        }
        if self.x_grid.iter().chain(&self.y_grid).any(|q| !q.is_finite()) {
            return Err(FluidError::Domain("query levels must be finite".into()));
        }
        Ok(())
    }
}

/// Where Buffer 1 is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    AtZero,
    Lower,
    AtThreshold,
    Upper,
    AtCap,
}

impl Regime {
    pub fn boundary(self) -> Option<Boundary> {
        match self {
            Regime::AtZero => Some(Boundary::Zero),
            Regime::AtThreshold => Some(Boundary::Star),
            Regime::AtCap => Some(Boundary::Cap),
            Regime::Lower | Regime::Upper => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub i1: usize,
    pub i2: usize,
    pub regime: Regime,
}

impl SimState {
    /// Both buffers empty, all sources OFF.
    pub fn empty() -> Self {
        Self { t: 0.0, x: 0.0, y: 0.0, i1: 0, i2: 0, regime: Regime::AtZero }
    }
}

/// Boundary reached by the next crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossing {
    XZero,
    XThreshold,
    XCap,
    YZero,
}

/// Regime of Buffer 1 sitting exactly at a boundary in phase `i1`. Band
/// regimes are returned unchanged.
pub fn sticky_resolution(p: &ModelParams, state: &SimState) -> Regime {
    let rate = state.i1 as f64 * p.r1;
    match state.regime {
        Regime::AtZero if rate > p.c1 => Regime::Lower,
        Regime::AtThreshold if rate < p.c1 => Regime::Lower,
        Regime::AtThreshold if rate > p.c() => Regime::Upper,
        Regime::AtCap if rate < p.c() => Regime::Upper,
        r => r,
    }
}

/// Output capacity left to Buffer 2.
fn buffer2_capacity(p: &ModelParams, s: &SimState) -> f64 {
    match s.regime {
        Regime::AtZero | Regime::AtThreshold => p.c() - s.i1 as f64 * p.r1,
        Regime::Lower => p.c2,
        Regime::Upper | Regime::AtCap => 0.0,
    }
}

/// Net rates `(dX/dt, dY/dt)` in the current state.
pub fn drifts(p: &ModelParams, s: &SimState) -> (f64, f64) {
    let rate1 = s.i1 as f64 * p.r1;
    let dx = match s.regime {
        Regime::AtZero | Regime::AtThreshold | Regime::AtCap => 0.0,
        Regime::Lower => rate1 - p.c1,
        Regime::Upper => rate1 - p.c(),
    };
    let mut dy = s.i2 as f64 * p.r2 - buffer2_capacity(p, s);
    if s.y <= 0.0 && dy < 0.0 {
        dy = 0.0;
    }
    (dx, dy)
}

fn next_crossing(p: &ModelParams, s: &SimState) -> Option<(f64, Crossing)> {
    let (dx, dy) = drifts(p, s);
    let mut best: Option<(f64, Crossing)> = None;
    let mut offer = |t: f64, c: Crossing| {
        let t = t.max(0.0);
        if best.is_none_or(|(b, _)| t < b) {
            best = Some((t, c));
        }
    };
    match s.regime {
        Regime::Lower if dx < 0.0 => offer(s.x / -dx, Crossing::XZero),
        Regime::Lower if dx > 0.0 => offer((p.x_star - s.x) / dx, Crossing::XThreshold),
        Regime::Upper if dx < 0.0 => offer((s.x - p.x_star) / -dx, Crossing::XThreshold),
        Regime::Upper if dx > 0.0 => {
            if let Some(v) = p.v {
                offer((v - s.x) / dx, Crossing::XCap)
            }
        }
        _ => {}
    }
    if dy < 0.0 {
        offer(s.y / -dy, Crossing::YZero);
    }
    best
}

/// Time until the next crossing of a boundary by either level, infinite if
/// neither level is heading to one.
pub fn boundary_hit_time(p: &ModelParams, s: &SimState) -> f64 {
    next_crossing(p, s).map_or(f64::INFINITY, |(t, _)| t)
}

/// Time within a segment of length `d` that a linear path from `z0` with slope
/// `dz` spends above `q`.
fn time_above(z0: f64, dz: f64, d: f64, q: f64) -> f64 {
    let z1 = z0 + dz * d;
    match (z0 > q, z1 > q) {
        (true, true) => d,
        (false, false) => 0.0,
        (true, false) => ((z0 - q) / -dz).clamp(0.0, d),
        (false, true) => (d - (q - z0) / dz).clamp(0.0, d),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub level: f64,
    pub prob: f64,
    pub std_error: f64,
}

/// Fraction of time Buffer 1 is held at a boundary in a given phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinnedPoint {
    pub regime: Regime,
    pub phase: usize,
    pub prob: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub x_tail: Vec<TailPoint>,
    pub y_tail: Vec<TailPoint>,
    pub pinned: Vec<PinnedPoint>,
    pub replications: usize,
    pub batches: usize,
    pub events: u64,
    /// Mean input at least the total capacity; estimates are then transient.
    pub unstable: bool,
}

const PINNED: [Regime; 3] = [Regime::AtZero, Regime::AtThreshold, Regime::AtCap];

/// Per-batch accumulated times of one replication.
struct Run {
    /// `[batch][level]`
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    /// `[batch][regime * (N+1) + phase]`
    pinned: Vec<Vec<f64>>,
    events: u64,
}

struct Replication<'a> {
    p: &'a ModelParams,
    cfg: &'a SimConfig,
    warmup: f64,
    batch_len: f64,
    run: Run,
}

impl Replication<'_> {
    fn record(&mut self, s: &SimState, dx: f64, dy: f64, dt: f64) {
        let (mut t0, end) = (s.t.max(self.warmup), (s.t + dt).min(self.cfg.horizon));
        let pin = PINNED.iter().position(|&r| r == s.regime).map(|k| k * (self.p.n + 1) + s.i1);
        while t0 < end {
            let b = (((t0 - self.warmup) / self.batch_len) as usize).min(self.cfg.batches - 1);
            let b_end = if b + 1 == self.cfg.batches { end } else { (self.warmup + (b + 1) as f64 * self.batch_len).min(end) };
            let d = b_end - t0;
            if d <= 0.0 {
                break;
            }
            let off = t0 - s.t;
            let (x0, y0) = (s.x + dx * off, s.y + dy * off);
            for (acc, &q) in self.run.x[b].iter_mut().zip(&self.cfg.x_grid) {
                *acc += time_above(x0, dx, d, q);
            }
            for (acc, &q) in self.run.y[b].iter_mut().zip(&self.cfg.y_grid) {
                *acc += time_above(y0, dy, d, q);
            }
            if let Some(k) = pin {
                self.run.pinned[b][k] += d;
            }
            t0 = b_end;
        }
    }

    fn execute(mut self, replication: usize) -> Run {
        let p = self.p;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(replication as u64);
        let n = p.n;
        let mut s = SimState::empty();
        s.regime = sticky_resolution(p, &s);
        while s.t < self.cfg.horizon {
            let r1 = s.i1 as f64 * p.alpha1 + (n - s.i1) as f64 * p.beta1;
            let r2 = s.i2 as f64 * p.alpha2 + (n - s.i2) as f64 * p.beta2;
            let total = r1 + r2;
            let ev = if total > 0.0 {
                let e: f64 = rng.sample(Exp1);
                e / total
            } else {
                f64::INFINITY
            };
            let (dx, dy) = drifts(p, &s);
            let hit = next_crossing(p, &s);
            let dt = ev.min(hit.map_or(f64::INFINITY, |(t, _)| t)).min(self.cfg.horizon - s.t);
            self.record(&s, dx, dy, dt);
            s.t += dt;
            s.x += dx * dt;
            s.y += dy * dt;
            if let Some((t, c)) = hit.filter(|&(t, _)| dt == t) {
                // memoryless clocks: the pending phase change is simply redrawn
                debug_assert!(t <= ev);
                self.cross(&mut s, c);
            } else if dt == ev {
                self.run.events += 1;
                if rng.random::<f64>() * total < r1 {
                    if rng.random::<f64>() * r1 < s.i1 as f64 * p.alpha1 {
                        s.i1 -= 1;
                    } else {
                        s.i1 += 1;
                    }
                    s.regime = sticky_resolution(p, &s);
                } else if rng.random::<f64>() * r2 < s.i2 as f64 * p.alpha2 {
                    s.i2 -= 1;
                } else {
                    s.i2 += 1;
                }
            }
        }
        self.run
    }

    /// Snap the level that reached a boundary and resolve the new regime.
    fn cross(&self, s: &mut SimState, c: Crossing) {
        let p = self.p;
        let (x, regime) = match c {
            Crossing::YZero => {
                s.y = 0.0;
                return;
            }
            Crossing::XZero => (0.0, Regime::AtZero),
            Crossing::XThreshold => (p.x_star, Regime::AtThreshold),
            Crossing::XCap => (p.v.expect("crossing of V needs a finite buffer"), Regime::AtCap),
        };
        s.x = x;
        s.regime = regime;
        s.regime = sticky_resolution(p, s);
    }
}

fn batch_stats(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Time-average estimates of `P(X > x)`, `P(Y > y)` and the pinned-state
/// occupancies, with batch-means standard errors.
pub fn simulate(p: &ModelParams, cfg: &SimConfig) -> Result<SimEstimate> {
    cfg.validate()?;
    let report = check_assumptions(p);
    let fatal = report.violations.iter().any(|v| {
        matches!(v, Violation::NoSources | Violation::NotFinite(_) | Violation::CapacityBelowThreshold { .. })
            || matches!(v, Violation::NonPositive { field, value } if *value < 0.0 || !field.starts_with(['a', 'b']))
    });
    if fatal {
        return Err(FluidError::InvalidModel(report));
    }
    let unstable = report.violations.iter().any(|v| matches!(v, Violation::Unstable { .. }));
    if !report.is_ok() {
        log::warn!("simulating outside the standing assumptions: {report}");
    }

    let warmup = cfg.warmup();
    let batch_len = (cfg.horizon - warmup) / cfg.batches as f64;
    let slots = PINNED.len() * (p.n + 1);
    let runs: Vec<Run> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let run = Run {
                x: vec![vec![0.0; cfg.x_grid.len()]; cfg.batches],
                y: vec![vec![0.0; cfg.y_grid.len()]; cfg.batches],
                pinned: vec![vec![0.0; slots]; cfg.batches],
                events: 0,
            };
            Replication { p, cfg, warmup, batch_len, run }.execute(r)
        })
        .collect();

    let means = |pick: &dyn Fn(&Run, usize) -> f64| {
        batch_stats(runs.iter().flat_map(|r| (0..cfg.batches).map(move |b| pick(r, b) / batch_len)))
    };
    let tail = |grid: &[f64], x: bool| -> Vec<TailPoint> {
        grid.iter()
            .enumerate()
            .map(|(k, &level)| {
                let (prob, std_error) = means(&|r, b| if x { r.x[b][k] } else { r.y[b][k] });
                TailPoint { level, prob, std_error }
            })
            .collect()
    };
    let x_tail = tail(&cfg.x_grid, true);
    let y_tail = tail(&cfg.y_grid, false);
    let mut pinned = Vec::new();
    for (k, &regime) in PINNED.iter().enumerate() {
        if regime == Regime::AtCap && p.v.is_none() {
            continue;
        }
        for phase in 0..=p.n {
            let slot = k * (p.n + 1) + phase;
            let (prob, std_error) = means(&|r, b| r.pinned[b][slot]);
            if prob > 0.0 {
                pinned.push(PinnedPoint { regime, phase, prob, std_error });
            }
        }
    }
    Ok(SimEstimate {
        x_tail,
        y_tail,
        pinned,
        replications: cfg.replications,
        batches: cfg.batches,
        events: runs.iter().map(|r| r.events).sum(),
        unstable,
    })
}

#[cfg(test)]
mod tests;
