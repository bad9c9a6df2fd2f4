use proptest::prelude::*;

use super::*;
use crate::StationaryBuffer1;

fn band_state(x: f64, i1: usize, regime: Regime) -> SimState {
    SimState { t: 0.0, x, y: 0.0, i1, i2: 0, regime }
}

#[test]
fn hit_time_of_linear_descent() {
    // phase 0 in the lower band drains at c1 = 0.5
    let p = ModelParams { c1: 0.5, ..ModelParams::scenario_a() };
    let s = band_state(1.0, 0, Regime::Lower);
    assert_eq!(drifts(&p, &s).0, -0.5);
    assert!((boundary_hit_time(&p, &s) - 2.0).abs() < 1e-15);
    assert_eq!(next_crossing(&p, &s).unwrap().1, Crossing::XZero);
}

#[test]
fn zero_drift_has_no_crossing() {
    let p = ModelParams::scenario_a();
    let s = band_state(0.0, 0, Regime::AtZero);
    assert_eq!(drifts(&p, &s), (0.0, 0.0));
    assert_eq!(boundary_hit_time(&p, &s), f64::INFINITY);
}

#[test]
fn hit_time_matches_small_step_integration() {
    let p = ModelParams { r1: 1.8, c1: 1.6, ..ModelParams::scenario_a() };
    let s = band_state(1.4, 1, Regime::Lower);
    let (dx, _) = drifts(&p, &s);
    assert!((dx - 0.2).abs() < 1e-12);
    let h = 1e-6;
    let (mut x, mut t) = (s.x, 0.0);
    while x < p.x_star {
        x += dx * h;
        t += h;
    }
    let exact = boundary_hit_time(&p, &s);
    assert!((exact - 0.5).abs() < 1e-12);
    assert!((t - exact).abs() < 2e-6);
}

#[test]
fn buffer2_crossing_can_come_first() {
    let p = ModelParams::scenario_a();
    // X rises at 10.88 for 1.5 / 10.88 while Y drains at c2 = 1 from 0.1
    let s = SimState { t: 0.0, x: 0.0, y: 0.1, i1: 1, i2: 0, regime: Regime::Lower };
    let (t, c) = next_crossing(&p, &s).unwrap();
    assert_eq!(c, Crossing::YZero);
    assert!((t - 0.1).abs() < 1e-15);
}

#[test]
fn single_source_sticky_resolution() {
    let p = ModelParams::scenario_a().with_capacity(Some(3.5));
    let at = |regime, i1| sticky_resolution(&p, &band_state(0.0, i1, regime));
    assert_eq!(at(Regime::AtZero, 0), Regime::AtZero);
    assert_eq!(at(Regime::AtZero, 1), Regime::Lower);
    assert_eq!(at(Regime::AtCap, 1), Regime::AtCap);
    assert_eq!(at(Regime::AtCap, 0), Regime::Upper);
    // no phase has c1 < i R1 < c when N = 1
    assert_eq!(at(Regime::AtThreshold, 0), Regime::Lower);
    assert_eq!(at(Regime::AtThreshold, 1), Regime::Upper);
    let s = band_state(0.0, 0, Regime::AtZero);
    assert_eq!(buffer2_capacity(&p, &s), p.c());
}

#[test]
fn threshold_holds_intermediate_phases() {
    // N = 3, R1 = 1: c1 = 0.5 < 1 < 2 < c = 2.5
    let p = ModelParams { n: 3, r1: 1.0, r2: 1.0, c1: 0.5, c2: 2.0, ..ModelParams::scenario_a() };
    for (i1, want) in [(0, Regime::Lower), (1, Regime::AtThreshold), (2, Regime::AtThreshold), (3, Regime::Upper)] {
        let s = band_state(p.x_star, i1, Regime::AtThreshold);
        assert_eq!(sticky_resolution(&p, &s), want, "phase {i1}");
    }
    let s = band_state(p.x_star, 2, Regime::AtThreshold);
    assert!((buffer2_capacity(&p, &s) - 0.5).abs() < 1e-15);
}

#[test]
fn time_above_is_exact() {
    assert_eq!(time_above(0.0, 1.0, 2.0, 0.5), 1.5);
    assert_eq!(time_above(2.0, -1.0, 2.0, 0.5), 1.5);
    assert_eq!(time_above(1.0, 0.0, 2.0, 0.5), 2.0);
    assert_eq!(time_above(0.2, 0.0, 2.0, 0.5), 0.0);
}

#[test]
fn silent_buffer2_stays_empty() {
    let p = ModelParams { beta2: 0.0, ..ModelParams::scenario_a() };
    let mut cfg = SimConfig::new(2e4, 3);
    cfg.y_grid = vec![1e-9, 0.5, 2.0];
    cfg.x_grid = vec![1.5];
    let est = simulate(&p, &cfg).unwrap();
    assert!(est.y_tail.iter().all(|t| t.prob == 0.0 && t.std_error == 0.0));
    assert!(est.x_tail[0].prob > 0.0);
}

#[test]
fn rejects_bad_configs() {
    let p = ModelParams::scenario_a();
    let mut cfg = SimConfig::new(10.0, 0);
    cfg.warmup = Some(10.0);
    assert!(simulate(&p, &cfg).is_err());
    let mut cfg = SimConfig::new(10.0, 0);
    cfg.replications = 0;
    assert!(simulate(&p, &cfg).is_err());
    let q = ModelParams { n: 0, ..p };
    assert!(simulate(&q, &SimConfig::new(10.0, 0)).is_err());
}

#[test]
fn unstable_runs_are_flagged() {
    let p = ModelParams { beta2: 5.0, ..ModelParams::scenario_a() };
    let est = simulate(&p, &SimConfig::new(1e3, 0)).unwrap();
    assert!(est.unstable);
}

#[test]
fn same_seed_same_estimate() {
    let p = ModelParams::scenario_a().with_capacity(Some(3.5));
    let mut cfg = SimConfig::new(2e4, 11);
    cfg.replications = 3;
    cfg.x_grid = vec![0.5, 1.5, 3.0];
    cfg.y_grid = vec![1.0];
    let a = simulate(&p, &cfg).unwrap();
    let b = simulate(&p, &cfg).unwrap();
    assert_eq!(a, b);
    cfg.seed = 12;
    assert_ne!(simulate(&p, &cfg).unwrap(), a);
}

#[test]
fn finite_buffer_tail_matches_analysis() {
    let p = ModelParams::scenario_a().with_capacity(Some(3.5));
    let mut cfg = SimConfig::new(1e6, 2024);
    cfg.x_grid = vec![0.5, 1.0, 1.5, 2.5, 3.0];
    let est = simulate(&p, &cfg).unwrap();
    let exact = StationaryBuffer1::solve(&p).unwrap();
    for t in &est.x_tail {
        let want = exact.tail(t.level).unwrap();
        assert!((t.prob - want).abs() < 3.0 * t.std_error, "x = {}: {} ± {} vs {want}", t.level, t.prob, t.std_error);
    }
    // the threshold cell of the finite table
    assert!((est.x_tail[2].prob - 0.1411).abs() < 3.0 * est.x_tail[2].std_error + 5e-5);
}

#[test]
fn pinned_occupancy_matches_masses() {
    // phase 1 is held at x*
    let p = ModelParams { n: 2, r1: 2.0, r2: 2.0, c1: 1.5, c2: 1.3, alpha1: 3.0, beta1: 1.0, alpha2: 6.0, beta2: 0.5, x_star: 1.0, v: Some(2.5) };
    let exact = StationaryBuffer1::solve(&p).unwrap();
    let mut cfg = SimConfig::new(2e5, 5);
    cfg.replications = 2;
    let est = simulate(&p, &cfg).unwrap();
    for (state, mass) in exact.masses() {
        let regime = match state.boundary {
            Boundary::Zero => Regime::AtZero,
            Boundary::Star => Regime::AtThreshold,
            Boundary::Cap => Regime::AtCap,
        };
        let got = est.pinned.iter().find(|q| q.regime == regime && q.phase == state.phase).expect("visited");
        assert!((got.prob - mass).abs() < 4.0 * got.std_error + 1e-4, "{state}: {} ± {} vs {mass}", got.prob, got.std_error);
    }
    assert_eq!(est.pinned.len(), exact.masses().len());
    assert!(est.pinned.iter().any(|q| q.regime == Regime::AtThreshold && q.phase == 1));
}

#[test]
fn more_replications_shrink_the_error() {
    let p = ModelParams::scenario_a();
    let mut cfg = SimConfig::new(5e4, 9);
    cfg.x_grid = vec![1.5];
    let one = simulate(&p, &cfg).unwrap().x_tail[0].std_error;
    cfg.replications = 4;
    let four = simulate(&p, &cfg).unwrap().x_tail[0].std_error;
    let ratio = one / four;
    assert!(ratio > 1.4 && ratio < 2.9, "ratio {ratio}");
}

proptest! {
    #[test]
    fn regimes_follow_the_rate_table(
        n in 1usize..5, r1 in 0.5f64..5.0, c1 in 0.1f64..3.0, c2 in 0.1f64..3.0, i in 0usize..5, y in 0.0f64..2.0, i2 in 0usize..5,
    ) {
        let p = ModelParams { n, r1, c1, c2, ..ModelParams::scenario_a() }.with_capacity(Some(4.0));
        let i1 = i.min(n);
        let i2 = i2.min(n);
        for (regime, x) in [(Regime::AtZero, 0.0), (Regime::AtThreshold, p.x_star), (Regime::AtCap, 4.0)] {
            let mut s = SimState { t: 0.0, x, y, i1, i2, regime };
            s.regime = sticky_resolution(&p, &s);
            prop_assert_eq!(sticky_resolution(&p, &s), s.regime);
            let (dx, dy) = drifts(&p, &s);
            match (regime, s.regime) {
                (a, b) if a == b => prop_assert_eq!(dx, 0.0),
                (Regime::AtZero, Regime::Lower) | (Regime::AtThreshold, Regime::Upper) => prop_assert!(dx > 0.0),
                (Regime::AtThreshold, Regime::Lower) | (Regime::AtCap, Regime::Upper) => prop_assert!(dx < 0.0),
                (a, b) => prop_assert!(false, "{:?} resolved to {:?}", a, b),
            }
            if y == 0.0 {
                prop_assert!(dy >= 0.0);
            }
            let out2 = i2 as f64 * p.r2 - dy;
            prop_assert!(y == 0.0 || (out2 >= -1e-12 && out2 <= p.c() + 1e-12));
        }
    }
}
