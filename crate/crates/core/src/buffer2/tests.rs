use approx::assert_relative_eq;
use nalgebra::DMatrix;

use super::xi::{classify, grid};
use super::*;
use crate::buffer1::StationaryBuffer1;
use crate::model::build_generator;

fn reference() -> ModelParams {
    ModelParams { alpha2: 11.0, beta2: 1.0, r2: 12.48, ..ModelParams::scenario_a() }
}

fn source(p: &ModelParams) -> CompensatingSource {
    CompensatingSource::new(p, RICCATI_TOL).unwrap()
}

fn three_source() -> ModelParams {
    ModelParams { n: 3, r1: 2.3, alpha1: 3.0, beta1: 1.0, c1: 1.5, c2: 2.0, r2: 1.3, alpha2: 2.0, beta2: 1.0, x_star: 1.0, v: None }
}

/// Effective bandwidth as the Perron root of `Q + v R`, divided by `v`.
fn eb_oracle(v: f64, r: f64, a: f64, b: f64) -> f64 {
    let q = build_generator(1, a, b);
    let m = q + DMatrix::from_diagonal(&nalgebra::dvector![0.0, v * r]);
    chi(&m) / v
}

#[test]
fn single_source_rates() {
    let p = reference();
    let src = source(&p);
    let names: Vec<String> = src.states.iter().map(|s| s.to_string()).collect();
    assert_eq!(names, ["(0,u,1)", "(0,s,0)", "(x*,u,1)", "(x*,d,0)"]);
    assert_eq!(src.a_dot, vec![p.c1, 0.0, p.c(), p.c1]);
}

#[test]
fn sticky_rates_at_threshold_are_peak_inputs() {
    let p = three_source();
    let src = source(&p);
    let c = p.c();
    let mut seen = false;
    for (st, a) in src.states.iter().zip(&src.a_dot) {
        assert!((0.0..=c).contains(a));
        if st.boundary == Boundary::Star && st.exit == Exit::Sticky {
            assert_eq!(*a, st.phase as f64 * p.r1);
            seen = true;
        }
    }
    assert!(seen, "fixture must have a sticky state at x*");
}

#[test]
fn finite_buffer_cap_rates_are_full_capacity() {
    let p = reference().with_capacity(Some(3.5));
    let src = source(&p);
    for (st, a) in src.states.iter().zip(&src.a_dot) {
        if st.boundary == Boundary::Cap {
            assert_eq!(*a, p.c());
        }
    }
    assert_eq!(src.len(), 6);
}

#[test]
fn kernel_at_zero_is_jump_chain() {
    for p in [reference(), three_source(), reference().with_capacity(Some(6.0))] {
        let src = source(&p);
        let k: DMatrix<f64> = src.kernel_lst(0.0).unwrap();
        assert!((&k - &src.omega).amax() < 1e-10);
        let half: DMatrix<f64> = src.kernel_lst(0.5).unwrap();
        for (a, b) in half.iter().zip(src.omega.iter()) {
            assert!(*a <= b + 1e-12 && *a >= -1e-14);
        }
        for r in half.row_iter() {
            assert!(r.sum() <= 1.0);
        }
    }
}

#[test]
fn exponential_bandwidth_limits_and_oracle() {
    let (r, a, b) = (12.48, 11.0, 1.0);
    let mean = r * b / (a + b);
    assert!((eb_exponential(1e-8, r, a, b) - mean).abs() < 1e-4);
    assert!((eb_exponential(1e6, r, a, b) - r).abs() < 1e-3);
    let mut prev = 0.0;
    for k in -6..=6 {
        let v = 10f64.powf(k as f64 * 0.5);
        let e = eb_exponential(v, r, a, b);
        assert!(e >= prev);
        assert_relative_eq!(e, eb_oracle(v, r, a, b), max_relative = 1e-9);
        prev = e;
    }
}

#[test]
fn phi_limits_and_monotonicity() {
    let src = source(&reference());
    let top = src.a_dot.iter().cloned().fold(0.0, f64::max);
    let phi = src.phi(0.7, top).unwrap();
    for (a, b) in phi.iter().zip(src.omega.iter()) {
        assert!(*a <= b + 1e-12);
    }
    let far = src.phi(0.7, 1e4).unwrap();
    assert!(far.amax() < 1e-2 && chi(&far) < chi(&phi));
    let mut prev = f64::INFINITY;
    for k in 0..=20 {
        let u = 2.6 * k as f64 / 20.0;
        let x = src.chi_at(0.5, u).unwrap();
        assert!(x <= prev + 1e-12, "χ increased at u = {u}");
        prev = x;
    }
}

#[test]
fn compensating_bandwidth_properties() {
    let p = reference();
    let src = source(&p);
    let c = p.c();
    let mut prev = 0.0;
    for k in 0..20 {
        let v = 10f64.powf(-2.0 + 4.0 * k as f64 / 19.0);
        let e = src.eb_compensating(v).unwrap();
        assert!((0.0..=c).contains(&e));
        assert!(e >= prev - 1e-9, "eb_c decreased at v = {v}");
        prev = e;
        // either χ crosses 1, or the root sits at the abscissa where χ jumps
        let x = src.chi_at(v, e).unwrap();
        let left = src.chi_at(v, e - 1e-9).unwrap();
        assert!((x - 1.0).abs() < 1e-6 || (x < 1.0 && left.is_infinite()), "χ = {x} at v = {v}");
    }
    assert!((src.eb_compensating(1e3).unwrap() - c).abs() < 1e-2 * c);
}

#[test]
fn decay_rate_residual() {
    let p = reference();
    let src = source(&p);
    let eta = src.solve_eta(1e-10).unwrap();
    assert!(eta > 0.0);
    assert!(src.eta_residual(eta).unwrap().abs() < 1e-8);
    assert_relative_eq!(eta, 0.214669, epsilon = 1e-6);
}

#[test]
fn nearly_silent_buffer2_sources() {
    // with β2 → 0 the exponential bandwidth tends to max(0, R2 − α2/v), set by
    // the ON period alone, so the decay rate stays finite
    let p = ModelParams { beta2: 1e-12, ..reference() };
    let src = source(&p);
    let eta = src.solve_eta(1e-10).unwrap();
    assert!(eta > p.alpha2 / p.r2);
    let limit = src.eb_compensating(eta).unwrap() + p.r2 - p.alpha2 / eta - p.c();
    assert!(limit.abs() < 1e-8, "{limit}");
}

#[test]
fn sojourn_means_match_sticky_rates() {
    let p = three_source();
    let src = source(&p);
    let tau = src.sojourn_means().unwrap();
    for (k, st) in src.states.iter().enumerate() {
        assert!(tau[k] > 0.0);
        if st.exit == Exit::Sticky {
            let want = -1.0 / src.model.generator[(st.phase, st.phase)];
            assert_relative_eq!(tau[k], want, max_relative = 1e-8);
        }
    }
}

#[test]
fn mean_sojourn_matches_inverted_tail_integral() {
    // τ of a band state against ∫ (Ω_i· − Ω_i·(x)) dx from the inverted kernel
    let src = source(&reference());
    let tau = src.sojourn_means().unwrap();
    let i = 2;
    let group = src.model.layout.group_of(i);
    let om_row: f64 = src.omega.row(i).sum();
    let xs: Vec<f64> = (1..=4000).map(|k| k as f64 * 0.01).collect();
    let vals = invert_group(&src, group, &xs, &Euler::default(), |s, k| {
        vec![(Complex64::from(om_row) - k.row(i).sum()) / s]
    })
    .unwrap();
    // trapezoid with the value 1 (total mass) at x = 0
    let mut integral = 0.5 * 0.01 * (om_row + vals[0][0]);
    for w in vals.windows(2) {
        integral += 0.5 * 0.01 * (w[0][0] + w[1][0]);
    }
    assert_relative_eq!(integral, tau[i], max_relative = 1e-3);
}

#[test]
fn jump_stationary_vector() {
    let src = source(&reference());
    let w = src.jump_stationary().unwrap();
    assert!((w.sum() - 1.0).abs() < 1e-12);
    assert!(w.iter().all(|x| *x >= 0.0));
    assert!((w.transpose() * &src.omega - w.transpose()).amax() < 1e-10);
}

#[test]
fn sticky_failure_rate_is_constant() {
    let src = source(&reference());
    let e = Euler::default();
    let (i, j) = (1, 0);
    let mu = -src.model.generator[(0, 0)];
    for x in [0.1, 0.5, 1.0, 3.0] {
        let l = src.failure_rate(i, j, x, &e).unwrap();
        assert!((l - mu).abs() < 1e-6 * mu, "λ({x}) = {l}");
    }
    assert!(src.failure_rate(1, 1, 0.5, &e).is_err());
}

#[test]
fn failure_classification_is_stable_under_refinement() {
    let src = source(&reference());
    let tau = src.sojourn_means().unwrap();
    let e = Euler::default();
    let (i, j) = (2, 3);
    let classes: Vec<FailureClass> = [200, 400]
        .iter()
        .map(|&n| {
            let xs = grid(tau[i], n);
            let lam: Vec<f64> = xs.iter().map(|&x| src.failure_rate(i, j, x, &e).unwrap()).collect();
            assert!(lam.iter().all(|l| *l >= 0.0));
            classify(&lam)
        })
        .collect();
    assert_eq!(classes[0], classes[1]);
}

#[test]
fn classification_rules() {
    assert_eq!(classify(&[1.0, 1.0, 1.0]), FailureClass::Constant);
    assert_eq!(classify(&[1.0, 2.0, 3.0]), FailureClass::Increasing);
    assert_eq!(classify(&[3.0, 2.0, 2.0]), FailureClass::Decreasing);
    assert_eq!(classify(&[1.0, 3.0, 2.0]), FailureClass::Neither);
}

#[test]
fn reference_bounds() {
    let p = reference();
    let b = Buffer2Bounds::compute(&p, &Buffer2Options::default()).unwrap();
    assert!((b.chi - 1.0).abs() < 1e-6);
    assert!((b.h.sum() - 1.0).abs() < 1e-12 && b.h.iter().all(|x| *x >= 0.0));
    assert!((b.h.transpose() * &b.phi - b.h.transpose()).amax() < 1e-6);
    assert!((b.p.sum() - 1.0).abs() < 1e-12 && b.p.iter().all(|x| *x >= 0.0));
    assert_relative_eq!(b.h_c, 0.72979, epsilon = 1e-4);
    assert_relative_eq!(b.prefactor, 0.63691, epsilon = 1e-4);
    assert!(0.0 < b.k_lower && b.k_lower <= b.k_upper);
    for e in &b.xi {
        assert!(0.0 < e.min && e.min <= e.max, "{e:?}");
        let st = b.states[e.i];
        if st.exit == Exit::Sticky {
            assert_eq!(e.min, e.max);
            // exponential sojourn: direct integral of f gives µ/(µ − θ)
            let mu = e.lambda_inf;
            let th = b.theta[e.i];
            let dx = 1e-3;
            let tail: f64 = (0..40_000).map(|k| ((k as f64 + 0.5) * dx * (th - mu)).exp() * mu * dx).sum();
            let w = b.h[e.i] * b.tau[e.i] / b.p[e.i];
            assert_relative_eq!(e.max, w * tail, max_relative = 1e-6);
        }
        let base = b.phi[(e.i, e.j)] * b.tau[e.i] * b.h[e.i] / (b.jump[(e.i, e.j)] * b.p[e.i]);
        match (e.class, b.theta[e.i] > 0.0) {
            (FailureClass::Increasing, true) | (FailureClass::Decreasing, false) => assert_relative_eq!(e.max, base),
            (FailureClass::Increasing, false) | (FailureClass::Decreasing, true) => assert_relative_eq!(e.min, base),
            _ => {}
        }
    }
    for k in 0..30 {
        let x = k as f64 * 0.5;
        let (lo, hi) = b.tail_bounds(x);
        assert!(lo <= hi);
        let (lo2, hi2) = b.tail_bounds(x + 1.0);
        assert_relative_eq!(hi2.ln() - hi.ln(), -b.eta, epsilon = 1e-12);
        assert_relative_eq!(lo2.ln() - lo.ln(), -b.eta, epsilon = 1e-12);
    }
}

#[test]
fn finite_buffer_bounds_are_consistent() {
    let inf = Buffer2Bounds::compute(&reference(), &Buffer2Options::default()).unwrap();
    let mut prev = f64::INFINITY;
    for v in [3.5, 6.0, 20.0] {
        let b = Buffer2Bounds::compute(&reference().with_capacity(Some(v)), &Buffer2Options::default()).unwrap();
        assert!(0.0 < b.k_lower && b.k_lower <= b.k_upper);
        assert!((b.chi - 1.0).abs() < 1e-6);
        // losing fluid at V only speeds up the decay, less so for larger V
        assert!(b.eta >= inf.eta - 1e-9 && b.eta <= prev);
        prev = b.eta;
    }
    assert!((prev - inf.eta).abs() < 1e-3 * inf.eta);
}

#[test]
fn time_weights_match_buffer1_occupancy() {
    // time-average of ȧ: c1 inside the lower band, c above x*, 0 at the empty buffer
    let p = reference();
    let src = source(&p);
    let w = src.jump_stationary().unwrap();
    let tau = src.sojourn_means().unwrap();
    let wt = w.component_mul(&tau);
    let mean_a: f64 = wt.iter().zip(&src.a_dot).map(|(x, a)| x * a).sum::<f64>() / wt.sum();
    let s = StationaryBuffer1::solve(&p).unwrap();
    let above = s.tail(p.x_star).unwrap();
    let band = 1.0 - above - s.mass_at(Boundary::Zero);
    assert_relative_eq!(mean_a, band * p.c1 + above * p.c(), max_relative = 1e-6);
}
