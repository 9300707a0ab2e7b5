use super::*;
use proptest::prelude::*;

fn geom(lambda: f64, d: usize) -> SpikedGeometry {
    SpikedGeometry::new(lambda, d).unwrap()
}

#[test]
fn signal_pre_gradient_vanishes_at_target() {
    let g = pre_gradients(&ReducedState::target(), &geom(3.0, 10));
    assert_eq!(g.g_wstar, 0.0);
}

#[test]
fn spike_pre_gradient_hand_value() {
    let mu = 0.01;
    let g = pre_gradients(&ReducedState::isotropic(mu), &geom(1.0, 4));
    assert!((g.g_v - (-7.28)).abs() < 1e-12, "{}", g.g_v);
}

#[test]
fn gd_fixed_point() {
    for eta in [1e-3, 0.1, 1.0] {
        assert_eq!(gd_reduced_step(&ReducedState::target(), eta, &geom(5.0, 20)), ReducedState::target());
    }
}

#[test]
fn specgd_grows_all_roots_in_stage_one() {
    let g = geom(10.0, 100);
    let mu = g.isotropic_coefficient(0.05);
    let eta = 0.01;
    let next = specgd_reduced_step(&ReducedState::isotropic(mu), eta, &g);
    let expected = (mu.sqrt() + eta).powi(2);
    assert!((next.a - expected).abs() < 1e-16);
    assert!((next.b - expected).abs() < 1e-16);
    assert!((next.c - expected).abs() < 1e-16);
}

#[test]
fn specgd_reflects_through_zero() {
    let g = geom(100.0, 10);
    let state = ReducedState::new(0.9, 0.0036, 0.0);
    assert!(pre_gradients(&state, &g).g_v > 0.0);
    let eta = 0.1;
    let next = specgd_reduced_step(&state, eta, &g);
    assert!((next.beta() - (eta - 0.06)).abs() < 1e-15);
}

#[test]
fn specgd_keeps_zero_coordinates() {
    let zero = ReducedState::new(0.0, 0.0, 0.0);
    assert_eq!(specgd_reduced_step(&zero, 0.3, &geom(2.0, 5)), zero);
}

#[test]
fn sign_convention() {
    assert_eq!(sign(0.0), 0.0);
    assert_eq!(sign(-0.0), 0.0);
    assert_eq!(sign(2.0), 1.0);
    assert_eq!(sign(-1e-300), -1.0);
}

#[test]
fn turning_predicate_boundaries() {
    let g = geom(2.0, 10);
    let s = g.spike_variance();
    assert!(gd_turning_predicate(&ReducedState::new(0.0, 1.0 / (3.0 * s), 0.0), &g));
    assert!(!gd_turning_predicate(&ReducedState::new(0.0, 0.1 / s, 0.0), &g));
}

#[test]
fn loss_and_alignment_reference_values() {
    let g = geom(4.0, 12);
    assert_eq!(reduced_loss(&ReducedState::target(), &g, 0.0), 0.0);
    assert!((reduced_loss(&ReducedState::new(0.0, 0.0, 0.0), &g, 0.0) - 3.0).abs() < 1e-15);
    assert_eq!(reduced_alignment(&ReducedState::target(), 12).unwrap(), 1.0);
    let iso = reduced_alignment(&ReducedState::isotropic(0.3), 12).unwrap();
    assert!((iso - 1.0 / 12f64.sqrt()).abs() < 1e-15);
    assert!(reduced_alignment(&ReducedState::new(0.0, 0.0, 0.0), 12).is_err());
}

#[test]
fn geometry_rejects_bad_inputs() {
    assert!(SpikedGeometry::new(1.0, 2).is_err());
    assert!(SpikedGeometry::new(-1.0, 5).is_err());
    assert!(SpikedGeometry::new(f64::NAN, 5).is_err());
}

#[test]
fn gd_flow_fixed_point_and_increment_signs() {
    let g = geom(3.0, 20);
    assert_eq!(gd_flow_step(&ReducedState::target(), 0.01, &g), ReducedState::target());
    let state = ReducedState::new(0.2, 0.01, 0.003);
    let h = 1e-3;
    let flow = gd_flow_step(&state, h, &g);
    let disc = gd_reduced_step(&state, h, &g);
    for (s0, f, d) in [(state.a, flow.a, disc.a), (state.b, flow.b, disc.b), (state.c, flow.c, disc.c)] {
        assert_eq!((f - s0).signum(), (d - s0).signum());
    }
}

#[test]
fn gd_flow_euler_is_first_order() {
    let g = geom(3.0, 20);
    let init = ReducedState::new(0.2, 0.01, 0.003);
    let horizon = 0.4;
    let run = |h: f64| {
        let steps = (horizon / h).round() as usize;
        let mut s = init;
        for _ in 0..steps {
            s = gd_flow_step(&s, h, &g);
        }
        s
    };
    let h = 0.01;
    let reference = run(h / 100.0);
    let err = |s: ReducedState| (s.a - reference.a).abs() + (s.b - reference.b).abs() + (s.c - reference.c).abs();
    let ratio = err(run(h)) / err(run(h / 2.0));
    assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
}

#[test]
fn spec_flow_is_discrete_recursion() {
    let g = geom(8.0, 30);
    let state = ReducedState::new(0.1, 0.02, 0.004);
    assert_eq!(spec_flow_step(&state, 0.003, &g), specgd_reduced_step(&state, 0.003, &g));
}

#[test]
fn spec_flow_signal_hitting_time() {
    let g = geom(40.0, 400);
    let mu = g.isotropic_coefficient(0.01);
    let h = 1e-4;
    let rho = 0.04;
    let mut state = ReducedState::isotropic(mu);
    let mut k = 0usize;
    while state.a < rho {
        state = spec_flow_step(&state, h, &g);
        k += 1;
    }
    let predicted = (rho.sqrt() - mu.sqrt()) / h;
    assert!((k as f64 - predicted).abs() <= 1.0, "k {k} predicted {predicted}");
}

#[test]
fn spec_flow_chatter_band_is_order_h() {
    // Once g_v changes sign, β stays within a band of width ≤ 2h.
    let g = geom(40.0, 400);
    let h = 2e-3;
    let mu = g.isotropic_coefficient(0.05);
    let mut state = ReducedState::isotropic(mu);
    let mut betas = Vec::new();
    let mut turned = false;
    for _ in 0..20_000 {
        let g_v = pre_gradients(&state, &g).g_v;
        turned |= g_v > 0.0;
        state = spec_flow_step(&state, h, &g);
        if turned {
            betas.push(state.beta());
        }
    }
    let tail = &betas[betas.len() / 2..];
    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(hi - lo <= 2.0 * h + 1e-15, "band {}", hi - lo);
}

#[test]
fn stage_detection_on_constant_target() {
    let traj = vec![ReducedState::target(); 5];
    let t = detect_stages(&traj, &geom(1.0, 10), &StageThresholds::default(), Algorithm::Gd);
    assert_eq!(t.t1a, Some(0));
    assert_eq!(t.t1, Some(0));
    assert_eq!(t.t2a, Some(0));
    assert_eq!(t.t2, Some(0));
    assert_eq!(t.n1_prime, None);
}

#[test]
fn unreached_stages_are_none() {
    let g = geom(1.0, 10);
    let traj = vec![ReducedState::isotropic(1e-4); 3];
    let t = detect_stages(&traj, &g, &StageThresholds::default(), Algorithm::SpecGd);
    assert_eq!(t, StageTimes::default());
}

#[test]
fn stage_times_are_ordered_on_gd_run() {
    let g = geom(40.0, 400);
    let eta = gd_eta_bound(40.0) / 2.0;
    let init = ReducedState::isotropic(g.isotropic_coefficient(0.05));
    let traj = reduced_trajectory(Algorithm::Gd, init, eta, &g, 20_000);
    let t = detect_stages(&traj, &g, &StageThresholds::default(), Algorithm::Gd);
    let (t1a, t1, t2a, t2) = (t.t1a.unwrap(), t.t1.unwrap(), t.t2a.unwrap(), t.t2.unwrap());
    assert!(t1a <= t1 && t1 <= t2a && t2a <= t2);
}

#[test]
fn threshold_validation() {
    assert!(StageThresholds::default().validate().is_ok());
    let bad = [
        StageThresholds { rho: 1.0 / 12.0, ..Default::default() },
        StageThresholds { rho: 0.0, ..Default::default() },
        StageThresholds { epsilon: 0.3, ..Default::default() },
        StageThresholds { delta: 0.0, ..Default::default() },
        StageThresholds { kappa: -1.0, ..Default::default() },
    ];
    for t in bad {
        assert!(t.validate().is_err(), "{t:?}");
    }
}

#[test]
fn barrier_monitor_contract() {
    let g = geom(50.0, 500);
    let init = ReducedState::isotropic(g.isotropic_coefficient(0.05));
    let eta = gd_barrier_eta_bound(50.0);
    let traj = reduced_trajectory(Algorithm::Gd, init, eta, &g, 10_000);
    let report = verify_gd_barriers(&traj, eta, &g).unwrap();
    assert!(report.passed() && !report.precondition_breached);

    let big = 1.0 / (2.0 * g.spike_variance());
    let traj = reduced_trajectory(Algorithm::Gd, init, big, &g, 200);
    assert!(verify_gd_barriers(&traj, big, &g).unwrap().precondition_breached);

    let outside = ReducedState::new(0.1, 0.4 / g.spike_variance(), 0.0);
    assert!(matches!(verify_gd_barriers(&[outside], eta, &g), Err(Error::Precondition(_))));
    assert!(verify_gd_barriers(&[init], eta, &geom(1.0, 3)).is_err());
}

#[test]
fn spec_constants_reject_large_kappa() {
    let err = SpecBoundConstants::new(0.5, 0.01).unwrap_err();
    assert!(err.to_string().contains("A0"), "{err}");
    let c = SpecBoundConstants::new(0.05, 0.001).unwrap();
    assert!((c.c_noise - c.c_b - c.c_c).abs() < 1e-15 && c.a0 > 0.0 && c.a_floor < c.a0);
}

#[test]
fn turning_equivalence_on_gd_run() {
    let g = geom(20.0, 200);
    let eta = 1.0 / (20.0 * g.spike_variance());
    let init = ReducedState::isotropic(g.isotropic_coefficient(0.05));
    let traj = reduced_trajectory(Algorithm::Gd, init, eta, &g, 5_000);
    let report = check_turning_equivalence(&traj, &g);
    assert_eq!(report.mismatches, 0);
    assert_eq!(report.steps_checked, 5_000);
}

#[test]
fn stage_one_envelopes_hold() {
    let g = geom(30.0, 300);
    let eta = gd_barrier_eta_bound(30.0) / 2.0;
    let init = ReducedState::isotropic(g.isotropic_coefficient(1e-3));
    let traj = reduced_trajectory(Algorithm::Gd, init, eta, &g, 2_000);
    let report = check_gd_stage1_envelopes(&traj, eta, &g, 1.0 / 24.0).unwrap();
    assert!(report.steps_checked > 10);
    assert_eq!(report.violations, 0);
}

proptest! {
    #[test]
    fn steps_keep_coefficients_nonnegative(
        a in 0.0f64..2.0, b in 0.0f64..0.1, c in 0.0f64..0.01,
        eta in 1e-5f64..0.5, lambda in 0.0f64..100.0, d in 3usize..500,
    ) {
        let g = geom(lambda, d);
        let s = ReducedState::new(a, b, c);
        for next in [gd_reduced_step(&s, eta, &g), specgd_reduced_step(&s, eta, &g)] {
            prop_assert!(next.a >= 0.0 && next.b >= 0.0 && next.c >= 0.0);
        }
    }

    #[test]
    fn network_mass_identity(a in 0.0f64..2.0, b in 0.0f64..0.1, c in 0.0f64..0.01, lambda in 0.0f64..100.0, d in 3usize..500) {
        let g = geom(lambda, d);
        let m = ReducedState::new(a, b, c).masses(&g);
        prop_assert!((m.network - (a + (1.0 + lambda) * b + (d as f64 - 2.0) * c)).abs() <= 1e-14 * (1.0 + m.network));
    }

    #[test]
    fn gd_stays_in_barrier_region(
        a in 0.0f64..1.0, bm in 0.0f64..(1.0 / 3.0), cm in 0.0f64..1.0,
        lambda in 0.0f64..200.0, d in 4usize..2000, frac in 0.01f64..1.0,
    ) {
        let g = geom(lambda, d);
        let init = ReducedState::new(a, bm / g.spike_variance(), cm / g.bulk_dim());
        let eta = gd_barrier_eta_bound(lambda) * frac;
        let traj = reduced_trajectory(Algorithm::Gd, init, eta, &g, 300);
        let report = verify_gd_barriers(&traj, eta, &g).unwrap();
        prop_assert!(report.passed(), "{:?}", report.first_violation);
    }

    #[test]
    fn specgd_stage_one_is_exact_arithmetic_progression(lambda_frac in 0.05f64..0.5, d in 50usize..800) {
        let lambda = lambda_frac * d as f64;
        let g = geom(lambda, d);
        let eta = kappa_eta(0.05, &g);
        let mu = g.isotropic_coefficient(0.05);
        let mut state = ReducedState::isotropic(mu);
        let mut k = 0usize;
        while pre_gradients(&state, &g).g_v < 0.0 && k < 10_000 {
            prop_assert!((state.alpha() - (mu.sqrt() + k as f64 * eta)).abs() <= 1e-13);
            state = specgd_reduced_step(&state, eta, &g);
            k += 1;
        }
    }
}
