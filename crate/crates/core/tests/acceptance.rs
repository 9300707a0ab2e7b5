//! Acceptance criteria, one test each. Every test prints a single
//! `[PASS]`/`[FAIL]` line with the measured values and pinned tolerances, then
//! asserts. Tests take a global lock so that measured runtimes are not inflated
//! by other tests running concurrently.

use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specgd_core::empirical::Sampler;
use specgd_core::experiment::verify::reduced_full_gap;
use specgd_core::experiment::{
    run_stage_scaling, run_sweep, run_trajectory, CellStatus, EtaRule, InitKind, LambdaRule, Mode, Rho0Rule,
    RunConfig, StageStudy, SweepConfig, SweepGrid,
};
use specgd_core::linalg::gaussian_matrix;
use specgd_core::population::Population;
use specgd_core::reduced::{
    check_turning_equivalence, detect_stages, gd_barrier_eta_bound, gd_eta_bound, kappa_eta, pre_gradients,
    reduced_alignment, reduced_trajectory, specgd_reduced_step, verify_gd_barriers, verify_spec_traps,
    SpecBoundConstants, StageThresholds,
};
use specgd_core::{Algorithm, ProblemSpec, ReducedState, SpikedGeometry, WeightState};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the verdict line and returns whether the criterion held.
fn verdict(id: &str, ok: bool, elapsed: Duration, limit: Duration, detail: String) -> bool {
    let in_time = elapsed <= limit;
    let pass = ok && in_time;
    println!(
        "[{}] {id} {detail} | runtime {:.2}s (limit {:.0}s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    pass
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

#[test]
fn ac01_reduced_full_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let (d, lambda, rho0, steps) = (16, 8.0, 0.05, 500);
    let geom = SpikedGeometry::new(lambda, d).unwrap();
    let gd = reduced_full_gap(Algorithm::Gd, d, lambda, rho0, 1e-3, steps).unwrap();
    let spec = reduced_full_gap(Algorithm::SpecGd, d, lambda, rho0, kappa_eta(0.05, &geom), steps).unwrap();
    let tol = 1e-10;
    let pass = verdict(
        "AC-01 reduced/full equivalence",
        gd <= tol && spec <= tol,
        start.elapsed(),
        secs(5),
        format!("max |Δcoef| gd={gd:.3e} specgd={spec:.3e} (tol {tol:e})"),
    );
    assert!(pass);
}

#[test]
fn ac02_gradient_finite_differences() {
    let _g = serial();
    let start = Instant::now();
    let (d, m) = (8, 5);
    let pop = Population::new(ProblemSpec::spiked(d, m, 3.0, 0.0).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let w = gaussian_matrix(d, m, &mut rng) * 0.3;
        let dir = gaussian_matrix(d, m, &mut rng);
        let grad = pop.gradient(&WeightState::new(w.clone())).unwrap().full_gradient;
        let plus = pop.loss(&WeightState::new(&w + &dir * h)).unwrap();
        let minus = pop.loss(&WeightState::new(&w - &dir * h)).unwrap();
        let fd = (plus - minus) / (2.0 * h);
        let analytic = grad.dot(&dir);
        worst = worst.max((fd - analytic).abs() / analytic.abs());
    }
    let tol = 1e-6;
    let pass = verdict(
        "AC-02 gradient finite differences",
        worst <= tol,
        start.elapsed(),
        secs(1),
        format!("max relative error {worst:.3e} over 20 pairs (tol {tol:e})"),
    );
    assert!(pass);
}

#[test]
fn ac03_loss_monte_carlo() {
    let _g = serial();
    let start = Instant::now();
    let (d, m, n) = (6, 4, 1_000_000);
    let mut worst_z = 0.0f64;
    let mut cases = 0;
    for (si, sigma) in [0.0, 0.3].into_iter().enumerate() {
        let problem = ProblemSpec::spiked(d, m, 2.0, sigma).unwrap();
        let pop = Population::new(problem.clone()).unwrap();
        let sampler = Sampler::new(problem).unwrap();
        for s in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + s);
            let state = WeightState::new(gaussian_matrix(d, m, &mut rng) * 0.35);
            let batch = sampler.sample(n, 1000 * (si as u64 + 1) + s, 1).unwrap();
            let xw = &batch.inputs * state.weights();
            let errs: Vec<f64> = (0..n).map(|i| (batch.labels[i] - xw.row(i).norm_squared()).powi(2)).collect();
            let mean = errs.iter().sum::<f64>() / n as f64;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let se = (var / n as f64).sqrt();
            let exact = pop.loss(&state).unwrap();
            worst_z = worst_z.max((exact - mean).abs() / se);
            cases += 1;
        }
    }
    let pass = verdict(
        "AC-03 loss vs Monte Carlo",
        worst_z <= 3.0,
        start.elapsed(),
        secs(30),
        format!("max |exact - MC|/SE = {worst_z:.2} over {cases} states, n=1e6 (tol 3 SE)"),
    );
    assert!(pass);
}

#[test]
fn ac04_specgd_stage_one_exactness() {
    let _g = serial();
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = Vec::new();
    for d in [100usize, 400] {
        let geom = SpikedGeometry::new(d as f64 / 10.0, d).unwrap();
        let eta = kappa_eta(0.05, &geom);
        let mu = geom.isotropic_coefficient(0.05);
        let mut state = ReducedState::isotropic(mu);
        let mut k = 0usize;
        // k < N1' exactly when r + 2B < 1, i.e. g_v < 0.
        while state.masses(&geom).network + 2.0 * state.masses(&geom).spike < 1.0 {
            worst = worst.max((state.alpha() - (mu.sqrt() + k as f64 * eta)).abs());
            assert!(pre_gradients(&state, &geom).g_v < 0.0);
            state = specgd_reduced_step(&state, eta, &geom);
            k += 1;
        }
        checked.push(format!("d={d}: N1'={k}"));
    }
    let tol = 1e-13;
    let pass = verdict(
        "AC-04 SpecGD stage-I exactness",
        worst <= tol,
        start.elapsed(),
        secs(1),
        format!("max |α_k - (√μ + kη)| = {worst:.3e} ({}) (tol {tol:e})", checked.join(", ")),
    );
    assert!(pass);
}

#[test]
fn ac05_gd_barriers() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0usize;
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let d = rng.random_range(10..=2000usize);
        let lambda = rng.random_range((d as f64).ln()..=d as f64);
        let geom = SpikedGeometry::new(lambda, d).unwrap();
        let eta = gd_barrier_eta_bound(lambda) / 2.0;
        let init = ReducedState::isotropic(geom.isotropic_coefficient(0.05));
        let traj = reduced_trajectory(Algorithm::Gd, init, eta, &geom, 10_000);
        let report = verify_gd_barriers(&traj, eta, &geom).unwrap();
        violations += report.violations;
        worst = (worst.0.max(report.max_a), worst.1.max(report.max_spike_mass), worst.2.max(report.max_bulk_mass));
    }
    let pass = verdict(
        "AC-05 GD barriers",
        violations == 0,
        start.elapsed(),
        secs(10),
        format!(
            "violations={violations} over 20 runs x 1e4 steps; max a={:.6} B={:.6} C={:.6} (bounds 1, 1/3, 1)",
            worst.0, worst.1, worst.2
        ),
    );
    assert!(pass);
}

#[test]
fn ac06_specgd_traps_and_floor() {
    let _g = serial();
    let start = Instant::now();
    let geom = SpikedGeometry::new(40.0, 400).unwrap();
    let kappa = 0.05;
    let eta = kappa_eta(kappa, &geom);
    let constants = SpecBoundConstants::new(kappa, eta).unwrap();
    let init = ReducedState::isotropic(geom.isotropic_coefficient(0.05));
    let traj = reduced_trajectory(Algorithm::SpecGd, init, eta, &geom, 100_000);
    let report = verify_spec_traps(&traj, &constants, &geom).unwrap();
    let pass = verdict(
        "AC-06 SpecGD traps and signal floor",
        report.passed() && report.n2_prime.is_some() && !report.precondition_breached,
        start.elapsed(),
        secs(5),
        format!(
            "violations={} N2'={:?}; max B={:.4} (C_b={:.4}) max C={:.4} (C_c={:.4}); max 1-Align after N2'={:.3e} (bound {:.3e})",
            report.violations,
            report.n2_prime,
            report.max_spike_mass,
            constants.c_b,
            report.max_bulk_mass,
            constants.c_c,
            report.max_misalignment_after_n2.unwrap_or(f64::NAN),
            report.misalignment_bound
        ),
    );
    assert!(pass);
}

#[test]
fn ac07_turning_condition_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut mismatches, mut steps) = (0usize, 0usize);
    let mut min_steps = usize::MAX;
    for _ in 0..10 {
        let d = rng.random_range(10..=2000usize);
        let lambda = rng.random_range((d as f64).ln()..=d as f64);
        let geom = SpikedGeometry::new(lambda, d).unwrap();
        let eta = gd_eta_bound(lambda) * rng.random_range(0.2..=1.0);
        let rho0 = rng.random_range(0.01..0.08);
        let init = ReducedState::isotropic(geom.isotropic_coefficient(rho0));
        let traj = reduced_trajectory(Algorithm::Gd, init, eta, &geom, 10_000);
        let report = check_turning_equivalence(&traj, &geom);
        mismatches += report.mismatches;
        steps += report.steps_checked;
        min_steps = min_steps.min(report.steps_checked);
    }
    let pass = verdict(
        "AC-07 turning-condition equivalence",
        mismatches == 0 && min_steps >= 10_000,
        start.elapsed(),
        secs(5),
        format!("mismatches={mismatches} over {steps} steps in 10 runs (>= 1e4 each)"),
    );
    assert!(pass);
}

#[test]
fn ac08_spike_saturation() {
    let _g = serial();
    let start = Instant::now();
    let (d, lambda) = (2000usize, 200.0);
    let geom = SpikedGeometry::new(lambda, d).unwrap();
    let eta = 1.0 / (32.0 * (1.0 + lambda));
    let rho0 = 1.0 / (d as f64).ln();
    let init = ReducedState::isotropic(geom.isotropic_coefficient(rho0));
    let traj = reduced_trajectory(Algorithm::Gd, init, eta, &geom, 20_000);
    let stages = detect_stages(&traj, &geom, &StageThresholds::default(), Algorithm::Gd);
    let (ok, detail) = match stages.t1 {
        Some(t1) => {
            let m = traj[t1].masses(&geom);
            let (db, dr) = ((m.spike - 1.0 / 3.0).abs(), (m.network - 1.0 / 3.0).abs());
            (
                db <= 0.05 && dr <= 0.05,
                format!("T1={t1}: B={:.4} (|B-1/3|={db:.4}), r={:.4} (|r-1/3|={dr:.4}) (tol 0.05 each)", m.spike, m.network),
            )
        }
        None => (false, "T1 not reached".to_string()),
    };
    let pass = verdict("AC-08 spike saturation at T1", ok, start.elapsed(), secs(10), detail);
    assert!(pass);
}

fn stage_study(algorithm: Algorithm, eta_rule: EtaRule) -> StageStudy {
    let base = RunConfig {
        algorithm,
        mode: Mode::PopulationReduced,
        init: InitKind::Manifold,
        eta_rule,
        eta: None,
        kappa: 0.05,
        gd_safe_fraction: 0.5,
        horizon: 20_000,
        ..RunConfig::default()
    };
    StageStudy::new(base, vec![100, 400, 1600], LambdaRule::Fraction, Rho0Rule::InverseLogD).unwrap()
}

#[test]
fn ac09_stage_time_scaling() {
    let _g = serial();
    let start = Instant::now();
    let spec = run_stage_scaling(&stage_study(Algorithm::SpecGd, EtaRule::KappaOverSqrt)).unwrap();
    let gd = run_stage_scaling(&stage_study(Algorithm::Gd, EtaRule::GdSafe)).unwrap();
    let t1 = |r: &specgd_core::experiment::StageStudyResult| {
        r.rows.iter().map(|row| row.stages.t1.map_or("-".into(), |t| t.to_string())).collect::<Vec<String>>().join("/")
    };
    let spec_ratio = spec.fit.as_ref().map_or(f64::INFINITY, |f| f.ratio);
    let gd_ratio = gd.fit.as_ref().map_or(f64::INFINITY, |f| f.ratio);
    let gd_increasing = gd.rows.windows(2).all(|w| match (w[0].stages.t1, w[1].stages.t1) {
        (Some(a), Some(b)) => b > a,
        _ => false,
    });
    let pass = verdict(
        "AC-09 stage-time scaling",
        spec_ratio <= 1.5 && gd_ratio - 1.0 <= 0.3 && gd_increasing,
        start.elapsed(),
        secs(30),
        format!(
            "SpecGD T1 (d=100/400/1600) {} max/min={spec_ratio:.3} (tol 1.5); GD T1 {} (T1/ln d) max/min-1={:.3} (tol 0.30)",
            t1(&spec),
            t1(&gd),
            gd_ratio - 1.0
        ),
    );
    assert!(pass);
}

#[test]
fn ac10_alignment_at_gd_turning() {
    let _g = serial();
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for d in [400usize, 1600] {
        let x = d as f64;
        for (name, lambda) in [("ln d", x.ln()), ("sqrt d", x.sqrt()), ("d/4", x / 4.0)] {
            let geom = SpikedGeometry::new(lambda, d).unwrap();
            let eta = gd_eta_bound(lambda) / 2.0;
            let rho0 = 1.0 / x.ln();
            let init = ReducedState::isotropic(geom.isotropic_coefficient(rho0));
            let traj = reduced_trajectory(Algorithm::Gd, init, eta, &geom, 50_000);
            let stages = detect_stages(&traj, &geom, &StageThresholds::default(), Algorithm::Gd);
            let bound = 3.0 * (rho0 * lambda / x).min(1.0 / x.sqrt());
            match stages.t1 {
                Some(t1) => {
                    let align = reduced_alignment(&traj[t1], d).unwrap();
                    ok &= align <= bound;
                    lines.push(format!("d={d},λ={name}: {align:.4}{}{bound:.4}", if align <= bound { "<=" } else { ">" }));
                }
                None => {
                    ok = false;
                    lines.push(format!("d={d},λ={name}: T1 not reached"));
                }
            }
        }
    }
    let pass = verdict(
        "AC-10 alignment at GD turning",
        ok,
        start.elapsed(),
        secs(30),
        format!("Align(T1) vs 3·min(ρ0λ/d, d^-1/2): {}", lines.join("; ")),
    );
    assert!(pass);
}

#[test]
fn ac11_population_trajectories() {
    let _g = serial();
    let start = Instant::now();
    let base = RunConfig {
        mode: Mode::PopulationReduced,
        d: 300,
        m: 300,
        lambda: 10.0,
        eta_rule: EtaRule::Fixed,
        eta: Some(1e-3),
        rho0: 1e-2,
        init: InitKind::Manifold,
        horizon: 5000,
        ..RunConfig::default()
    };
    let gd = run_trajectory(&RunConfig { algorithm: Algorithm::Gd, ..base.clone() }).unwrap();
    let spec = run_trajectory(&RunConfig { algorithm: Algorithm::SpecGd, ..base }).unwrap();
    let align0 = gd.records[0].align;
    let min_after = |o: &specgd_core::experiment::TrajectoryOutput| {
        o.records.iter().skip(1).map(|r| r.align).fold(f64::INFINITY, f64::min)
    };
    let hit = |o: &specgd_core::experiment::TrajectoryOutput| o.records.iter().find(|r| r.align >= 0.9).map(|r| r.k);
    let (gd_min, spec_min) = (min_after(&gd), min_after(&spec));
    let (gd_hit, spec_hit) = (hit(&gd), hit(&spec));
    let earlier = matches!((spec_hit, gd_hit), (Some(s), Some(g)) if s < g) || (spec_hit.is_some() && gd_hit.is_none());
    let pass = verdict(
        "AC-11 population trajectories",
        gd_min < align0 && spec_min >= 0.5 * align0 && earlier,
        start.elapsed(),
        secs(5),
        format!(
            "Align(0)={align0:.4}; GD min={gd_min:.4} (< Align(0)); SpecGD min={spec_min:.4} (>= {:.4}); first Align>=0.9: SpecGD {spec_hit:?} vs GD {gd_hit:?}",
            0.5 * align0
        ),
    );
    assert!(pass);
}

#[test]
fn ac12_heatmap() {
    let _g = serial();
    let start = Instant::now();
    let base = RunConfig {
        mode: Mode::Empirical,
        d: 100,
        m: 50,
        rho0: 1e-2,
        init: InitKind::Gaussian,
        horizon: 1000,
        batch_size: 5000,
        seed: 12,
        ..RunConfig::default()
    };
    let grid = SweepGrid {
        eta_min: 1e-4,
        eta_max: 1e-1,
        eta_points: 8,
        lambda_min: 1.0,
        lambda_max: Some(100.0),
        lambda_points: 8,
        algorithms: vec![Algorithm::Gd, Algorithm::SpecGd],
    };
    let sweep = SweepConfig::new(base, grid).unwrap();
    let result = run_sweep(&sweep).unwrap();
    let gd = result.alignment_matrix(Algorithm::Gd);
    let spec = result.alignment_matrix(Algorithm::SpecGd);
    let mut contrast = Vec::new();
    let (mut safe_cells, mut safe_failures) = (0usize, Vec::new());
    for (i, &eta) in result.etas.iter().enumerate() {
        for (j, &lambda) in result.lambdas.iter().enumerate() {
            if gd[i][j] < 0.5 && spec[i][j] >= 0.9 {
                contrast.push((eta, lambda));
            }
            let cell = result.cell(Algorithm::Gd, i, j).unwrap();
            if eta <= gd_eta_bound(lambda) && cell.stages.t2.is_some() {
                safe_cells += 1;
                if !(cell.status == CellStatus::Ok && cell.final_alignment >= 0.9) {
                    safe_failures.push(format!("(η={eta:.2e},λ={lambda:.1}: {:.3})", cell.final_alignment));
                }
            }
        }
    }
    let errors = result.cells.iter().filter(|c| c.status == CellStatus::Error).count();
    let pass = verdict(
        "AC-12 heatmap",
        !contrast.is_empty() && safe_failures.is_empty() && errors == 0,
        start.elapsed(),
        secs(20 * 60),
        format!(
            "cells with GD<0.5 & SpecGD>=0.9: {} (e.g. {:?}); safe-η GD cells reaching T2: {safe_cells}, below 0.9: [{}]; errors={errors}",
            contrast.len(),
            contrast.first(),
            safe_failures.join(" ")
        ),
    );
    assert!(pass);
}

#[test]
fn ac13_power_law() {
    let _g = serial();
    let start = Instant::now();
    let base = RunConfig {
        mode: Mode::Empirical,
        covariance: specgd_core::experiment::CovarianceChoice::PowerLaw,
        d: 100,
        m: 50,
        alpha: 2.0,
        basis_seed: 13,
        eta_rule: EtaRule::Fixed,
        eta: Some(1e-3),
        rho0: 1e-2,
        init: InitKind::Gaussian,
        horizon: 2000,
        batch_size: 500,
        log_every: 2000,
        ..RunConfig::default()
    };
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let finals = |alg: Algorithm| -> Vec<f64> {
        (0..5u64)
            .map(|seed| run_trajectory(&RunConfig { algorithm: alg, seed, ..base.clone() }).unwrap().final_alignment)
            .collect()
    };
    let gd = finals(Algorithm::Gd);
    let spec = finals(Algorithm::SpecGd);
    let (mg, ms) = (median(gd.clone()), median(spec.clone()));
    let pass = verdict(
        "AC-13 power-law experiment",
        ms - mg >= 0.2,
        start.elapsed(),
        secs(10 * 60),
        format!("median final alignment SpecGD={ms:.4} GD={mg:.4}, gap={:.4} (tol >= 0.2); GD {gd:.4?} SpecGD {spec:.4?}", ms - mg),
    );
    assert!(pass);
}

