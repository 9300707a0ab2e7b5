//! Runtime checks of the barrier, trap and envelope bounds along reduced trajectories.

use serde::Serialize;

use super::{gd_turning_predicate, reduced_alignment, ReducedState, SpikedGeometry};
use crate::error::{Error, Result};

/// Slack allowed on every monitored inequality, relative to the bound.
pub const BARRIER_TOL: f64 = 1e-12;

fn exceeds(value: f64, bound: f64) -> bool {
    value > bound + BARRIER_TOL * bound.abs().max(1.0)
}

/// `1 / (16(1 + λ))`.
pub fn gd_eta_bound(lambda: f64) -> f64 {
    1.0 / (16.0 * (1.0 + lambda))
}

/// `min{1/24, 1/(16(1 + λ))}`.
pub fn gd_barrier_eta_bound(lambda: f64) -> f64 {
    gd_eta_bound(lambda).min(1.0 / 24.0)
}

/// `κ / √(d + λ)`.
pub fn kappa_eta(kappa: f64, geom: &SpikedGeometry) -> f64 {
    kappa / (geom.d as f64 + geom.lambda).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierQuantity {
    Signal,
    SpikeMass,
    BulkMass,
    NetworkMass,
    Negative,
    SignalFloor,
    Misalignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BarrierViolation {
    pub k: usize,
    pub quantity: BarrierQuantity,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GdBarrierReport {
    pub steps_checked: usize,
    pub eta: f64,
    pub eta_bound: f64,
    /// The learning rate exceeds the bound under which the barriers are guaranteed.
    pub precondition_breached: bool,
    pub violations: usize,
    pub first_violation: Option<BarrierViolation>,
    pub max_a: f64,
    pub max_spike_mass: f64,
    pub max_bulk_mass: f64,
    pub max_r: f64,
}

impl GdBarrierReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Checks `a ≤ 1`, `B ≤ 1/3`, `C ≤ 1`, `r ≤ 7/3` and nonnegativity at every step.
///
/// Fails with [`Error::Precondition`] when `d < 4` or the initial state lies
/// outside `[0,1] × [0,1/3] × [0,1]` in `(a, B, C)`. A learning rate above the
/// bound is reported rather than rejected.
pub fn verify_gd_barriers(trajectory: &[ReducedState], eta: f64, geom: &SpikedGeometry) -> Result<GdBarrierReport> {
    if geom.d < 4 {
        return Err(Error::Precondition(format!("barrier bounds need d >= 4 (got {})", geom.d)));
    }
    let init = trajectory
        .first()
        .ok_or_else(|| Error::Precondition("empty trajectory".into()))?;
    let m0 = init.masses(geom);
    let inside = (0.0..=1.0).contains(&init.a)
        && (0.0..=1.0 / 3.0).contains(&m0.spike)
        && (0.0..=1.0).contains(&m0.bulk)
        && init.b >= 0.0
        && init.c >= 0.0;
    if !inside {
        return Err(Error::Precondition(format!(
            "initial state (a, B, C) = ({}, {}, {}) lies outside [0,1] x [0,1/3] x [0,1]",
            init.a, m0.spike, m0.bulk
        )));
    }
    let eta_bound = gd_barrier_eta_bound(geom.lambda);
    let mut report = GdBarrierReport {
        steps_checked: 0,
        eta,
        eta_bound,
        precondition_breached: eta > eta_bound,
        violations: 0,
        first_violation: None,
        max_a: f64::NEG_INFINITY,
        max_spike_mass: f64::NEG_INFINITY,
        max_bulk_mass: f64::NEG_INFINITY,
        max_r: f64::NEG_INFINITY,
    };
    for (k, state) in trajectory.iter().enumerate() {
        let m = state.masses(geom);
        report.steps_checked += 1;
        report.max_a = report.max_a.max(state.a);
        report.max_spike_mass = report.max_spike_mass.max(m.spike);
        report.max_bulk_mass = report.max_bulk_mass.max(m.bulk);
        report.max_r = report.max_r.max(m.network);
        let min_coef = state.a.min(state.b).min(state.c);
        let checks = [
            (BarrierQuantity::Signal, state.a, 1.0),
            (BarrierQuantity::SpikeMass, m.spike, 1.0 / 3.0),
            (BarrierQuantity::BulkMass, m.bulk, 1.0),
            (BarrierQuantity::NetworkMass, m.network, 7.0 / 3.0),
            (BarrierQuantity::Negative, -min_coef, 0.0),
        ];
        for (quantity, value, bound) in checks {
            if !value.is_finite() || exceeds(value, bound) {
                report.violations += 1;
                report.first_violation.get_or_insert(BarrierViolation { k, quantity, value, bound });
            }
        }
    }
    Ok(report)
}

/// Constants of the SpecGD trap and alignment bounds for a given `κ` and `η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpecBoundConstants {
    pub kappa: f64,
    pub eta: f64,
    /// Ceiling on the spike mass, `(κ + 1/√3)²`.
    pub c_b: f64,
    /// Ceiling on the bulk mass, `(1 + κ)²`.
    pub c_c: f64,
    pub c_noise: f64,
    /// Signal level after which the signal never falls below `a_floor`, `1 − C_noise/3`.
    pub a0: f64,
    /// `(√A0 − η)²`.
    pub a_floor: f64,
}

impl SpecBoundConstants {
    pub fn a0_for(kappa: f64) -> f64 {
        let c_b = (kappa + 1.0 / 3f64.sqrt()).powi(2);
        let c_c = (1.0 + kappa).powi(2);
        1.0 - (c_b + c_c) / 3.0
    }

    pub fn new(kappa: f64, eta: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::config(format!("kappa must be positive (got {kappa})")));
        }
        let c_b = (kappa + 1.0 / 3f64.sqrt()).powi(2);
        let c_c = (1.0 + kappa).powi(2);
        let c_noise = c_b + c_c;
        let a0 = 1.0 - c_noise / 3.0;
        if a0 <= 0.0 {
            return Err(Error::Precondition(format!(
                "A0 = 1 - C_noise/3 = {a0} is not positive for kappa = {kappa}"
            )));
        }
        let a_floor = (a0.sqrt() - eta).max(0.0).powi(2);
        Ok(SpecBoundConstants { kappa, eta, c_b, c_c, c_noise, a0, a_floor })
    }

    /// Upper bound on `1 − Align` once the signal has reached `A0`.
    pub fn misalignment_bound(&self, geom: &SpikedGeometry) -> f64 {
        let s = geom.spike_variance();
        (self.c_b * self.c_b / (s * s) + self.c_c * self.c_c / geom.bulk_dim()) / (2.0 * self.a_floor * self.a_floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpecTrapReport {
    pub constants: SpecBoundConstants,
    pub steps_checked: usize,
    /// `η ≠ κ / √(d + λ)`.
    pub precondition_breached: bool,
    pub n2_prime: Option<usize>,
    pub violations: usize,
    pub first_violation: Option<BarrierViolation>,
    pub max_spike_mass: f64,
    pub max_bulk_mass: f64,
    pub misalignment_bound: f64,
    /// Largest `1 − Align` at or after `N2'`.
    pub max_misalignment_after_n2: Option<f64>,
}

impl SpecTrapReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Checks `B ≤ C_b` and `C ≤ C_c` at every step, and `a ≥ A_floor` together
/// with the misalignment bound at every step from `N2'` on.
pub fn verify_spec_traps(
    trajectory: &[ReducedState],
    constants: &SpecBoundConstants,
    geom: &SpikedGeometry,
) -> Result<SpecTrapReport> {
    if trajectory.is_empty() {
        return Err(Error::Precondition("empty trajectory".into()));
    }
    let expected_eta = kappa_eta(constants.kappa, geom);
    let misalignment_bound = constants.misalignment_bound(geom);
    let mut report = SpecTrapReport {
        constants: *constants,
        steps_checked: 0,
        precondition_breached: (constants.eta - expected_eta).abs() > 1e-12 * expected_eta,
        n2_prime: trajectory.iter().position(|s| s.a >= constants.a0),
        violations: 0,
        first_violation: None,
        max_spike_mass: f64::NEG_INFINITY,
        max_bulk_mass: f64::NEG_INFINITY,
        misalignment_bound,
        max_misalignment_after_n2: None,
    };
    let record = |report: &mut SpecTrapReport, v: BarrierViolation| {
        report.violations += 1;
        report.first_violation.get_or_insert(v);
    };
    for (k, state) in trajectory.iter().enumerate() {
        let m = state.masses(geom);
        report.steps_checked += 1;
        report.max_spike_mass = report.max_spike_mass.max(m.spike);
        report.max_bulk_mass = report.max_bulk_mass.max(m.bulk);
        for (quantity, value, bound) in [
            (BarrierQuantity::SpikeMass, m.spike, constants.c_b),
            (BarrierQuantity::BulkMass, m.bulk, constants.c_c),
        ] {
            if !value.is_finite() || exceeds(value, bound) {
                record(&mut report, BarrierViolation { k, quantity, value, bound });
            }
        }
        if report.n2_prime.is_some_and(|n| k >= n) {
            if !(state.a >= constants.a_floor * (1.0 - BARRIER_TOL)) {
                record(
                    &mut report,
                    BarrierViolation { k, quantity: BarrierQuantity::SignalFloor, value: state.a, bound: constants.a_floor },
                );
            }
            let mis = 1.0 - reduced_alignment(state, geom.d)?;
            report.max_misalignment_after_n2 = Some(report.max_misalignment_after_n2.map_or(mis, |x: f64| x.max(mis)));
            if exceeds(mis, misalignment_bound) {
                record(
                    &mut report,
                    BarrierViolation { k, quantity: BarrierQuantity::Misalignment, value: mis, bound: misalignment_bound },
                );
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    /// Steps `k < N1` at which the envelopes were checked, `N1` being the first `k` with `r_k ≥ ρ`.
    pub steps_checked: usize,
    pub violations: usize,
    pub first_violation_step: Option<usize>,
}

/// Checks the geometric lower and upper envelopes of `a`, `b`, `c` for GD
/// during the initial growth phase.
pub fn check_gd_stage1_envelopes(
    trajectory: &[ReducedState],
    eta: f64,
    geom: &SpikedGeometry,
    rho: f64,
) -> Result<EnvelopeReport> {
    let init = trajectory
        .first()
        .ok_or_else(|| Error::Precondition("empty trajectory".into()))?;
    let s = geom.spike_variance();
    let dm2 = geom.bulk_dim();
    let rates = [
        (1.0 + 12.0 * eta * (1.0 - rho), 1.0 + 12.0 * eta),
        (1.0 + 4.0 * eta * s * (1.0 - 3.0 * rho), 1.0 + 4.0 * eta * s),
        (1.0 + 4.0 * eta * (1.0 - rho) - 8.0 * eta * rho / dm2, 1.0 + 4.0 * eta),
    ];
    let starts = [init.a, init.b, init.c];
    let mut report = EnvelopeReport { steps_checked: 0, violations: 0, first_violation_step: None };
    for (k, state) in trajectory.iter().enumerate() {
        if state.network_mass(geom) >= rho {
            break;
        }
        report.steps_checked += 1;
        let values = [state.a, state.b, state.c];
        let mut bad = false;
        for i in 0..3 {
            let lo = starts[i] * rates[i].0.powi(2 * k as i32);
            let hi = starts[i] * rates[i].1.powi(2 * k as i32);
            let slack = 1e-10 * hi;
            if values[i] < lo - slack || values[i] > hi + slack {
                bad = true;
            }
        }
        if bad {
            report.violations += 1;
            report.first_violation_step.get_or_insert(k);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurningReport {
    pub steps_checked: usize,
    pub mismatches: usize,
    pub first_mismatch: Option<usize>,
}

/// Compares `B_k ≥ K_k` against the observed `b_{k+1} ≤ b_k` at every step.
pub fn check_turning_equivalence(trajectory: &[ReducedState], geom: &SpikedGeometry) -> TurningReport {
    let mut report = TurningReport { steps_checked: 0, mismatches: 0, first_mismatch: None };
    for (k, pair) in trajectory.windows(2).enumerate() {
        report.steps_checked += 1;
        let predicted = gd_turning_predicate(&pair[0], geom);
        let observed = pair[1].b <= pair[0].b;
        if predicted != observed {
            report.mismatches += 1;
            report.first_mismatch.get_or_insert(k);
        }
    }
    report
}
