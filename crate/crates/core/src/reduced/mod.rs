//! Exact dynamics on the invariant manifold `M = a w*w*ᵀ + b vvᵀ + c P⊥`.
//!
//! On this manifold the population gradient matrix `G(M)` is diagonal in the
//! signal / spike / bulk decomposition, so both GD and SpecGD collapse to
//! recursions on the three coefficients `(a, b, c)`. GD multiplies each
//! coefficient by a squared affine factor; SpecGD moves the square roots
//! `(√a, √b, √c)` by `±η` according to the signs of the pre-gradients.

mod monitors;
mod stages;

pub use monitors::{
    check_gd_stage1_envelopes, check_turning_equivalence, gd_barrier_eta_bound, gd_eta_bound, kappa_eta,
    verify_gd_barriers, verify_spec_traps, BarrierQuantity, BarrierViolation, EnvelopeReport,
    GdBarrierReport, SpecBoundConstants, SpecTrapReport, TurningReport, BARRIER_TOL,
};
pub use stages::{detect_stages, detect_stages_from_samples, StageSample, StageThresholds, StageTimes};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Algorithm;

/// Spike strength λ and ambient dimension `d` of a spiked problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikedGeometry {
    pub lambda: f64,
    pub d: usize,
}

impl SpikedGeometry {
    pub fn new(lambda: f64, d: usize) -> Result<Self> {
        if d < 3 {
            return Err(Error::config(format!("reduced dynamics need d >= 3 (got {d})")));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::config(format!("spike strength must be >= 0 (got {lambda})")));
        }
        Ok(SpikedGeometry { lambda, d })
    }

    /// `1 + λ`, the variance along the spike.
    pub fn spike_variance(&self) -> f64 {
        1.0 + self.lambda
    }

    /// `d − 2`, the bulk multiplicity.
    pub fn bulk_dim(&self) -> f64 {
        self.d as f64 - 2.0
    }

    /// Isotropic coefficient `μ = ρ0 / (d + λ)` for which the initial mass is ρ0.
    pub fn isotropic_coefficient(&self, rho0: f64) -> f64 {
        rho0 / (self.d as f64 + self.lambda)
    }
}

/// Coefficients of `M` on the signal, spike and bulk projectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Derived masses of a [`ReducedState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Masses {
    /// `B = (1 + λ) b`.
    pub spike: f64,
    /// `C = (d − 2) c`.
    pub bulk: f64,
    /// `r = a + B + C = Tr(M Q)`.
    pub network: f64,
    /// `K = (1 − a − C) / 3`, the spike mass at which GD stops growing `b`.
    pub turning: f64,
}

impl ReducedState {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        ReducedState { a, b, c }
    }

    pub const fn isotropic(mu: f64) -> Self {
        ReducedState { a: mu, b: mu, c: mu }
    }

    /// The global minimizer `M = w* w*ᵀ`.
    pub const fn target() -> Self {
        ReducedState { a: 1.0, b: 0.0, c: 0.0 }
    }

    pub fn alpha(&self) -> f64 {
        self.a.sqrt()
    }

    pub fn beta(&self) -> f64 {
        self.b.sqrt()
    }

    pub fn gamma(&self) -> f64 {
        self.c.sqrt()
    }

    pub fn masses(&self, geom: &SpikedGeometry) -> Masses {
        let spike = geom.spike_variance() * self.b;
        let bulk = geom.bulk_dim() * self.c;
        Masses {
            spike,
            bulk,
            network: self.a + spike + bulk,
            turning: (1.0 - self.a - bulk) / 3.0,
        }
    }

    pub fn network_mass(&self, geom: &SpikedGeometry) -> f64 {
        self.masses(geom).network
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }
}

/// Eigenvalues of `G(M)` on the signal, spike and bulk blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreGradients {
    pub g_wstar: f64,
    pub g_v: f64,
    pub g_perp: f64,
}

pub fn pre_gradients(state: &ReducedState, geom: &SpikedGeometry) -> PreGradients {
    let r = state.network_mass(geom);
    let s = geom.spike_variance();
    let g = PreGradients {
        g_wstar: 4.0 * (r + 2.0 * state.a - 3.0),
        g_v: 4.0 * s * (r + 2.0 * s * state.b - 1.0),
        g_perp: 4.0 * (r + 2.0 * state.c - 1.0),
    };
    debug_assert!({
        let tol = |x: f64| 1e-9 * (1.0 + x.abs());
        let wstar = 8.0 * (state.a - 1.0) + 4.0 * (r - 1.0);
        let v = 8.0 * s * s * state.b + 4.0 * s * (r - 1.0);
        let perp = 8.0 * state.c + 4.0 * (r - 1.0);
        (g.g_wstar - wstar).abs() <= tol(wstar)
            && (g.g_v - v).abs() <= tol(v)
            && (g.g_perp - perp).abs() <= tol(perp)
    });
    g
}

/// One step of population GD restricted to the manifold:
/// `x ← x (1 − η g_x / 2)²` on each coordinate, with `g` evaluated at the current state.
pub fn gd_reduced_step(state: &ReducedState, eta: f64, geom: &SpikedGeometry) -> ReducedState {
    let r = state.network_mass(geom);
    let s = geom.spike_variance();
    let fa = 1.0 + 4.0 * eta * (3.0 - 2.0 * state.a - r);
    let fb = 1.0 + 4.0 * eta * s * ((1.0 - r) - 2.0 * s * state.b);
    let fc = 1.0 + 4.0 * eta * ((1.0 - r) - 2.0 * state.c);
    ReducedState {
        a: state.a * fa * fa,
        b: state.b * fb * fb,
        c: state.c * fc * fc,
    }
}

/// `sgn` with `sgn(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One step of population SpecGD restricted to the manifold, computed in
/// square-root coordinates: `√x ← |√x − η sgn(g_x)|`.
pub fn specgd_reduced_step(state: &ReducedState, eta: f64, geom: &SpikedGeometry) -> ReducedState {
    let g = pre_gradients(state, geom);
    let move_root = |root: f64, grad: f64| {
        let next = (root - eta * sign(grad)).abs();
        next * next
    };
    // A zero coefficient has a zero row in W, so the polar factor leaves it at zero.
    let step = |x: f64, grad: f64| if x == 0.0 { 0.0 } else { move_root(x.sqrt(), grad) };
    ReducedState {
        a: step(state.a, g.g_wstar),
        b: step(state.b, g.g_v),
        c: step(state.c, g.g_perp),
    }
}

pub fn reduced_step(algorithm: Algorithm, state: &ReducedState, eta: f64, geom: &SpikedGeometry) -> ReducedState {
    match algorithm {
        Algorithm::Gd => gd_reduced_step(state, eta, geom),
        Algorithm::SpecGd => specgd_reduced_step(state, eta, geom),
    }
}

/// `B ≥ K`. Under `η ≤ 1/(16(1+λ))` this is equivalent to `b_{k+1} ≤ b_k` for GD.
pub fn gd_turning_predicate(state: &ReducedState, geom: &SpikedGeometry) -> bool {
    let m = state.masses(geom);
    m.spike >= m.turning
}

/// Explicit Euler step of the gradient flow `ẋ = −2 g_x x`.
pub fn gd_flow_step(state: &ReducedState, h: f64, geom: &SpikedGeometry) -> ReducedState {
    let g = pre_gradients(state, geom);
    ReducedState {
        a: state.a - 2.0 * h * g.g_wstar * state.a,
        b: state.b - 2.0 * h * g.g_v * state.b,
        c: state.c - 2.0 * h * g.g_perp * state.c,
    }
}

/// Explicit Euler step of the spectral flow in square-root variables,
/// `α̇ = −sgn(g_wstar)` and likewise for β, γ. This coincides with the discrete
/// SpecGD recursion at learning rate `h`.
pub fn spec_flow_step(state: &ReducedState, h: f64, geom: &SpikedGeometry) -> ReducedState {
    specgd_reduced_step(state, h, geom)
}

/// Population loss on the manifold:
/// `2[(a−1)² + (1+λ)²b² + (d−2)c²] + (r−1)² + σ²`.
pub fn reduced_loss(state: &ReducedState, geom: &SpikedGeometry, sigma: f64) -> f64 {
    let s = geom.spike_variance();
    let r = state.network_mass(geom);
    2.0 * ((state.a - 1.0).powi(2) + (s * state.b).powi(2) + geom.bulk_dim() * state.c * state.c)
        + (r - 1.0).powi(2)
        + sigma * sigma
}

/// Frobenius cosine between `M` and `w*w*ᵀ`: `a / √(a² + b² + (d−2)c²)`.
pub fn reduced_alignment(state: &ReducedState, d: usize) -> Result<f64> {
    let norm = (state.a * state.a + state.b * state.b + (d as f64 - 2.0) * state.c * state.c).sqrt();
    if norm == 0.0 {
        return Err(Error::Precondition("alignment of the zero matrix is undefined".into()));
    }
    Ok(state.a / norm)
}

/// Iterate a reduced recursion for `steps` steps; the result has `steps + 1` states.
pub fn reduced_trajectory(
    algorithm: Algorithm,
    init: ReducedState,
    eta: f64,
    geom: &SpikedGeometry,
    steps: usize,
) -> Vec<ReducedState> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut state = init;
    out.push(state);
    for _ in 0..steps {
        state = reduced_step(algorithm, &state, eta, geom);
        out.push(state);
    }
    out
}

#[cfg(test)]
mod tests;
