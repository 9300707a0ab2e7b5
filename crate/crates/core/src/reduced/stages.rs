//! Stage-time detection on reduced or projected trajectories.

use serde::{Deserialize, Serialize};

use super::{ReducedState, SpecBoundConstants, SpikedGeometry};
use crate::error::{Error, Result};
use crate::Algorithm;

/// Thresholds that delimit the phases of training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageThresholds {
    /// Mass level that ends the initial growth phase.
    pub rho: f64,
    /// `r ≥ 1 − ε` marks the end of mass re-equilibration.
    pub epsilon: f64,
    /// Signal level that counts as escaping the trap.
    pub delta: f64,
    /// SpecGD learning-rate constant, `η = κ / √(d + λ)`.
    pub kappa: f64,
}

impl Default for StageThresholds {
    fn default() -> Self {
        StageThresholds {
            rho: 1.0 / 24.0,
            epsilon: 0.1,
            delta: 0.1,
            kappa: 0.05,
        }
    }
}

impl StageThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0 / 12.0) {
            return Err(Error::config(format!("rho must lie in (0, 1/12) (got {})", self.rho)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 0.25) {
            return Err(Error::config(format!("epsilon must lie in (0, 1/4] (got {})", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::config(format!("delta must be positive (got {})", self.delta)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::config(format!("kappa must be positive (got {})", self.kappa)));
        }
        Ok(())
    }
}

/// Step indices at which each phase ends. `None` means the event never
/// happened within the horizon.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimes {
    /// First `k` with `r_k ≥ ρ`.
    pub t1a: Option<usize>,
    /// First `k ≥ t1a` with `b_{k+1} ≤ b_k`.
    pub t1: Option<usize>,
    /// First `k ≥ t1` with `r_k ≥ 1 − ε`.
    pub t2a: Option<usize>,
    /// First `k ≥ t2a` with `a_k ≥ δ`.
    pub t2: Option<usize>,
    /// SpecGD: first `k` with `r_k + 2 B_k ≥ 1`, after which `g_v > 0`.
    pub n1_prime: Option<usize>,
    /// SpecGD: first `k` with `a_k ≥ A0`.
    pub n2_prime: Option<usize>,
}

/// The per-step quantities stage detection needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSample {
    /// Signal coefficient `w*ᵀ M w*`.
    pub a: f64,
    /// Spike coefficient `vᵀ M v`.
    pub b: f64,
    /// Network mass `Tr(M Q)`.
    pub r: f64,
    /// Spike mass `(vᵀQv) b`.
    pub spike_mass: f64,
}

fn first_from(samples: &[StageSample], start: usize, pred: impl Fn(&StageSample) -> bool) -> Option<usize> {
    samples
        .iter()
        .enumerate()
        .skip(start)
        .find(|(_, s)| pred(s))
        .map(|(k, _)| k)
}

pub fn detect_stages_from_samples(
    samples: &[StageSample],
    thresholds: &StageThresholds,
    algorithm: Algorithm,
) -> StageTimes {
    let mut times = StageTimes {
        t1a: first_from(samples, 0, |s| s.r >= thresholds.rho),
        ..StageTimes::default()
    };
    if let Some(t1a) = times.t1a {
        times.t1 = (t1a..samples.len().saturating_sub(1)).find(|&k| samples[k + 1].b <= samples[k].b);
    }
    if let Some(t1) = times.t1 {
        times.t2a = first_from(samples, t1, |s| s.r >= 1.0 - thresholds.epsilon);
    }
    if let Some(t2a) = times.t2a {
        times.t2 = first_from(samples, t2a, |s| s.a >= thresholds.delta);
    }
    if algorithm == Algorithm::SpecGd {
        times.n1_prime = first_from(samples, 0, |s| s.r + 2.0 * s.spike_mass >= 1.0);
        let a0 = SpecBoundConstants::a0_for(thresholds.kappa);
        if a0 > 0.0 {
            times.n2_prime = first_from(samples, 0, |s| s.a >= a0);
        }
    }
    times
}

pub fn detect_stages(
    trajectory: &[ReducedState],
    geom: &SpikedGeometry,
    thresholds: &StageThresholds,
    algorithm: Algorithm,
) -> StageTimes {
    let samples: Vec<StageSample> = trajectory
        .iter()
        .map(|s| {
            let m = s.masses(geom);
            StageSample {
                a: s.a,
                b: s.b,
                r: m.network,
                spike_mass: m.spike,
            }
        })
        .collect();
    detect_stages_from_samples(&samples, thresholds, algorithm)
}
