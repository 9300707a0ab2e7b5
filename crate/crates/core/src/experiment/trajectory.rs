//! Single runs: the stepping loop shared by all three modes, per-step metrics and
//! stage detection.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::{InitKind, Mode, Resolved, RunConfig};
use crate::empirical::{batch_stream, empirical_gradient, standard_draws, Batch, BatchMode, Sampler};
use crate::error::{Error, Result};
use crate::init::{gaussian_init, stiefel_init, WeightState};
use crate::linalg::Orthogonalizer;
use crate::population::Population;
use crate::reduced::{
    detect_stages_from_samples, pre_gradients, reduced_alignment, reduced_loss, reduced_step, ReducedState,
    SpikedGeometry, StageSample, StageTimes,
};
use crate::Algorithm;

/// Loss above which a run counts as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e12;

/// One logged step. Column names follow the trajectory CSV header.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub k: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    #[serde(rename = "B")]
    pub spike_mass: f64,
    #[serde(rename = "C")]
    pub bulk_mass: f64,
    pub r: f64,
    pub loss: f64,
    pub align: f64,
    pub g_wstar: f64,
    pub g_v: f64,
    pub g_perp: f64,
}

/// Whether a record sits inside the GD barrier region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BarrierFlags {
    pub signal_le_one: bool,
    pub spike_le_third: bool,
    pub bulk_le_one: bool,
    pub mass_le_seven_thirds: bool,
}

impl BarrierFlags {
    pub fn all(&self) -> bool {
        self.signal_le_one && self.spike_le_third && self.bulk_le_one && self.mass_le_seven_thirds
    }
}

impl TrajectoryRecord {
    fn blank(k: usize) -> Self {
        let nan = f64::NAN;
        TrajectoryRecord {
            k,
            a: nan,
            b: nan,
            c: nan,
            spike_mass: nan,
            bulk_mass: nan,
            r: nan,
            loss: nan,
            align: nan,
            g_wstar: nan,
            g_v: nan,
            g_perp: nan,
        }
    }

    pub fn barrier_flags(&self) -> BarrierFlags {
        BarrierFlags {
            signal_le_one: self.a <= 1.0,
            spike_le_third: self.spike_mass <= 1.0 / 3.0,
            bulk_le_one: self.bulk_mass <= 1.0,
            mass_le_seven_thirds: self.r <= 7.0 / 3.0,
        }
    }

    fn stage_sample(&self) -> StageSample {
        StageSample { a: self.a, b: self.b, r: self.r, spike_mass: self.spike_mass }
    }

    fn is_divergent(&self) -> bool {
        !(self.loss.is_finite() && self.loss <= DIVERGENCE_LOSS)
            || ![self.a, self.b, self.c, self.r].iter().all(|x| x.is_finite())
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryOutput {
    pub config: RunConfig,
    pub resolved: Resolved,
    #[serde(skip)]
    pub records: Vec<TrajectoryRecord>,
    pub stages: StageTimes,
    pub steps_run: usize,
    pub diverged_at: Option<usize>,
    /// Alignment at the last step; 0 for diverged runs.
    pub final_alignment: f64,
    /// Loss at the last step, absent when it is not finite.
    pub final_loss: Option<f64>,
}

impl TrajectoryOutput {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

enum Dynamics {
    Reduced { geom: SpikedGeometry, state: ReducedState },
    Matrix { pop: Population, state: WeightState },
    Empirical { pop: Population, sampler: Sampler, state: WeightState, fixed: Option<Batch> },
}

/// A run in progress. Drives one configuration step by step; minibatches can be
/// supplied from outside so that several runs can share draws.
pub struct Runner {
    config: RunConfig,
    resolved: Resolved,
    orth: Orthogonalizer,
    dynamics: Dynamics,
    step: usize,
    samples: Vec<StageSample>,
    records: Vec<TrajectoryRecord>,
    current: TrajectoryRecord,
    diverged_at: Option<usize>,
}

fn initial_weights(config: &RunConfig, resolved: &Resolved, pop: &Population) -> Result<WeightState> {
    let theta = resolved.theta_squared.sqrt();
    match config.init {
        InitKind::Stiefel => stiefel_init(config.d, config.m, theta, config.seed),
        InitKind::Gaussian => gaussian_init(config.d, config.m, theta, config.seed),
        InitKind::Manifold => pop.manifold_weights(&ReducedState::isotropic(resolved.theta_squared)),
    }
}

fn population_record(k: usize, pop: &Population, state: &WeightState) -> Result<TrajectoryRecord> {
    let p = pop.project(state)?;
    let loss = pop.loss(state)?;
    let align = match pop.alignment(state) {
        Ok(x) => x,
        Err(Error::Precondition(_)) => f64::NAN,
        Err(e) => return Err(e),
    };
    Ok(TrajectoryRecord {
        k,
        a: p.coefficients.a,
        b: p.coefficients.b,
        c: p.coefficients.c,
        spike_mass: p.spike_mass,
        bulk_mass: p.bulk_mass,
        r: p.network_mass,
        loss,
        align,
        g_wstar: p.pre_gradients.g_wstar,
        g_v: p.pre_gradients.g_v,
        g_perp: p.pre_gradients.g_perp,
    })
}

fn reduced_record(k: usize, state: &ReducedState, geom: &SpikedGeometry, sigma: f64) -> TrajectoryRecord {
    let m = state.masses(geom);
    let g = pre_gradients(state, geom);
    TrajectoryRecord {
        k,
        a: state.a,
        b: state.b,
        c: state.c,
        spike_mass: m.spike,
        bulk_mass: m.bulk,
        r: m.network,
        loss: reduced_loss(state, geom, sigma),
        align: reduced_alignment(state, geom.d).unwrap_or(f64::NAN),
        g_wstar: g.g_wstar,
        g_v: g.g_v,
        g_perp: g.g_perp,
    }
}

impl Runner {
    pub fn new(config: &RunConfig) -> Result<Self> {
        Self::build(config, None)
    }

    /// Like [`Runner::new`] but starting from the manifold point `start` instead of
    /// the configured initialization. Matrix and empirical modes need a spiked
    /// covariance and `m >= d`.
    pub fn from_manifold_state(config: &RunConfig, start: ReducedState) -> Result<Self> {
        Self::build(config, Some(start))
    }

    fn build(config: &RunConfig, start: Option<ReducedState>) -> Result<Self> {
        let resolved = config.resolve()?;
        let weights = |pop: &Population| match start {
            Some(s) => pop.manifold_weights(&s),
            None => initial_weights(config, &resolved, pop),
        };
        let dynamics = match config.mode {
            Mode::PopulationReduced => Dynamics::Reduced {
                geom: config.geometry()?,
                state: start.unwrap_or_else(|| ReducedState::isotropic(resolved.theta_squared)),
            },
            Mode::PopulationMatrix => {
                let pop = Population::new(config.problem()?)?;
                let state = weights(&pop)?;
                Dynamics::Matrix { pop, state }
            }
            Mode::Empirical => {
                let problem = config.problem()?;
                let pop = Population::new(problem.clone())?;
                let sampler = Sampler::new(problem)?;
                let state = weights(&pop)?;
                Dynamics::Empirical { pop, sampler, state, fixed: None }
            }
        };
        let mut runner = Runner {
            config: config.clone(),
            resolved,
            orth: config.orthogonalizer_spec(),
            dynamics,
            step: 0,
            samples: Vec::with_capacity(config.horizon + 1),
            records: Vec::new(),
            current: TrajectoryRecord::blank(0),
            diverged_at: None,
        };
        runner.observe()?;
        Ok(runner)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn eta(&self) -> f64 {
        self.resolved.eta
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn current(&self) -> &TrajectoryRecord {
        &self.current
    }

    pub fn is_done(&self) -> bool {
        self.diverged_at.is_some() || self.step >= self.config.horizon
    }

    pub fn weights(&self) -> Option<&WeightState> {
        match &self.dynamics {
            Dynamics::Reduced { .. } => None,
            Dynamics::Matrix { state, .. } | Dynamics::Empirical { state, .. } => Some(state),
        }
    }

    pub fn reduced_state(&self) -> Option<ReducedState> {
        match &self.dynamics {
            Dynamics::Reduced { state, .. } => Some(*state),
            _ => None,
        }
    }

    /// The sampler of an empirical run.
    pub fn sampler(&self) -> Option<&Sampler> {
        match &self.dynamics {
            Dynamics::Empirical { sampler, .. } => Some(sampler),
            _ => None,
        }
    }

    /// The minibatch this run uses at its current step.
    pub fn own_batch(&self) -> Result<Option<Batch>> {
        let Some(sampler) = self.sampler() else { return Ok(None) };
        let stream = batch_stream(self.config.batch_mode, self.step);
        let draws = standard_draws(self.config.batch_size, self.config.d, self.config.sigma > 0.0, self.config.seed, stream);
        sampler.batch_from_draws(&draws).map(Some)
    }

    fn observe(&mut self) -> Result<()> {
        let k = self.step;
        let record = match &self.dynamics {
            Dynamics::Reduced { geom, state } => reduced_record(k, state, geom, self.config.sigma),
            Dynamics::Matrix { pop, state } | Dynamics::Empirical { pop, state, .. } => {
                if state.is_finite() {
                    population_record(k, pop, state)?
                } else {
                    TrajectoryRecord { k, loss: f64::INFINITY, align: f64::NAN, ..self.current }
                }
            }
        };
        self.current = record;
        self.samples.push(record.stage_sample());
        let divergent = record.is_divergent();
        if divergent {
            self.diverged_at = Some(k);
        }
        if divergent || k.is_multiple_of(self.config.log_every) || k == self.config.horizon {
            self.records.push(record);
        }
        Ok(())
    }

    fn weight_update(
        algorithm: Algorithm,
        orth: Orthogonalizer,
        eta: f64,
        state: &WeightState,
        grad: DMatrix<f64>,
    ) -> Result<Option<WeightState>> {
        if grad.iter().any(|x| !x.is_finite()) {
            return Ok(None);
        }
        let direction = match algorithm {
            Algorithm::Gd => grad,
            Algorithm::SpecGd => orth.apply(&grad)?,
        };
        Ok(Some(WeightState::new(state.weights() - direction * eta)))
    }

    /// Takes one step. Empirical runs use `batch` when given and draw their own
    /// otherwise; other modes ignore it.
    pub fn advance(&mut self, batch: Option<&Batch>) -> Result<()> {
        if self.is_done() {
            return Ok(());
        }
        let eta = self.resolved.eta;
        let algorithm = self.config.algorithm;
        let orth = self.orth;
        let own = match (&self.dynamics, batch) {
            (Dynamics::Empirical { fixed: None, .. }, None) => self.own_batch()?,
            _ => None,
        };
        let fixed_mode = self.config.batch_mode == BatchMode::Fixed;
        let next = match &mut self.dynamics {
            Dynamics::Reduced { geom, state } => {
                *state = reduced_step(algorithm, state, eta, geom);
                true
            }
            Dynamics::Matrix { pop, state } => {
                let grad = pop.gradient(state)?.full_gradient;
                match Self::weight_update(algorithm, orth, eta, state, grad)? {
                    Some(s) => {
                        *state = s;
                        true
                    }
                    None => false,
                }
            }
            Dynamics::Empirical { state, fixed, .. } => {
                if fixed_mode && fixed.is_none() {
                    *fixed = Some(match (batch, own.clone()) {
                        (Some(b), _) => b.clone(),
                        (None, Some(b)) => b,
                        (None, None) => unreachable!("batch drawn above"),
                    });
                }
                let batch = match (fixed.as_ref(), batch, own.as_ref()) {
                    (Some(f), _, _) => f,
                    (None, Some(b), _) => b,
                    (None, None, Some(b)) => b,
                    (None, None, None) => unreachable!("batch drawn above"),
                };
                let grad = empirical_gradient(state, batch)?;
                match Self::weight_update(algorithm, orth, eta, state, grad)? {
                    Some(s) => {
                        *state = s;
                        true
                    }
                    None => false,
                }
            }
        };
        self.step += 1;
        if next {
            self.observe()
        } else {
            let k = self.step;
            self.current = TrajectoryRecord { k, loss: f64::INFINITY, align: f64::NAN, ..self.current };
            self.samples.push(self.current.stage_sample());
            self.records.push(self.current);
            self.diverged_at = Some(k);
            Ok(())
        }
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_done() {
            self.advance(None)?;
        }
        Ok(())
    }

    pub fn finish(self) -> TrajectoryOutput {
        let stages = detect_stages_from_samples(&self.samples, &self.config.thresholds(), self.config.algorithm);
        let diverged = self.diverged_at.is_some();
        TrajectoryOutput {
            final_alignment: if diverged { 0.0 } else { self.current.align },
            final_loss: Some(self.current.loss).filter(|l| l.is_finite()),
            steps_run: self.step,
            diverged_at: self.diverged_at,
            stages,
            records: self.records,
            resolved: self.resolved,
            config: self.config,
        }
    }
}

/// Runs `config` to its horizon (or divergence).
pub fn run_trajectory(config: &RunConfig) -> Result<TrajectoryOutput> {
    let mut runner = Runner::new(config)?;
    runner.run_to_end()?;
    Ok(runner.finish())
}
