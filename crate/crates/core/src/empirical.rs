//! Finite-sample training on minibatches drawn from the phase-retrieval model.
//!
//! Randomness is organised in ChaCha streams keyed by a single seed: stream 0
//! initializes the weights and stream `k + 1` produces the minibatch used at step
//! `k`. Any step's batch can therefore be regenerated without replaying the run,
//! and independent runs that share a seed see identical draws.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceKind, ProblemSpec};
use crate::error::{Error, Result};
use crate::init::WeightState;
use crate::linalg::{gaussian_matrix, gemm, Orthogonalizer};
use crate::Algorithm;

/// Inputs `x_i` stored as the rows of an `n × d` matrix, with labels `y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: DMatrix<f64>,
    pub labels: DVector<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Whether each step sees a fresh minibatch or the same one throughout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    #[default]
    Fresh,
    Fixed,
}

/// Standard-normal draws behind one batch: `z` is `n × d` and `noise` is empty
/// when the problem is noiseless.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub z: DMatrix<f64>,
    pub noise: DVector<f64>,
}

/// RNG for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream that feeds the minibatch of step `step`.
pub fn batch_stream(mode: BatchMode, step: usize) -> u64 {
    match mode {
        BatchMode::Fresh => step as u64 + 1,
        BatchMode::Fixed => 1,
    }
}

pub fn standard_draws(n: usize, d: usize, noisy: bool, seed: u64, stream: u64) -> Draws {
    let mut rng = stream_rng(seed, stream);
    let z = gaussian_matrix(n, d, &mut rng);
    let noise = if noisy {
        DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
    } else {
        DVector::zeros(0)
    };
    Draws { z, noise }
}

/// Maps standard draws to model samples for one problem.
#[derive(Debug, Clone)]
pub struct Sampler {
    problem: ProblemSpec,
    sqrt_q: Option<DMatrix<f64>>,
}

impl Sampler {
    pub fn new(problem: ProblemSpec) -> Result<Self> {
        problem.validate()?;
        let sqrt_q = match problem.covariance.kind {
            CovarianceKind::Spiked { .. } => None,
            CovarianceKind::PowerLaw { .. } => Some(problem.covariance.sqrt()?),
        };
        Ok(Sampler { problem, sqrt_q })
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    /// `X = Z Q^{1/2}` and `y = (X w*)² + σ ν`.
    pub fn batch_from_draws(&self, draws: &Draws) -> Result<Batch> {
        let (n, d) = draws.z.shape();
        Error::check_dim("draw columns", self.problem.d, d)?;
        if n == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        let sigma = self.problem.noise_sigma;
        if sigma > 0.0 {
            Error::check_dim("noise draws", n, draws.noise.len())?;
        }
        let inputs = match (&self.problem.covariance.kind, &self.sqrt_q) {
            (CovarianceKind::Spiked { lambda, spike }, _) => {
                // Q^{1/2} = I + (√(1+λ) − 1) vvᵀ.
                let zv = &draws.z * spike;
                let mut x = draws.z.clone();
                x.ger((1.0 + lambda).sqrt() - 1.0, &zv, spike, 1.0);
                x
            }
            (CovarianceKind::PowerLaw { .. }, Some(root)) => {
                let mut x = DMatrix::zeros(n, d);
                gemm(1.0, &draws.z, false, root, false, 0.0, &mut x);
                x
            }
            (CovarianceKind::PowerLaw { .. }, None) => unreachable!("square root cached at construction"),
        };
        let mut labels = (&inputs * &self.problem.target).map(|p| p * p);
        if sigma > 0.0 {
            labels.axpy(sigma, &draws.noise, 1.0);
        }
        Ok(Batch { inputs, labels })
    }

    pub fn sample(&self, n: usize, seed: u64, stream: u64) -> Result<Batch> {
        let draws = standard_draws(n, self.problem.d, self.problem.noise_sigma > 0.0, seed, stream);
        self.batch_from_draws(&draws)
    }
}

/// `n` samples from stream 1 of `seed`.
pub fn sample_batch(problem: &ProblemSpec, n: usize, seed: u64) -> Result<Batch> {
    if n == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    Sampler::new(problem.clone())?.sample(n, seed, 1)
}

fn check(state: &WeightState, batch: &Batch) -> Result<()> {
    Error::check_dim("batch input dimension", state.dim(), batch.inputs.ncols())?;
    Error::check_dim("batch labels", batch.inputs.nrows(), batch.labels.len())?;
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    Ok(())
}

/// `X W` and the residuals `y_i − ‖Wᵀx_i‖²`.
fn forward(state: &WeightState, batch: &Batch) -> (DMatrix<f64>, DVector<f64>) {
    let mut xw = DMatrix::zeros(batch.len(), state.width());
    gemm(1.0, &batch.inputs, false, state.weights(), false, 0.0, &mut xw);
    let residual = DVector::from_fn(batch.len(), |i, _| batch.labels[i] - xw.row(i).norm_squared());
    (xw, residual)
}

/// `(1/n) Σ_i (y_i − x_iᵀ M x_i)²`.
pub fn empirical_loss(state: &WeightState, batch: &Batch) -> Result<f64> {
    check(state, batch)?;
    let (_, residual) = forward(state, batch);
    Ok(residual.norm_squared() / batch.len() as f64)
}

/// `−(4/n) Σ_i (y_i − x_iᵀ M x_i) x_i x_iᵀ W`.
pub fn empirical_gradient(state: &WeightState, batch: &Batch) -> Result<DMatrix<f64>> {
    check(state, batch)?;
    let (mut xw, residual) = forward(state, batch);
    for (i, r) in residual.iter().enumerate() {
        xw.row_mut(i).scale_mut(*r);
    }
    let mut grad = DMatrix::zeros(state.dim(), state.width());
    gemm(-4.0 / batch.len() as f64, &batch.inputs, true, &xw, false, 0.0, &mut grad);
    Ok(grad)
}

pub fn empirical_gd_step(state: &WeightState, batch: &Batch, eta: f64) -> Result<WeightState> {
    let grad = empirical_gradient(state, batch)?;
    Ok(WeightState::new(state.weights() - grad * eta))
}

pub fn empirical_specgd_step(state: &WeightState, batch: &Batch, eta: f64, orth: Orthogonalizer) -> Result<WeightState> {
    let grad = empirical_gradient(state, batch)?;
    let direction = orth.apply(&grad)?;
    Ok(WeightState::new(state.weights() - direction * eta))
}

pub fn empirical_step(
    algorithm: Algorithm,
    state: &WeightState,
    batch: &Batch,
    eta: f64,
    orth: Orthogonalizer,
) -> Result<WeightState> {
    match algorithm {
        Algorithm::Gd => empirical_gd_step(state, batch, eta),
        Algorithm::SpecGd => empirical_specgd_step(state, batch, eta, orth),
    }
}
