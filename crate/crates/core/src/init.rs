//! Weight states and initializers.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, haar_orthonormal};

/// The `d × m` factor `W` together with its Gram matrix `M = W Wᵀ`.
///
/// `M` is recomputed on every construction and never updated incrementally.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    w: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl WeightState {
    pub fn new(w: DMatrix<f64>) -> Self {
        let gram = &w * w.transpose();
        // W Wᵀ is symmetric in exact arithmetic; enforce it bitwise.
        let gram = (&gram + gram.transpose()) * 0.5;
        WeightState { w, gram }
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn into_weights(self) -> DMatrix<f64> {
        self.w
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn width(&self) -> usize {
        self.w.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|x| x.is_finite())
    }
}

/// How the squared initialization scale θ² is derived from ρ0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaPreset {
    /// `θ² = ρ0 / (d + λ)`, so that the initial network mass `Tr(M Q)` equals ρ0.
    Mass,
    /// `θ² = ρ0 / d`.
    Dimension,
    /// `θ² = ρ0 / (m d)`, the small Gaussian scale.
    Width,
}

impl ThetaPreset {
    pub fn theta_squared(self, rho0: f64, d: usize, m: usize, lambda: f64) -> f64 {
        match self {
            ThetaPreset::Mass => rho0 / (d as f64 + lambda),
            ThetaPreset::Dimension => rho0 / d as f64,
            ThetaPreset::Width => rho0 / (m as f64 * d as f64),
        }
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta.is_finite() && theta > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("initialization scale θ must be > 0 (got {theta})")))
    }
}

/// `θ · U` with `U` Haar-distributed on the Stiefel manifold of `d × m` matrices
/// with orthonormal columns. For `m = d`, `M(0) = θ² I`.
pub fn stiefel_init(d: usize, m: usize, theta: f64, seed: u64) -> Result<WeightState> {
    check_theta(theta)?;
    if m == 0 || m > d {
        return Err(Error::config(format!("stiefel init needs 1 <= m <= d (got d={d}, m={m})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(WeightState::new(haar_orthonormal(d, m, &mut rng) * theta))
}

/// Columns `w_j ~ N(0, θ² I_d)`, i.i.d.
pub fn gaussian_init(d: usize, m: usize, theta: f64, seed: u64) -> Result<WeightState> {
    check_theta(theta)?;
    if m == 0 || d == 0 {
        return Err(Error::config("gaussian init needs positive d and m"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(WeightState::new(gaussian_matrix(d, m, &mut rng) * theta))
}
