//! Population and finite-sample training dynamics of gradient descent (GD) and
//! spectral gradient descent (SpecGD) on phase retrieval with anisotropic
//! Gaussian inputs.
//!
//! The crate is layered bottom-up:
//!
//! - [`covariance`]: spiked and power-law input covariances, their square roots,
//!   and the [`ProblemSpec`] tying a covariance to a teacher vector.
//! - [`linalg`]: the Moore–Penrose polar factor and a Newton–Schulz approximation.
//! - [`init`]: Stiefel and Gaussian initializers for the `d × m` weight factor.
//! - [`population`]: closed-form population loss and gradient, full-matrix GD and
//!   SpecGD steppers, alignment, and projection onto the signal/spike/bulk manifold.
//! - [`reduced`]: the exact three-coefficient recursions, continuous flows, stage
//!   detection and barrier/trap monitors.
//! - [`empirical`]: minibatch sampling, empirical gradients and steppers.
//! - [`experiment`]: run configuration, trajectories, sweeps, stage-scaling
//!   studies, the verification suite and CSV/JSON persistence.

pub mod covariance;
pub mod empirical;
pub mod error;
pub mod experiment;
pub mod init;
pub mod linalg;
pub mod population;
pub mod reduced;

pub use covariance::{CovarianceKind, CovarianceSpec, ProblemSpec};
pub use error::{Error, Result};
pub use init::WeightState;
pub use reduced::{ReducedState, SpikedGeometry};

/// Which update rule drives the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Plain gradient descent.
    Gd,
    /// Gradient replaced by its polar factor.
    #[serde(alias = "spec", alias = "spec_gd")]
    SpecGd,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Gd => "gd",
            Algorithm::SpecGd => "specgd",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gd" => Ok(Algorithm::Gd),
            "specgd" | "spec" | "spec_gd" | "spec-gd" => Ok(Algorithm::SpecGd),
            other => Err(Error::InvalidConfig(format!("unknown algorithm `{other}`"))),
        }
    }
}
