//! Input covariances and the teacher model `y = (xᵀw*)² + ν`, `x ~ N(0, Q)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::haar_orthonormal;

const UNIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceKind {
    /// `Q = I + λ v vᵀ`.
    Spiked { lambda: f64, spike: DVector<f64> },
    /// `Q = U diag(λ_1..λ_d) Uᵀ`, `λ_i ∝ i^{-α}`, `Tr Q = d`, `U` Haar-random from `basis_seed`.
    PowerLaw { alpha: f64, basis_seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    pub dim: usize,
}

impl CovarianceSpec {
    /// Spiked covariance with the spike along the second coordinate axis.
    pub fn spiked(dim: usize, lambda: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::config("spiked covariance needs d >= 2 to place the spike"));
        }
        let mut spike = DVector::zeros(dim);
        spike[1] = 1.0;
        Self::spiked_along(lambda, spike)
    }

    pub fn spiked_along(lambda: f64, spike: DVector<f64>) -> Result<Self> {
        let spec = CovarianceSpec {
            dim: spike.len(),
            kind: CovarianceKind::Spiked { lambda, spike },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn power_law(dim: usize, alpha: f64, basis_seed: u64) -> Result<Self> {
        let spec = CovarianceSpec {
            dim,
            kind: CovarianceKind::PowerLaw { alpha, basis_seed },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 3 {
            return Err(Error::config(format!(
                "covariance dimension must be at least 3 (got {})",
                self.dim
            )));
        }
        match &self.kind {
            CovarianceKind::Spiked { lambda, spike } => {
                Error::check_dim("spike direction length", self.dim, spike.len())?;
                if !(lambda.is_finite() && *lambda >= 0.0) {
                    return Err(Error::config(format!("spike strength must be >= 0 (got {lambda})")));
                }
                if (spike.norm() - 1.0).abs() > UNIT_TOL {
                    return Err(Error::config(format!(
                        "spike direction must be a unit vector (norm {})",
                        spike.norm()
                    )));
                }
            }
            CovarianceKind::PowerLaw { alpha, .. } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::config(format!("power-law exponent must be > 0 (got {alpha})")));
                }
            }
        }
        Ok(())
    }

    pub fn lambda(&self) -> Option<f64> {
        match &self.kind {
            CovarianceKind::Spiked { lambda, .. } => Some(*lambda),
            CovarianceKind::PowerLaw { .. } => None,
        }
    }

    /// Eigenvalues in decreasing order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        match &self.kind {
            CovarianceKind::Spiked { lambda, .. } => {
                let mut ev = vec![1.0; self.dim];
                ev[0] = 1.0 + lambda;
                ev
            }
            CovarianceKind::PowerLaw { alpha, .. } => power_law_spectrum(self.dim, *alpha),
        }
    }

    /// Orthonormal eigenbasis matching [`eigenvalues`](Self::eigenvalues) (power-law only).
    pub fn power_law_basis(&self) -> Option<DMatrix<f64>> {
        match &self.kind {
            CovarianceKind::PowerLaw { basis_seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*basis_seed);
                Some(haar_orthonormal(self.dim, self.dim, &mut rng))
            }
            CovarianceKind::Spiked { .. } => None,
        }
    }

    /// Direction of largest variance: `v` for a spike, the top eigenvector otherwise.
    pub fn leading_direction(&self) -> DVector<f64> {
        match &self.kind {
            CovarianceKind::Spiked { spike, .. } => spike.clone(),
            CovarianceKind::PowerLaw { .. } => {
                self.power_law_basis().expect("power law").column(0).into_owned()
            }
        }
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        build_covariance(self)
    }

    pub fn sqrt(&self) -> Result<DMatrix<f64>> {
        covariance_sqrt(self)
    }
}

/// `λ_i = d · i^{-α} / Σ_j j^{-α}` for `i = 1..d`.
pub fn power_law_spectrum(dim: usize, alpha: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=dim).map(|i| (i as f64).powf(-alpha)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x * dim as f64 / total).collect()
}

pub fn build_covariance(spec: &CovarianceSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    match &spec.kind {
        CovarianceKind::Spiked { lambda, spike } => {
            let mut q = DMatrix::identity(spec.dim, spec.dim);
            q.ger(*lambda, spike, spike, 1.0);
            Ok(q)
        }
        CovarianceKind::PowerLaw { alpha, .. } => {
            let basis = spec.power_law_basis().expect("power law");
            Ok(spectral_matrix(&basis, &power_law_spectrum(spec.dim, *alpha)))
        }
    }
}

pub fn covariance_sqrt(spec: &CovarianceSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    match &spec.kind {
        CovarianceKind::Spiked { lambda, spike } => {
            let mut q = DMatrix::identity(spec.dim, spec.dim);
            q.ger((1.0 + lambda).sqrt() - 1.0, spike, spike, 1.0);
            Ok(q)
        }
        CovarianceKind::PowerLaw { alpha, .. } => {
            let basis = spec.power_law_basis().expect("power law");
            let roots: Vec<f64> = power_law_spectrum(spec.dim, *alpha).into_iter().map(f64::sqrt).collect();
            Ok(spectral_matrix(&basis, &roots))
        }
    }
}

fn spectral_matrix(basis: &DMatrix<f64>, values: &[f64]) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(basis.nrows(), basis.ncols(), |i, j| basis[(i, j)] * values[j]);
    let out = scaled * basis.transpose();
    // Exact symmetry; the product is symmetric only up to rounding.
    (&out + out.transpose()) * 0.5
}

/// The phase-retrieval problem: teacher `w*`, input covariance, width `m` of the
/// student and label-noise level σ.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub d: usize,
    pub m: usize,
    pub target: DVector<f64>,
    pub covariance: CovarianceSpec,
    pub noise_sigma: f64,
}

impl ProblemSpec {
    pub fn new(m: usize, target: DVector<f64>, covariance: CovarianceSpec, noise_sigma: f64) -> Result<Self> {
        let problem = ProblemSpec {
            d: covariance.dim,
            m,
            target,
            covariance,
            noise_sigma,
        };
        problem.validate()?;
        Ok(problem)
    }

    /// Spiked problem with `w* = e_1` and `v = e_2`.
    pub fn spiked(d: usize, m: usize, lambda: f64, noise_sigma: f64) -> Result<Self> {
        let covariance = CovarianceSpec::spiked(d, lambda)?;
        let mut target = DVector::zeros(d);
        target[0] = 1.0;
        Self::new(m, target, covariance, noise_sigma)
    }

    /// Power-law problem whose teacher sits on the smallest-variance eigendirection:
    /// `w* = u_d / √λ_d`, so that `Q^{1/2} w* = u_d` has unit norm.
    pub fn power_law(d: usize, m: usize, alpha: f64, basis_seed: u64, noise_sigma: f64) -> Result<Self> {
        let covariance = CovarianceSpec::power_law(d, alpha, basis_seed)?;
        let basis = covariance.power_law_basis().expect("power law");
        let spectrum = power_law_spectrum(d, alpha);
        let target = basis.column(d - 1) / spectrum[d - 1].sqrt();
        Self::new(m, target, covariance, noise_sigma)
    }

    pub fn validate(&self) -> Result<()> {
        self.covariance.validate()?;
        Error::check_dim("teacher length", self.d, self.target.len())?;
        if self.m == 0 {
            return Err(Error::config("width m must be positive"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config("noise level must be a finite nonnegative number"));
        }
        match &self.covariance.kind {
            CovarianceKind::Spiked { spike, .. } => {
                if (self.target.norm() - 1.0).abs() > UNIT_TOL {
                    return Err(Error::config(format!(
                        "teacher must be a unit vector (norm {})",
                        self.target.norm()
                    )));
                }
                if spike.dot(&self.target).abs() > UNIT_TOL {
                    return Err(Error::config("spike direction must be orthogonal to the teacher"));
                }
            }
            CovarianceKind::PowerLaw { .. } => {
                let q = self.covariance.matrix()?;
                let energy = self.target.dot(&(&q * &self.target));
                if (energy - 1.0).abs() > 1e-10 {
                    return Err(Error::config(format!(
                        "teacher must satisfy |Q^(1/2) w*| = 1 (got {})",
                        energy.sqrt()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn lambda(&self) -> Option<f64> {
        self.covariance.lambda()
    }

    /// `w* w*ᵀ`.
    pub fn target_gram(&self) -> DMatrix<f64> {
        &self.target * self.target.transpose()
    }

    /// Unit vector along the teacher.
    pub fn signal_direction(&self) -> DVector<f64> {
        self.target.normalize()
    }
}
