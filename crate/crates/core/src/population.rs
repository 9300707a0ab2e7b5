//! Full-matrix population dynamics.
//!
//! With `C = M − w*w*ᵀ` the population loss is `2 Tr((QC)²) + Tr(CQ)² + σ²` and
//! its gradient with respect to `W` is `G(M) W` where `G = 8 QCQ + 4 Tr(CQ) Q`.

use nalgebra::{DMatrix, DVector};

use crate::covariance::{CovarianceKind, ProblemSpec};
use crate::error::{Error, Result};
use crate::init::WeightState;
use crate::linalg::Orthogonalizer;
use crate::reduced::{PreGradients, ReducedState};
use crate::Algorithm;

/// `G(M)` and the weight gradient `G W`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationGradient {
    pub g: DMatrix<f64>,
    pub full_gradient: DMatrix<f64>,
}

/// A problem together with its materialized covariance.
#[derive(Debug, Clone)]
pub struct Population {
    problem: ProblemSpec,
    q: DMatrix<f64>,
    signal: DVector<f64>,
    spike: DVector<f64>,
    spike_variance: f64,
}

/// Coordinates of an arbitrary `M` along the signal, spike and bulk directions.
///
/// `a = ŵᵀMŵ` and `b = vᵀMv` for the unit teacher direction `ŵ` and the leading
/// covariance direction `v`; `c` is the mean of the remaining diagonal mass. On
/// the spiked manifold these are exactly its coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub coefficients: ReducedState,
    /// `(vᵀQv) b`.
    pub spike_mass: f64,
    /// `r − a − B`.
    pub bulk_mass: f64,
    /// `Tr(M Q)`.
    pub network_mass: f64,
    /// Same projections applied to `G(M)`.
    pub pre_gradients: PreGradients,
}

impl Population {
    pub fn new(problem: ProblemSpec) -> Result<Self> {
        problem.validate()?;
        let q = problem.covariance.matrix()?;
        let signal = problem.signal_direction();
        let spike = problem.covariance.leading_direction();
        let spike_variance = spike.dot(&(&q * &spike));
        Ok(Population { problem, q, signal, spike, spike_variance })
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn spike_direction(&self) -> &DVector<f64> {
        &self.spike
    }

    fn check(&self, m: &DMatrix<f64>) -> Result<()> {
        Error::check_dim("gram rows", self.problem.d, m.nrows())?;
        Error::check_dim("gram cols", self.problem.d, m.ncols())
    }

    fn check_state(&self, state: &WeightState) -> Result<()> {
        Error::check_dim("weight rows", self.problem.d, state.dim())?;
        Error::check_dim("weight cols", self.problem.m, state.width())
    }

    /// `Q X`, using the rank-one structure when the covariance is spiked.
    fn q_left(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.problem.covariance.kind {
            CovarianceKind::Spiked { lambda, spike } => {
                let vt_x = spike.transpose() * x;
                let mut out = x.clone();
                out.ger(*lambda, spike, &vt_x.transpose(), 1.0);
                out
            }
            CovarianceKind::PowerLaw { .. } => &self.q * x,
        }
    }

    /// `C Q` with `C = M − w*w*ᵀ`.
    fn cq(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let c = m - self.problem.target_gram();
        // C and Q are symmetric, so CQ = (QC)ᵀ.
        self.q_left(&c).transpose()
    }

    pub fn loss_of_gram(&self, m: &DMatrix<f64>) -> Result<f64> {
        self.check(m)?;
        let cq = self.cq(m);
        // Tr((CQ)²) = Σ_ij (CQ)_ij (CQ)_ji.
        let tr_sq = cq.component_mul(&cq.transpose()).sum();
        let tr = cq.trace();
        let sigma = self.problem.noise_sigma;
        Ok(2.0 * tr_sq + tr * tr + sigma * sigma)
    }

    pub fn loss(&self, state: &WeightState) -> Result<f64> {
        self.check_state(state)?;
        self.loss_of_gram(state.gram())
    }

    /// `G(M) = 8 QCQ + 4 Tr(CQ) Q`, symmetrized.
    pub fn gradient_matrix(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(m)?;
        let cq = self.cq(m);
        let qcq = self.q_left(&cq);
        let mut g = qcq * 8.0 + &self.q * (4.0 * cq.trace());
        g = (&g + g.transpose()) * 0.5;
        Ok(g)
    }

    pub fn gradient(&self, state: &WeightState) -> Result<PopulationGradient> {
        self.check_state(state)?;
        let g = self.gradient_matrix(state.gram())?;
        let full_gradient = &g * state.weights();
        Ok(PopulationGradient { g, full_gradient })
    }

    /// `W ← W − η G(M) W`.
    pub fn gd_step(&self, state: &WeightState, eta: f64) -> Result<WeightState> {
        let grad = self.gradient(state)?;
        Ok(WeightState::new(state.weights() - grad.full_gradient * eta))
    }

    /// `W ← W − η polar(G(M) W)`.
    pub fn specgd_step(&self, state: &WeightState, eta: f64) -> Result<WeightState> {
        self.specgd_step_with(state, eta, Orthogonalizer::Exact)
    }

    pub fn specgd_step_with(&self, state: &WeightState, eta: f64, orth: Orthogonalizer) -> Result<WeightState> {
        let grad = self.gradient(state)?;
        let direction = orth.apply(&grad.full_gradient)?;
        Ok(WeightState::new(state.weights() - direction * eta))
    }

    pub fn step(&self, algorithm: Algorithm, state: &WeightState, eta: f64, orth: Orthogonalizer) -> Result<WeightState> {
        match algorithm {
            Algorithm::Gd => self.gd_step(state, eta),
            Algorithm::SpecGd => self.specgd_step_with(state, eta, orth),
        }
    }

    /// Frobenius cosine between `M` and `w*w*ᵀ`.
    pub fn alignment_of_gram(&self, m: &DMatrix<f64>) -> Result<f64> {
        self.check(m)?;
        let norm = m.norm();
        if norm == 0.0 {
            return Err(Error::Precondition("alignment of the zero matrix is undefined".into()));
        }
        Ok(quadratic_form(m, &self.signal) / norm)
    }

    pub fn alignment(&self, state: &WeightState) -> Result<f64> {
        self.check_state(state)?;
        self.alignment_of_gram(state.gram())
    }

    fn split(&self, m: &DMatrix<f64>) -> (f64, f64, f64) {
        let a = quadratic_form(m, &self.signal);
        let b = quadratic_form(m, &self.spike);
        let c = (m.trace() - a - b) / (self.problem.d as f64 - 2.0);
        (a, b, c)
    }

    pub fn project_gram(&self, m: &DMatrix<f64>) -> Result<Projection> {
        let g = self.gradient_matrix(m)?;
        let (a, b, c) = self.split(m);
        let (g_wstar, g_v, g_perp) = self.split(&g);
        let network_mass = m.component_mul(&self.q).sum();
        let spike_mass = self.spike_variance * b;
        Ok(Projection {
            coefficients: ReducedState { a, b, c },
            spike_mass,
            bulk_mass: network_mass - a - spike_mass,
            network_mass,
            pre_gradients: PreGradients { g_wstar, g_v, g_perp },
        })
    }

    pub fn project(&self, state: &WeightState) -> Result<Projection> {
        self.check_state(state)?;
        self.project_gram(state.gram())
    }

    fn require_spiked(&self) -> Result<()> {
        match self.problem.covariance.kind {
            CovarianceKind::Spiked { .. } => Ok(()),
            CovarianceKind::PowerLaw { .. } => Err(Error::Precondition(
                "the three-coefficient manifold exists only for spiked covariances".into(),
            )),
        }
    }

    /// `(a, b, c)` of the manifold point nearest to `M` in the Frobenius sense.
    pub fn manifold_coefficients(&self, state: &WeightState) -> Result<ReducedState> {
        self.require_spiked()?;
        self.check_state(state)?;
        let (a, b, c) = self.split(state.gram());
        Ok(ReducedState { a, b, c })
    }

    /// `a w*w*ᵀ + b vvᵀ + c P⊥`.
    pub fn manifold_matrix(&self, coefficients: &ReducedState) -> Result<DMatrix<f64>> {
        self.require_spiked()?;
        let d = self.problem.d;
        let w = &self.signal;
        let v = &self.spike;
        let ww = w * w.transpose();
        let vv = v * v.transpose();
        let perp = DMatrix::identity(d, d) - &ww - &vv;
        Ok(ww * coefficients.a + vv * coefficients.b + perp * coefficients.c)
    }

    /// `‖M − M̂‖_F` where `M̂` is rebuilt from the extracted coefficients.
    pub fn manifold_projection_residual(&self, state: &WeightState) -> Result<f64> {
        let coefficients = self.manifold_coefficients(state)?;
        let rebuilt = self.manifold_matrix(&coefficients)?;
        Ok((state.gram() - rebuilt).norm())
    }

    /// A weight factor whose Gram matrix is the manifold point `(a, b, c)`, with
    /// `m ≥ d` so every block can be represented.
    pub fn manifold_weights(&self, coefficients: &ReducedState) -> Result<WeightState> {
        let m = self.manifold_matrix(coefficients)?;
        let (d, width) = (self.problem.d, self.problem.m);
        if width < d {
            return Err(Error::Precondition(format!(
                "a full-rank manifold point needs width m >= d (m = {width}, d = {d})"
            )));
        }
        if coefficients.a < 0.0 || coefficients.b < 0.0 || coefficients.c < 0.0 {
            return Err(Error::Precondition("manifold coefficients must be nonnegative".into()));
        }
        // M is PSD with the eigenbasis {w*, v, P⊥}, so its symmetric square root
        // is the same combination of projectors with square-rooted weights.
        let root = ReducedState {
            a: coefficients.a.sqrt(),
            b: coefficients.b.sqrt(),
            c: coefficients.c.sqrt(),
        };
        let sqrt = self.manifold_matrix(&root)?;
        let mut w = DMatrix::zeros(d, width);
        w.columns_mut(0, d).copy_from(&sqrt);
        debug_assert!((&w * w.transpose() - &m).norm() <= 1e-12 * (1.0 + m.norm()));
        Ok(WeightState::new(w))
    }
}

fn quadratic_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}
