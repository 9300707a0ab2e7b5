//! Run configuration: a flat key-value TOML schema, validation and resolution of
//! derived quantities (learning rate, initialization scale, digest).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::{CovarianceSpec, ProblemSpec};
use crate::empirical::BatchMode;
use crate::error::{Error, Result};
use crate::init::ThetaPreset;
use crate::linalg::Orthogonalizer;
use crate::reduced::{SpikedGeometry, StageThresholds};
use crate::Algorithm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PopulationMatrix,
    PopulationReduced,
    Empirical,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::PopulationMatrix => "population-matrix",
            Mode::PopulationReduced => "population-reduced",
            Mode::Empirical => "empirical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceChoice {
    Spiked,
    PowerLaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaRule {
    /// Use `eta` as given.
    Fixed,
    /// `κ / √Tr(Q)`, which is `κ / √(d + λ)` for a spiked covariance.
    KappaOverSqrt,
    /// `gd_safe_fraction / (16 λ_max(Q))`, i.e. a fraction of `1 / (16(1 + λ))`.
    GdSafe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Stiefel,
    Gaussian,
    /// Isotropic point `μ I` of the three-coefficient manifold.
    Manifold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrthogonalizerChoice {
    Exact,
    NewtonSchulz,
}

/// Every knob of a single run. Deserializes from a flat TOML table; absent keys
/// take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub mode: Mode,
    pub d: usize,
    pub m: usize,
    pub covariance: CovarianceChoice,
    /// Spike strength (spiked covariance).
    pub lambda: f64,
    /// Decay exponent (power-law covariance).
    pub alpha: f64,
    /// Seed of the random eigenbasis (power-law covariance).
    pub basis_seed: u64,
    pub eta_rule: EtaRule,
    pub eta: Option<f64>,
    pub gd_safe_fraction: f64,
    pub rho0: f64,
    pub init: InitKind,
    /// Defaults to `mass` for Stiefel and manifold inits and `width` for Gaussian.
    pub theta_preset: Option<ThetaPreset>,
    pub horizon: usize,
    pub batch_size: usize,
    pub batch_mode: BatchMode,
    pub sigma: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub kappa: f64,
    pub seed: u64,
    pub log_every: usize,
    pub orthogonalizer: OrthogonalizerChoice,
    pub ns_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = StageThresholds::default();
        RunConfig {
            algorithm: Algorithm::Gd,
            mode: Mode::PopulationReduced,
            d: 300,
            m: 300,
            covariance: CovarianceChoice::Spiked,
            lambda: 10.0,
            alpha: 2.0,
            basis_seed: 0,
            eta_rule: EtaRule::Fixed,
            eta: Some(1e-3),
            gd_safe_fraction: 0.5,
            rho0: 1e-2,
            init: InitKind::Manifold,
            theta_preset: None,
            horizon: 5000,
            batch_size: 5000,
            batch_mode: BatchMode::Fresh,
            sigma: 0.0,
            rho: t.rho,
            epsilon: t.epsilon,
            delta: t.delta,
            kappa: t.kappa,
            seed: 0,
            log_every: 1,
            orthogonalizer: OrthogonalizerChoice::Exact,
            ns_iters: 5,
        }
    }
}

/// Quantities derived from a validated [`RunConfig`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub eta: f64,
    pub theta_squared: f64,
    pub theta_preset: ThetaPreset,
    /// Top eigenvalue of `Q`.
    pub lambda_max: f64,
    /// `Tr(Q)`.
    pub trace_q: f64,
    pub digest: String,
}

/// Parses a flat TOML document into a table.
pub fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::config(format!("malformed config: {e}")))
}

/// Copies every key of `overrides` into `base`.
pub fn merge_tables(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        base.insert(k, v);
    }
}

/// Removes `key` from `table` and deserializes it.
pub(crate) fn take_key<T: serde::de::DeserializeOwned>(table: &mut toml::Table, key: &str) -> Result<Option<T>> {
    match table.remove(key) {
        None => Ok(None),
        Some(v) => v
            .try_into()
            .map(Some)
            .map_err(|e| Error::config(format!("bad value for `{key}`: {e}"))),
    }
}

impl RunConfig {
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text)?)
    }

    pub fn thresholds(&self) -> StageThresholds {
        StageThresholds {
            rho: self.rho,
            epsilon: self.epsilon,
            delta: self.delta,
            kappa: self.kappa,
        }
    }

    pub fn orthogonalizer_spec(&self) -> Orthogonalizer {
        match self.orthogonalizer {
            OrthogonalizerChoice::Exact => Orthogonalizer::Exact,
            OrthogonalizerChoice::NewtonSchulz => Orthogonalizer::NewtonSchulz { iters: self.ns_iters },
        }
    }

    pub fn theta_preset_resolved(&self) -> ThetaPreset {
        self.theta_preset.unwrap_or(match self.init {
            InitKind::Gaussian => ThetaPreset::Width,
            InitKind::Stiefel | InitKind::Manifold => ThetaPreset::Mass,
        })
    }

    /// Spike strength, or 0 for a power-law covariance.
    pub fn spike_strength(&self) -> f64 {
        match self.covariance {
            CovarianceChoice::Spiked => self.lambda,
            CovarianceChoice::PowerLaw => 0.0,
        }
    }

    pub fn covariance_spec(&self) -> Result<CovarianceSpec> {
        match self.covariance {
            CovarianceChoice::Spiked => CovarianceSpec::spiked(self.d, self.lambda),
            CovarianceChoice::PowerLaw => CovarianceSpec::power_law(self.d, self.alpha, self.basis_seed),
        }
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        match self.covariance {
            CovarianceChoice::Spiked => ProblemSpec::spiked(self.d, self.m, self.lambda, self.sigma),
            CovarianceChoice::PowerLaw => ProblemSpec::power_law(self.d, self.m, self.alpha, self.basis_seed, self.sigma),
        }
    }

    pub fn geometry(&self) -> Result<SpikedGeometry> {
        match self.covariance {
            CovarianceChoice::Spiked => SpikedGeometry::new(self.lambda, self.d),
            CovarianceChoice::PowerLaw => Err(Error::config("reduced dynamics need a spiked covariance")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 3 {
            return Err(Error::config(format!("d must be at least 3 (got {})", self.d)));
        }
        if self.m == 0 {
            return Err(Error::config("m must be positive"));
        }
        self.covariance_spec()?.validate()?;
        self.thresholds().validate()?;
        if !(self.rho0.is_finite() && self.rho0 > 0.0) {
            return Err(Error::config(format!("rho0 must be positive (got {})", self.rho0)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::config(format!("sigma must be nonnegative (got {})", self.sigma)));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be at least 1"));
        }
        match self.eta_rule {
            EtaRule::Fixed => match self.eta {
                Some(eta) if eta.is_finite() && eta > 0.0 => {}
                Some(eta) => return Err(Error::config(format!("eta must be positive (got {eta})"))),
                None => return Err(Error::config("eta_rule = fixed needs a value for eta")),
            },
            EtaRule::GdSafe => {
                if !(self.gd_safe_fraction.is_finite() && self.gd_safe_fraction > 0.0) {
                    return Err(Error::config("gd_safe_fraction must be positive"));
                }
            }
            EtaRule::KappaOverSqrt => {}
        }
        if self.orthogonalizer == OrthogonalizerChoice::NewtonSchulz && self.ns_iters == 0 {
            return Err(Error::config("ns_iters must be at least 1"));
        }
        match self.mode {
            Mode::PopulationReduced => {
                if self.covariance != CovarianceChoice::Spiked {
                    return Err(Error::config("population-reduced mode needs a spiked covariance"));
                }
                if self.init != InitKind::Manifold {
                    return Err(Error::config("population-reduced mode needs init = manifold"));
                }
            }
            Mode::Empirical => {
                if self.batch_size == 0 {
                    return Err(Error::config("batch_size must be at least 1"));
                }
            }
            Mode::PopulationMatrix => {}
        }
        if self.mode != Mode::PopulationReduced {
            match self.init {
                InitKind::Stiefel if self.m > self.d => {
                    return Err(Error::config(format!("stiefel init needs m <= d (m = {}, d = {})", self.m, self.d)));
                }
                InitKind::Manifold if self.covariance != CovarianceChoice::Spiked => {
                    return Err(Error::config("manifold init needs a spiked covariance"));
                }
                InitKind::Manifold if self.m < self.d => {
                    return Err(Error::config(format!("manifold init needs m >= d (m = {}, d = {})", self.m, self.d)));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of this config.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// First 12 hex digits of [`digest`](Self::digest), used in file names.
    pub fn short_digest(&self) -> String {
        self.digest()[..12].to_string()
    }

    pub fn resolve(&self) -> Result<Resolved> {
        self.validate()?;
        let spec = self.covariance_spec()?;
        let eigen = spec.eigenvalues();
        let lambda_max = eigen.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let trace_q: f64 = eigen.iter().sum();
        let eta = match self.eta_rule {
            EtaRule::Fixed => self.eta.expect("validated"),
            EtaRule::KappaOverSqrt => self.kappa / trace_q.sqrt(),
            EtaRule::GdSafe => self.gd_safe_fraction / (16.0 * lambda_max),
        };
        let theta_preset = self.theta_preset_resolved();
        let theta_squared = theta_preset.theta_squared(self.rho0, self.d, self.m, self.spike_strength());
        Ok(Resolved {
            eta,
            theta_squared,
            theta_preset,
            lambda_max,
            trace_q,
            digest: self.short_digest(),
        })
    }

    /// JSON document recording this config and its resolved quantities.
    pub fn provenance(&self) -> Result<serde_json::Value> {
        let resolved = self.resolve()?;
        Ok(serde_json::json!({ "config": self, "resolved": resolved }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn flat_toml_round_trip() {
        let text = r#"
            algorithm = "specgd"
            mode = "population-matrix"
            d = 16
            m = 16
            lambda = 8.0
            eta_rule = "kappa-over-sqrt"
            kappa = 0.05
            init = "stiefel"
        "#;
        let config = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(config.algorithm, Algorithm::SpecGd);
        let resolved = config.resolve().unwrap();
        assert!((resolved.eta - 0.05 / 24f64.sqrt()).abs() < 1e-15);
        let table = toml::Value::try_from(&config).unwrap().as_table().unwrap().clone();
        let again = RunConfig::from_table(table).unwrap();
        assert_eq!(again, config);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        assert!(RunConfig::from_toml_str("d = 2").is_err());
        assert!(RunConfig::from_toml_str("rho = 0.5").is_err());
        assert!(RunConfig::from_toml_str("eta = -1.0").is_err());
        assert!(RunConfig::from_toml_str("covariance = \"power-law\"").is_err());
        assert!(RunConfig::from_toml_str("init = \"gaussian\"").is_err());
        assert!(RunConfig::from_toml_str("mode = \"empirical\"\ninit = \"stiefel\"\nm = 400").is_err());
        assert!(RunConfig::from_toml_str("mode = \"empirical\"\ninit = \"gaussian\"\nbatch_size = 0").is_err());
    }

    #[test]
    fn gd_safe_rule_uses_spike_variance() {
        let config = RunConfig { eta_rule: EtaRule::GdSafe, lambda: 200.0, gd_safe_fraction: 0.5, ..Default::default() };
        let eta = config.resolve().unwrap().eta;
        assert!((eta - 1.0 / (32.0 * 201.0)).abs() < 1e-18);
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..Default::default() };
        assert_eq!(a.digest(), RunConfig::default().digest());
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.short_digest().len(), 12);
    }

    #[test]
    fn theta_preset_defaults_follow_init() {
        let g = RunConfig { init: InitKind::Gaussian, mode: Mode::Empirical, m: 50, d: 100, ..Default::default() };
        assert_eq!(g.theta_preset_resolved(), ThetaPreset::Width);
        assert!((g.resolve().unwrap().theta_squared - 1e-2 / 5000.0).abs() < 1e-18);
        assert_eq!(RunConfig::default().theta_preset_resolved(), ThetaPreset::Mass);
    }
}
