//! Stage-time scaling studies across dimensions, on the reduced dynamics.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{parse_table, take_key, CovarianceChoice, InitKind, Mode, RunConfig};
use super::output::{csv_writer, fmt_real, opt_index, output_path, write_json};
use super::trajectory::{run_trajectory, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::reduced::StageTimes;
use crate::Algorithm;

/// Header of the per-d stage table.
pub const STAGE_COLUMNS: [&str; 13] =
    ["d", "lambda", "eta", "rho0", "t1a", "t1", "t2a", "t2", "n1_prime", "n2_prime", "align_t1", "B_t1", "r_t1"];

/// How λ is chosen for each `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaRule {
    /// The base config's `lambda`.
    Fixed,
    /// `lambda_fraction · d`.
    Fraction,
    /// `ln d`.
    LogD,
    /// `√d`.
    SqrtD,
}

/// How ρ0 is chosen for each `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rho0Rule {
    Fixed,
    /// `1 / ln d`.
    InverseLogD,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageStudy {
    pub base: RunConfig,
    pub d_values: Vec<usize>,
    pub lambda_rule: LambdaRule,
    pub lambda_fraction: f64,
    pub rho0_rule: Rho0Rule,
}

impl StageStudy {
    pub fn new(base: RunConfig, d_values: Vec<usize>, lambda_rule: LambdaRule, rho0_rule: Rho0Rule) -> Result<Self> {
        let study = StageStudy { base, d_values, lambda_rule, lambda_fraction: 0.1, rho0_rule };
        study.validate()?;
        Ok(study)
    }

    /// Study keys (`d_values`, `lambda_rule`, `lambda_fraction`, `rho0_rule`) are read
    /// from the table; every other key configures the base run.
    pub fn from_table(mut table: toml::Table) -> Result<Self> {
        let d_values: Vec<usize> = take_key(&mut table, "d_values")?.unwrap_or_else(|| vec![100, 400, 1600]);
        let lambda_rule = take_key(&mut table, "lambda_rule")?.unwrap_or(LambdaRule::Fraction);
        let lambda_fraction = take_key(&mut table, "lambda_fraction")?.unwrap_or(0.1);
        let rho0_rule = take_key(&mut table, "rho0_rule")?.unwrap_or(Rho0Rule::Fixed);
        table.entry("mode").or_insert_with(|| "population-reduced".into());
        table.entry("init").or_insert_with(|| "manifold".into());
        let study = StageStudy { base: RunConfig::from_table(table)?, d_values, lambda_rule, lambda_fraction, rho0_rule };
        study.validate()?;
        Ok(study)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_values.is_empty() {
            return Err(Error::config("stage study needs at least one value of d"));
        }
        if self.base.mode != Mode::PopulationReduced {
            return Err(Error::config("stage studies run the population-reduced mode"));
        }
        if self.lambda_rule == LambdaRule::Fraction && !(self.lambda_fraction > 0.0) {
            return Err(Error::config("lambda_fraction must be positive"));
        }
        for &d in &self.d_values {
            self.config_for(d).validate()?;
        }
        Ok(())
    }

    pub fn lambda_for(&self, d: usize) -> f64 {
        let x = d as f64;
        match self.lambda_rule {
            LambdaRule::Fixed => self.base.lambda,
            LambdaRule::Fraction => self.lambda_fraction * x,
            LambdaRule::LogD => x.ln(),
            LambdaRule::SqrtD => x.sqrt(),
        }
    }

    pub fn rho0_for(&self, d: usize) -> f64 {
        match self.rho0_rule {
            Rho0Rule::Fixed => self.base.rho0,
            Rho0Rule::InverseLogD => 1.0 / (d as f64).ln(),
        }
    }

    pub fn config_for(&self, d: usize) -> RunConfig {
        RunConfig {
            d,
            m: d,
            lambda: self.lambda_for(d),
            rho0: self.rho0_for(d),
            covariance: CovarianceChoice::Spiked,
            mode: Mode::PopulationReduced,
            init: InitKind::Manifold,
            log_every: 1,
            ..self.base.clone()
        }
    }

    pub fn short_digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("study serializes");
        hex::encode(Sha256::digest(&json))[..12].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRow {
    pub d: usize,
    pub lambda: f64,
    pub eta: f64,
    pub rho0: f64,
    pub stages: StageTimes,
    pub steps_run: usize,
    pub diverged_at: Option<usize>,
    /// The logged state at `T1`, when reached.
    pub at_t1: Option<TrajectoryRecord>,
    pub final_alignment: f64,
}

/// Least-squares summary of `T1` against `d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    /// `log-d` for GD (`T1 ≈ intercept + slope · ln d`), `constant` for SpecGD.
    pub model: String,
    pub intercept: f64,
    pub slope: Option<f64>,
    /// `max / min` of `T1 / ln d` (GD) or of `T1` (SpecGD).
    pub ratio: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageStudyResult {
    pub algorithm: Algorithm,
    pub rows: Vec<StageRow>,
    /// Absent when fewer than three `d` values reached `T1`.
    pub fit: Option<ScalingFit>,
}

fn fit(algorithm: Algorithm, rows: &[StageRow]) -> Option<ScalingFit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.stages.t1.map(|t| ((r.d as f64).ln(), t as f64)))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let ratio = |v: Vec<f64>| {
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    };
    match algorithm {
        Algorithm::Gd => {
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            let slope = sxy / sxx;
            Some(ScalingFit {
                model: "log-d".into(),
                intercept: my - slope * mx,
                slope: Some(slope),
                ratio: ratio(pts.iter().map(|p| p.1 / p.0).collect()),
                points: pts.len(),
            })
        }
        Algorithm::SpecGd => Some(ScalingFit {
            model: "constant".into(),
            intercept: pts.iter().map(|p| p.1).sum::<f64>() / n,
            slope: None,
            ratio: ratio(pts.iter().map(|p| p.1).collect()),
            points: pts.len(),
        }),
    }
}

pub fn run_stage_scaling(study: &StageStudy) -> Result<StageStudyResult> {
    study.validate()?;
    let mut rows = Vec::with_capacity(study.d_values.len());
    for &d in &study.d_values {
        let config = study.config_for(d);
        let out = run_trajectory(&config)?;
        let at_t1 = out.stages.t1.and_then(|t| out.records.iter().find(|r| r.k == t).copied());
        rows.push(StageRow {
            d,
            lambda: config.lambda,
            eta: out.resolved.eta,
            rho0: config.rho0,
            stages: out.stages,
            steps_run: out.steps_run,
            diverged_at: out.diverged_at,
            at_t1,
            final_alignment: out.final_alignment,
        });
    }
    let fit = fit(study.base.algorithm, &rows);
    Ok(StageStudyResult { algorithm: study.base.algorithm, rows, fit })
}

/// Writes the per-d table and a JSON file with the fit. Returns the paths written.
pub fn write_stage_study(dir: &Path, study: &StageStudy, result: &StageStudyResult) -> Result<Vec<PathBuf>> {
    let digest = study.short_digest();
    let alg = result.algorithm.as_str();
    let csv_path = output_path(dir, &format!("stages-{alg}-{digest}.csv"))?;
    let mut w = csv_writer(std::fs::File::create(&csv_path)?);
    w.write_record(STAGE_COLUMNS)?;
    for r in &result.rows {
        let at = |f: fn(&TrajectoryRecord) -> f64| r.at_t1.as_ref().map(|x| fmt_real(f(x))).unwrap_or_default();
        w.write_record([
            r.d.to_string(),
            fmt_real(r.lambda),
            fmt_real(r.eta),
            fmt_real(r.rho0),
            opt_index(r.stages.t1a),
            opt_index(r.stages.t1),
            opt_index(r.stages.t2a),
            opt_index(r.stages.t2),
            opt_index(r.stages.n1_prime),
            opt_index(r.stages.n2_prime),
            at(|x| x.align),
            at(|x| x.spike_mass),
            at(|x| x.r),
        ])?;
    }
    w.flush()?;
    let json_path = output_path(dir, &format!("stages-{alg}-{digest}.json"))?;
    write_json(&json_path, &serde_json::json!({ "study": study, "digest": digest, "result": result }))?;
    Ok(vec![csv_path, json_path])
}
