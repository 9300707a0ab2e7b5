//! η × λ grids of independent runs.
//!
//! Empirical sweeps advance all cells in lockstep: at every step one set of
//! standard-normal draws is generated and mapped to a minibatch per distinct λ.
//! Because each run would have drawn exactly these numbers on its own (same seed,
//! same stream), the result does not depend on the grouping or on the order in
//! which cells are stepped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{parse_table, take_key, CovarianceChoice, EtaRule, Mode, RunConfig};
use super::output::{csv_writer, fmt_real, opt_index, output_path, write_json};
use super::trajectory::{run_trajectory, Runner, TrajectoryOutput};
use crate::empirical::{batch_stream, standard_draws, Batch};
use crate::error::{Error, Result};
use crate::reduced::StageTimes;
use crate::Algorithm;

/// Header of the long-format cell table.
pub const SWEEP_COLUMNS: [&str; 14] = [
    "algorithm", "eta", "lambda", "status", "final_align", "final_loss", "diverged_at", "t1a", "t1", "t2a", "t2",
    "n1_prime", "n2_prime", "error",
];

/// Grid axes and the algorithms to run on every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub eta_min: f64,
    pub eta_max: f64,
    pub eta_points: usize,
    pub lambda_min: f64,
    /// Defaults to `d`.
    pub lambda_max: Option<f64>,
    pub lambda_points: usize,
    pub algorithms: Vec<Algorithm>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            eta_min: 1e-4,
            eta_max: 1e-1,
            eta_points: 12,
            lambda_min: 1.0,
            lambda_max: None,
            lambda_points: 12,
            algorithms: vec![Algorithm::Gd, Algorithm::SpecGd],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub grid: SweepGrid,
    /// Step cells on the rayon pool.
    pub parallel: bool,
}

/// `points` values from `min` to `max`, equally spaced in log scale.
pub fn log_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min && min.is_finite() && max.is_finite()) || points == 0 {
        return Err(Error::config(format!("bad log grid [{min}, {max}] with {points} points")));
    }
    if points == 1 {
        return Ok(vec![min]);
    }
    let (lo, hi) = (min.ln(), max.ln());
    let mut out: Vec<f64> = (0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp())
        .collect();
    out[0] = min;
    out[points - 1] = max;
    Ok(out)
}

impl SweepConfig {
    pub fn new(base: RunConfig, grid: SweepGrid) -> Result<Self> {
        let sweep = SweepConfig { base, grid, parallel: true };
        sweep.validate()?;
        Ok(sweep)
    }

    /// Grid keys (`eta_min`, `eta_max`, `eta_points`, `lambda_min`, `lambda_max`,
    /// `lambda_points`, `algorithms`, `parallel`) are read from the table; every
    /// other key configures the base run.
    pub fn from_table(mut table: toml::Table) -> Result<Self> {
        let d = SweepGrid::default();
        let grid = SweepGrid {
            eta_min: take_key(&mut table, "eta_min")?.unwrap_or(d.eta_min),
            eta_max: take_key(&mut table, "eta_max")?.unwrap_or(d.eta_max),
            eta_points: take_key(&mut table, "eta_points")?.unwrap_or(d.eta_points),
            lambda_min: take_key(&mut table, "lambda_min")?.unwrap_or(d.lambda_min),
            lambda_max: take_key(&mut table, "lambda_max")?,
            lambda_points: take_key(&mut table, "lambda_points")?.unwrap_or(d.lambda_points),
            algorithms: take_key(&mut table, "algorithms")?.unwrap_or(d.algorithms),
        };
        let parallel = take_key(&mut table, "parallel")?.unwrap_or(true);
        let mut sweep = SweepConfig::new(RunConfig::from_table(table)?, grid)?;
        sweep.parallel = parallel;
        Ok(sweep)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.base.covariance != CovarianceChoice::Spiked {
            return Err(Error::config("sweeps vary λ and need a spiked covariance"));
        }
        if self.grid.algorithms.is_empty() {
            return Err(Error::config("sweep needs at least one algorithm"));
        }
        self.etas()?;
        self.lambdas()?;
        for lambda in self.lambdas()? {
            self.cell_config(Algorithm::Gd, 1.0, lambda).validate()?;
        }
        Ok(())
    }

    pub fn etas(&self) -> Result<Vec<f64>> {
        log_grid(self.grid.eta_min, self.grid.eta_max, self.grid.eta_points)
    }

    pub fn lambdas(&self) -> Result<Vec<f64>> {
        let max = self.grid.lambda_max.unwrap_or(self.base.d as f64);
        log_grid(self.grid.lambda_min, max, self.grid.lambda_points)
    }

    pub fn cell_config(&self, algorithm: Algorithm, eta: f64, lambda: f64) -> RunConfig {
        RunConfig {
            algorithm,
            lambda,
            eta_rule: EtaRule::Fixed,
            eta: Some(eta),
            log_every: self.base.horizon.max(1),
            ..self.base.clone()
        }
    }

    pub fn short_digest(&self) -> String {
        let json = serde_json::to_vec(&(&self.base, &self.grid)).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..12].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Diverged,
    Error,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Diverged => "diverged",
            CellStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub algorithm: Algorithm,
    pub eta: f64,
    pub lambda: f64,
    pub status: CellStatus,
    /// Alignment at step T; 0 for diverged or failed cells.
    pub final_alignment: f64,
    pub final_loss: Option<f64>,
    pub diverged_at: Option<usize>,
    pub stages: StageTimes,
    pub error: Option<String>,
}

impl SweepCell {
    fn from_output(algorithm: Algorithm, eta: f64, lambda: f64, out: Result<TrajectoryOutput>) -> Self {
        match out {
            Ok(out) => SweepCell {
                algorithm,
                eta,
                lambda,
                status: if out.diverged() { CellStatus::Diverged } else { CellStatus::Ok },
                final_alignment: out.final_alignment,
                final_loss: out.final_loss,
                diverged_at: out.diverged_at,
                stages: out.stages,
                error: None,
            },
            Err(e) => SweepCell {
                algorithm,
                eta,
                lambda,
                status: CellStatus::Error,
                final_alignment: 0.0,
                final_loss: None,
                diverged_at: None,
                stages: StageTimes::default(),
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub etas: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Ordered by algorithm, then η, then λ.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, algorithm: Algorithm, eta_index: usize, lambda_index: usize) -> Option<&SweepCell> {
        let eta = *self.etas.get(eta_index)?;
        let lambda = *self.lambdas.get(lambda_index)?;
        self.cells
            .iter()
            .find(|c| c.algorithm == algorithm && c.eta == eta && c.lambda == lambda)
    }

    /// Final alignments with rows indexed by η and columns by λ.
    pub fn alignment_matrix(&self, algorithm: Algorithm) -> Vec<Vec<f64>> {
        (0..self.etas.len())
            .map(|i| {
                (0..self.lambdas.len())
                    .map(|j| self.cell(algorithm, i, j).map_or(f64::NAN, |c| c.final_alignment))
                    .collect()
            })
            .collect()
    }
}

enum Slot {
    Running(Box<Runner>),
    Done(Box<SweepCell>),
}

fn lockstep(sweep: &SweepConfig, plan: &[(Algorithm, f64, f64)]) -> Vec<SweepCell> {
    let base = &sweep.base;
    let mut slots: Vec<Slot> = plan
        .iter()
        .map(|&(alg, eta, lambda)| match Runner::new(&sweep.cell_config(alg, eta, lambda)) {
            Ok(r) => Slot::Running(Box::new(r)),
            Err(e) => Slot::Done(Box::new(SweepCell::from_output(alg, eta, lambda, Err(e)))),
        })
        .collect();
    for k in 0..base.horizon {
        let mut batches: BTreeMap<u64, Batch> = BTreeMap::new();
        let active: Vec<&Runner> = slots
            .iter()
            .filter_map(|s| match s {
                Slot::Running(r) if !r.is_done() => Some(r.as_ref()),
                _ => None,
            })
            .collect();
        if active.is_empty() {
            break;
        }
        let draws = standard_draws(base.batch_size, base.d, base.sigma > 0.0, base.seed, batch_stream(base.batch_mode, k));
        let mut failures: BTreeMap<u64, String> = BTreeMap::new();
        for runner in active {
            let key = runner.config().lambda.to_bits();
            if batches.contains_key(&key) || failures.contains_key(&key) {
                continue;
            }
            let sampler = runner.sampler().expect("empirical runner");
            match sampler.batch_from_draws(&draws) {
                Ok(b) => {
                    batches.insert(key, b);
                }
                Err(e) => {
                    failures.insert(key, e.to_string());
                }
            }
        }
        let step = |slot: &mut Slot| {
            let Slot::Running(runner) = slot else { return };
            if runner.is_done() {
                return;
            }
            let key = runner.config().lambda.to_bits();
            let result = match batches.get(&key) {
                Some(batch) => runner.advance(Some(batch)),
                None => Err(Error::NumericalFailure(failures.get(&key).cloned().unwrap_or_default())),
            };
            if let Err(e) = result {
                let c = runner.config();
                *slot = Slot::Done(Box::new(SweepCell::from_output(c.algorithm, c.eta.unwrap_or(f64::NAN), c.lambda, Err(e))));
            }
        };
        if sweep.parallel {
            slots.par_iter_mut().for_each(step);
        } else {
            slots.iter_mut().for_each(step);
        }
    }
    slots
        .into_iter()
        .map(|s| match s {
            Slot::Done(cell) => *cell,
            Slot::Running(runner) => {
                let c = runner.config().clone();
                SweepCell::from_output(c.algorithm, c.eta.unwrap_or(f64::NAN), c.lambda, Ok(runner.finish()))
            }
        })
        .collect()
}

pub fn run_sweep(sweep: &SweepConfig) -> Result<SweepResult> {
    sweep.validate()?;
    let etas = sweep.etas()?;
    let lambdas = sweep.lambdas()?;
    let mut plan: Vec<(Algorithm, f64, f64)> = Vec::new();
    for &alg in &sweep.grid.algorithms {
        for &eta in &etas {
            for &lambda in &lambdas {
                plan.push((alg, eta, lambda));
            }
        }
    }
    let cells = if sweep.base.mode == Mode::Empirical {
        lockstep(sweep, &plan)
    } else {
        let run = |&(alg, eta, lambda): &(Algorithm, f64, f64)| {
            SweepCell::from_output(alg, eta, lambda, run_trajectory(&sweep.cell_config(alg, eta, lambda)))
        };
        if sweep.parallel {
            plan.par_iter().map(run).collect()
        } else {
            plan.iter().map(run).collect()
        }
    };
    Ok(SweepResult { etas, lambdas, cells })
}

/// Writes the long-format cell table, one alignment matrix per algorithm and a
/// provenance JSON. Returns the paths written.
pub fn write_sweep(dir: &Path, sweep: &SweepConfig, result: &SweepResult) -> Result<Vec<PathBuf>> {
    let digest = sweep.short_digest();
    let mut written = Vec::new();

    let path = output_path(dir, &format!("sweep-{digest}.csv"))?;
    let mut w = csv_writer(std::fs::File::create(&path)?);
    w.write_record(SWEEP_COLUMNS)?;
    for c in &result.cells {
        w.write_record([
            c.algorithm.as_str().to_string(),
            fmt_real(c.eta),
            fmt_real(c.lambda),
            c.status.as_str().to_string(),
            fmt_real(c.final_alignment),
            c.final_loss.map(fmt_real).unwrap_or_default(),
            opt_index(c.diverged_at),
            opt_index(c.stages.t1a),
            opt_index(c.stages.t1),
            opt_index(c.stages.t2a),
            opt_index(c.stages.t2),
            opt_index(c.stages.n1_prime),
            opt_index(c.stages.n2_prime),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    written.push(path);

    for &alg in &sweep.grid.algorithms {
        let path = output_path(dir, &format!("heatmap-{}-{digest}.csv", alg.as_str()))?;
        let mut w = csv_writer(std::fs::File::create(&path)?);
        let mut header = vec!["eta".to_string()];
        header.extend(result.lambdas.iter().map(|&l| fmt_real(l)));
        w.write_record(&header)?;
        for (eta, row) in result.etas.iter().zip(result.alignment_matrix(alg)) {
            let mut rec = vec![fmt_real(*eta)];
            rec.extend(row.into_iter().map(fmt_real));
            w.write_record(&rec)?;
        }
        w.flush()?;
        written.push(path);
    }

    let path = output_path(dir, &format!("sweep-{digest}.json"))?;
    write_json(
        &path,
        &serde_json::json!({ "config": sweep.base, "grid": sweep.grid, "digest": digest, "result": result }),
    )?;
    written.push(path);
    Ok(written)
}
