//! Orchestration: run configuration, single trajectories, η × λ sweeps,
//! stage-scaling studies, the verification suite and file output.

pub mod config;
pub mod output;
pub mod scaling;
pub mod sweep;
pub mod trajectory;
pub mod verify;

pub use config::{CovarianceChoice, EtaRule, InitKind, Mode, OrthogonalizerChoice, Resolved, RunConfig};
pub use output::{read_trajectory_csv, write_trajectory_csv, TRAJECTORY_COLUMNS};
pub use scaling::{run_stage_scaling, write_stage_study, LambdaRule, Rho0Rule, StageRow, StageStudy, StageStudyResult, STAGE_COLUMNS};
pub use sweep::{log_grid, run_sweep, write_sweep, CellStatus, SweepCell, SweepConfig, SweepGrid, SweepResult, SWEEP_COLUMNS};
pub use trajectory::{run_trajectory, Runner, TrajectoryOutput, TrajectoryRecord, DIVERGENCE_LOSS};
pub use verify::{run_verification_suite, write_verify_report, CheckKind, CheckReport, CheckStatus, VerifyConfig, VerifyReport};

use std::path::{Path, PathBuf};

use crate::error::Result;

/// Writes the trajectory CSV and its provenance JSON into `dir`. Returns both paths.
pub fn write_trajectory(dir: &Path, out: &TrajectoryOutput) -> Result<Vec<PathBuf>> {
    let stem = format!(
        "trajectory-{}-{}-{}",
        out.config.algorithm.as_str(),
        out.config.mode.as_str(),
        out.resolved.digest
    );
    let csv_path = output::output_path(dir, &format!("{stem}.csv"))?;
    write_trajectory_csv(std::fs::File::create(&csv_path)?, &out.records)?;
    let json_path = output::output_path(dir, &format!("{stem}.json"))?;
    output::write_json(&json_path, out)?;
    Ok(vec![csv_path, json_path])
}
