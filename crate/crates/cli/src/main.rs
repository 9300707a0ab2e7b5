//! `specgd`: run trajectories, η × λ sweeps, stage-scaling studies and the
//! verification suite from a flat TOML config plus command-line overrides.
//!
//! Exit codes: 0 success, 1 invariant failure, 2 configuration error,
//! 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use specgd_core::experiment::config::{merge_tables, parse_table};
use specgd_core::experiment::{
    run_stage_scaling, run_sweep, run_trajectory, run_verification_suite, write_stage_study, write_sweep,
    write_trajectory, write_verify_report, CellStatus, StageStudy, SweepConfig, VerifyConfig,
};
use specgd_core::Error;

const EXIT_INVARIANT: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Keys whose values are lists; a comma-separated flag value becomes an array.
const LIST_KEYS: &[&str] = &["algorithms", "d_values", "checks"];

/// Declares a struct of optional string flags, one per config key, and a
/// method listing the keys that were given.
macro_rules! flags {
    ($(#[$meta:meta])* $name:ident { $($field:ident),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Args, Debug, Default)]
        struct $name {
            $(
                #[arg(long, value_name = "VALUE", allow_hyphen_values = true)]
                $field: Option<String>,
            )*
        }

        impl $name {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

flags!(
    /// Overrides for every field of a run config.
    RunFlags {
        algorithm, mode, d, m, covariance, lambda, alpha, basis_seed, eta_rule, eta,
        gd_safe_fraction, rho0, init, theta_preset, horizon, batch_size, batch_mode, sigma,
        rho, epsilon, delta, kappa, seed, log_every, orthogonalizer, ns_iters,
    }
);

flags!(
    /// Grid overrides for `sweep`.
    SweepFlags { eta_min, eta_max, eta_points, lambda_min, lambda_max, lambda_points, algorithms, parallel }
);

flags!(
    /// Study overrides for `stages`.
    StageFlags { d_values, lambda_rule, lambda_fraction, rho0_rule }
);

flags!(
    /// Overrides for the verification suite.
    VerifyFlags {
        checks, d, lambda, rho0, steps, gd_eta, kappa, spec_eta, spec_steps, matrix_d,
        matrix_lambda, matrix_steps, matrix_gd_eta, tolerance,
    }
);

#[derive(Args, Debug)]
struct Common {
    /// Flat TOML config file. Flags override its keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Parser, Debug)]
#[command(name = "specgd", version, about = "GD and SpecGD dynamics on anisotropic phase retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one trajectory and write its CSV and provenance JSON.
    Trajectory {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Run an η × λ grid and write the cell table and per-algorithm heatmaps.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunFlags,
        #[command(flatten)]
        grid: SweepFlags,
    },
    /// Extract stage times over several dimensions and fit their scaling.
    Stages {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunFlags,
        #[command(flatten)]
        study: StageFlags,
    },
    /// Run the verification suite and write a JSON report.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        verify: VerifyFlags,
    },
}

/// A flag value as TOML: taken literally when it parses, quoted otherwise.
fn toml_item(value: &str) -> String {
    let value = value.trim();
    if parse_table(&format!("v = {value}")).is_ok() {
        value.to_string()
    } else {
        serde_json::to_string(value).expect("strings serialize")
    }
}

fn override_line(key: &str, value: &str) -> String {
    let already_array = value.trim_start().starts_with('[');
    if LIST_KEYS.contains(&key) && !already_array {
        let items: Vec<String> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(toml_item).collect();
        format!("{key} = [{}]", items.join(", "))
    } else {
        format!("{key} = {}", toml_item(value))
    }
}

/// The config file (if any) with flag and `--set` overrides merged in.
fn load_table(common: &Common, flags: &[(&'static str, &str)]) -> Result<toml::Table, Error> {
    let mut table = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
            parse_table(&text)?
        }
        None => parse_table("")?,
    };
    let mut lines: Vec<String> = flags.iter().map(|(k, v)| override_line(k, v)).collect();
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE (got `{kv}`)")))?;
        lines.push(override_line(k.trim(), v));
    }
    for line in lines {
        merge_tables(&mut table, parse_table(&line)?);
    }
    Ok(table)
}

fn report_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::InvalidConfig(format!("cannot create output directory {}: {e}", dir.display())))
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Trajectory { common, run } => {
            let table = load_table(&common, &run.pairs())?;
            let config = specgd_core::experiment::RunConfig::from_table(table)?;
            let out = run_trajectory(&config)?;
            ensure_dir(&common.out)?;
            report_paths(&write_trajectory(&common.out, &out)?);
            match out.diverged_at {
                Some(k) => println!("diverged at step {k}"),
                None => println!("final alignment {:.6}, stages {:?}", out.final_alignment, out.stages),
            }
            Ok(0)
        }
        Command::Sweep { common, run, grid } => {
            let mut pairs = run.pairs();
            pairs.extend(grid.pairs());
            let sweep = SweepConfig::from_table(load_table(&common, &pairs)?)?;
            let result = run_sweep(&sweep)?;
            ensure_dir(&common.out)?;
            report_paths(&write_sweep(&common.out, &sweep, &result)?);
            let count = |s: CellStatus| result.cells.iter().filter(|c| c.status == s).count();
            println!(
                "{} cells: {} ok, {} diverged, {} errors",
                result.cells.len(),
                count(CellStatus::Ok),
                count(CellStatus::Diverged),
                count(CellStatus::Error)
            );
            Ok(if count(CellStatus::Error) > 0 { EXIT_NUMERICAL } else { 0 })
        }
        Command::Stages { common, run, study } => {
            let mut pairs = run.pairs();
            pairs.extend(study.pairs());
            let study = StageStudy::from_table(load_table(&common, &pairs)?)?;
            let result = run_stage_scaling(&study)?;
            ensure_dir(&common.out)?;
            report_paths(&write_stage_study(&common.out, &study, &result)?);
            for row in &result.rows {
                println!("d={} T1={:?} T2={:?}", row.d, row.stages.t1, row.stages.t2);
            }
            match &result.fit {
                Some(fit) => println!("fit ({}): intercept {:.4}, slope {:?}, ratio {:.4}", fit.model, fit.intercept, fit.slope, fit.ratio),
                None => println!("no fit (fewer than three values of d reached T1)"),
            }
            Ok(0)
        }
        Command::Verify { common, verify } => {
            let cfg = VerifyConfig::from_table(load_table(&common, &verify.pairs())?)?;
            let report = run_verification_suite(&cfg)?;
            ensure_dir(&common.out)?;
            report_paths(&[write_verify_report(&common.out, &cfg, &report)?]);
            for c in &report.checks {
                println!("{:?}: {:?}", c.check, c.status);
            }
            Ok(if report.passed() { 0 } else { EXIT_INVARIANT })
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NumericalFailure(_) => EXIT_NUMERICAL,
        Error::InvalidConfig(_)
        | Error::DimensionMismatch { .. }
        | Error::Precondition(_)
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_) => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
