//! CSV and JSON persistence.
//!
//! Reals are written in scientific notation with 17 significant digits, which
//! round-trips every `f64` exactly. Files use `,` separators, a header row and
//! LF line endings.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, Terminator, WriterBuilder};

use super::trajectory::TrajectoryRecord;
use crate::error::{Error, Result};

/// Header of every trajectory CSV.
pub const TRAJECTORY_COLUMNS: [&str; 12] =
    ["k", "a", "b", "c", "B", "C", "r", "loss", "align", "g_wstar", "g_v", "g_perp"];

/// `x` with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_real(field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::config(format!("not a number: `{field}`")))
}

fn opt_field<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub(crate) fn opt_index(x: Option<usize>) -> String {
    opt_field(x)
}

/// A CSV writer with the project's dialect.
pub fn csv_writer<W: Write>(inner: W) -> csv::Writer<W> {
    WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(inner)
}

pub fn write_trajectory_csv<W: Write>(inner: W, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = csv_writer(inner);
    w.write_record(TRAJECTORY_COLUMNS)?;
    for r in records {
        let mut row = vec![r.k.to_string()];
        row.extend(
            [r.a, r.b, r.c, r.spike_mass, r.bulk_mass, r.r, r.loss, r.align, r.g_wstar, r.g_v, r.g_perp]
                .into_iter()
                .map(fmt_real),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: std::io::Read>(inner: R) -> Result<Vec<TrajectoryRecord>> {
    let mut reader = ReaderBuilder::new().from_reader(inner);
    let header = reader.headers()?.clone();
    if header.iter().ne(TRAJECTORY_COLUMNS.iter().copied()) {
        return Err(Error::config(format!(
            "unexpected trajectory header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let k = row[0]
            .parse::<usize>()
            .map_err(|_| Error::config(format!("bad step index `{}`", &row[0])))?;
        let v: Vec<f64> = (1..12).map(|i| parse_real(&row[i])).collect::<Result<_>>()?;
        out.push(TrajectoryRecord {
            k,
            a: v[0],
            b: v[1],
            c: v[2],
            spike_mass: v[3],
            bulk_mass: v[4],
            r: v[5],
            loss: v[6],
            align: v[7],
            g_wstar: v[8],
            g_v: v[9],
            g_perp: v[10],
        });
    }
    Ok(out)
}

/// Serializes `value` as pretty JSON followed by a newline.
pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Creates `dir` if needed and returns `dir/name`.
pub fn output_path(dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    Ok(dir.join(name))
}
