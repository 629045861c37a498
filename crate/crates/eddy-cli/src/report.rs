//! Machine-readable outputs: a schema-versioned JSON report plus CSV files
//! for external plotting. All floats are written with 17 significant digits
//! so outputs round-trip bit-exactly.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub artifact_version: &'static str,
    pub config: ExperimentConfig,
    pub resolved_seed: u64,
    pub expected_iid_coverage: f64,
    pub arms: Vec<ArmSummary>,
    pub tests: Vec<TestRow>,
    /// Wall-clock metadata; the only part of the report that may differ
    /// between identical runs.
    pub timing: Timing,
}

#[derive(Serialize)]
pub struct ArmSummary {
    pub method: String,
    pub weight: f64,
    pub batches: usize,
    pub coverage_mean: f64,
    pub coverage_se: f64,
}

#[derive(Serialize)]
pub struct TestRow {
    pub method: String,
    pub weight: f64,
    pub metric: String,
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

#[derive(Serialize)]
pub struct Timing {
    pub elapsed_seconds: f64,
}

#[derive(Serialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub artifact_version: &'static str,
    pub seed: u64,
    pub all_pass: bool,
    pub checks: Vec<VerifyCheck>,
}

#[derive(Serialize)]
pub struct VerifyCheck {
    pub id: String,
    pub description: String,
    pub pass: bool,
    pub detail: String,
}

/// Formats every float as `d.dddddddddddddddde<exp>` (17 significant
/// digits); everything else is serde_json's default formatting.
struct SeventeenDigits;

impl serde_json::ser::Formatter for SeventeenDigits {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{:.16e}", value as f64)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = BufWriter::new(File::create(path)?);
    let mut serializer = serde_json::Serializer::with_formatter(file, SeventeenDigits);
    value
        .serialize(&mut serializer)
        .map_err(|e| CliError::Numerical(format!("cannot serialize {}: {e}", path.display())))?;
    let mut file = serializer.into_inner();
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

/// Formats one float for CSV output at 17 significant digits.
pub fn fmt(value: f64) -> String {
    format!("{value:.16e}")
}

pub struct CsvWriter {
    out: BufWriter<File>,
}

impl CsvWriter {
    /// Opens the file and writes the header row (column names with units).
    pub fn create(path: &Path, header: &str) -> Result<Self, CliError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{header}")?;
        Ok(Self { out })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.out.flush()?;
        Ok(())
    }
}
