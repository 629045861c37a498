//! `eddy verify`: runs the library invariant suite and writes verify.json.

use std::path::Path;

use crate::report::{write_json, VerifyCheck, VerifyReport};
use crate::{CliError, SCHEMA_VERSION};

pub fn run(out_dir: &Path, seed: u64) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)?;
    let checks = eddy_core::verify::run_all(seed);
    let failures = checks.iter().filter(|c| !c.pass).count();
    for check in &checks {
        println!(
            "[{}] {}: {}",
            if check.pass { "PASS" } else { "FAIL" },
            check.id,
            check.detail
        );
    }
    let report = VerifyReport {
        schema_version: SCHEMA_VERSION,
        artifact_version: env!("CARGO_PKG_VERSION"),
        seed,
        all_pass: failures == 0,
        checks: checks
            .into_iter()
            .map(|c| VerifyCheck {
                id: c.id.to_string(),
                description: c.description.to_string(),
                pass: c.pass,
                detail: c.detail,
            })
            .collect(),
    };
    write_json(&out_dir.join("verify.json"), &report)?;
    if failures > 0 {
        return Err(CliError::VerificationFailed(failures));
    }
    println!("all {} checks passed", report.checks.len());
    Ok(())
}
