//! `eddy scaling`: measures |A s| / |K v| across dimensions for two
//! bandwidths and writes scaling.csv with the fitted log-log slope.

use std::path::Path;

use eddy_core::verify::{fit_log_log_slope, pair_term_ratio_samples};

use crate::report::{fmt, CsvWriter};
use crate::CliError;

const DIMS: [usize; 4] = [16, 64, 256, 1024];
const DRAWS: usize = 256;

pub fn run(out_dir: &Path, seed: u64) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)?;
    let mut csv = CsvWriter::create(
        &out_dir.join("scaling.csv"),
        "gamma[1],dimension,mean_ratio[1],std_error[1],fitted_log_log_slope[1]",
    )?;
    for (g_index, gamma) in [2.0f64, 4.0].into_iter().enumerate() {
        let mut rows = Vec::new();
        let mut points = Vec::new();
        for (d_index, &d) in DIMS.iter().enumerate() {
            let samples = pair_term_ratio_samples(
                d,
                gamma,
                DRAWS,
                seed.wrapping_add((g_index * DIMS.len() + d_index) as u64),
            );
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            points.push(((d as f64).ln(), mean.ln()));
            rows.push((d, mean, se));
        }
        let slope = fit_log_log_slope(&points);
        for (d, mean, se) in rows {
            csv.row(&[
                fmt(gamma),
                d.to_string(),
                fmt(mean),
                fmt(se),
                fmt(slope),
            ])?;
        }
        println!("gamma {gamma}: fitted log-log slope {slope:.4}");
    }
    csv.finish()
}
