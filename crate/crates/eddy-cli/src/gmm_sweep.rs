//! The mixture experiment: independent, guided, and plain-repulsion arms
//! over a weight grid; mode-coverage curve; two-sample marginal tests of
//! every guided arm against the independent arm; CDF and sample dumps.

use std::path::Path;
use std::time::Instant;

use eddy_core::sampler::{derive_batch_seed, sample_many, Method, ParticleBatch};
use eddy_core::stats::{
    self, expected_iid_coverage, ks_two_sample, mann_whitney, mode_coverage, welch_t,
};

use crate::config::ExperimentConfig;
use crate::report::{fmt, write_json, ArmSummary, CsvWriter, Report, TestRow, Timing};
use crate::{CliError, SCHEMA_VERSION};

struct Arm {
    method: Method,
    name: &'static str,
    weight: f64,
    batches: Vec<ParticleBatch<f64>>,
    coverage_mean: f64,
    coverage_se: f64,
    distances: Vec<f64>,
    angles: Vec<f64>,
}

pub fn run(
    config_path: Option<&Path>,
    out_dir: &Path,
    threads: Option<usize>,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let mut config = match config_path {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default().validated()?,
    };
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let pool = build_pool(threads)?;
    pool.install(|| execute(&config, out_dir))
}

pub(crate) fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Numerical(format!("cannot build thread pool: {e}")))
}

fn execute(config: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let target = config.target()?;
    let schedule = config.schedule()?;

    // One arm per (method, weight); every arm draws from its own seed block.
    let mut plan: Vec<(Method, &'static str, f64)> = vec![(Method::Iid, "iid", 0.0)];
    plan.extend(config.eddy_weights.iter().map(|&w| (Method::Eddy, "eddy", w)));
    plan.extend(config.pg_weights.iter().map(|&w| (Method::Pg, "pg", w)));

    let mut arms = Vec::with_capacity(plan.len());
    for (index, (method, name, weight)) in plan.into_iter().enumerate() {
        let run_config = config.run_config(method, weight);
        let arm_seed = derive_batch_seed(config.seed, 0x1000 + index as u64);
        let batches = sample_many(&run_config, &target, &schedule, config.batches, arm_seed)?;
        let coverages: Vec<usize> = batches
            .iter()
            .map(|b| mode_coverage(&b.positions, target.centers()))
            .collect::<eddy_core::Result<_>>()?;
        let (coverage_mean, coverage_se) = mean_se(&coverages);
        let mut distances = Vec::with_capacity(batches.len());
        let mut angles = Vec::with_capacity(batches.len());
        for b in &batches {
            let (d, a) = stats::nearest_mode_stats(&b.positions[0], target.centers())?;
            distances.push(d);
            angles.push(a);
        }
        arms.push(Arm {
            method,
            name,
            weight,
            batches,
            coverage_mean,
            coverage_se,
            distances,
            angles,
        });
    }

    let baseline = arms
        .iter()
        .position(|a| a.method == Method::Iid)
        .expect("plan always contains the iid arm");

    let mut tests = Vec::new();
    for (i, arm) in arms.iter().enumerate() {
        if i == baseline {
            continue;
        }
        for (metric, samples, base) in [
            ("distance", &arm.distances, &arms[baseline].distances),
            ("angle", &arm.angles, &arms[baseline].angles),
        ] {
            for result in [
                ks_two_sample(samples, base)?,
                mann_whitney(samples, base)?,
                welch_t(samples, base)?,
            ] {
                tests.push(TestRow {
                    method: arm.name.to_string(),
                    weight: arm.weight,
                    metric: metric.to_string(),
                    test: result.test.name().to_string(),
                    statistic: result.statistic,
                    p_value: result.p_value,
                    n_a: result.n_a,
                    n_b: result.n_b,
                });
            }
        }
    }

    write_coverage_csv(out_dir, &arms)?;
    write_cdf_csv(out_dir, &arms, "cdf_distance.csv", "distance[state units]", |a| {
        &a.distances
    })?;
    write_cdf_csv(out_dir, &arms, "cdf_angle.csv", "angle[rad]", |a| &a.angles)?;
    write_samples_csv(out_dir, &arms)?;

    let report = Report {
        schema_version: SCHEMA_VERSION,
        artifact_version: env!("CARGO_PKG_VERSION"),
        config: config.clone(),
        resolved_seed: config.seed,
        expected_iid_coverage: expected_iid_coverage(config.target.modes, config.particles),
        arms: arms
            .iter()
            .map(|a| ArmSummary {
                method: a.name.to_string(),
                weight: a.weight,
                batches: a.batches.len(),
                coverage_mean: a.coverage_mean,
                coverage_se: a.coverage_se,
            })
            .collect(),
        tests,
        timing: Timing {
            elapsed_seconds: started.elapsed().as_secs_f64(),
        },
    };
    write_json(&out_dir.join("report.json"), &report)?;
    println!(
        "gmm-sweep: {} arms x {} batches -> {}",
        report.arms.len(),
        config.batches,
        out_dir.display()
    );
    for arm in &report.arms {
        println!(
            "  {:>4} w={:<5} coverage {:.4} +- {:.4}",
            arm.method, arm.weight, arm.coverage_mean, arm.coverage_se
        );
    }
    Ok(())
}

fn mean_se(values: &[usize]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn write_coverage_csv(out_dir: &Path, arms: &[Arm]) -> Result<(), CliError> {
    let mut csv = CsvWriter::create(
        &out_dir.join("coverage_vs_wg.csv"),
        "method,weight[1],batches,mean_coverage[modes],std_error[modes]",
    )?;
    for arm in arms {
        csv.row(&[
            arm.name.to_string(),
            fmt(arm.weight),
            arm.batches.len().to_string(),
            fmt(arm.coverage_mean),
            fmt(arm.coverage_se),
        ])?;
    }
    csv.finish()
}

fn write_cdf_csv(
    out_dir: &Path,
    arms: &[Arm],
    file: &str,
    value_column: &str,
    select: impl Fn(&Arm) -> &Vec<f64>,
) -> Result<(), CliError> {
    let mut csv = CsvWriter::create(
        &out_dir.join(file),
        &format!("method,weight[1],{value_column}"),
    )?;
    for arm in arms {
        let mut values = select(arm).clone();
        values.sort_by(f64::total_cmp);
        for v in values {
            csv.row(&[arm.name.to_string(), fmt(arm.weight), fmt(v)])?;
        }
    }
    csv.finish()
}

fn write_samples_csv(out_dir: &Path, arms: &[Arm]) -> Result<(), CliError> {
    let mut csv = CsvWriter::create(
        &out_dir.join("samples.csv"),
        "method,weight[1],batch,particle,x0[state units],x1[state units]",
    )?;
    for arm in arms {
        for (b, batch) in arm.batches.iter().enumerate() {
            for (p, pos) in batch.positions.iter().enumerate() {
                csv.row(&[
                    arm.name.to_string(),
                    fmt(arm.weight),
                    b.to_string(),
                    p.to_string(),
                    fmt(pos[0]),
                    fmt(pos[1]),
                ])?;
            }
        }
    }
    csv.finish()
}
