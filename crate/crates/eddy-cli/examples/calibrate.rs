//! Temporary calibration harness (not part of the shipped CLI).
//! Usage: cargo run --release -p eddy-cli --example calibrate -- <phase>

use eddy_core::guidance::{EstimatorMode, GuidanceConfig, NeighborMode};
use eddy_core::sampler::{sample_many, DynamicsMode, Method, RunConfig};
use eddy_core::stats::{ks_two_sample, mann_whitney, nearest_mode_stats, welch_t};
use eddy_core::targets::{GaussianMixture, VpSchedule};
use eddy_core::verify::batch_coverages;

static mut DYNAMICS: DynamicsMode = DynamicsMode::VpDdpm;
static mut STOP_RATIO: f64 = 1.0;

fn dynamics() -> DynamicsMode {
    unsafe { DYNAMICS }
}

fn stop_ratio() -> f64 {
    unsafe { STOP_RATIO }
}

fn config(method: Method, w: f64, gamma: f64, mode: NeighborMode, steps: usize) -> RunConfig<f64> {
    RunConfig {
        guidance: GuidanceConfig {
            weight: w,
            gamma,
            stop_ratio: stop_ratio(),
            neighbor_mode: mode,
            estimator: EstimatorMode::ExactRbf,
        },
        method,
        steps,
        particles: 5,
        dynamics: dynamics(),
        seed: 0,
    }
}

fn coverage(
    method: Method,
    w: f64,
    gamma: f64,
    mode: NeighborMode,
    steps: usize,
    batches: usize,
    seed: u64,
) -> (f64, f64) {
    let gm = GaussianMixture::ring(5, 5.0, 1.0).unwrap();
    let sched = VpSchedule::default();
    let cfg = config(method, w, gamma, mode, steps);
    let bs = sample_many(&cfg, &gm, &sched, batches, seed).unwrap();
    let cov = batch_coverages(&bs, gm.centers()).unwrap();
    let n = cov.len() as f64;
    let mean = cov.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = cov.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn pooled_stats(
    method: Method,
    w: f64,
    gamma: f64,
    mode: NeighborMode,
    steps: usize,
    batches: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let gm = GaussianMixture::ring(5, 5.0, 1.0).unwrap();
    let sched = VpSchedule::default();
    let cfg = config(method, w, gamma, mode, steps);
    let bs = sample_many(&cfg, &gm, &sched, batches, seed).unwrap();
    let mut d = Vec::with_capacity(bs.len());
    let mut a = Vec::with_capacity(bs.len());
    for b in &bs {
        let (dd, aa) = nearest_mode_stats(&b.positions[0], gm.centers()).unwrap();
        d.push(dd);
        a.push(aa);
    }
    (d, a)
}

fn six_pvalues(arm: &(Vec<f64>, Vec<f64>), base: &(Vec<f64>, Vec<f64>)) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (metric, u, v) in [("dist", &arm.0, &base.0), ("angle", &arm.1, &base.1)] {
        out.push((format!("{metric}/ks"), ks_two_sample(u, v).unwrap().p_value));
        out.push((format!("{metric}/mw"), mann_whitney(u, v).unwrap().p_value));
        out.push((format!("{metric}/we"), welch_t(u, v).unwrap().p_value));
    }
    out
}

fn phase_curves(steps: usize) {
    println!("== coverage curves (T={steps}) ==");
    for (mode, name) in [
        (NeighborMode::Drift, "drift"),
        (NeighborMode::SigmaScore, "sigma"),
    ] {
        for gamma in [0.5, 1.0, 2.0, 4.0, 8.0, 25.0] {
            let mut line = format!("{name:>6} g={gamma:<5}");
            for w in [0.0, 0.5, 1.75, 3.0] {
                let m = if w == 0.0 { Method::Iid } else { Method::Eddy };
                let (mean, _) = coverage(m, w, gamma, mode, steps, 4000, 11);
                line.push_str(&format!("  w{w}:{mean:.4}"));
            }
            println!("{line}");
        }
    }
}

fn phase_bigw(steps: usize) {
    println!("== large-weight probe (T={steps}) ==");
    for (mode, name) in [
        (NeighborMode::Drift, "drift"),
        (NeighborMode::SigmaScore, "sigma"),
    ] {
        for gamma in [1.0, 2.0, 8.0] {
            let mut line = format!("{name:>6} g={gamma:<4}");
            for w in [0.0, 10.0, 30.0, 100.0] {
                let m = if w == 0.0 { Method::Iid } else { Method::Eddy };
                let (mean, _) = coverage(m, w, gamma, mode, steps, 2500, 11);
                line.push_str(&format!("  w{w}:{mean:.4}"));
            }
            println!("{line}");
        }
    }
}

fn phase_clean(gamma: f64, mode: NeighborMode, steps: usize, reps: u64) {
    println!("== cleanliness g={gamma} T={steps} reps={reps} ==");
    let mut fails: std::collections::BTreeMap<String, usize> = Default::default();
    for rep in 0..reps {
        let base = pooled_stats(Method::Iid, 0.0, gamma, mode, steps, 2000, 31_000 + rep);
        for w in [0.5, 1.75, 3.0] {
            let arm = pooled_stats(
                Method::Eddy,
                w,
                gamma,
                mode,
                steps,
                2000,
                41_000 + 100 * rep + (w * 10.0) as u64,
            );
            for (name, p) in six_pvalues(&arm, &base) {
                if p <= 0.05 {
                    *fails.entry(format!("w{w}/{name}")).or_default() += 1;
                }
            }
        }
    }
    let worst = fails.values().max().copied().unwrap_or(0);
    println!("worst combo: {worst}/{reps}; nonzero: {fails:?}");
}

fn phase_pg(gamma: f64, mode: NeighborMode, steps: usize, reps: u64) {
    let (target_cov, se) = coverage(Method::Eddy, 1.75, gamma, mode, steps, 8000, 7);
    println!("eddy@1.75 coverage {target_cov:.4} +- {se:.4}");
    let weights = [0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0];
    let mut best = (f64::INFINITY, 0.0);
    for w in weights {
        let (c, _) = coverage(Method::Pg, w, gamma, mode, steps, 4000, 8);
        println!("  pg w={w:<5} coverage {c:.4}");
        if (c - target_cov).abs() < best.0 {
            best = ((c - target_cov).abs(), w);
        }
    }
    let w = best.1;
    println!("matched pg weight {w}");
    let mut any_fail = 0;
    for rep in 0..reps {
        let base = pooled_stats(Method::Iid, 0.0, gamma, mode, steps, 2000, 91_000 + rep);
        let arm = pooled_stats(Method::Pg, w, gamma, mode, steps, 2000, 92_000 + rep);
        let ps = six_pvalues(&arm, &base);
        let minp = ps.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        if minp < 0.05 {
            any_fail += 1;
        }
        println!("  rep {rep}: min p {minp:.4}");
    }
    println!("pg fails >=1 test in {any_fail}/{reps}");
}

fn main() {
    let phase = std::env::args().nth(1).unwrap_or_else(|| "curves".into());
    if let Some(flag) = std::env::args().nth(2) {
        if flag == "ot" {
            unsafe { DYNAMICS = DynamicsMode::OtFm };
        }
    }
    if let Some(sr) = std::env::args().nth(3) {
        unsafe { STOP_RATIO = sr.parse().unwrap() };
    }
    match phase.as_str() {
        "curves" => phase_curves(400),
        "curves200" => phase_curves(200),
        "bigw" => phase_bigw(400),
        "clean-drift" => phase_clean(2.0, NeighborMode::Drift, 400, 15),
        "clean-sigma" => phase_clean(2.0, NeighborMode::SigmaScore, 400, 15),
        "pg-drift" => phase_pg(2.0, NeighborMode::Drift, 400, 12),
        "pg-sigma" => phase_pg(2.0, NeighborMode::SigmaScore, 400, 12),
        other => {
            // ad-hoc: clean-<gamma>-<mode> / pg-<gamma>-<mode>
            let parts: Vec<&str> = other.split('-').collect();
            let gamma: f64 = parts[1].parse().unwrap();
            let mode = if parts[2] == "drift" {
                NeighborMode::Drift
            } else {
                NeighborMode::SigmaScore
            };
            match parts[0] {
                "clean" => phase_clean(gamma, mode, 400, 15),
                "pg" => phase_pg(gamma, mode, 400, 12),
                _ => eprintln!("unknown phase"),
            }
        }
    }
}
