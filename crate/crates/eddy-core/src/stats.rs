//! Mode-coverage metrics and the two-sample test battery (Kolmogorov–
//! Smirnov, Mann–Whitney, Welch) used to compare guided and unguided
//! sampling distributions.
//!
//! Conventions:
//!
//! * KS: statistic is the sup-norm ECDF distance; the p-value comes from the
//!   asymptotic Kolmogorov distribution at effective size
//!   `n_a n_b / (n_a + n_b)`.
//! * Mann–Whitney: statistic is the normalized `U / (n_a n_b)` oriented as an
//!   estimate of `P(a < b)` (1 means every `a` below every `b`); midrank tie
//!   handling, two-sided normal approximation with tie-corrected variance and
//!   a 1/2 continuity correction.
//! * Welch: the usual unequal-variance t statistic (`a` minus `b`) with
//!   Welch–Satterthwaite degrees of freedom; two-sided p through the
//!   regularized incomplete beta function.
//!
//! All p-values are asymptotic; [`permutation_p_value`] provides a
//! permutation fallback used by the calibration checks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::linalg::check_dims;
use crate::{Error, Result, Scalar};

/// Which two-sample test produced a [`TestResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    Ks,
    MannWhitney,
    Welch,
}

impl TestKind {
    pub fn name(&self) -> &'static str {
        match self {
            TestKind::Ks => "ks",
            TestKind::MannWhitney => "mann_whitney",
            TestKind::Welch => "welch",
        }
    }
}

/// Statistic and two-sided p-value of one two-sample test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub test: TestKind,
    pub n_a: usize,
    pub n_b: usize,
}

/// Number of distinct mixture centers that are the nearest center of at
/// least one particle. Ties go to the lowest center index.
pub fn mode_coverage<T: Scalar>(positions: &[Vec<T>], centers: &[Vec<T>]) -> Result<usize> {
    if positions.is_empty() || centers.is_empty() {
        return Err(Error::EmptySample);
    }
    let d = centers[0].len();
    let mut hit = vec![false; centers.len()];
    for x in positions {
        check_dims(x.len(), d)?;
        hit[nearest_center_index(x, centers)] = true;
    }
    Ok(hit.iter().filter(|&&h| h).count())
}

fn nearest_center_index<T: Scalar>(x: &[T], centers: &[Vec<T>]) -> usize {
    let mut best = 0usize;
    let mut best_d2 = T::infinity();
    for (i, c) in centers.iter().enumerate() {
        let d2: T = x
            .iter()
            .zip(c)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        if d2 < best_d2 {
            best_d2 = d2;
            best = i;
        }
    }
    best
}

/// Expected coverage of `m` modes by `n` independent particles under equal
/// mode weights: `m (1 - (1 - 1/m)^n)`. Requires `m, n >= 1`.
pub fn expected_iid_coverage(m: usize, n: usize) -> f64 {
    let mf = m as f64;
    mf * (1.0 - (1.0 - 1.0 / mf).powi(n as i32))
}

/// Distance to the nearest center and the angle of the offset around it,
/// for 2-D states. At exactly zero distance the angle is 0 by convention,
/// which keeps ECDFs free of NaN on a measure-zero event.
pub fn nearest_mode_stats<T: Scalar>(x: &[T], centers: &[Vec<T>]) -> Result<(T, T)> {
    if x.len() != 2 {
        return Err(Error::UnsupportedDimension {
            required: 2,
            got: x.len(),
        });
    }
    if centers.is_empty() {
        return Err(Error::EmptySample);
    }
    let idx = nearest_center_index(x, centers);
    let rel = [x[0] - centers[idx][0], x[1] - centers[idx][1]];
    let dist = (rel[0] * rel[0] + rel[1] * rel[1]).sqrt();
    if dist == T::zero() {
        return Ok((T::zero(), T::zero()));
    }
    let mut angle = rel[1].atan2(rel[0]);
    if angle <= -T::PI() {
        angle = T::PI();
    }
    Ok((dist, angle))
}

fn sorted_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(|&x| x.as_f64()).collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Sup-norm distance between the two empirical CDFs.
pub fn ks_statistic<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let sa = sorted_f64(a);
    let sb = sorted_f64(b);
    let (na, nb) = (sa.len(), sb.len());
    let mut i = 0usize;
    let mut j = 0usize;
    let mut sup = 0.0f64;
    while i < na && j < nb {
        let v = sa[i].min(sb[j]);
        while i < na && sa[i] == v {
            i += 1;
        }
        while j < nb && sb[j] == v {
            j += 1;
        }
        let diff = (i as f64 / na as f64 - j as f64 / nb as f64).abs();
        if diff > sup {
            sup = diff;
        }
    }
    Ok(sup)
}

/// Survival function of the asymptotic Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 1e-8 {
        return 1.0;
    }
    let q = if lambda < 1.18 {
        // Complementary theta-series form, accurate for small arguments.
        let pi = std::f64::consts::PI;
        let t = (-pi * pi / (8.0 * lambda * lambda)).exp();
        let cdf = (2.0 * pi).sqrt() / lambda * (t + t.powi(9) + t.powi(25) + t.powi(49));
        1.0 - cdf
    } else {
        let t = (-2.0 * lambda * lambda).exp();
        2.0 * (t - t.powi(4) + t.powi(9) - t.powi(16))
    };
    q.clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample<T: Scalar>(a: &[T], b: &[T]) -> Result<TestResult> {
    let statistic = ks_statistic(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let effective = na * nb / (na + nb);
    let p_value = kolmogorov_q(effective.sqrt() * statistic);
    Ok(TestResult {
        statistic,
        p_value,
        test: TestKind::Ks,
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// Two-sample Mann–Whitney test; see the module docs for the orientation.
pub fn mann_whitney<T: Scalar>(a: &[T], b: &[T]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let na = a.len();
    let nb = b.len();
    let mut all: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v.as_f64(), true))
        .chain(b.iter().map(|&v| (v.as_f64(), false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut rank_sum_a = 0.0f64;
    let mut tie_term = 0.0f64;
    let mut i = 0usize;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let ties = (j - i + 1) as f64;
        let midrank = 0.5 * ((i + 1) + (j + 1)) as f64;
        let in_a = all[i..=j].iter().filter(|e| e.1).count() as f64;
        rank_sum_a += midrank * in_a;
        tie_term += ties * ties * ties - ties;
        i = j + 1;
    }
    // U for sample a counts (a > b) pairs plus half-ties.
    let u_a = rank_sum_a - (na * (na + 1)) as f64 / 2.0;
    let prod = na as f64 * nb as f64;
    let statistic = 1.0 - u_a / prod;
    let nf = n as f64;
    let mean = 0.5 * prod;
    let variance = prod / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let p_value = if variance <= 0.0 {
        1.0
    } else {
        let z = ((u_a - mean).abs() - 0.5) / variance.sqrt();
        if z <= 0.0 {
            1.0
        } else {
            erfc(z / std::f64::consts::SQRT_2).min(1.0)
        }
    };
    Ok(TestResult {
        statistic,
        p_value,
        test: TestKind::MannWhitney,
        n_a: na,
        n_b: nb,
    })
}

/// Welch unequal-variance t-test, `a` minus `b`, two-sided.
pub fn welch_t<T: Scalar>(a: &[T], b: &[T]) -> Result<TestResult> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(Error::SampleTooSmall {
                needed: 2,
                got: s.len(),
            });
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sa = va / na;
    let sb = vb / nb;
    let se2 = sa + sb;
    let (statistic, p_value) = if se2 == 0.0 {
        // Degenerate zero-variance samples.
        if ma == mb {
            (0.0, 1.0)
        } else {
            ((ma - mb).signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = (ma - mb) / se2.sqrt();
        let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
        let p = beta_reg(0.5 * df, 0.5, df / (df + t * t));
        (t, p.clamp(0.0, 1.0))
    };
    Ok(TestResult {
        statistic,
        p_value,
        test: TestKind::Welch,
        n_a: a.len(),
        n_b: b.len(),
    })
}

fn mean_var<T: Scalar>(v: &[T]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x.as_f64()).sum::<f64>() / n;
    let var = v
        .iter()
        .map(|&x| {
            let d = x.as_f64() - mean;
            d * d
        })
        .sum::<f64>()
        / (n - 1.0);
    (mean, var)
}

/// Permutation p-value for any two-sample statistic (larger = more extreme):
/// the pooled sample is reshuffled `shuffles` times and
/// `p = (1 + #{permuted >= observed}) / (shuffles + 1)`.
pub fn permutation_p_value<T, S>(
    a: &[T],
    b: &[T],
    statistic: S,
    shuffles: usize,
    seed: u64,
) -> Result<f64>
where
    T: Scalar,
    S: Fn(&[T], &[T]) -> f64,
{
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let observed = statistic(a, b);
    let mut pooled: Vec<T> = a.iter().chain(b.iter()).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exceed = 0usize;
    for _ in 0..shuffles {
        pooled.shuffle(&mut rng);
        if statistic(&pooled[..a.len()], &pooled[a.len()..]) >= observed {
            exceed += 1;
        }
    }
    Ok((1 + exceed) as f64 / (shuffles + 1) as f64)
}
