//! Drift fields (VP reverse SDE and optimal-transport flow matching), the
//! velocity-to-score conversion, and the Euler–Maruyama integrator.
//!
//! Both dynamics fit the common SDE `dx = mu_t(x) dt + sigma_t dW`. The VP
//! reverse SDE has `mu = beta/2 x + beta grad log p_t` and
//! `sigma = sqrt(beta)`; the flow-matching field is deterministic
//! (`sigma = 0`) with `mu = E[x1 - x0 | x_t]` computed by exact Gaussian
//! conditioning per mixture component.

use rand::Rng;

use crate::linalg::check_dims;
use crate::sampler::ParticleBatch;
use crate::targets::{GaussianMixture, VpSchedule};
use crate::{Error, Result, Scalar};

/// Drift and volatility of an Itô SDE on sampler time `[0, 1]`.
pub trait DriftField<T: Scalar> {
    fn drift(&self, x: &[T], t: T) -> Result<Vec<T>>;
    /// State-independent volatility; zero for deterministic flows.
    fn volatility(&self, t: T) -> T;
}

/// Source of per-particle Gaussian increments for the integrator.
///
/// Any [`Rng`] works and draws in particle-index order. The sampler module
/// uses a keyed implementation instead so that draws depend only on
/// `(seed, step, particle)` and parallel execution cannot reorder them.
pub trait NoiseSource<T: Scalar> {
    fn particle_noise(&mut self, step: u64, particle: usize, dim: usize) -> Vec<T>;
}

impl<T: Scalar, R: Rng> NoiseSource<T> for R {
    fn particle_noise(&mut self, _step: u64, _particle: usize, dim: usize) -> Vec<T> {
        (0..dim).map(|_| T::standard_normal(self)).collect()
    }
}

/// Time-reversal drift of the variance-preserving noising process:
/// `mu(x, t) = beta(t)/2 x + beta(t) grad log p_t(x)` with the analytic
/// noised-mixture score, and `sigma(t) = sqrt(beta(t))`.
#[derive(Debug, Clone)]
pub struct VpReverseDrift<T> {
    mixture: GaussianMixture<T>,
    schedule: VpSchedule<T>,
}

impl<T: Scalar> VpReverseDrift<T> {
    pub fn new(mixture: GaussianMixture<T>, schedule: VpSchedule<T>) -> Self {
        Self { mixture, schedule }
    }

    pub fn schedule(&self) -> &VpSchedule<T> {
        &self.schedule
    }

    /// Exact marginal `p_t` backing the drift.
    pub fn marginal(&self, t: T) -> Result<GaussianMixture<T>> {
        self.mixture.noised(&self.schedule, t)
    }
}

impl<T: Scalar> DriftField<T> for VpReverseDrift<T> {
    fn drift(&self, x: &[T], t: T) -> Result<Vec<T>> {
        if !(T::zero()..=T::one()).contains(&t) {
            return Err(Error::TimeOutOfRange(t.as_f64()));
        }
        let beta = self.schedule.rate(t);
        let half_beta = T::real(0.5) * beta;
        let score = self.marginal(t)?.score(x)?;
        Ok(x.iter()
            .zip(&score)
            .map(|(&xi, &si)| half_beta * xi + beta * si)
            .collect())
    }

    fn volatility(&self, t: T) -> T {
        self.schedule.rate(t).sqrt()
    }
}

/// Optimal-transport flow-matching velocity for the linear path
/// `x_t = t x1 + (1 - t) x0` with `x0 ~ N(0, I)` and `x1` mixture
/// distributed: `mu(x, t) = (E[x1 | x_t] - x_t) / (1 - t)`.
///
/// The field is singular at `t = 1`; evaluation there is an error and the
/// integrator's final step uses the drift at `1 - dt`.
#[derive(Debug, Clone)]
pub struct OtFlowDrift<T> {
    mixture: GaussianMixture<T>,
}

impl<T: Scalar> OtFlowDrift<T> {
    pub fn new(mixture: GaussianMixture<T>) -> Self {
        Self { mixture }
    }

    /// Marginal of the linear path at time `t`: centers `t c_l`, isotropic
    /// variance `t^2 sigma^2 + (1 - t)^2`.
    pub fn marginal(&self, t: T) -> Result<GaussianMixture<T>> {
        self.check_time(t)?;
        let centers = self
            .mixture
            .centers()
            .iter()
            .map(|c| c.iter().map(|&ci| t * ci).collect())
            .collect();
        let one_minus = T::one() - t;
        let variance = t * t * self.mixture.variance() + one_minus * one_minus;
        GaussianMixture::new(centers, self.mixture.weights().to_vec(), variance)
    }

    /// `E[x1 | x_t]` by Gaussian conditioning with responsibility weighting.
    pub fn conditional_target_mean(&self, x: &[T], t: T) -> Result<Vec<T>> {
        self.check_time(t)?;
        check_dims(x.len(), self.mixture.dim())?;
        let path = self.marginal(t)?;
        let rho = path.responsibilities(x)?;
        let gain = t * self.mixture.variance() / path.variance();
        let mut out = vec![T::zero(); x.len()];
        for (r, c) in rho.iter().zip(self.mixture.centers()) {
            for (i, (&ci, o)) in c.iter().zip(out.iter_mut()).enumerate() {
                // E[x1 | x_t, l] = c_l + gain (x - t c_l)
                *o += *r * (ci + gain * (x[i] - t * ci));
            }
        }
        Ok(out)
    }

    fn check_time(&self, t: T) -> Result<()> {
        if t < T::zero() {
            return Err(Error::TimeOutOfRange(t.as_f64()));
        }
        if t >= T::one() {
            return Err(Error::FlowSingularity(t.as_f64()));
        }
        Ok(())
    }
}

impl<T: Scalar> DriftField<T> for OtFlowDrift<T> {
    fn drift(&self, x: &[T], t: T) -> Result<Vec<T>> {
        let mean = self.conditional_target_mean(x, t)?;
        let inv = (T::one() - t).recip();
        Ok(mean
            .iter()
            .zip(x)
            .map(|(&m, &xi)| (m - xi) * inv)
            .collect())
    }

    fn volatility(&self, _t: T) -> T {
        T::zero()
    }
}

/// Converts a flow-matching velocity into the score of the current marginal:
/// `grad log p_t(x) = (t v - x) / (1 - t)`.
pub fn score_from_velocity<T: Scalar>(velocity: &[T], x: &[T], t: T) -> Result<Vec<T>> {
    check_dims(velocity.len(), x.len())?;
    if t < T::zero() {
        return Err(Error::TimeOutOfRange(t.as_f64()));
    }
    if t >= T::one() {
        return Err(Error::FlowSingularity(t.as_f64()));
    }
    let inv = (T::one() - t).recip();
    Ok(velocity
        .iter()
        .zip(x)
        .map(|(&v, &xi)| (t * v - xi) * inv)
        .collect())
}

/// One explicit Euler–Maruyama step:
/// `x <- x + (mu + psi) dt + sigma_t sqrt(dt) xi` with `xi ~ N(0, I)` drawn
/// independently per particle. `guidance`, when present, is the already
/// scaled per-particle drift correction. Noise is skipped entirely when
/// `sigma_t = 0`.
pub fn euler_maruyama_step<T, F, N>(
    batch: &ParticleBatch<T>,
    field: &F,
    guidance: Option<&[Vec<T>]>,
    dt: T,
    noise: &mut N,
) -> Result<ParticleBatch<T>>
where
    T: Scalar,
    F: DriftField<T> + ?Sized,
    N: NoiseSource<T> + ?Sized,
{
    if dt <= T::zero() || !dt.is_finite() {
        return Err(Error::NonPositiveStep(dt.as_f64()));
    }
    let t = batch.time;
    if let Some(g) = guidance {
        check_dims(g.len(), batch.len())?;
    }
    let sigma = field.volatility(t);
    let noise_scale = sigma * dt.sqrt();
    let mut positions = Vec::with_capacity(batch.len());
    for (p, x) in batch.positions.iter().enumerate() {
        let mut drift = field.drift(x, t)?;
        if drift.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "drift",
                particle: p,
                time: t.as_f64(),
            });
        }
        if let Some(g) = guidance {
            check_dims(g[p].len(), x.len())?;
            if g[p].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    quantity: "guidance",
                    particle: p,
                    time: t.as_f64(),
                });
            }
            for (d, gi) in drift.iter_mut().zip(&g[p]) {
                *d += *gi;
            }
        }
        let mut next: Vec<T> = x.iter().zip(&drift).map(|(&xi, &di)| xi + di * dt).collect();
        if noise_scale > T::zero() {
            let xi = noise.particle_noise(batch.step, p, x.len());
            for (n, z) in next.iter_mut().zip(xi) {
                *n += noise_scale * z;
            }
        }
        positions.push(next);
    }
    Ok(ParticleBatch {
        positions,
        time: t + dt,
        seed: batch.seed,
        step: batch.step + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct OrnsteinUhlenbeck {
        rate: f64,
        sigma: f64,
    }

    impl DriftField<f64> for OrnsteinUhlenbeck {
        fn drift(&self, x: &[f64], _t: f64) -> Result<Vec<f64>> {
            Ok(x.iter().map(|&xi| -self.rate * xi).collect())
        }
        fn volatility(&self, _t: f64) -> f64 {
            self.sigma
        }
    }

    fn standard_normal_target() -> GaussianMixture<f64> {
        GaussianMixture::new(vec![vec![0.0, 0.0]], vec![1.0], 1.0).unwrap()
    }

    fn ring5() -> GaussianMixture<f64> {
        GaussianMixture::ring(5, 5.0, 1.0).unwrap()
    }

    #[test]
    fn vp_drift_gaussian_fixed_point() {
        // For a standard-normal target every noised marginal is standard
        // normal, so the drift reduces to the OU field -beta/2 x.
        let field = VpReverseDrift::new(standard_normal_target(), VpSchedule::default());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let x = [
                f64::standard_normal(&mut rng),
                f64::standard_normal(&mut rng),
            ];
            let t = 0.5 + 0.4 * f64::standard_normal(&mut rng).tanh();
            let beta = field.schedule().rate(t);
            let mu = field.drift(&x, t).unwrap();
            for i in 0..2 {
                assert_relative_eq!(mu[i], -0.5 * beta * x[i], max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn vp_drift_vanishes_at_ring_center() {
        let field = VpReverseDrift::new(ring5(), VpSchedule::default());
        for t in [0.0, 0.3, 0.8, 1.0] {
            let mu = field.drift(&[0.0, 0.0], t).unwrap();
            assert_abs_diff_eq!(mu[0], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(mu[1], 0.0, epsilon = 1e-12);
        }
        assert!(field.drift(&[0.0, 0.0], 1.2).is_err());
    }

    #[test]
    fn ot_drift_gaussian_conditional_formula() {
        // Standard-normal target: E[x1 | x_t] = t x / (t^2 + (1-t)^2).
        let flow = OtFlowDrift::new(standard_normal_target());
        for t in [0.0, 0.3, 0.7, 0.95] {
            let x = [0.8, -1.4];
            let vt = t * t + (1.0 - t) * (1.0 - t);
            let mu = flow.drift(&x, t).unwrap();
            for i in 0..2 {
                let expect = (t * x[i] / vt - x[i]) / (1.0 - t);
                assert_relative_eq!(mu[i], expect, max_relative = 1e-12, epsilon = 1e-14);
            }
        }
        assert!(matches!(
            flow.drift(&[0.0, 0.0], 1.0),
            Err(Error::FlowSingularity(_))
        ));
    }

    #[test]
    fn ot_drift_matches_importance_sampling_oracle() {
        // Self-normalized importance estimate of E[x1 - x0 | x_t = z]:
        // draw x1 from the target, set the implied x0 = (z - t x1)/(1 - t),
        // weight by the standard-normal density of that x0.
        let flow = OtFlowDrift::new(standard_normal_target());
        let t = 0.5;
        let z = [0.6, -0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let target = standard_normal_target();
        let n = 200_000;
        let mut wsum = 0.0;
        let mut gsum = [0.0f64; 2];
        let mut samples = Vec::with_capacity(n);
        for x1 in target.sample(n, &mut rng) {
            let x0: Vec<f64> = z
                .iter()
                .zip(&x1)
                .map(|(&zi, &x1i)| (zi - t * x1i) / (1.0 - t))
                .collect();
            let w = (-0.5 * (x0[0] * x0[0] + x0[1] * x0[1])).exp();
            let g = [x1[0] - x0[0], x1[1] - x0[1]];
            wsum += w;
            gsum[0] += w * g[0];
            gsum[1] += w * g[1];
            samples.push((w, g));
        }
        let est = [gsum[0] / wsum, gsum[1] / wsum];
        let mu = flow.drift(&z, t).unwrap();
        for i in 0..2 {
            // Delta-method standard error of the self-normalized estimate.
            let se = (samples
                .iter()
                .map(|(w, g)| (w * (g[i] - est[i])).powi(2))
                .sum::<f64>()
                .sqrt())
                / wsum;
            assert!(
                (mu[i] - est[i]).abs() <= 3.0 * se,
                "coord {i}: drift {} vs oracle {} (se {se})",
                mu[i],
                est[i]
            );
        }
    }

    #[test]
    fn ot_drift_at_origin_tends_to_mixture_mean() {
        let flow = OtFlowDrift::new(ring5());
        let mu = flow.drift(&[0.0, 0.0], 0.0).unwrap();
        // The symmetric ring has mean zero.
        assert_abs_diff_eq!(mu[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mu[1], 0.0, epsilon = 1e-12);

        // Against a lopsided two-component mixture the t -> 0 drift at the
        // origin is the mixture mean.
        let gm = GaussianMixture::new(vec![vec![2.0, 0.0], vec![0.0, 4.0]], vec![0.25, 0.75], 1.0)
            .unwrap();
        let mu = OtFlowDrift::new(gm).drift(&[0.0, 0.0], 0.0).unwrap();
        assert_relative_eq!(mu[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(mu[1], 3.0, max_relative = 1e-12);
    }

    #[test]
    fn ot_drift_small_variance_points_at_center() {
        let gm = GaussianMixture::new(vec![vec![1.5, -0.5]], vec![1.0], 1e-6).unwrap();
        let flow = OtFlowDrift::new(gm);
        let t = 0.6;
        let x = [0.9, 0.1];
        let mu = flow.drift(&x, t).unwrap();
        for i in 0..2 {
            let expect = ([1.5, -0.5][i] - x[i]) / (1.0 - t);
            assert_relative_eq!(mu[i], expect, max_relative = 1e-4);
        }
    }

    #[test]
    fn score_from_velocity_boundaries() {
        let x = [0.4, -0.9];
        let s = score_from_velocity(&[123.0, -7.0], &x, 0.0).unwrap();
        assert_eq!(s, vec![-0.4, 0.9]);
        assert_eq!(
            score_from_velocity(&[0.0], &[0.0], 0.5).unwrap(),
            vec![0.0]
        );
        assert!(matches!(
            score_from_velocity(&[0.0], &[0.0], 1.0),
            Err(Error::FlowSingularity(_))
        ));
    }

    #[test]
    fn tweedie_roundtrip_recovers_marginal_score() {
        // Velocity -> score must reproduce the analytic score of the path
        // marginal, for the all-Gaussian case and for the ring mixture.
        for gm in [standard_normal_target(), ring5()] {
            let flow = OtFlowDrift::new(gm);
            for t in [0.1, 0.5, 0.9] {
                let marginal = flow.marginal(t).unwrap();
                for x in [[0.3, 0.4], [-1.0, 2.0]] {
                    let v = flow.drift(&x, t).unwrap();
                    let s = score_from_velocity(&v, &x, t).unwrap();
                    let expect = marginal.score(&x).unwrap();
                    for i in 0..2 {
                        assert_relative_eq!(s[i], expect[i], max_relative = 1e-5, epsilon = 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn euler_step_identity_and_forced_motion() {
        let still = OrnsteinUhlenbeck {
            rate: 0.0,
            sigma: 0.0,
        };
        let batch = ParticleBatch::from_positions(vec![vec![1.0, 2.0], vec![-3.0, 0.5]], 7);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let next = euler_maruyama_step(&batch, &still, None, 0.25, &mut rng).unwrap();
        assert_eq!(next.positions, batch.positions);
        assert_eq!(next.time, 0.25);
        assert_eq!(next.step, 1);

        // Constant guidance acts as a forced drift.
        let guidance = vec![vec![2.0, -4.0], vec![2.0, -4.0]];
        let next = euler_maruyama_step(&batch, &still, Some(&guidance), 0.5, &mut rng).unwrap();
        assert_eq!(next.positions[0], vec![2.0, 0.0]);
        assert_eq!(next.positions[1], vec![-2.0, -1.5]);
    }

    #[test]
    fn euler_step_rejects_non_finite_guidance() {
        let still = OrnsteinUhlenbeck {
            rate: 0.0,
            sigma: 0.0,
        };
        let batch = ParticleBatch::from_positions(vec![vec![0.0], vec![0.0]], 7);
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let guidance = vec![vec![0.0], vec![f64::NAN]];
        let err =
            euler_maruyama_step(&batch, &still, Some(&guidance), 0.1, &mut rng).unwrap_err();
        assert_eq!(
            err,
            Error::NonFinite {
                quantity: "guidance",
                particle: 1,
                time: 0.0
            }
        );
    }

    #[test]
    fn ou_process_reaches_unit_stationary_variance() {
        let field = OrnsteinUhlenbeck {
            rate: 0.5,
            sigma: 1.0,
        };
        let n = 100_000;
        let mut batch = ParticleBatch::from_positions(vec![vec![0.0]; n], 7);
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let dt = 0.01;
        for _ in 0..600 {
            batch = euler_maruyama_step(&batch, &field, None, dt, &mut rng).unwrap();
        }
        let mean: f64 = batch.positions.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        let var: f64 =
            batch.positions.iter().map(|p| (p[0] - mean).powi(2)).sum::<f64>() / n as f64;
        // Stationary variance sigma^2 / (2 rate) = 1.
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn ou_chain_mean_error_is_first_order_in_dt() {
        // Deterministic part of the chain vs the continuous OU mean: the
        // global error at t = 1 must halve when dt halves.
        let rate = 0.5;
        let x0 = 2.0;
        let exact = x0 * (-rate as f64).exp();
        let chain_end = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let mut x = x0;
            for _ in 0..steps {
                x += -rate * x * dt;
            }
            x
        };
        let e1 = (chain_end(0.02) - exact).abs();
        let e2 = (chain_end(0.01) - exact).abs();
        let ratio = e1 / e2;
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn ou_variance_matches_chain_closed_form() {
        let field = OrnsteinUhlenbeck {
            rate: 0.5,
            sigma: 1.0,
        };
        let n = 60_000;
        let dt = 0.02;
        let steps = 50;
        let mut batch = ParticleBatch::from_positions(vec![vec![0.0]; n], 7);
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..steps {
            batch = euler_maruyama_step(&batch, &field, None, dt, &mut rng).unwrap();
        }
        let a: f64 = 1.0 - 0.5 * dt;
        let chain_var = dt * (1.0 - a.powi(2 * steps as i32)) / (1.0 - a * a);
        let var: f64 = batch.positions.iter().map(|p| p[0] * p[0]).sum::<f64>() / n as f64;
        let se = chain_var * (2.0 / n as f64).sqrt();
        assert!(
            (var - chain_var).abs() < 4.0 * se,
            "var {var} vs chain {chain_var}"
        );
    }

    #[test]
    fn integration_reproduces_target_distribution() {
        // 10^4 independent particles through the VP reverse SDE must be
        // statistically indistinguishable from direct mixture samples.
        let gm = ring5();
        let field = VpReverseDrift::new(gm.clone(), VpSchedule::default());
        let n = 10_000;
        let steps = 400;
        let dt = 1.0 / steps as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let init: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..2)
                    .map(|_| f64::standard_normal(&mut rng))
                    .collect()
            })
            .collect();
        let mut batch = ParticleBatch::from_positions(init, 7);
        for _ in 0..steps {
            batch = euler_maruyama_step(&batch, &field, None, dt, &mut rng).unwrap();
        }
        let reference = gm.sample(n, &mut rng);
        let stat = |xs: &[Vec<f64>]| -> (Vec<f64>, Vec<f64>) {
            let mut dist = Vec::with_capacity(xs.len());
            let mut ang = Vec::with_capacity(xs.len());
            for x in xs {
                let (d, a) = stats::nearest_mode_stats(x, gm.centers()).unwrap();
                dist.push(d);
                ang.push(a);
            }
            (dist, ang)
        };
        let (d_sim, a_sim) = stat(&batch.positions);
        let (d_ref, a_ref) = stat(&reference);
        let ks_d = stats::ks_two_sample(&d_sim, &d_ref).unwrap();
        let ks_a = stats::ks_two_sample(&a_sim, &a_ref).unwrap();
        assert!(ks_d.p_value > 0.05, "distance KS p = {}", ks_d.p_value);
        assert!(ks_a.p_value > 0.05, "angle KS p = {}", ks_a.p_value);
    }

    #[test]
    fn trajectories_are_seed_deterministic() {
        let field = OrnsteinUhlenbeck {
            rate: 0.3,
            sigma: 0.8,
        };
        let run = || {
            let mut batch = ParticleBatch::standard_normal(5, 2, 99);
            let mut rng = ChaCha8Rng::seed_from_u64(1234);
            for _ in 0..50 {
                batch = euler_maruyama_step(&batch, &field, None, 0.02, &mut rng).unwrap();
            }
            batch.positions
        };
        assert_eq!(run(), run());
    }
}
