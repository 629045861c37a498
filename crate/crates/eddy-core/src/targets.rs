//! Gaussian-mixture targets with exact densities, scores, samplers, and the
//! analytic noised marginals of a variance-preserving schedule.
//!
//! Sampler time runs prior-to-target: `t = 0` is (numerically) the standard
//! normal prior and `t = 1` the target. The schedule's signal coefficient
//! `alpha(t)` is the accumulated variance-preserving factor evaluated at
//! reversed time `s = 1 - t`, so the marginal of the noising process at
//! sampler time `t` scales component centers by `alpha(t)` and has component
//! variance `alpha^2 sigma^2 + (1 - alpha^2)`. For a unit-variance target the
//! total variance is 1 at every `t`.

use rand::Rng;

use crate::linalg::{check_dims, squared_norm, sub};
use crate::{Error, Result, Scalar};

/// Standard VP-SDE rate bounds used when a config does not override them.
pub const DEFAULT_BETA_MIN: f64 = 0.1;
pub const DEFAULT_BETA_MAX: f64 = 20.0;

/// Linear variance-preserving noise schedule.
///
/// The rate is linear in reversed time `s = 1 - t` between `beta_min` and
/// `beta_max`, the standard VP-SDE choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VpSchedule<T> {
    beta_min: T,
    beta_max: T,
}

impl<T: Scalar> Default for VpSchedule<T> {
    fn default() -> Self {
        Self {
            beta_min: T::real(DEFAULT_BETA_MIN),
            beta_max: T::real(DEFAULT_BETA_MAX),
        }
    }
}

impl<T: Scalar> VpSchedule<T> {
    pub fn new(beta_min: T, beta_max: T) -> Result<Self> {
        if !(beta_min > T::zero() && beta_min <= beta_max && beta_max.is_finite()) {
            return Err(Error::InvalidSchedule(beta_min.as_f64(), beta_max.as_f64()));
        }
        Ok(Self { beta_min, beta_max })
    }

    pub fn beta_min(&self) -> T {
        self.beta_min
    }

    pub fn beta_max(&self) -> T {
        self.beta_max
    }

    /// Instantaneous rate at sampler time `t in [0, 1]`: the schedule rate at
    /// reversed time, `beta(1 - t)`. Decreases in `t`.
    pub fn rate(&self, t: T) -> T {
        self.beta_min + (self.beta_max - self.beta_min) * (T::one() - t)
    }

    /// Signal coefficient `alpha(t) = exp(-1/2 int_0^{1-t} beta(u) du)`,
    /// nondecreasing with `alpha(1) = 1`.
    pub fn signal(&self, t: T) -> T {
        let s = T::one() - t;
        let half = T::real(0.5);
        let integral = self.beta_min * s + half * (self.beta_max - self.beta_min) * s * s;
        (-half * integral).exp()
    }

    /// Marginal noise variance `1 - alpha(t)^2` (variance-preserving
    /// identity).
    pub fn noise_variance(&self, t: T) -> T {
        let a = self.signal(t);
        T::one() - a * a
    }
}

/// Mixture of isotropic Gaussians with a shared component variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture<T> {
    centers: Vec<Vec<T>>,
    weights: Vec<T>,
    variance: T,
}

impl<T: Scalar> GaussianMixture<T> {
    pub fn new(centers: Vec<Vec<T>>, weights: Vec<T>, variance: T) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::EmptyMixture);
        }
        let d = centers[0].len();
        for c in &centers {
            check_dims(c.len(), d)?;
        }
        check_dims(weights.len(), centers.len())?;
        if variance <= T::zero() || !variance.is_finite() {
            return Err(Error::NonPositiveVariance(variance.as_f64()));
        }
        let sum: T = weights.iter().copied().sum();
        let tol = T::real(1e-12).max(T::epsilon() * T::real(16.0 * weights.len() as f64));
        if weights.iter().any(|&w| w < T::zero()) || (sum - T::one()).abs() > tol {
            return Err(Error::InvalidWeights(sum.as_f64()));
        }
        Ok(Self {
            centers,
            weights,
            variance,
        })
    }

    /// Equal-weight mixture of `m` components on a circle of the given
    /// radius: component `l` is centered at
    /// `radius * (sin(2 pi l / m), cos(2 pi l / m))`. Dimension is 2.
    pub fn ring(m: usize, radius: T, variance: T) -> Result<Self> {
        if m == 0 {
            return Err(Error::EmptyMixture);
        }
        let tau = T::real(2.0) * T::PI();
        let mf = T::real(m as f64);
        let centers = (0..m)
            .map(|l| {
                let angle = tau * T::real(l as f64) / mf;
                vec![radius * angle.sin(), radius * angle.cos()]
            })
            .collect();
        Self::new(centers, vec![mf.recip(); m], variance)
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[Vec<T>] {
        &self.centers
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn variance(&self) -> T {
        self.variance
    }

    /// Log density, computed with a max-shifted log-sum-exp.
    pub fn log_density(&self, x: &[T]) -> Result<T> {
        check_dims(x.len(), self.dim())?;
        let logs = self.component_log_terms(x);
        let max = logs.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = logs.iter().map(|&l| (l - max).exp()).sum();
        let d = T::real(self.dim() as f64);
        let half = T::real(0.5);
        let norm = half * d * (T::real(2.0) * T::PI() * self.variance).ln();
        Ok(max + sum.ln() - norm)
    }

    /// Posterior component probabilities at `x`; nonnegative, sum to 1.
    pub fn responsibilities(&self, x: &[T]) -> Result<Vec<T>> {
        check_dims(x.len(), self.dim())?;
        let logs = self.component_log_terms(x);
        let max = logs.iter().copied().fold(T::neg_infinity(), T::max);
        let mut rho: Vec<T> = logs.iter().map(|&l| (l - max).exp()).collect();
        let total: T = rho.iter().copied().sum();
        for r in &mut rho {
            *r /= total;
        }
        Ok(rho)
    }

    /// Score `grad log p(x) = sum_l rho_l(x) (c_l - x) / sigma^2`.
    pub fn score(&self, x: &[T]) -> Result<Vec<T>> {
        let rho = self.responsibilities(x)?;
        let mut out = vec![T::zero(); self.dim()];
        for (r, c) in rho.iter().zip(&self.centers) {
            for (o, (&ci, &xi)) in out.iter_mut().zip(c.iter().zip(x)) {
                *o += *r * (ci - xi);
            }
        }
        let inv_var = self.variance.recip();
        for o in &mut out {
            *o *= inv_var;
        }
        Ok(out)
    }

    /// Ancestral sampling: component by weight, then an isotropic Gaussian.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<T>> {
        let sigma = self.variance.sqrt();
        (0..n)
            .map(|_| {
                let comp = self.draw_component(rng);
                self.centers[comp]
                    .iter()
                    .map(|&c| c + sigma * T::standard_normal(rng))
                    .collect()
            })
            .collect()
    }

    /// Exact marginal of the VP noising process at sampler time `t`:
    /// centers scale by `alpha(t)`, component variance becomes
    /// `alpha^2 sigma^2 + (1 - alpha^2)`. At `t = 1` this is the target
    /// itself.
    pub fn noised(&self, schedule: &VpSchedule<T>, t: T) -> Result<Self> {
        if !(T::zero()..=T::one()).contains(&t) {
            return Err(Error::TimeOutOfRange(t.as_f64()));
        }
        let a = schedule.signal(t);
        let centers = self
            .centers
            .iter()
            .map(|c| c.iter().map(|&ci| a * ci).collect())
            .collect();
        let variance = a * a * self.variance + (T::one() - a * a);
        Self::new(centers, self.weights.clone(), variance)
    }

    fn component_log_terms(&self, x: &[T]) -> Vec<T> {
        let half = T::real(0.5);
        self.weights
            .iter()
            .zip(&self.centers)
            .map(|(&w, c)| w.ln() - half * squared_norm(&sub(x, c)) / self.variance)
            .collect()
    }

    fn draw_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = T::real(rng.gen::<f64>());
        let mut acc = T::zero();
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ring5() -> GaussianMixture<f64> {
        GaussianMixture::ring(5, 5.0, 1.0).unwrap()
    }

    #[test]
    fn ring_centers_match_formula() {
        let gm = ring5();
        assert_eq!(gm.dim(), 2);
        assert_eq!(gm.n_components(), 5);
        assert_abs_diff_eq!(gm.centers()[0][0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gm.centers()[0][1], 5.0, epsilon = 1e-12);
        assert!(gm.weights().iter().all(|&w| (w - 0.2).abs() < 1e-15));
    }

    #[test]
    fn ring_degenerate_single_component() {
        let gm = GaussianMixture::ring(1, 0.0, 1.0).unwrap();
        assert_eq!(gm.centers(), &[vec![0.0, 0.0]]);
        assert_eq!(gm.weights(), &[1.0]);
    }

    #[test]
    fn ring_four_axis_centers() {
        let gm = GaussianMixture::ring(4, 1.0, 1.0).unwrap();
        let expect = [[0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0]];
        for (c, e) in gm.centers().iter().zip(expect) {
            assert_abs_diff_eq!(c[0], e[0], epsilon = 1e-15);
            assert_abs_diff_eq!(c[1], e[1], epsilon = 1e-15);
        }
    }

    #[test]
    fn constructor_validates() {
        assert!(matches!(
            GaussianMixture::<f64>::new(vec![], vec![], 1.0),
            Err(Error::EmptyMixture)
        ));
        assert!(matches!(
            GaussianMixture::new(vec![vec![0.0]], vec![0.5], 1.0),
            Err(Error::InvalidWeights(_))
        ));
        assert!(matches!(
            GaussianMixture::new(vec![vec![0.0]], vec![1.0], 0.0),
            Err(Error::NonPositiveVariance(_))
        ));
    }

    #[test]
    fn log_density_single_component_mode() {
        for (d, var) in [(1usize, 1.0f64), (3, 0.7)] {
            let c = vec![0.4; d];
            let gm = GaussianMixture::new(vec![c.clone()], vec![1.0], var).unwrap();
            let expect = -0.5 * d as f64 * (2.0 * std::f64::consts::PI * var).ln();
            assert_relative_eq!(gm.log_density(&c).unwrap(), expect, max_relative = 1e-14);
        }
    }

    #[test]
    fn log_density_equidistant_symmetry() {
        let gm = GaussianMixture::new(
            vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
            vec![0.5, 0.5],
            1.0,
        )
        .unwrap();
        // On the symmetry axis both components contribute equally, so the
        // density equals twice one component's weighted term.
        let x = [0.0, 0.7];
        let single = GaussianMixture::new(vec![vec![-1.0, 0.0]], vec![1.0], 1.0).unwrap();
        let expect = single.log_density(&x).unwrap() + 0.5f64.ln() + 2.0f64.ln();
        assert_relative_eq!(gm.log_density(&x).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn log_density_matches_direct_summation() {
        // Independent oracle: direct summation without the log-sum-exp path.
        let gm = ring5();
        for x in [[0.0, 0.0], [1.5, -2.0], [4.0, 3.0]] {
            let direct: f64 = gm
                .centers()
                .iter()
                .zip(gm.weights())
                .map(|(c, &w)| {
                    let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    w * (-0.5 * d2 / gm.variance()).exp()
                        / (2.0 * std::f64::consts::PI * gm.variance())
                })
                .sum();
            assert_relative_eq!(
                gm.log_density(&x).unwrap(),
                direct.ln(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn score_single_component_is_linear() {
        let gm = GaussianMixture::new(vec![vec![1.0, -2.0]], vec![1.0], 0.5).unwrap();
        let x = [0.25, 0.5];
        let s = gm.score(&x).unwrap();
        assert_relative_eq!(s[0], (1.0 - 0.25) / 0.5, max_relative = 1e-14);
        assert_relative_eq!(s[1], (-2.0 - 0.5) / 0.5, max_relative = 1e-14);
    }

    #[test]
    fn score_on_symmetry_axis_has_no_tangential_part() {
        let gm = ring5();
        // Center 0 lies on the y-axis, a symmetry axis of the ring, so the
        // score there points along y only.
        let s = gm.score(&[0.0, 5.0]).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(s[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn score_matches_log_density_differences() {
        let gm = ring5();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..10 {
            let x = [
                3.0 * f64::standard_normal(&mut rng),
                3.0 * f64::standard_normal(&mut rng),
            ];
            let s = gm.score(&x).unwrap();
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd =
                    (gm.log_density(&xp).unwrap() - gm.log_density(&xm).unwrap()) / (2.0 * h);
                assert_relative_eq!(s[i], fd, max_relative = 1e-5, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn responsibilities_sum_to_one() {
        let gm = ring5();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..25 {
            let x = [
                6.0 * f64::standard_normal(&mut rng),
                6.0 * f64::standard_normal(&mut rng),
            ];
            let rho = gm.responsibilities(&x).unwrap();
            let sum: f64 = rho.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(rho.iter().all(|&r| r >= 0.0));
        }
    }

    #[test]
    fn noised_boundaries() {
        let gm = ring5();
        let schedule = VpSchedule::default();
        let at_target = gm.noised(&schedule, 1.0).unwrap();
        assert_eq!(at_target, gm);

        // At t = 0 the exact formula applies with alpha(0) = exp(-5.025);
        // centers collapse toward 0 and the variance is 1 up to alpha^2 terms.
        let a0 = schedule.signal(0.0);
        let prior = gm.noised(&schedule, 0.0).unwrap();
        assert_relative_eq!(a0, (-5.025f64).exp(), max_relative = 1e-12);
        assert_abs_diff_eq!(prior.centers()[0][1], a0 * 5.0, epsilon = 1e-15);
        assert_relative_eq!(prior.variance(), 1.0, max_relative = 1e-4);

        assert!(gm.noised(&schedule, 1.5).is_err());
        assert!(gm.noised(&schedule, -0.1).is_err());
    }

    #[test]
    fn noised_semigroup_on_moments() {
        // Renoising the t-marginal down to t' < t must match direct noising:
        // centers scale by alpha(t')/alpha(t) and the convolution adds
        // 1 - (alpha(t')/alpha(t))^2 variance.
        let gm = ring5();
        let schedule = VpSchedule::default();
        for (t, tp) in [(0.9, 0.4), (0.7, 0.2), (1.0, 0.5)] {
            let coarse = gm.noised(&schedule, t).unwrap();
            let fine = gm.noised(&schedule, tp).unwrap();
            let rho = schedule.signal(tp) / schedule.signal(t);
            for (cc, cf) in coarse.centers().iter().zip(fine.centers()) {
                for (a, b) in cc.iter().zip(cf) {
                    assert_abs_diff_eq!(rho * a, *b, epsilon = 1e-10);
                }
            }
            let composed = rho * rho * coarse.variance() + (1.0 - rho * rho);
            assert_abs_diff_eq!(composed, fine.variance(), epsilon = 1e-10);
        }
    }

    #[test]
    fn noised_score_matches_log_density_differences() {
        let gm = ring5();
        let schedule = VpSchedule::default();
        let h = 1e-5;
        for t in [0.1, 0.5, 0.9] {
            let pt = gm.noised(&schedule, t).unwrap();
            let x = [0.8, -1.1];
            let s = pt.score(&x).unwrap();
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd =
                    (pt.log_density(&xp).unwrap() - pt.log_density(&xm).unwrap()) / (2.0 * h);
                assert_relative_eq!(s[i], fd, max_relative = 1e-5, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn schedule_signal_properties() {
        let schedule = VpSchedule::<f64>::default();
        assert_eq!(schedule.signal(1.0), 1.0);
        let mut prev = 0.0;
        for k in 0..=20 {
            let a = schedule.signal(k as f64 / 20.0);
            assert!(a > 0.0 && a <= 1.0 && a >= prev);
            prev = a;
        }
        assert!(VpSchedule::new(0.0, 1.0).is_err());
        assert!(VpSchedule::new(2.0, 1.0).is_err());
    }

    #[test]
    fn sample_single_component_mean() {
        let gm = GaussianMixture::new(vec![vec![2.0, -1.0]], vec![1.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 100_000;
        let samples = gm.sample(n, &mut rng);
        let bound = 4.0 / (n as f64).sqrt();
        for i in 0..2 {
            let mean: f64 = samples.iter().map(|s| s[i]).sum::<f64>() / n as f64;
            assert!(
                (mean - gm.centers()[0][i]).abs() < bound,
                "coordinate {i}: {mean}"
            );
        }
    }

    #[test]
    fn sample_degenerate_weights() {
        let gm = GaussianMixture::new(
            vec![vec![10.0, 10.0], vec![-10.0, -10.0]],
            vec![1.0, 0.0],
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for s in gm.sample(500, &mut rng) {
            assert!(s[0] > 0.0 && s[1] > 0.0);
        }
    }

    #[test]
    fn sample_ring_component_frequencies() {
        let gm = ring5();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = 50_000;
        let mut counts = [0usize; 5];
        for s in gm.sample(n, &mut rng) {
            let nearest = gm
                .centers()
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da: f64 = a.iter().zip(&s).map(|(x, y)| (x - y) * (x - y)).sum();
                    let db: f64 = b.iter().zip(&s).map(|(x, y)| (x - y) * (x - y)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap()
                .0;
            counts[nearest] += 1;
        }
        // Binomial 4-sigma interval around p = 1/5.
        let p = 0.2;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - p).abs() < 4.0 * sd, "freq {freq}");
        }
    }
}
