//! Scalar RBF kernel with exact first- and second-order derivative
//! quantities, plus derivative estimators that only need black-box kernel
//! evaluations.
//!
//! The RBF kernel is `k(x, y) = exp(-||x - y||^2 / gamma)`. Writing
//! `delta = x - y` and `a = (2/gamma) k`, every derivative of interest has a
//! closed form:
//!
//! * gradient (w.r.t. `x`): `-a * delta`
//! * Hessian: `a * ((2/gamma) delta delta^T - I)`, applied matrix-free
//! * Laplacian: `-a * (d - (2/gamma) ||delta||^2)`
//!
//! The Hessian is never materialized; [`RbfDerivativeBundle::hessian_apply`]
//! applies the rank-structured form in O(d). For kernels without closed
//! forms, [`fd_hvp`] provides a central-difference Hessian-vector product and
//! [`hutchinson_laplacian`] a Rademacher-probe Laplacian estimate; both
//! accept any kernel through plain closures, so feature-space kernels plug in
//! without changes here.

use rand::Rng;

use crate::linalg::{check_dims, dot, squared_norm, sub};
use crate::{Error, Result, Scalar};

/// Finite-difference step used by the guidance pipeline unless overridden.
pub const DEFAULT_FD_EPSILON: f64 = 1e-3;

/// Rademacher probe count used by the guidance pipeline unless overridden.
pub const DEFAULT_HUTCHINSON_PROBES: usize = 25;

/// Black-box kernel contract: value at a point pair and gradient with
/// respect to the first argument.
pub trait Kernel<T: Scalar> {
    fn value(&self, x: &[T], y: &[T]) -> T;
    fn grad_x(&self, x: &[T], y: &[T]) -> Vec<T>;
}

/// The RBF kernel as a black-box [`Kernel`], for exercising the estimator
/// path against the closed forms.
#[derive(Debug, Clone, Copy)]
pub struct RbfKernel<T> {
    gamma: T,
}

impl<T: Scalar> RbfKernel<T> {
    pub fn new(gamma: T) -> Result<Self> {
        check_bandwidth(gamma)?;
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }
}

impl<T: Scalar> Kernel<T> for RbfKernel<T> {
    fn value(&self, x: &[T], y: &[T]) -> T {
        (-squared_norm(&sub(x, y)) / self.gamma).exp()
    }

    fn grad_x(&self, x: &[T], y: &[T]) -> Vec<T> {
        let delta = sub(x, y);
        let scale = T::real(-2.0) / self.gamma * self.value(x, y);
        delta.iter().map(|&d| scale * d).collect()
    }
}

fn check_bandwidth<T: Scalar>(gamma: T) -> Result<()> {
    if gamma <= T::zero() || !gamma.is_finite() {
        return Err(Error::NonPositiveBandwidth(gamma.as_f64()));
    }
    Ok(())
}

fn check_step<T: Scalar>(epsilon: T) -> Result<()> {
    if epsilon <= T::zero() || !epsilon.is_finite() {
        return Err(Error::NonPositiveStep(epsilon.as_f64()));
    }
    Ok(())
}

/// Evaluates the RBF kernel `exp(-||x - y||^2 / gamma)`.
pub fn rbf_eval<T: Scalar>(x: &[T], y: &[T], gamma: T) -> Result<T> {
    check_bandwidth(gamma)?;
    check_dims(x.len(), y.len())?;
    Ok((-squared_norm(&sub(x, y)) / gamma).exp())
}

/// Kernel value together with every derivative quantity the guidance field
/// needs, all in closed form.
///
/// `scale` is `(2/gamma) * value`; the Hessian equals
/// `scale * ((2/gamma) delta delta^T - I)` and is only ever applied to
/// vectors, never materialized.
#[derive(Debug, Clone)]
pub struct RbfDerivativeBundle<T> {
    /// `k(x, y)`, in `(0, 1]`.
    pub value: T,
    /// Gradient of the kernel with respect to `x`: `-(2/gamma) k delta`.
    pub gradient_x: Vec<T>,
    /// Laplacian with respect to `x`.
    pub laplacian_x: T,
    scale: T,
    gamma: T,
    delta: Vec<T>,
}

impl<T: Scalar> RbfDerivativeBundle<T> {
    /// `delta = x - y`.
    pub fn delta(&self) -> &[T] {
        &self.delta
    }

    /// The rank-structure scalar `a = (2/gamma) k`.
    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.delta.len()
    }

    /// Applies the Hessian to `v` without materializing it:
    /// `H v = a ((2/gamma) <delta, v> delta - v)`.
    pub fn hessian_apply(&self, v: &[T]) -> Result<Vec<T>> {
        check_dims(self.delta.len(), v.len())?;
        let two_over_gamma = T::real(2.0) / self.gamma;
        let coeff = self.scale * two_over_gamma * dot(&self.delta, v);
        Ok(self
            .delta
            .iter()
            .zip(v)
            .map(|(&d, &vi)| coeff * d - self.scale * vi)
            .collect())
    }
}

/// Evaluates the kernel and all closed-form derivative quantities at once.
pub fn rbf_bundle<T: Scalar>(x: &[T], y: &[T], gamma: T) -> Result<RbfDerivativeBundle<T>> {
    check_bandwidth(gamma)?;
    check_dims(x.len(), y.len())?;
    let delta = sub(x, y);
    let d2 = squared_norm(&delta);
    let value = (-d2 / gamma).exp();
    let two_over_gamma = T::real(2.0) / gamma;
    let scale = two_over_gamma * value;
    let gradient_x = delta.iter().map(|&d| -scale * d).collect();
    let dim = T::real(x.len() as f64);
    let laplacian_x = -scale * (dim - two_over_gamma * d2);
    Ok(RbfDerivativeBundle {
        value,
        gradient_x,
        laplacian_x,
        scale,
        gamma,
        delta,
    })
}

/// Central-difference Hessian-vector product from a black-box kernel
/// gradient: `[grad k(x + eps v, y) - grad k(x - eps v, y)] / (2 eps)`.
pub fn fd_hvp<T, G>(grad: G, x: &[T], y: &[T], v: &[T], epsilon: T) -> Result<Vec<T>>
where
    T: Scalar,
    G: Fn(&[T], &[T]) -> Vec<T>,
{
    check_step(epsilon)?;
    check_dims(x.len(), y.len())?;
    check_dims(x.len(), v.len())?;
    let plus: Vec<T> = x.iter().zip(v).map(|(&xi, &vi)| xi + epsilon * vi).collect();
    let minus: Vec<T> = x.iter().zip(v).map(|(&xi, &vi)| xi - epsilon * vi).collect();
    let gp = grad(&plus, y);
    let gm = grad(&minus, y);
    check_dims(gp.len(), x.len())?;
    check_dims(gm.len(), x.len())?;
    let half = T::real(0.5) / epsilon;
    Ok(gp.iter().zip(&gm).map(|(&p, &m)| (p - m) * half).collect())
}

/// Hutchinson Laplacian estimate from black-box kernel values:
/// the mean over `probes` Rademacher vectors `r` of the second difference
/// `[k(x + eps r, y) - 2 k(x, y) + k(x - eps r, y)] / eps^2`.
///
/// Rademacher entries are independent fair signs drawn from `rng`; probe
/// vectors are not reused between calls, so estimates for distinct particle
/// pairs stay uncorrelated when each pair gets its own stream.
pub fn hutchinson_laplacian<T, V, R>(
    value: V,
    x: &[T],
    y: &[T],
    epsilon: T,
    probes: usize,
    rng: &mut R,
) -> Result<T>
where
    T: Scalar,
    V: Fn(&[T], &[T]) -> T,
    R: Rng + ?Sized,
{
    check_step(epsilon)?;
    check_dims(x.len(), y.len())?;
    if probes == 0 {
        return Err(Error::ZeroProbes);
    }
    let center = T::real(2.0) * value(x, y);
    let inv_eps2 = (epsilon * epsilon).recip();
    let mut plus = vec![T::zero(); x.len()];
    let mut minus = vec![T::zero(); x.len()];
    let mut total = T::zero();
    for _ in 0..probes {
        for i in 0..x.len() {
            let sign = if rng.gen::<bool>() { T::one() } else { -T::one() };
            plus[i] = x[i] + epsilon * sign;
            minus[i] = x[i] - epsilon * sign;
        }
        total += (value(&plus, y) - center + value(&minus, y)) * inv_eps2;
    }
    Ok(total / T::real(probes as f64))
}
