//! The MixHat (mixture of half-t) error distribution.
//!
//! A two-piece Student's t: the right half of `t_ν` is stretched by `γ` and the left
//! half compressed by `1/γ`, with a common normalizing constant `2 / (γ + 1/γ)` so the
//! density stays continuous at its mode, zero. `γ = 1` recovers `t_ν` itself.

use rand::Rng;

use crate::error::{domain, Result};
use crate::scalar::{lit, Scalar};

/// Log-density of Student's t with `nu` degrees of freedom.
pub fn student_t_logpdf<T: Scalar>(u: T, nu: T) -> Result<T> {
    if !(nu > T::zero()) || !nu.is_finite() {
        return Err(domain("nu", format!("must be positive and finite, got {nu}")));
    }
    Ok(t_log_norm(nu) - half(nu + T::one()) * log1p_sq_over(u, nu))
}

#[inline]
fn half<T: Scalar>(x: T) -> T {
    x * lit(0.5)
}

/// log Γ((ν+1)/2) − log Γ(ν/2) − ½ log(νπ)
fn t_log_norm<T: Scalar>(nu: T) -> T {
    half(nu + T::one()).ln_gamma() - half(nu).ln_gamma() - half((nu * T::PI()).ln())
}

/// `ln(1 + u²/ν)` without overflowing for huge `u`.
#[inline]
fn log1p_sq_over<T: Scalar>(u: T, nu: T) -> T {
    let a = u.abs() / nu.sqrt();
    if a < lit(1e100) {
        (T::one() + a * a).ln()
    } else {
        lit::<T>(2.0) * a.ln() + (a * a).recip().ln_1p()
    }
}

/// Shape pair `(ν, γ)` of a MixHat distribution.
///
/// The normalizing constant is cached at construction, so density evaluation inside
/// the estimation loops costs one logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixHatParams<T: Scalar> {
    nu: T,
    gamma: T,
    log_norm: T,
    half_nu_plus_one: T,
}

impl<T: Scalar> MixHatParams<T> {
    pub fn new(nu: T, gamma: T) -> Result<Self> {
        if !(nu > T::zero()) || !nu.is_finite() {
            return Err(domain("nu", format!("must be positive and finite, got {nu}")));
        }
        if !(gamma > T::zero()) || !gamma.is_finite() {
            return Err(domain("gamma", format!("must be positive and finite, got {gamma}")));
        }
        let log_mix = (lit::<T>(2.0) / (gamma + gamma.recip())).ln();
        Ok(Self { nu, gamma, log_norm: t_log_norm(nu) + log_mix, half_nu_plus_one: half(nu + T::one()) })
    }

    pub fn nu(&self) -> T {
        self.nu
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    /// Branch argument and chain-rule factor: `(ε/γ, 1/γ)` for `ε ≥ 0`, `(γε, γ)` otherwise.
    #[inline]
    fn branch(&self, eps: T) -> (T, T) {
        if eps >= T::zero() {
            (eps / self.gamma, self.gamma.recip())
        } else {
            (eps * self.gamma, self.gamma)
        }
    }

    /// Log-density, evaluated entirely in log space.
    #[inline]
    pub fn ln_pdf(&self, eps: T) -> T {
        let (u, _) = self.branch(eps);
        self.log_norm - self.half_nu_plus_one * log1p_sq_over(u, self.nu)
    }

    #[inline]
    pub fn pdf(&self, eps: T) -> T {
        self.ln_pdf(eps).exp()
    }

    /// First derivative of the density in `ε`. At `ε = 0` this is the right-branch value, 0.
    pub fn d1(&self, eps: T) -> T {
        let (u, scale) = self.branch(eps);
        self.pdf(eps) * self.score(u) * scale
    }

    /// Second derivative of the density in `ε`, right-branch convention at `ε = 0`.
    pub fn d2(&self, eps: T) -> T {
        let (u, scale) = self.branch(eps);
        let g = self.score(u);
        let denom = self.nu + u * u;
        let dg = -(self.nu + T::one()) * (self.nu - u * u) / (denom * denom);
        self.pdf(eps) * (g * g + dg) * scale * scale
    }

    /// Derivative of the log-density in `ε`; zero at the mode.
    #[inline]
    pub fn ln_pdf_derivative(&self, eps: T) -> T {
        let (u, scale) = self.branch(eps);
        self.score(u) * scale
    }

    /// Average magnitude of the log-density curvature at the mode over both branches.
    pub(crate) fn mode_curvature(&self) -> T {
        let g2 = self.gamma * self.gamma;
        (self.nu + T::one()) / self.nu * (g2 + g2.recip()) * lit(0.5)
    }

    /// `d/du log f_ν(u) = −(ν+1)u / (ν+u²)`
    #[inline]
    fn score(&self, u: T) -> T {
        -(self.nu + T::one()) * u / (self.nu + u * u)
    }

    /// Probability mass on `[0, ∞)`: `γ² / (1 + γ²)`.
    pub fn positive_mass(&self) -> T {
        let g2 = self.gamma * self.gamma;
        g2 / (T::one() + g2)
    }

    /// Draw one value: `+γ|T|` with probability `γ²/(1+γ²)`, else `−|T|/γ`, `T ~ t_ν`.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let right = T::sample_unit(rng) < self.positive_mass();
        let t = T::sample_student_t(rng, self.nu).abs();
        if right {
            t * self.gamma
        } else {
            -t / self.gamma
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<T> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }
}
