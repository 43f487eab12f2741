//! The change-in-slope (CiS) statistic.
//!
//! For a covariate set `G` the statistic compares the squared density slope at each
//! fitted residual with the slope after the contribution of `G` is removed:
//!
//! ```text
//! CiS_G = (1/n) Σ_i |p'(ε̂_i)² − p'(ε̂_{i,−G})²| / (|p''(ε̂_{i,−G})| + δ)
//! ```
//!
//! where `ε̂_{i,−G} = ε̂_i + Σ_{j∈G} x_ij β̂_j` and `p', p''` are the MixHat derivatives at
//! the fitted `(ν̂, γ̂)`.

use crate::em::FitResult;
use crate::error::{domain, Error, Result};
use crate::model::{residuals, Dataset};
use crate::scalar::{count, Scalar};

/// CiS statistic for a single covariate.
pub fn cis_statistic<T: Scalar>(data: &Dataset<T>, fit: &FitResult<T>, j: usize, delta: T) -> Result<T> {
    cis_group_statistic(data, fit, &[j], delta)
}

/// CiS statistic with every covariate of `group` zeroed jointly.
pub fn cis_group_statistic<T: Scalar>(data: &Dataset<T>, fit: &FitResult<T>, group: &[usize], delta: T) -> Result<T> {
    if group.is_empty() {
        return Err(Error::Config("covariate group must not be empty".into()));
    }
    if let Some(&index) = group.iter().find(|&&j| j >= data.p()) {
        return Err(Error::IndexOutOfRange { index, len: data.p() });
    }
    if !(delta > T::zero()) {
        return Err(domain("delta", format!("must be positive, got {delta}")));
    }
    let params = &fit.params;
    let law = params.error_law()?;
    let resid = residuals(data, params.beta0, &params.beta)?;
    let mut reduced = resid.clone();
    let mut changed = false;
    for &j in group {
        let b = params.beta[j];
        if b != T::zero() {
            changed = true;
            for (r, &x) in reduced.iter_mut().zip(data.column(j)) {
                *r = *r + x * b;
            }
        }
    }
    if !changed {
        return Ok(T::zero());
    }
    let total: T = resid
        .iter()
        .zip(&reduced)
        .map(|(&e, &e_minus)| {
            let slope = law.d1(e);
            let slope_minus = law.d1(e_minus);
            (slope * slope - slope_minus * slope_minus).abs() / (law.d2(e_minus).abs() + delta)
        })
        .sum();
    Ok(total / count(data.n()))
}
