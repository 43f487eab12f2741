//! Data model, parameter blocks and the log-posterior pieces used by estimation.
//!
//! Every density here carries its full normalizing constant. The constants cancel in
//! optimization but keep the complete and marginal posteriors directly comparable.

use serde::{Deserialize, Serialize};

use crate::distribution::MixHatParams;
use crate::error::{domain, Error, Result};
use crate::scalar::{count, lit, Scalar};

/// Covariate matrix `X` (n × p, stored column-major) and response `y` (length n).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    n: usize,
    p: usize,
    x: Vec<T>,
    y: Vec<T>,
    names: Option<Vec<String>>,
}

impl<T: Scalar> Dataset<T> {
    /// Build from covariate columns, each of length `n`.
    pub fn from_columns(columns: Vec<Vec<T>>, response: Vec<T>) -> Result<Self> {
        let n = response.len();
        let p = columns.len();
        if n < 2 {
            return Err(Error::Dimension(format!("need at least 2 observations, got {n}")));
        }
        if p < 1 {
            return Err(Error::Dimension("need at least one covariate".into()));
        }
        let mut x = Vec::with_capacity(n * p);
        for (j, col) in columns.into_iter().enumerate() {
            if col.len() != n {
                return Err(Error::Dimension(format!("column {j} has {} entries, response has {n}", col.len())));
            }
            x.extend(col);
        }
        let data = Self::from_parts(n, p, x, response);
        data.check_finite()?;
        Ok(data)
    }

    /// Build from row-major observations `rows[i][j]`.
    pub fn from_rows(rows: &[Vec<T>], response: Vec<T>) -> Result<Self> {
        if rows.len() != response.len() {
            return Err(Error::Dimension(format!("{} rows but {} responses", rows.len(), response.len())));
        }
        let p = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Dimension(format!("row {i} has {} entries, expected {p}", rows[i].len())));
        }
        let columns = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self::from_columns(columns, response)
    }

    pub(crate) fn from_parts(n: usize, p: usize, x: Vec<T>, y: Vec<T>) -> Self {
        debug_assert_eq!(x.len(), n * p);
        Self { n, p, x, y, names: None }
    }

    fn check_finite(&self) -> Result<()> {
        if let Some(k) = self.x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dimension(format!("non-finite covariate at row {}, column {}", k % self.n, k / self.n)));
        }
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dimension(format!("non-finite response at row {i}")));
        }
        Ok(())
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p {
            return Err(Error::Dimension(format!("{} names for {} covariates", names.len(), self.p)));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[T] {
        &self.x[j * self.n..(j + 1) * self.n]
    }

    pub fn response(&self) -> &[T] {
        &self.y
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn row(&self, i: usize) -> Vec<T> {
        (0..self.p).map(|j| self.x[j * self.n + i]).collect()
    }

    /// Indices of columns whose entries are all equal.
    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.p)
            .filter(|&j| {
                let col = self.column(j);
                col.iter().all(|&v| v == col[0])
            })
            .collect()
    }

    /// Copy with the rows of the submatrix `columns` reordered jointly: row `i` of the
    /// submatrix becomes old row `order[i]`. Other columns and `y` are untouched.
    pub fn permute_rows_of(&self, columns: &[usize], order: &[usize]) -> Self {
        debug_assert_eq!(order.len(), self.n);
        let mut out = self.clone();
        for &j in columns {
            let src = self.column(j);
            let dst = &mut out.x[j * self.n..(j + 1) * self.n];
            for (d, &o) in dst.iter_mut().zip(order) {
                *d = src[o];
            }
        }
        out
    }

    /// Dataset restricted to the given covariate columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Self {
        let mut x = Vec::with_capacity(columns.len() * self.n);
        for &j in columns {
            x.extend_from_slice(self.column(j));
        }
        let mut out = Self::from_parts(self.n, columns.len(), x, self.y.clone());
        out.names = self.names.as_ref().map(|names| columns.iter().map(|&j| names[j].clone()).collect());
        out
    }

    /// Dataset restricted to the given observations.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut x = Vec::with_capacity(rows.len() * self.p);
        for j in 0..self.p {
            let col = self.column(j);
            x.extend(rows.iter().map(|&i| col[i]));
        }
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let mut out = Self::from_parts(rows.len(), self.p, x, y);
        out.names = self.names.clone();
        out
    }
}

/// The EM parameter block `(β₀, β, ν, γ, θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionParams<T> {
    pub beta0: T,
    pub beta: Vec<T>,
    pub nu: T,
    pub gamma: T,
    pub theta: T,
}

impl<T: Scalar> RegressionParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > T::zero()) || !self.nu.is_finite() {
            return Err(domain("nu", format!("must be positive, got {}", self.nu)));
        }
        if !(self.gamma > T::zero()) || !self.gamma.is_finite() {
            return Err(domain("gamma", format!("must be positive, got {}", self.gamma)));
        }
        if !(self.theta > T::zero() && self.theta < T::one()) {
            return Err(domain("theta", format!("must lie in (0, 1), got {}", self.theta)));
        }
        if !self.beta0.is_finite() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(domain("beta", "coefficients must be finite"));
        }
        Ok(())
    }

    pub fn error_law(&self) -> Result<MixHatParams<T>> {
        MixHatParams::new(self.nu, self.gamma)
    }

    /// Euclidean distance between two parameter blocks, all entries weighted equally.
    pub fn distance(&self, other: &Self) -> T {
        let sq = |a: T, b: T| (a - b) * (a - b);
        let mut s = sq(self.beta0, other.beta0)
            + sq(self.nu, other.nu)
            + sq(self.gamma, other.gamma)
            + sq(self.theta, other.theta);
        for (&a, &b) in self.beta.iter().zip(&other.beta) {
            s = s + sq(a, b);
        }
        s.sqrt()
    }
}

/// Prior constants. `b = None` means "the number of covariates".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams<T> {
    /// Spike rate.
    pub t0: T,
    /// Slab rate.
    pub t1: T,
    pub a: T,
    pub b: Option<T>,
    /// Gamma prior on γ: shape.
    pub c: T,
    /// Gamma prior on γ: rate.
    pub d: T,
    pub beta0_prior_variance: T,
}

impl<T: Scalar> Hyperparams<T> {
    /// Defaults `a = 1`, `b = p`, `c = d = 1e-4`, intercept prior variance `1e6`.
    pub fn new(t0: T, t1: T) -> Self {
        Self { t0, t1, a: T::one(), b: None, c: lit(1e-4), d: lit(1e-4), beta0_prior_variance: lit(1e6) }
    }

    pub fn b_for(&self, p: usize) -> T {
        self.b.unwrap_or_else(|| count(p))
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("t0", self.t0),
            ("t1", self.t1),
            ("a", self.a),
            ("c", self.c),
            ("d", self.d),
            ("beta0_prior_variance", self.beta0_prior_variance),
        ];
        for (name, v) in checks {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(domain(name, format!("must be positive, got {v}")));
            }
        }
        if let Some(b) = self.b {
            if !(b > T::zero()) || !b.is_finite() {
                return Err(domain("b", format!("must be positive, got {b}")));
            }
        }
        Ok(())
    }
}

/// Inclusion indicators `λ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorVector(pub Vec<bool>);

impl IndicatorVector {
    pub fn included(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// `ε_i = y_i − β₀ − x_iᵀβ`.
pub fn residuals<T: Scalar>(data: &Dataset<T>, beta0: T, beta: &[T]) -> Result<Vec<T>> {
    if beta.len() != data.p() {
        return Err(Error::Dimension(format!("beta has length {}, data has {} covariates", beta.len(), data.p())));
    }
    Ok(residuals_unchecked(data, beta0, beta))
}

pub(crate) fn residuals_unchecked<T: Scalar>(data: &Dataset<T>, beta0: T, beta: &[T]) -> Vec<T> {
    let mut r: Vec<T> = data.response().iter().map(|&y| y - beta0).collect();
    for (j, &b) in beta.iter().enumerate() {
        if b != T::zero() {
            for (ri, &x) in r.iter_mut().zip(data.column(j)) {
                *ri = *ri - x * b;
            }
        }
    }
    r
}

pub(crate) fn sum_ln_pdf<T: Scalar>(law: &MixHatParams<T>, residuals: &[T]) -> T {
    residuals.iter().map(|&e| law.ln_pdf(e)).sum()
}

/// Σ_i log p(ε_i | ν, γ), normalizing constants included.
pub fn log_likelihood<T: Scalar>(data: &Dataset<T>, params: &RegressionParams<T>) -> Result<T> {
    let law = params.error_law()?;
    let r = residuals(data, params.beta0, &params.beta)?;
    Ok(sum_ln_pdf(&law, &r))
}

/// log of the Laplace density `(t/2)·exp(−t|s|)`.
#[inline]
pub(crate) fn ln_laplace<T: Scalar>(s: T, rate: T) -> T {
    (rate * lit(0.5)).ln() - rate * s.abs()
}

pub(crate) fn ln_normal<T: Scalar>(x: T, variance: T) -> T {
    -lit::<T>(0.5) * ((T::TAU() * variance).ln() + x * x / variance)
}

/// Log-normal prior on ν with log-location 1 and log-scale 1.
pub(crate) fn ln_nu_prior<T: Scalar>(nu: T) -> T {
    let z = nu.ln() - T::one();
    -nu.ln() - lit::<T>(0.5) * T::TAU().ln() - lit::<T>(0.5) * z * z
}

/// Gamma(shape `c`, rate `d`) prior on γ.
pub(crate) fn ln_gamma_prior<T: Scalar>(gamma: T, c: T, d: T) -> T {
    c * d.ln() - c.ln_gamma() + (c - T::one()) * gamma.ln() - d * gamma
}

pub(crate) fn ln_beta_fn<T: Scalar>(a: T, b: T) -> T {
    a.ln_gamma() + b.ln_gamma() - (a + b).ln_gamma()
}

/// Beta(a, b) prior on θ.
pub(crate) fn ln_theta_prior<T: Scalar>(theta: T, a: T, b: T) -> T {
    (a - T::one()) * theta.ln() + (b - T::one()) * (T::one() - theta).ln() - ln_beta_fn(a, b)
}

/// `log{(1−θ)ψ(β|t₀) + θψ(β|t₁)}`, evaluated with log-sum-exp.
pub(crate) fn ln_spike_slab<T: Scalar>(beta: T, theta: T, t0: T, t1: T) -> T {
    let spike = (T::one() - theta).ln() + ln_laplace(beta, t0);
    let slab = theta.ln() + ln_laplace(beta, t1);
    let m = spike.max(slab);
    m + ((spike - m).exp() + (slab - m).exp()).ln()
}

/// Log of the complete-data prior `π(β₀)π(β|λ)π(λ|θ)π(θ)π(ν)π(γ)`.
pub fn log_prior_complete<T: Scalar>(
    params: &RegressionParams<T>,
    hyper: &Hyperparams<T>,
    lambda: &IndicatorVector,
) -> Result<T> {
    params.validate()?;
    hyper.validate()?;
    let p = params.beta.len();
    if lambda.0.len() != p {
        return Err(Error::Dimension(format!("lambda has length {}, beta has {p}", lambda.0.len())));
    }
    let b = hyper.b_for(p);
    let beta_part: T =
        params.beta.iter().zip(&lambda.0).map(|(&bj, &on)| ln_laplace(bj, if on { hyper.t1 } else { hyper.t0 })).sum();
    let k = count::<T>(lambda.included());
    let theta = params.theta;
    let theta_part = (k + hyper.a - T::one()) * theta.ln()
        + (count::<T>(p) - k + b - T::one()) * (T::one() - theta).ln()
        - ln_beta_fn(hyper.a, b);
    Ok(ln_normal(params.beta0, hyper.beta0_prior_variance)
        + beta_part
        + theta_part
        + ln_nu_prior(params.nu)
        + ln_gamma_prior(params.gamma, hyper.c, hyper.d))
}

/// Log posterior of `(β₀, β, ν, γ, θ)` with `λ` summed out. This is the quantity EM
/// increases monotonically.
pub fn log_marginal_posterior<T: Scalar>(
    data: &Dataset<T>,
    params: &RegressionParams<T>,
    hyper: &Hyperparams<T>,
) -> Result<T> {
    params.validate()?;
    hyper.validate()?;
    let loglik = log_likelihood(data, params)?;
    Ok(loglik + log_prior_marginal(params, hyper))
}

pub(crate) fn log_prior_marginal<T: Scalar>(params: &RegressionParams<T>, hyper: &Hyperparams<T>) -> T {
    let p = params.beta.len();
    let beta_part: T = params.beta.iter().map(|&bj| ln_spike_slab(bj, params.theta, hyper.t0, hyper.t1)).sum();
    ln_normal(params.beta0, hyper.beta0_prior_variance)
        + beta_part
        + ln_theta_prior(params.theta, hyper.a, hyper.b_for(p))
        + ln_nu_prior(params.nu)
        + ln_gamma_prior(params.gamma, hyper.c, hyper.d)
}
