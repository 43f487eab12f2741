//! MAP estimation of `(β₀, β, ν, γ, θ)` by expectation-maximization, with the
//! inclusion indicators `λ` as the missing data.
//!
//! Each iteration computes the inclusion probabilities `p̂_j` (E-step) and then updates
//! the parameters in the order β, β₀, ν, γ, θ (M-step). The β block is a weighted-L1
//! penalized modal-t likelihood, maximized by cyclic coordinate ascent where every
//! coordinate compares the kink at zero with the best point on either side of it.

use serde::{Deserialize, Serialize};

use crate::distribution::MixHatParams;
use crate::error::{domain, Error, Result};
use crate::line_search::{maximize, SearchOptions};
use crate::model::{
    self, ln_beta_fn, ln_gamma_prior, ln_laplace, ln_normal, ln_nu_prior, log_prior_marginal, residuals,
    residuals_unchecked, sum_ln_pdf, Dataset, Hyperparams, RegressionParams,
};
use crate::scalar::{count, lit, Scalar};

const NU_BOUNDS: (f64, f64) = (0.05, 200.0);
const GAMMA_BOUNDS: (f64, f64) = (0.05, 20.0);
const THETA_CLAMP: f64 = 1e-8;
const INITIAL_LOG_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig<T> {
    /// Stop once the L2 change of the parameter block falls below this.
    pub convergence_tol: T,
    pub max_iterations: usize,
    /// Stop β sweeps once no coordinate moves more than this.
    pub coordinate_sweep_tol: T,
    pub max_sweeps_per_mstep: usize,
    /// Cap on geometric bracket expansions in every 1-D search.
    pub line_search_expansions: usize,
}

impl<T: Scalar> Default for EmConfig<T> {
    fn default() -> Self {
        Self {
            convergence_tol: lit(1e-7),
            max_iterations: 500,
            coordinate_sweep_tol: lit(1e-6),
            max_sweeps_per_mstep: 50,
            line_search_expansions: 30,
        }
    }
}

impl<T: Scalar> EmConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.convergence_tol > T::zero() && self.convergence_tol < T::one()) {
            return Err(Error::Config("convergence_tol must lie in (0, 1)".into()));
        }
        if !(self.coordinate_sweep_tol > T::zero()) {
            return Err(Error::Config("coordinate_sweep_tol must be positive".into()));
        }
        if self.max_iterations == 0 || self.max_sweeps_per_mstep == 0 || self.line_search_expansions == 0 {
            return Err(Error::Config("iteration caps must be positive".into()));
        }
        Ok(())
    }

    fn search(&self) -> SearchOptions<T> {
        SearchOptions::with_expansions(self.line_search_expansions)
    }
}

/// Outcome of an EM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T> {
    pub params: RegressionParams<T>,
    /// E-step inclusion probabilities at the final estimate.
    pub inclusion_probs: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    pub final_marginal_log_posterior: T,
    /// Marginal log posterior at the initial point and after every iteration.
    pub objective_trace: Vec<T>,
    /// 1-D updates of ν or γ that kept the previous value because the search found
    /// nothing at least as good.
    pub stalled_updates: usize,
}

/// Posterior probability that `λ_j = 1` given `β_j` and `θ`.
pub fn e_step_inclusion_prob<T: Scalar>(beta_j: T, theta: T, t0: T, t1: T) -> Result<T> {
    if !(theta > T::zero() && theta < T::one()) {
        return Err(domain("theta", format!("must lie in (0, 1), got {theta}")));
    }
    if !(t0 > T::zero() && t1 > T::zero()) {
        return Err(domain("t0/t1", "rates must be positive"));
    }
    Ok(inclusion_prob(beta_j, theta, t0, t1))
}

#[inline]
fn inclusion_prob<T: Scalar>(beta_j: T, theta: T, t0: T, t1: T) -> T {
    if t0 == t1 {
        // Spike and slab coincide; the posterior odds equal the prior odds.
        return theta;
    }
    let log_odds = (t1 / t0).ln() + theta.ln() - (T::one() - theta).ln() + (t0 - t1) * beta_j.abs();
    if log_odds >= T::zero() {
        T::one() / (T::one() + (-log_odds).exp())
    } else {
        let e = log_odds.exp();
        e / (T::one() + e)
    }
}

fn e_step<T: Scalar>(params: &RegressionParams<T>, hyper: &Hyperparams<T>) -> Vec<T> {
    params.beta.iter().map(|&b| inclusion_prob(b, params.theta, hyper.t0, hyper.t1)).collect()
}

/// Expected complete-data log posterior `Q` given inclusion probabilities `p̂`, with all
/// normalizing constants included.
pub fn compute_q_objective<T: Scalar>(
    data: &Dataset<T>,
    params: &RegressionParams<T>,
    p_hat: &[T],
    hyper: &Hyperparams<T>,
) -> Result<T> {
    params.validate()?;
    hyper.validate()?;
    let p = data.p();
    check_p_hat(p_hat, p)?;
    let (t0, t1, theta) = (hyper.t0, hyper.t1, params.theta);
    let b = hyper.b_for(p);

    let loglik = model::log_likelihood(data, params)?;
    let intercept = ln_normal(params.beta0, hyper.beta0_prior_variance);
    let spike: T = params.beta.iter().map(|&bj| ln_laplace(bj, t0)).sum();
    let slab_correction: T =
        params.beta.iter().zip(p_hat).map(|(&bj, &pj)| pj * ((t1 / t0).ln() - (t1 - t0) * bj.abs())).sum();
    let total_p: T = p_hat.iter().copied().sum();
    let theta_terms = (theta / (T::one() - theta)).ln() * total_p
        + (hyper.a - T::one()) * theta.ln()
        + (b - T::one() + count(p)) * (T::one() - theta).ln()
        - ln_beta_fn(hyper.a, b);
    Ok(loglik
        + intercept
        + spike
        + slab_correction
        + theta_terms
        + ln_nu_prior(params.nu)
        + ln_gamma_prior(params.gamma, hyper.c, hyper.d))
}

fn check_p_hat<T: Scalar>(p_hat: &[T], p: usize) -> Result<()> {
    if p_hat.len() != p {
        return Err(Error::Dimension(format!("p_hat has length {}, expected {p}", p_hat.len())));
    }
    if p_hat.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(domain("p_hat", "entries must lie in [0, 1]"));
    }
    Ok(())
}

/// β maximizing the modal-t log-likelihood minus `Σ_j w_j|β_j|`, with
/// `w_j = (1 − p̂_j)t₀ + p̂_j t₁`, starting from `state.beta`.
pub fn m_step_beta<T: Scalar>(
    data: &Dataset<T>,
    state: &RegressionParams<T>,
    p_hat: &[T],
    hyper: &Hyperparams<T>,
    config: &EmConfig<T>,
) -> Result<Vec<T>> {
    state.validate()?;
    check_p_hat(p_hat, data.p())?;
    let law = state.error_law()?;
    let weights = penalty_weights(p_hat, hyper);
    let mut beta = state.beta.clone();
    let mut resid = residuals(data, state.beta0, &beta)?;
    coordinate_ascent(data, &law, &weights, &mut beta, &mut resid, config);
    Ok(beta)
}

fn penalty_weights<T: Scalar>(p_hat: &[T], hyper: &Hyperparams<T>) -> Vec<T> {
    p_hat.iter().map(|&pj| (T::one() - pj) * hyper.t0 + pj * hyper.t1).collect()
}

/// Cyclic sweeps over j = 0..p. `resid` must hold the residuals of `beta` on entry and
/// is kept in sync.
fn coordinate_ascent<T: Scalar>(
    data: &Dataset<T>,
    law: &MixHatParams<T>,
    weights: &[T],
    beta: &mut [T],
    resid: &mut [T],
    config: &EmConfig<T>,
) {
    let opts = config.search();
    let mut partial = vec![T::zero(); data.n()];
    for _ in 0..config.max_sweeps_per_mstep {
        let mut max_change = T::zero();
        for j in 0..beta.len() {
            let col = data.column(j);
            let old = beta[j];
            for ((pr, &r), &x) in partial.iter_mut().zip(resid.iter()).zip(col) {
                *pr = r + x * old;
            }
            let new = update_coordinate(col, &partial, old, weights[j], law, &opts);
            if new != old {
                for ((r, &pr), &x) in resid.iter_mut().zip(&partial).zip(col) {
                    *r = pr - x * new;
                }
                beta[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change < config.coordinate_sweep_tol {
            break;
        }
    }
}

/// Maximize `h(b) = Σ_i log p(partial_i − x_i b) − w|b|` over one coordinate.
///
/// Candidates: `b = 0` exactly, the best point on `(0, ∞)` and the best on `(−∞, 0)`.
/// A side is searched from the current value when it lies there, or from zero when the
/// one-sided slope at zero points into that side.
fn update_coordinate<T: Scalar>(
    col: &[T],
    partial: &[T],
    current: T,
    weight: T,
    law: &MixHatParams<T>,
    opts: &SearchOptions<T>,
) -> T {
    let loglik = |b: T| -> T { partial.iter().zip(col).map(|(&pr, &x)| law.ln_pdf(pr - x * b)).sum::<T>() };
    let objective = |b: T| loglik(b) - weight * b.abs();

    let col_sq: T = col.iter().map(|&x| x * x).sum();
    if col_sq == T::zero() {
        return T::zero();
    }
    let curvature = col_sq * law.mode_curvature();
    // d/db of the log-likelihood at b: Σ −x_i ℓ'(partial_i − x_i b).
    let slope_at =
        |b: T| -> T { partial.iter().zip(col).map(|(&pr, &x)| -x * law.ln_pdf_derivative(pr - x * b)).sum::<T>() };
    // A Newton step below the search resolution means the side optimum is already here.
    let settled = |step: T, at: T| step.abs() <= opts.rel_tol * at.abs() + opts.abs_tol;
    let min_step = lit::<T>(1e-7) * (T::one() + current.abs());

    let slope_zero = slope_at(T::zero());
    let mut h_zero = None;
    let mut best: Option<(T, T)> = None;

    for side in [T::one(), -T::one()] {
        // Work in t = side·b ≥ 0.
        let along = |t: T| objective(side * t);
        let (t, value) = if current * side > T::zero() {
            let start = current * side;
            let f_start = along(start);
            let step = (side * slope_at(current) - weight) / curvature;
            if settled(step, start) {
                (start, f_start)
            } else {
                let step = signed_max(step, min_step);
                maximize(along, start, f_start, step, T::zero(), T::infinity(), opts)
            }
        } else {
            let outward = side * slope_zero - weight;
            if outward <= T::zero() {
                continue;
            }
            let f_zero = *h_zero.get_or_insert_with(|| objective(T::zero()));
            let step = (outward / curvature).max(min_step);
            maximize(along, T::zero(), f_zero, step, T::zero(), T::infinity(), opts)
        };
        if t > T::zero() && best.is_none_or(|(_, v)| value > v) {
            best = Some((side * t, value));
        }
    }
    match best {
        Some((b, value)) if value > h_zero.unwrap_or_else(|| objective(T::zero())) => b,
        _ => T::zero(),
    }
}

#[inline]
fn signed_max<T: Scalar>(step: T, min_abs: T) -> T {
    if step.abs() >= min_abs {
        step
    } else if step >= T::zero() {
        min_abs
    } else {
        -min_abs
    }
}

/// Intercept maximizing the log-likelihood plus its Gaussian prior, other parameters fixed.
pub fn update_beta0<T: Scalar>(data: &Dataset<T>, state: &RegressionParams<T>, hyper: &Hyperparams<T>) -> Result<T> {
    state.validate()?;
    hyper.validate()?;
    let law = state.error_law()?;
    let mut resid = residuals(data, state.beta0, &state.beta)?;
    Ok(beta0_step(&law, &mut resid, state.beta0, hyper, &EmConfig::default().search()))
}

/// `resid` holds residuals at `beta0` and is updated in place.
fn beta0_step<T: Scalar>(
    law: &MixHatParams<T>,
    resid: &mut [T],
    beta0: T,
    hyper: &Hyperparams<T>,
    opts: &SearchOptions<T>,
) -> T {
    let var = hyper.beta0_prior_variance;
    let objective = |b: T| -> T {
        let shift = b - beta0;
        resid.iter().map(|&r| law.ln_pdf(r - shift)).sum::<T>() - b * b / (lit::<T>(2.0) * var)
    };
    let slope = resid.iter().map(|&r| law.ln_pdf_derivative(r)).sum::<T>() - beta0 / var;
    let curvature = count::<T>(resid.len()) * law.mode_curvature() + var.recip();
    let step = slope / curvature;
    if step.abs() <= opts.rel_tol * beta0.abs() + opts.abs_tol {
        return beta0;
    }
    let f0 = objective(beta0);
    let step = signed_max(step, lit::<T>(1e-7) * (T::one() + beta0.abs()));
    let (b, value) = maximize(objective, beta0, f0, step, T::neg_infinity(), T::infinity(), opts);
    if value > f0 && b != beta0 {
        let shift = b - beta0;
        resid.iter_mut().for_each(|r| *r = *r - shift);
        b
    } else {
        beta0
    }
}

/// Degrees of freedom maximizing the log-likelihood plus the log-normal prior.
pub fn update_nu<T: Scalar>(data: &Dataset<T>, state: &RegressionParams<T>, _hyper: &Hyperparams<T>) -> Result<T> {
    state.validate()?;
    let resid = residuals(data, state.beta0, &state.beta)?;
    Ok(nu_step(&resid, state.nu, state.gamma, lit(INITIAL_LOG_STEP), &EmConfig::default().search()).0)
}

/// Returns the new value and whether the search stalled.
fn nu_step<T: Scalar>(resid: &[T], nu: T, gamma: T, step: T, opts: &SearchOptions<T>) -> (T, bool) {
    let objective = |log_nu: T| -> T {
        let v = log_nu.exp();
        match MixHatParams::new(v, gamma) {
            Ok(law) => sum_ln_pdf(&law, resid) + ln_nu_prior(v),
            Err(_) => T::neg_infinity(),
        }
    };
    log_scale_step(objective, nu, NU_BOUNDS, step, opts)
}

/// Skew parameter maximizing the log-likelihood plus the gamma prior.
pub fn update_gamma<T: Scalar>(data: &Dataset<T>, state: &RegressionParams<T>, hyper: &Hyperparams<T>) -> Result<T> {
    state.validate()?;
    hyper.validate()?;
    let resid = residuals(data, state.beta0, &state.beta)?;
    Ok(gamma_step(&resid, state.nu, state.gamma, hyper, lit(INITIAL_LOG_STEP), &EmConfig::default().search()).0)
}

fn gamma_step<T: Scalar>(
    resid: &[T],
    nu: T,
    gamma: T,
    hyper: &Hyperparams<T>,
    step: T,
    opts: &SearchOptions<T>,
) -> (T, bool) {
    let objective = |log_gamma: T| -> T {
        let g = log_gamma.exp();
        match MixHatParams::new(nu, g) {
            Ok(law) => sum_ln_pdf(&law, resid) + ln_gamma_prior(g, hyper.c, hyper.d),
            Err(_) => T::neg_infinity(),
        }
    };
    log_scale_step(objective, gamma, GAMMA_BOUNDS, step, opts)
}

fn log_scale_step<T: Scalar, F: Fn(T) -> T>(
    objective: F,
    current: T,
    bounds: (f64, f64),
    step: T,
    opts: &SearchOptions<T>,
) -> (T, bool) {
    let (lo, hi) = (lit::<T>(bounds.0).ln(), lit::<T>(bounds.1).ln());
    let here = current.ln();
    let f_here = objective(here);
    let start = here.max(lo).min(hi);
    let f_start = if start == here { f_here } else { objective(start) };
    let (s, value) = maximize(&objective, start, f_start, step, lo, hi, opts);
    if value > f_here {
        (s.exp(), false)
    } else {
        (current, value < f_here)
    }
}

/// Initial bracket step for the next log-scale search: twice the last move.
fn next_log_step<T: Scalar>(old: T, new: T) -> T {
    (lit::<T>(2.0) * (new.ln() - old.ln()).abs()).max(lit(1e-7)).min(lit(0.5))
}

/// Closed-form maximizer of the θ terms, clamped to `[1e−8, 1 − 1e−8]`.
pub fn update_theta<T: Scalar>(p_hat: &[T], a: T, b: T) -> Result<T> {
    let p = p_hat.len();
    let denom = a + b + count(p) - lit(2.0);
    if !(denom > T::zero()) {
        return Err(domain("a + b + p - 2", format!("must be positive, got {denom}")));
    }
    let total: T = p_hat.iter().copied().sum();
    let clamp: T = lit(THETA_CLAMP);
    Ok(((total + a - T::one()) / denom).max(clamp).min(T::one() - clamp))
}

fn median<T: Scalar>(values: &[T]) -> T {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite response"));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) * lit(0.5)
    }
}

/// Starting point: β₀ = median(y), β = 0, ν = 5, γ = 1, θ = 0.5.
pub fn default_init<T: Scalar>(data: &Dataset<T>) -> RegressionParams<T> {
    RegressionParams {
        beta0: median(data.response()),
        beta: vec![T::zero(); data.p()],
        nu: lit(5.0),
        gamma: T::one(),
        theta: lit(0.5),
    }
}

/// Run EM to convergence (or `max_iterations`), optionally warm-started from `init`.
pub fn fit<T: Scalar>(
    data: &Dataset<T>,
    hyper: &Hyperparams<T>,
    config: &EmConfig<T>,
    init: Option<&RegressionParams<T>>,
) -> Result<FitResult<T>> {
    hyper.validate()?;
    config.validate()?;
    let mut params = match init {
        Some(p) => p.clone(),
        None => default_init(data),
    };
    params.validate()?;
    if params.beta.len() != data.p() {
        return Err(Error::Dimension(format!(
            "initial beta has length {}, data has {} covariates",
            params.beta.len(),
            data.p()
        )));
    }
    let b = hyper.b_for(data.p());
    let opts = config.search();

    let mut resid = residuals_unchecked(data, params.beta0, &params.beta);
    let marginal = |params: &RegressionParams<T>, resid: &[T]| -> Result<T> {
        let law = params.error_law()?;
        Ok(sum_ln_pdf(&law, resid) + log_prior_marginal(params, hyper))
    };
    let initial = marginal(&params, &resid)?;
    if !initial.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    let mut trace = vec![initial];
    let mut converged = false;
    let mut iterations = 0;
    let mut stalled = 0;
    let mut nu_step_size = lit::<T>(INITIAL_LOG_STEP);
    let mut gamma_step_size = lit::<T>(INITIAL_LOG_STEP);

    while iterations < config.max_iterations {
        iterations += 1;
        let previous = params.clone();

        let p_hat = e_step(&params, hyper);
        let weights = penalty_weights(&p_hat, hyper);

        let law = params.error_law()?;
        coordinate_ascent(data, &law, &weights, &mut params.beta, &mut resid, config);
        params.beta0 = beta0_step(&law, &mut resid, params.beta0, hyper, &opts);

        let (nu, nu_stalled) = nu_step(&resid, params.nu, params.gamma, nu_step_size, &opts);
        nu_step_size = next_log_step(params.nu, nu);
        params.nu = nu;
        let (gamma, gamma_stalled) = gamma_step(&resid, params.nu, params.gamma, hyper, gamma_step_size, &opts);
        gamma_step_size = next_log_step(params.gamma, gamma);
        params.gamma = gamma;
        stalled += usize::from(nu_stalled) + usize::from(gamma_stalled);

        params.theta = update_theta(&p_hat, hyper.a, b)?;

        let value = marginal(&params, &resid)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { iteration: iterations });
        }
        trace.push(value);

        if params.distance(&previous) < config.convergence_tol {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        inclusion_probs: e_step(&params, hyper),
        final_marginal_log_posterior: *trace.last().expect("trace holds the initial value"),
        params,
        iterations,
        converged,
        objective_trace: trace,
        stalled_updates: stalled,
    })
}
