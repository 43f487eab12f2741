//! Monte-Carlo studies: data generation for the benchmark designs, selection metrics and a
//! replicate runner that aggregates means with Monte-Carlo standard errors.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::MixHatParams;
use crate::em::{self, EmConfig};
use crate::error::{Error, Result};
use crate::model::{Dataset, Hyperparams};
use crate::scalar::{count, lit, Scalar};
use crate::seed::{derive_seed, stage, stream};
use crate::selection::{tdvs_select, SelectionConfig};
use crate::tuning::{cv_tune_t0, TuningGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateSpec<T> {
    /// i.i.d. standard normal columns.
    Independent,
    /// Consecutive column pairs with unit variances and the given correlation; an odd
    /// trailing column is drawn independently.
    PairedBlocks { correlation: T },
}

impl<T: Scalar> CovariateSpec<T> {
    /// Whether the last column has no partner under this spec.
    pub fn trailing_unpaired(&self, p: usize) -> bool {
        matches!(self, CovariateSpec::PairedBlocks { .. }) && p % 2 == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent<T> {
    pub weight: T,
    pub mean: T,
    pub variance: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorSpec<T> {
    MixHat { nu: T, gamma: T },
    Gaussian { mean: T, variance: T },
    Mixture { components: Vec<MixtureComponent<T>> },
}

impl<T: Scalar> ErrorSpec<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            ErrorSpec::MixHat { nu, gamma } => MixHatParams::new(*nu, *gamma).map(|_| ()),
            ErrorSpec::Gaussian { variance, .. } => check_variance(*variance),
            ErrorSpec::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::Config("mixture needs at least one component".into()));
                }
                for c in components {
                    check_variance(c.variance)?;
                    if !(c.weight >= T::zero()) {
                        return Err(Error::Config("mixture weights must be non-negative".into()));
                    }
                }
                let total: T = components.iter().map(|c| c.weight).sum();
                if (total - T::one()).abs() > lit(1e-9) {
                    return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
                }
                Ok(())
            }
        }
    }
}

fn check_variance<T: Scalar>(v: T) -> Result<()> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("variance must be positive, got {v}")))
    }
}

/// Excess kurtosis of a Gaussian mixture from its exact moments.
pub fn mixture_excess_kurtosis<T: Scalar>(components: &[MixtureComponent<T>]) -> T {
    let raw = |k: usize| -> T {
        components
            .iter()
            .map(|c| {
                let (m, v) = (c.mean, c.variance);
                let moment = match k {
                    1 => m,
                    2 => m * m + v,
                    3 => m * m * m + lit::<T>(3.0) * m * v,
                    _ => m.powi(4) + lit::<T>(6.0) * m * m * v + lit::<T>(3.0) * v * v,
                };
                c.weight * moment
            })
            .sum()
    };
    let (m1, m2, m3, m4) = (raw(1), raw(2), raw(3), raw(4));
    let var = m2 - m1 * m1;
    let central4 = m4 - lit::<T>(4.0) * m1 * m3 + lit::<T>(6.0) * m1 * m1 * m2 - lit::<T>(3.0) * m1.powi(4);
    central4 / (var * var) - lit(3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario<T> {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub beta0_true: T,
    pub beta_true: Vec<T>,
    pub covariates: CovariateSpec<T>,
    pub errors: ErrorSpec<T>,
    pub replicates: usize,
    pub seed: u64,
}

const PRESETS: [&str; 9] = [
    "table1-mixhat",
    "table1-normal",
    "table1-mixture",
    "table2-mixhat",
    "table2-normal",
    "table2-mixture",
    "table3-mixhat",
    "table3-normal",
    "table3-mixture",
];

impl<T: Scalar> SimScenario<T> {
    pub fn preset_names() -> &'static [&'static str] {
        &PRESETS
    }

    /// Named benchmark designs: `table{1,2,3}-{mixhat,normal,mixture}`.
    ///
    /// Tables 1 and 2 use `(p, n) = (8, 100)` with independent and pair-correlated
    /// covariates; table 3 uses `(80, 30)`. All share `β₀ = 2`, `β₁ = 2`, `β₃ = 1`.
    pub fn preset(name: &str) -> Option<Self> {
        let (table, law) = name.split_once('-')?;
        let (n, p, covariates) = match table {
            "table1" => (100, 8, CovariateSpec::Independent),
            "table2" => (100, 8, CovariateSpec::PairedBlocks { correlation: lit(0.5) }),
            "table3" => (30, 80, CovariateSpec::Independent),
            _ => return None,
        };
        let errors = match law {
            "mixhat" => ErrorSpec::MixHat { nu: lit(3.0), gamma: lit(2.0) },
            "normal" => ErrorSpec::Gaussian { mean: T::zero(), variance: lit(3.0) },
            "mixture" => ErrorSpec::Mixture {
                components: vec![
                    MixtureComponent { weight: lit(0.8), mean: T::zero(), variance: lit(3.0) },
                    MixtureComponent { weight: lit(0.2), mean: lit(5.0), variance: lit(7.0) },
                ],
            },
            _ => return None,
        };
        let mut beta_true = vec![T::zero(); p];
        beta_true[0] = lit(2.0);
        beta_true[2] = T::one();
        Some(Self {
            name: name.to_string(),
            n,
            p,
            beta0_true: lit(2.0),
            beta_true,
            covariates,
            errors,
            replicates: 50,
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 1 {
            return Err(Error::Config("scenario needs n >= 2 and p >= 1".into()));
        }
        if self.beta_true.len() != self.p {
            return Err(Error::Dimension(format!(
                "beta_true has length {}, scenario has p = {}",
                self.beta_true.len(),
                self.p
            )));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if let CovariateSpec::PairedBlocks { correlation } = self.covariates {
            if !(correlation.abs() < T::one()) {
                return Err(Error::Config("block correlation must lie in (-1, 1)".into()));
            }
        }
        self.errors.validate()
    }
}

/// Covariate columns (`p` vectors of length `n`).
pub fn gen_covariates<T: Scalar, R: Rng + ?Sized>(scenario: &SimScenario<T>, rng: &mut R) -> Vec<Vec<T>> {
    let (n, p) = (scenario.n, scenario.p);
    match scenario.covariates {
        CovariateSpec::Independent => {
            (0..p).map(|_| (0..n).map(|_| T::sample_standard_normal(rng)).collect()).collect()
        }
        CovariateSpec::PairedBlocks { correlation } => {
            // Cholesky factor of [[1, ρ], [ρ, 1]] is [[1, 0], [ρ, √(1−ρ²)]].
            let tail = (T::one() - correlation * correlation).sqrt();
            let mut cols = Vec::with_capacity(p);
            for _ in 0..p / 2 {
                let z1: Vec<T> = (0..n).map(|_| T::sample_standard_normal(rng)).collect();
                let z2: Vec<T> = (0..n).map(|_| T::sample_standard_normal(rng)).collect();
                let partner = z1.iter().zip(&z2).map(|(&a, &b)| correlation * a + tail * b).collect();
                cols.push(z1);
                cols.push(partner);
            }
            if p % 2 == 1 {
                cols.push((0..n).map(|_| T::sample_standard_normal(rng)).collect());
            }
            cols
        }
    }
}

pub fn gen_errors<T: Scalar, R: Rng + ?Sized>(spec: &ErrorSpec<T>, n: usize, rng: &mut R) -> Result<Vec<T>> {
    spec.validate()?;
    Ok(match spec {
        ErrorSpec::MixHat { nu, gamma } => MixHatParams::new(*nu, *gamma)?.sample(n, rng),
        ErrorSpec::Gaussian { mean, variance } => {
            let sd = variance.sqrt();
            (0..n).map(|_| *mean + sd * T::sample_standard_normal(rng)).collect()
        }
        ErrorSpec::Mixture { components } => (0..n)
            .map(|_| {
                let u = T::sample_unit(rng);
                let mut acc = T::zero();
                let chosen = components
                    .iter()
                    .find(|c| {
                        acc = acc + c.weight;
                        u < acc
                    })
                    .unwrap_or(&components[components.len() - 1]);
                chosen.mean + chosen.variance.sqrt() * T::sample_standard_normal(rng)
            })
            .collect(),
    })
}

/// `y = β₀ + Xβ + ε`.
pub fn gen_response<T: Scalar>(columns: &[Vec<T>], errors: &[T], beta0: T, beta: &[T]) -> Result<Vec<T>> {
    if columns.len() != beta.len() {
        return Err(Error::Dimension(format!("{} columns but {} coefficients", columns.len(), beta.len())));
    }
    if let Some(bad) = columns.iter().find(|c| c.len() != errors.len()) {
        return Err(Error::Dimension(format!("column of length {} but {} errors", bad.len(), errors.len())));
    }
    let mut y: Vec<T> = errors.iter().map(|&e| beta0 + e).collect();
    for (col, &b) in columns.iter().zip(beta) {
        for (yi, &x) in y.iter_mut().zip(col) {
            *yi = *yi + x * b;
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics<T> {
    /// `None` when the true support is empty.
    pub tpr: Option<T>,
    /// `None` when every covariate is active.
    pub fpr: Option<T>,
    pub acr: T,
    pub mse: T,
}

pub fn compute_metrics<T: Scalar>(selected: &[usize], beta_hat: &[T], beta_true: &[T]) -> Result<Metrics<T>> {
    let p = beta_true.len();
    if beta_hat.len() != p {
        return Err(Error::Dimension(format!("beta_hat has length {}, expected {p}", beta_hat.len())));
    }
    if let Some(&index) = selected.iter().find(|&&j| j >= p) {
        return Err(Error::IndexOutOfRange { index, len: p });
    }
    let mut chosen = vec![false; p];
    for &j in selected {
        chosen[j] = true;
    }
    let (mut tp, mut fp, mut tn, mut active) = (0usize, 0usize, 0usize, 0usize);
    for j in 0..p {
        let truth = beta_true[j] != T::zero();
        active += usize::from(truth);
        match (truth, chosen[j]) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => {}
        }
    }
    let nulls = p - active;
    let ratio = |a: usize, b: usize| (b > 0).then(|| count::<T>(a) / count(b));
    let mse = beta_hat.iter().zip(beta_true).map(|(&h, &t)| (h - t) * (h - t)).sum::<T>() / count(p);
    Ok(Metrics { tpr: ratio(tp, active), fpr: ratio(fp, nulls), acr: count::<T>(tp + tn) / count(p), mse })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum T0Choice<T> {
    Fixed {
        t0: T,
    },
    /// Cross-validated per replicate; the grid seed is replaced by a replicate stream.
    Tuned {
        grid: TuningGrid<T>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Permutation-test selection.
    Tdvs,
    /// Equal spike and slab rates (`t₁ = t₀`); covariates with a non-zero estimate are
    /// selected.
    Lasso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig<T> {
    pub method: Method,
    pub t0: T0Choice<T>,
    /// Prior constants; `t0` is overridden by `t0` above.
    pub hyper: Hyperparams<T>,
    pub em: EmConfig<T>,
    /// The master seed is replaced by a replicate stream.
    pub selection: SelectionConfig<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome<T> {
    pub index: usize,
    pub metrics: Option<Metrics<T>>,
    pub selected: Vec<usize>,
    pub beta_hat: Vec<T>,
    pub t0: Option<T>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary<T> {
    pub mean: Option<T>,
    /// Sample standard deviation over `√count`; `None` with fewer than two values.
    pub standard_error: Option<T>,
    pub count: usize,
}

impl<T: Scalar> MetricSummary<T> {
    pub fn from_values(values: &[T]) -> Self {
        let k = values.len();
        let mean = (k > 0).then(|| values.iter().copied().sum::<T>() / count(k));
        let standard_error = mean.filter(|_| k > 1).map(|m| {
            let ss: T = values.iter().map(|&v| (v - m) * (v - m)).sum();
            (ss / count(k - 1)).sqrt() / count::<T>(k).sqrt()
        });
        Self { mean, standard_error, count: k }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary<T> {
    pub completed: usize,
    pub failed: usize,
    pub tpr: MetricSummary<T>,
    pub fpr: MetricSummary<T>,
    pub acr: MetricSummary<T>,
    pub mse: MetricSummary<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport<T> {
    pub scenario: SimScenario<T>,
    pub unpaired_trailing_covariate: bool,
    pub summary: StudySummary<T>,
    pub replicates: Vec<ReplicateOutcome<T>>,
}

/// Data set of replicate `r`; depends only on `(scenario.seed, r)`.
pub fn replicate_data<T: Scalar>(scenario: &SimScenario<T>, r: usize) -> Result<Dataset<T>> {
    let mut rng = stream(scenario.seed, &[stage::REPLICATE, r as u64, 0]);
    let columns = gen_covariates(scenario, &mut rng);
    let errors = gen_errors(&scenario.errors, scenario.n, &mut rng)?;
    let y = gen_response(&columns, &errors, scenario.beta0_true, &scenario.beta_true)?;
    Dataset::from_columns(columns, y)
}

fn run_replicate<T: Scalar>(
    scenario: &SimScenario<T>,
    method: &MethodConfig<T>,
    r: usize,
) -> Result<ReplicateOutcome<T>> {
    let data = replicate_data(scenario, r)?;
    let path = |k: u64| derive_seed(scenario.seed, &[stage::REPLICATE, r as u64, k]);
    let t0 = match &method.t0 {
        T0Choice::Fixed { t0 } => *t0,
        T0Choice::Tuned { grid } => {
            let grid = TuningGrid { seed: path(1), ..grid.clone() };
            cv_tune_t0(&data, &grid, &method.hyper, &method.em)?.chosen_t0
        }
    };
    let (selected, beta_hat) = match method.method {
        Method::Tdvs => {
            let hyper = Hyperparams { t0, ..method.hyper };
            let sel = SelectionConfig { master_seed: path(2), ..method.selection };
            let result = tdvs_select(&data, &hyper, &method.em, &sel)?;
            (result.selected, result.fit.params.beta)
        }
        Method::Lasso => {
            let hyper = Hyperparams { t0, t1: t0, ..method.hyper };
            let fit = em::fit(&data, &hyper, &method.em, None)?;
            let selected = (0..data.p()).filter(|&j| fit.params.beta[j] != T::zero()).collect();
            (selected, fit.params.beta)
        }
    };
    let metrics = compute_metrics(&selected, &beta_hat, &scenario.beta_true)?;
    Ok(ReplicateOutcome { index: r, metrics: Some(metrics), selected, beta_hat, t0: Some(t0), error: None })
}

/// Run every replicate (in parallel) and aggregate. Failed replicates are reported and
/// left out of the summary.
pub fn run_study<T: Scalar>(scenario: &SimScenario<T>, method: &MethodConfig<T>) -> Result<StudyReport<T>> {
    scenario.validate()?;
    method.hyper.validate()?;
    method.em.validate()?;
    method.selection.validate()?;
    let replicates: Vec<ReplicateOutcome<T>> = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| {
            run_replicate(scenario, method, r).unwrap_or_else(|e| ReplicateOutcome {
                index: r,
                metrics: None,
                selected: Vec::new(),
                beta_hat: Vec::new(),
                t0: None,
                error: Some(e.to_string()),
            })
        })
        .collect();
    let done: Vec<Metrics<T>> = replicates.iter().filter_map(|r| r.metrics).collect();
    let collect = |f: fn(&Metrics<T>) -> Option<T>| -> Vec<T> { done.iter().filter_map(f).collect() };
    let summary = StudySummary {
        completed: done.len(),
        failed: replicates.len() - done.len(),
        tpr: MetricSummary::from_values(&collect(|m| m.tpr)),
        fpr: MetricSummary::from_values(&collect(|m| m.fpr)),
        acr: MetricSummary::from_values(&collect(|m| Some(m.acr))),
        mse: MetricSummary::from_values(&collect(|m| Some(m.mse))),
    };
    Ok(StudyReport {
        scenario: scenario.clone(),
        unpaired_trailing_covariate: scenario.covariates.trailing_unpaired(scenario.p),
        summary,
        replicates,
    })
}
