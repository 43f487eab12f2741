//! Choosing the spike rate `t₀` by K-fold cross-validation on held-out prediction error.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{self, EmConfig, FitResult};
use crate::error::{Error, Result};
use crate::model::{Dataset, Hyperparams};
use crate::scalar::{count, Scalar};
use crate::seed::{stage, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid<T> {
    pub t0_candidates: Vec<T>,
    pub t1_fixed: T,
    pub folds: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for TuningGrid<T> {
    fn default() -> Self {
        Self {
            t0_candidates: [1.0, 3.0, 10.0, 30.0, 100.0].iter().map(|&v| T::from_f64(v).unwrap()).collect(),
            t1_fixed: T::one(),
            folds: 5,
            seed: 0,
        }
    }
}

impl<T: Scalar> TuningGrid<T> {
    /// Grid with candidates sorted ascending and duplicates removed.
    pub fn normalized(&self) -> Result<Self> {
        if self.t0_candidates.is_empty() {
            return Err(Error::Config("t0 grid must not be empty".into()));
        }
        if self.t0_candidates.iter().any(|&t| !(t > T::zero()) || !t.is_finite()) {
            return Err(Error::Config("t0 candidates must be positive and finite".into()));
        }
        if !(self.t1_fixed > T::zero()) || !self.t1_fixed.is_finite() {
            return Err(Error::Config("t1 must be positive and finite".into()));
        }
        let mut t0_candidates = self.t0_candidates.clone();
        t0_candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite candidates"));
        t0_candidates.dedup();
        Ok(Self { t0_candidates, ..self.clone() })
    }
}

/// Held-out error of one candidate. `pmse` is `None` when any fold fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore<T> {
    pub t0: T,
    pub pmse: Option<T>,
    pub fold_pmse: Vec<Option<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult<T> {
    pub chosen_t0: T,
    pub chosen_pmse: T,
    /// One row per candidate, in ascending `t₀` order.
    pub table: Vec<CandidateScore<T>>,
    /// Fold label of every observation.
    pub fold_of: Vec<usize>,
}

/// Mode-point prediction `β̂₀ + xᵀβ̂`.
pub fn predict_point<T: Scalar>(fit: &FitResult<T>, x: &[T]) -> Result<T> {
    let beta = &fit.params.beta;
    if x.len() != beta.len() {
        return Err(Error::Dimension(format!("x has length {}, model has {} covariates", x.len(), beta.len())));
    }
    Ok(x.iter().zip(beta).fold(fit.params.beta0, |acc, (&xi, &bi)| acc + xi * bi))
}

/// Seeded assignment of `n` observations to `folds` folds of near-equal size.
pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[stage::CV_FOLDS]));
    let mut fold_of = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        fold_of[i] = rank % folds;
    }
    fold_of
}

/// Pick `t₀` minimizing the average held-out PMSE over the folds. Ties go to the
/// smallest `t₀`. Candidates with a failed fold fit are skipped.
pub fn cv_tune_t0<T: Scalar>(
    data: &Dataset<T>,
    grid: &TuningGrid<T>,
    hyper_base: &Hyperparams<T>,
    em_config: &EmConfig<T>,
) -> Result<TuningResult<T>> {
    let grid = grid.normalized()?;
    em_config.validate()?;
    if grid.folds < 2 || grid.folds > data.n() {
        return Err(Error::Config(format!("folds must lie in [2, n = {}], got {}", data.n(), grid.folds)));
    }
    let fold_of = assign_folds(data.n(), grid.folds, grid.seed);
    let splits: Vec<(Dataset<T>, Vec<usize>)> = (0..grid.folds)
        .map(|k| {
            let train: Vec<usize> = (0..data.n()).filter(|&i| fold_of[i] != k).collect();
            let test: Vec<usize> = (0..data.n()).filter(|&i| fold_of[i] == k).collect();
            (data.select_rows(&train), test)
        })
        .collect();

    let jobs: Vec<(usize, usize)> =
        (0..grid.t0_candidates.len()).flat_map(|c| (0..grid.folds).map(move |k| (c, k))).collect();
    let scores: Vec<Option<T>> = jobs
        .par_iter()
        .map(|&(c, k)| {
            let hyper = Hyperparams { t0: grid.t0_candidates[c], t1: grid.t1_fixed, ..*hyper_base };
            let (train, test) = &splits[k];
            if train.n() < 2 {
                return None;
            }
            let fit = em::fit(train, &hyper, em_config, None).ok()?;
            let sse = test.iter().try_fold(T::zero(), |acc, &i| {
                let err = data.response()[i] - predict_point(&fit, &data.row(i)).ok()?;
                Some(acc + err * err)
            })?;
            Some(sse / count(test.len()))
        })
        .collect();

    let table: Vec<CandidateScore<T>> = grid
        .t0_candidates
        .iter()
        .enumerate()
        .map(|(c, &t0)| {
            let fold_pmse = scores[c * grid.folds..(c + 1) * grid.folds].to_vec();
            let pmse = fold_pmse
                .iter()
                .try_fold(T::zero(), |acc, s| s.map(|v| acc + v))
                .map(|total| total / count(grid.folds))
                .filter(|v| v.is_finite());
            CandidateScore { t0, pmse, fold_pmse }
        })
        .collect();

    // Ascending order plus a strict comparison keeps the smallest t₀ on ties.
    let mut best: Option<(T, T)> = None;
    for row in &table {
        if let Some(v) = row.pmse {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((row.t0, v));
            }
        }
    }
    let (chosen_t0, chosen_pmse) = best.ok_or(Error::AllCandidatesFailed)?;
    Ok(TuningResult { chosen_t0, chosen_pmse, table, fold_of })
}
