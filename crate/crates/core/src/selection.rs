//! Permutation p-values for CiS statistics and the multi-stage selection pipeline.
//!
//! A covariate (or group) is tested by shuffling its column(s), refitting the model on the
//! shuffled data and recomputing the statistic with the refit. The p-value is the share
//! of permuted statistics at least as large as the observed one. Large `p` runs first
//! screen random groups of covariates, then single covariates, each with few
//! permutations and a loose level, before the final test.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cis::cis_group_statistic;
use crate::em::{self, EmConfig, FitResult};
use crate::error::{domain, Error, Result};
use crate::model::{Dataset, Hyperparams, RegressionParams};
use crate::scalar::{count, lit, Scalar};
use crate::seed::{derive_seed, stage, stream};

/// When to run the two screening stages before the final test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prescreen {
    /// Screen iff `p > n`.
    Auto,
    On,
    Off,
}

impl Prescreen {
    pub fn resolve(self, n: usize, p: usize) -> bool {
        match self {
            Prescreen::Auto => p > n,
            Prescreen::On => true,
            Prescreen::Off => false,
        }
    }
}

impl FromStr for Prescreen {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Prescreen::Auto),
            "on" => Ok(Prescreen::On),
            "off" => Ok(Prescreen::Off),
            other => Err(Error::Config(format!("prescreen must be auto, on or off, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig<T> {
    /// Permutations per covariate in the final test (`B`).
    pub final_permutations: usize,
    /// Permutations per group in group screening (`B₁`).
    pub group_permutations: usize,
    /// Permutations per covariate in individual screening (`B₂`).
    pub individual_permutations: usize,
    pub alpha: T,
    /// Level of both screening stages.
    pub alpha0: T,
    pub group_size: usize,
    /// Curvature offset in the CiS denominator.
    pub delta: T,
    pub prescreen: Prescreen,
    pub master_seed: u64,
}

impl<T: Scalar> Default for SelectionConfig<T> {
    fn default() -> Self {
        Self {
            final_permutations: 200,
            group_permutations: 20,
            individual_permutations: 20,
            alpha: lit(0.05),
            alpha0: lit(0.3),
            group_size: 4,
            delta: lit(1e-3),
            prescreen: Prescreen::Auto,
            master_seed: 0,
        }
    }
}

impl<T: Scalar> SelectionConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v > T::zero() && v < T::one();
        if !unit(self.alpha) || !unit(self.alpha0) {
            return Err(Error::Config("alpha and alpha0 must lie in (0, 1)".into()));
        }
        if self.alpha0 < self.alpha {
            return Err(Error::Config("alpha0 must be at least alpha".into()));
        }
        if self.final_permutations == 0 || self.group_permutations == 0 || self.individual_permutations == 0 {
            return Err(Error::Config("permutation counts must be positive".into()));
        }
        if self.group_size == 0 {
            return Err(Error::Config("group_size must be positive".into()));
        }
        if !(self.delta > T::zero()) || !self.delta.is_finite() {
            return Err(domain("delta", format!("must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

/// Outcome of one permutation test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CisResult<T> {
    /// Tested covariates (one entry for a single-covariate test).
    pub covariates: Vec<usize>,
    pub statistic: T,
    /// Statistics of the permutations whose refit succeeded, in permutation order.
    pub permuted_statistics: Vec<T>,
    /// Refits that errored or did not converge; excluded from the p-value.
    pub failed_permutations: usize,
    pub p_value: T,
    /// More than 10% of the refits failed.
    pub unreliable: bool,
}

/// Test `target` (a single covariate or a group, permuted jointly) with `permutations`
/// refits. `fit` must be the fit of `data`; it provides the observed statistic and the
/// warm start of every refit. Permutation `b` draws from the stream `(seed, b)`.
#[allow(clippy::too_many_arguments)]
pub fn permutation_pvalue<T: Scalar>(
    data: &Dataset<T>,
    hyper: &Hyperparams<T>,
    em_config: &EmConfig<T>,
    fit: &FitResult<T>,
    target: &[usize],
    permutations: usize,
    delta: T,
    seed: u64,
) -> Result<CisResult<T>> {
    if permutations == 0 {
        return Err(Error::Config("permutation count must be positive".into()));
    }
    let statistic = cis_group_statistic(data, fit, target, delta)?;
    let outcomes: Vec<Option<T>> = (0..permutations as u64)
        .into_par_iter()
        .map(|b| {
            let mut order: Vec<usize> = (0..data.n()).collect();
            order.shuffle(&mut stream(seed, &[b]));
            let shuffled = data.permute_rows_of(target, &order);
            match em::fit(&shuffled, hyper, em_config, Some(&fit.params)) {
                Ok(refit) if refit.converged => cis_group_statistic(&shuffled, &refit, target, delta).ok(),
                _ => None,
            }
        })
        .collect();
    let permuted_statistics: Vec<T> = outcomes.iter().flatten().copied().collect();
    let failed_permutations = permutations - permuted_statistics.len();
    let p_value = if permuted_statistics.is_empty() {
        T::one()
    } else {
        let exceed = permuted_statistics.iter().filter(|&&s| s >= statistic).count();
        count::<T>(exceed) / count(permuted_statistics.len())
    };
    Ok(CisResult {
        covariates: target.to_vec(),
        statistic,
        permuted_statistics,
        failed_permutations,
        p_value,
        unreliable: failed_permutations * 10 > permutations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    GroupScreen,
    IndividualScreen,
    Final,
}

/// What one stage tested and kept. All indices refer to columns of the original data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord<T> {
    pub kind: StageKind,
    pub permutations: usize,
    pub level: T,
    pub candidates: Vec<usize>,
    pub tests: Vec<CisResult<T>>,
    pub survivors: Vec<usize>,
    pub dropped: Vec<usize>,
    /// Convergence of the fit on the candidate columns that the stage's tests start from.
    pub fit_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult<T> {
    pub selected: Vec<usize>,
    pub prescreen_applied: bool,
    pub stages: Vec<StageRecord<T>>,
    /// Final-stage p-value of every covariate; `None` if screened out earlier.
    pub final_p_values: Vec<Option<T>>,
    /// Fit on the full data.
    pub fit: FitResult<T>,
}

/// Random partition of `0..p` into `⌈p/m⌉` groups of size `m`, the last one possibly
/// smaller.
pub fn partition_groups(p: usize, group_size: usize, master_seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut stream(master_seed, &[stage::GROUP_PARTITION]));
    order
        .chunks(group_size.max(1))
        .map(|chunk| {
            let mut g = chunk.to_vec();
            g.sort_unstable();
            g
        })
        .collect()
}

/// Group screening on all covariates of `data`; `fit` is the fit of `data`.
pub fn prescreen_groups<T: Scalar>(
    data: &Dataset<T>,
    hyper: &Hyperparams<T>,
    em_config: &EmConfig<T>,
    sel: &SelectionConfig<T>,
    fit: &FitResult<T>,
) -> Result<StageRecord<T>> {
    sel.validate()?;
    let groups = partition_groups(data.p(), sel.group_size, sel.master_seed);
    let tests = groups
        .par_iter()
        .enumerate()
        .map(|(q, group)| {
            let seed = derive_seed(sel.master_seed, &[stage::GROUP_SCREEN, q as u64]);
            permutation_pvalue(data, hyper, em_config, fit, group, sel.group_permutations, sel.delta, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut survivors = Vec::new();
    let mut dropped = Vec::new();
    for t in &tests {
        let bucket = if t.p_value > sel.alpha0 { &mut dropped } else { &mut survivors };
        bucket.extend_from_slice(&t.covariates);
    }
    survivors.sort_unstable();
    dropped.sort_unstable();
    Ok(StageRecord {
        kind: StageKind::GroupScreen,
        permutations: sel.group_permutations,
        level: sel.alpha0,
        candidates: (0..data.p()).collect(),
        tests,
        survivors,
        dropped,
        fit_converged: fit.converged,
    })
}

/// Individual screening of `survivors` (sorted column indices of `data`).
pub fn prescreen_individuals<T: Scalar>(
    data: &Dataset<T>,
    hyper: &Hyperparams<T>,
    em_config: &EmConfig<T>,
    sel: &SelectionConfig<T>,
    fit: &FitResult<T>,
    survivors: &[usize],
) -> Result<StageRecord<T>> {
    sel.validate()?;
    individual_stage(
        StageKind::IndividualScreen,
        data,
        hyper,
        em_config,
        sel,
        fit,
        survivors,
        sel.individual_permutations,
        sel.alpha0,
    )
}

/// Final per-covariate test of `candidates` at level α.
pub fn final_stage<T: Scalar>(
    data: &Dataset<T>,
    hyper: &Hyperparams<T>,
    em_config: &EmConfig<T>,
    sel: &SelectionConfig<T>,
    fit: &FitResult<T>,
    candidates: &[usize],
) -> Result<StageRecord<T>> {
    sel.validate()?;
    individual_stage(StageKind::Final, data, hyper, em_config, sel, fit, candidates, sel.final_permutations, sel.alpha)
}

/// Tests each candidate in the model restricted to the candidate columns. `fit` (of the
/// full `data`) is reused when nothing was removed, and otherwise warm-starts the fit of
/// the restricted model.
#[allow(clippy::too_many_arguments)]
fn individual_stage<T: Scalar>(
    kind: StageKind,
    data: &Dataset<T>,
    hyper: &Hyperparams<T>,
    em_config: &EmConfig<T>,
    sel: &SelectionConfig<T>,
    fit: &FitResult<T>,
    candidates: &[usize],
    permutations: usize,
    level: T,
) -> Result<StageRecord<T>> {
    if let Some(&index) = candidates.iter().find(|&&j| j >= data.p()) {
        return Err(Error::IndexOutOfRange { index, len: data.p() });
    }
    let mut record = StageRecord {
        kind,
        permutations,
        level,
        candidates: candidates.to_vec(),
        tests: Vec::new(),
        survivors: Vec::new(),
        dropped: Vec::new(),
        fit_converged: fit.converged,
    };
    if candidates.is_empty() {
        return Ok(record);
    }
    let stage_id = match kind {
        StageKind::IndividualScreen => stage::INDIVIDUAL_SCREEN,
        _ => stage::FINAL_TEST,
    };
    let restricted;
    let (sub, sub_fit) = if candidates.len() == data.p() && candidates.iter().enumerate().all(|(k, &j)| k == j) {
        (data, fit)
    } else {
        let sub = data.select_columns(candidates);
        let init =
            RegressionParams { beta: candidates.iter().map(|&j| fit.params.beta[j]).collect(), ..fit.params.clone() };
        let sub_fit = em::fit(&sub, hyper, em_config, Some(&init))?;
        restricted = (sub, sub_fit);
        (&restricted.0, &restricted.1)
    };
    record.fit_converged = sub_fit.converged;
    record.tests = candidates
        .par_iter()
        .enumerate()
        .map(|(k, &j)| {
            let seed = derive_seed(sel.master_seed, &[stage_id, j as u64]);
            let mut result = permutation_pvalue(sub, hyper, em_config, sub_fit, &[k], permutations, sel.delta, seed)?;
            result.covariates = vec![j];
            Ok(result)
        })
        .collect::<Result<Vec<_>>>()?;
    for t in &record.tests {
        let j = t.covariates[0];
        if t.p_value > level {
            record.dropped.push(j);
        } else {
            record.survivors.push(j);
        }
    }
    Ok(record)
}

/// Full pipeline: optional group and individual screening, then the final test.
pub fn tdvs_select<T: Scalar>(
    data: &Dataset<T>,
    hyper: &Hyperparams<T>,
    em_config: &EmConfig<T>,
    sel: &SelectionConfig<T>,
) -> Result<SelectionResult<T>> {
    hyper.validate()?;
    em_config.validate()?;
    sel.validate()?;
    let fit = em::fit(data, hyper, em_config, None)?;
    let prescreen_applied = sel.prescreen.resolve(data.n(), data.p());
    let mut stages = Vec::new();
    let mut candidates: Vec<usize> = (0..data.p()).collect();
    if prescreen_applied {
        let groups = prescreen_groups(data, hyper, em_config, sel, &fit)?;
        candidates = groups.survivors.clone();
        stages.push(groups);
        let individuals = prescreen_individuals(data, hyper, em_config, sel, &fit, &candidates)?;
        candidates = individuals.survivors.clone();
        stages.push(individuals);
    }
    let last = final_stage(data, hyper, em_config, sel, &fit, &candidates)?;
    let mut final_p_values = vec![None; data.p()];
    for t in &last.tests {
        final_p_values[t.covariates[0]] = Some(t.p_value);
    }
    let selected = last.survivors.clone();
    stages.push(last);
    Ok(SelectionResult { selected, prescreen_applied, stages, final_p_values, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::MixHatParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn simulate(n: usize, beta: &[f64], seed: u64) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> =
            (0..beta.len()).map(|_| (0..n).map(|_| f64::sample_standard_normal(&mut rng)).collect()).collect();
        let errors = MixHatParams::new(3.0, 2.0).unwrap().sample(n, &mut rng);
        let y = (0..n).map(|i| 2.0 + beta.iter().zip(&cols).map(|(b, c)| b * c[i]).sum::<f64>() + errors[i]).collect();
        Dataset::from_columns(cols, y).unwrap()
    }

    fn quick(seed: u64) -> SelectionConfig<f64> {
        SelectionConfig {
            final_permutations: 20,
            group_permutations: 10,
            individual_permutations: 10,
            master_seed: seed,
            ..SelectionConfig::default()
        }
    }

    #[test]
    fn partition_covers_indices_once() {
        for p in [1, 4, 9, 80] {
            let groups = partition_groups(p, 4, 11);
            assert_eq!(groups.len(), p.div_ceil(4));
            assert!(groups[..groups.len() - 1].iter().all(|g| g.len() == 4));
            let mut all: Vec<usize> = groups.concat();
            all.sort_unstable();
            assert_eq!(all, (0..p).collect::<Vec<_>>());
        }
        assert_eq!(partition_groups(4, 4, 0), vec![vec![0, 1, 2, 3]]);
        assert_eq!(partition_groups(30, 4, 5), partition_groups(30, 4, 5));
    }

    #[test]
    fn p_value_is_on_grid_and_zero_statistic_gives_one() {
        let data = simulate(100, &[2.0, 0.0, 0.0], 1);
        let hyper = Hyperparams::new(10.0, 1.0);
        let cfg = EmConfig::default();
        let mut fit = em::fit(&data, &hyper, &cfg, None).unwrap();
        let strong = permutation_pvalue(&data, &hyper, &cfg, &fit, &[0], 20, 1e-3, 3).unwrap();
        let exceed = strong.permuted_statistics.iter().filter(|&&s| s >= strong.statistic).count();
        assert_eq!(strong.p_value, exceed as f64 / strong.permuted_statistics.len() as f64);
        assert!(strong.p_value <= 0.1, "{strong:?}");
        fit.params.beta[1] = 0.0;
        let null = permutation_pvalue(&data, &hyper, &cfg, &fit, &[1], 20, 1e-3, 4).unwrap();
        assert_eq!(null.statistic, 0.0);
        assert_eq!(null.p_value, 1.0);
        let valid = null.permuted_statistics.len();
        assert_eq!(valid + null.failed_permutations, 20);
    }

    #[test]
    fn drop_rule_follows_count_convention() {
        // With 20 permutations and level 0.3 a target is dropped iff at least 7 permuted
        // statistics reach the observed one.
        let level = 0.3;
        for exceed in 0..=20usize {
            let p = exceed as f64 / 20.0;
            assert_eq!(p > level, exceed >= 7, "exceed = {exceed}");
        }
    }

    #[test]
    fn selection_is_deterministic_across_thread_counts() {
        let data = simulate(50, &[2.0, 0.0, 1.0, 0.0], 8);
        let hyper = Hyperparams::new(10.0, 1.0);
        let cfg = EmConfig::default();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| tdvs_select(&data, &hyper, &cfg, &quick(99)).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert!(one.selected.contains(&0));
    }

    #[test]
    fn prescreen_stages_are_nested() {
        let data = simulate(30, &[2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 21);
        let hyper = Hyperparams::new(10.0, 1.0);
        let sel = SelectionConfig { prescreen: Prescreen::On, ..quick(5) };
        let result = tdvs_select(&data, &hyper, &EmConfig::default(), &sel).unwrap();
        assert!(result.prescreen_applied);
        assert_eq!(result.stages.len(), 3);
        for pair in result.stages.windows(2) {
            assert_eq!(pair[1].candidates, pair[0].survivors);
            assert!(pair[1].survivors.iter().all(|j| pair[0].survivors.contains(j)));
        }
        for stage in &result.stages {
            let mut both = [stage.survivors.clone(), stage.dropped.clone()].concat();
            both.sort_unstable();
            assert_eq!(both, stage.candidates);
        }
        assert_eq!(result.selected, result.stages[2].survivors);
    }

    #[test]
    fn prescreen_mode_parsing_and_resolution() {
        assert_eq!("auto".parse::<Prescreen>().unwrap(), Prescreen::Auto);
        assert!("maybe".parse::<Prescreen>().is_err());
        assert!(Prescreen::Auto.resolve(30, 80));
        assert!(!Prescreen::Auto.resolve(100, 8));
        assert!(Prescreen::On.resolve(100, 8));
    }

    #[test]
    fn config_validation() {
        let bad = SelectionConfig { alpha0: 0.01, ..SelectionConfig::<f64>::default() };
        assert!(bad.validate().is_err());
        let bad = SelectionConfig { group_size: 0, ..SelectionConfig::<f64>::default() };
        assert!(bad.validate().is_err());
        assert!(SelectionConfig::<f64>::default().validate().is_ok());
    }
}
