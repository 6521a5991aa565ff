//! Paired bootstrap of a statistic difference with a percentile interval.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::auc::{roc_auc_opt, unified_auc};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::stats::quantile_sorted;
use crate::types::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub n_bootstrap: usize,
    /// Sets smaller than this are resampled at `multiplier` times their size.
    pub min_sample: usize,
    pub multiplier: usize,
    pub p_level: f64,
    /// Largest tolerated share of resamples with an undefined statistic.
    pub max_undefined: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_bootstrap: 1000,
            min_sample: 100,
            multiplier: 4,
            p_level: 0.05,
            max_undefined: 0.10,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bootstrap == 0 || self.multiplier == 0 {
            return Err(Error::domain("n_bootstrap and multiplier must be positive"));
        }
        if !(self.p_level > 0.0 && self.p_level < 1.0) {
            return Err(Error::domain(format!("p_level {} outside (0, 1)", self.p_level)));
        }
        Ok(())
    }

    pub fn resample_len(&self, n: usize) -> usize {
        if n < self.min_sample {
            n * self.multiplier
        } else {
            n
        }
    }
}

/// Indices of resample `index`, drawn with replacement from `0..n`.
pub fn resample_indices(n: usize, config: &BootstrapConfig, seed: u64, index: usize) -> Vec<usize> {
    let mut rng = rng_for(seed, &format!("resample|{index}"));
    (0..config.resample_len(n)).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Under,
    Over,
    None,
}

impl Mark {
    pub fn arrow(self) -> &'static str {
        match self {
            Mark::Under => "↓",
            Mark::Over => "↑",
            Mark::None => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub mark: Mark,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub n_bootstrap: usize,
    pub resample_len: usize,
    pub undefined: usize,
}

/// Bootstraps `stat(indices)`, a paired difference `other - reference` over
/// the same resampled instances. `None` marks an undefined resample.
pub fn paired_bootstrap<F>(n: usize, config: &BootstrapConfig, seed: u64, stat: F) -> Result<BootstrapResult>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    config.validate()?;
    if n == 0 {
        return Err(Error::domain("bootstrap over an empty instance set"));
    }
    let draws: Vec<Option<f64>> = (0..config.n_bootstrap)
        .into_par_iter()
        .map(|i| stat(&resample_indices(n, config, seed, i)))
        .collect();
    let mut diffs: Vec<f64> = draws.iter().flatten().copied().collect();
    let undefined = draws.len() - diffs.len();
    if undefined as f64 > config.max_undefined * config.n_bootstrap as f64 {
        return Err(Error::UndefinedAuc(format!(
            "statistic undefined in {undefined} of {} resamples",
            config.n_bootstrap
        )));
    }
    diffs.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&diffs, config.p_level / 2.0);
    let hi = quantile_sorted(&diffs, 1.0 - config.p_level / 2.0);
    let mark = if hi < 0.0 {
        Mark::Under
    } else if lo > 0.0 {
        Mark::Over
    } else {
        Mark::None
    };
    Ok(BootstrapResult {
        mark,
        ci_lower: lo,
        ci_upper: hi,
        n_bootstrap: config.n_bootstrap,
        resample_len: config.resample_len(n),
        undefined,
    })
}

/// Which AUC the comparison is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AucStat {
    Single,
    Unified,
}

/// Instance-aligned inputs to an AUC comparison. For `Unified`, both score
/// vectors of each metric and both label vectors are needed.
pub struct PairedRows<'a> {
    pub reference: [&'a [f64]; 2],
    pub other: [&'a [f64]; 2],
    pub labels: [&'a [Label]; 2],
}

fn take<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

fn auc_at(scores: &[f64], labels: &[Label], idx: &[usize]) -> Option<f64> {
    roc_auc_opt(&take(scores, idx), &take(labels, idx))
}

/// Paired bootstrap of `AUC(other) - AUC(reference)` on a single criterion.
pub fn bootstrap_compare(
    reference: &[f64],
    other: &[f64],
    labels: &[Label],
    config: &BootstrapConfig,
    seed: u64,
) -> Result<BootstrapResult> {
    if reference.len() != other.len() || reference.len() != labels.len() {
        return Err(Error::domain("metrics must be scored on identical instance sets"));
    }
    paired_bootstrap(labels.len(), config, seed, |idx| {
        Some(auc_at(other, labels, idx)? - auc_at(reference, labels, idx)?)
    })
}

/// Paired bootstrap of the unified (harmonic-mean) AUC difference.
pub fn bootstrap_compare_unified(rows: &PairedRows<'_>, config: &BootstrapConfig, seed: u64) -> Result<BootstrapResult> {
    let n = rows.labels[0].len();
    let all = rows.reference.iter().chain(&rows.other).map(|v| v.len()).chain([rows.labels[1].len()]);
    if all.into_iter().any(|len| len != n) {
        return Err(Error::domain("metrics must be scored on identical instance sets"));
    }
    let unified = |s: [&[f64]; 2], idx: &[usize]| -> Option<f64> {
        let ta = auc_at(s[0], rows.labels[0], idx)?;
        let sp = auc_at(s[1], rows.labels[1], idx)?;
        unified_auc(ta, sp).ok()
    };
    paired_bootstrap(n, config, seed, |idx| Some(unified(rows.other, idx)? - unified(rows.reference, idx)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn mixed(n: usize, seed: u64) -> (Vec<f64>, Vec<Label>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<Label> = (0..n).map(|i| Label::from_bool(i % 2 == 0 || rng.random_bool(0.2))).collect();
        let scores = (0..n).map(|_| rng.random()).collect();
        (scores, labels)
    }

    #[test]
    fn identical_metrics_never_marked() {
        let (s, l) = mixed(120, 1);
        let cfg = BootstrapConfig { n_bootstrap: 200, ..BootstrapConfig::default() };
        for seed in 0..5 {
            let r = bootstrap_compare(&s, &s, &l, &cfg, seed).unwrap();
            assert_eq!(r.mark, Mark::None);
            assert_eq!((r.ci_lower, r.ci_upper), (0.0, 0.0));
        }
    }

    #[test]
    fn oracle_beats_anti_oracle() {
        let (_, l) = mixed(500, 2);
        let oracle: Vec<f64> = l.iter().map(|x| f64::from(x.bit())).collect();
        let anti: Vec<f64> = oracle.iter().map(|x| 1.0 - x).collect();
        let cfg = BootstrapConfig::default();
        assert_eq!(bootstrap_compare(&oracle, &anti, &l, &cfg, 3).unwrap().mark, Mark::Under);
        assert_eq!(bootstrap_compare(&anti, &oracle, &l, &cfg, 3).unwrap().mark, Mark::Over);
    }

    #[test]
    fn small_sets_resample_larger() {
        let cfg = BootstrapConfig::default();
        assert_eq!(cfg.resample_len(26), 104);
        assert_eq!(cfg.resample_len(100), 100);
        assert_eq!(resample_indices(26, &cfg, 0, 0).len(), 104);
        assert!(resample_indices(26, &cfg, 0, 3).iter().all(|&i| i < 26));
    }

    #[test]
    fn deterministic_and_errors() {
        let (s, l) = mixed(80, 4);
        let (t, _) = mixed(80, 5);
        let cfg = BootstrapConfig { n_bootstrap: 100, ..BootstrapConfig::default() };
        assert_eq!(bootstrap_compare(&s, &t, &l, &cfg, 9).unwrap(), bootstrap_compare(&s, &t, &l, &cfg, 9).unwrap());
        // one positive in 200: about 37% of resamples miss it
        let (s2, _) = mixed(200, 7);
        let rare: Vec<Label> = (0..200).map(|i| Label::from_bool(i == 0)).collect();
        assert!(matches!(bootstrap_compare(&s2, &s2, &rare, &cfg, 9), Err(Error::UndefinedAuc(_))));
        assert!(bootstrap_compare(&s, &t[..5], &l, &cfg, 9).is_err());
    }

    #[test]
    fn unified_comparison() {
        let (_, l) = mixed(200, 6);
        let oracle: Vec<f64> = l.iter().map(|x| f64::from(x.bit())).collect();
        let anti: Vec<f64> = oracle.iter().map(|x| 1.0 - x).collect();
        let rows = PairedRows { reference: [&oracle, &oracle], other: [&anti, &anti], labels: [&l, &l] };
        let r = bootstrap_compare_unified(&rows, &BootstrapConfig { n_bootstrap: 200, ..Default::default() }, 1).unwrap();
        assert_eq!(r.mark, Mark::Under);
    }
}
