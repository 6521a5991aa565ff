//! Pairwise preference accuracy: how often a metric ranks the image humans
//! preferred higher, per axis.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::bootstrap::{paired_bootstrap, BootstrapConfig, BootstrapResult};
use crate::error::{Error, Result};
use crate::scoring::ScoreRecord;
use crate::stats::{harmonic_mean, round_to};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Textual,
    Visual,
    Overall,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Textual, Axis::Visual, Axis::Overall];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    A,
    B,
}

/// One annotated pair: instance ids of the two images and the human choice per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub pair_id: String,
    pub image_a: String,
    pub image_b: String,
    pub choice: BTreeMap<Axis, Choice>,
}

/// Per-image `(ta, visual)` scores of one metric.
pub type AxisScores = HashMap<String, (f64, f64)>;

pub fn axis_scores(records: &[ScoreRecord]) -> AxisScores {
    records
        .iter()
        .filter_map(|r| Some((r.instance_id.clone(), (r.ta?, r.sp?))))
        .collect()
}

fn axis_value(axis: Axis, (ta, vis): (f64, f64)) -> Result<f64> {
    match axis {
        Axis::Textual => Ok(ta),
        Axis::Visual => Ok(vis),
        Axis::Overall => harmonic_mean(ta, vis),
    }
}

/// Credit for one pair: 1 if the preferred image's rounded score is strictly
/// higher, 0.5 on a rounded tie, 0 otherwise.
pub fn pair_credit(preferred: f64, other: f64, decimals: u32) -> f64 {
    let (p, o) = (round_to(preferred, decimals), round_to(other, decimals));
    if p > o {
        1.0
    } else if p == o {
        0.5
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisAccuracy {
    pub axis: Axis,
    /// Percent.
    pub accuracy: f64,
    pub n_pairs: usize,
    pub credits: Vec<(String, f64)>,
}

#[derive(Debug, Default)]
pub struct PreferenceOutcome {
    pub axes: Vec<AxisAccuracy>,
    pub warnings: Vec<String>,
}

/// Accuracy per axis; pairs lacking a score or choice are excluded with a warning.
pub fn imagerag_accuracy(pairs: &[PreferencePair], scores: &AxisScores, decimals: u32) -> Result<PreferenceOutcome> {
    let mut out = PreferenceOutcome::default();
    for axis in Axis::ALL {
        let mut credits = Vec::new();
        for p in pairs {
            let Some(choice) = p.choice.get(&axis) else {
                out.warnings.push(format!("pair {}: no {axis:?} choice", p.pair_id));
                continue;
            };
            let (Some(a), Some(b)) = (scores.get(&p.image_a), scores.get(&p.image_b)) else {
                out.warnings.push(format!("pair {}: missing score", p.pair_id));
                continue;
            };
            let (va, vb) = match (axis_value(axis, *a), axis_value(axis, *b)) {
                (Ok(x), Ok(y)) => (x, y),
                (Err(e), _) | (_, Err(e)) => {
                    out.warnings.push(format!("pair {}: {e}", p.pair_id));
                    continue;
                }
            };
            let credit = match choice {
                Choice::A => pair_credit(va, vb, decimals),
                Choice::B => pair_credit(vb, va, decimals),
            };
            credits.push((p.pair_id.clone(), credit));
        }
        if credits.is_empty() {
            return Err(Error::domain(format!("no scorable pairs on the {axis:?} axis")));
        }
        let accuracy = 100.0 * credits.iter().map(|(_, c)| c).sum::<f64>() / credits.len() as f64;
        out.axes.push(AxisAccuracy {
            axis,
            accuracy,
            n_pairs: credits.len(),
            credits,
        });
    }
    Ok(out)
}

/// Paired bootstrap of the accuracy difference `other - reference` on the
/// pairs both metrics could score.
pub fn bootstrap_accuracy(
    reference: &AxisAccuracy,
    other: &AxisAccuracy,
    config: &BootstrapConfig,
    seed: u64,
) -> Result<BootstrapResult> {
    let other_by: HashMap<&str, f64> = other.credits.iter().map(|(id, c)| (id.as_str(), *c)).collect();
    let joint: Vec<(f64, f64)> = reference
        .credits
        .iter()
        .filter_map(|(id, c)| Some((*c, *other_by.get(id.as_str())?)))
        .collect();
    paired_bootstrap(joint.len(), config, seed, |idx| {
        let n = idx.len() as f64;
        let diff: f64 = idx.iter().map(|&i| joint[i].1 - joint[i].0).sum();
        Some(100.0 * diff / n)
    })
}
