//! Conversion of each benchmark's rater payload into binary gold labels.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::types::{CategoryTag, Label, ScorePair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Benchmark {
    #[serde(rename = "dreambench_pp")]
    DreamBenchPP,
    #[serde(rename = "imagenhub")]
    ImagenHub,
    #[serde(rename = "kitten")]
    Kitten,
    #[serde(rename = "imagerag")]
    ImageRag,
}

impl Benchmark {
    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::DreamBenchPP => "dreambench_pp",
            Benchmark::ImagenHub => "imagenhub",
            Benchmark::Kitten => "kitten",
            Benchmark::ImageRag => "imagerag",
        }
    }
}

impl std::str::FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Benchmark::DreamBenchPP, Benchmark::ImagenHub, Benchmark::Kitten, Benchmark::ImageRag]
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown benchmark {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryGold {
    pub ta: Label,
    pub sp: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub instance_id: String,
    pub benchmark: Benchmark,
    pub category: CategoryTag,
    pub raw: Value,
}

/// Two raters, each scoring 0-4 per criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DreamBenchPayload {
    pub ta: [i64; 2],
    pub sp: [i64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldOverride {
    pub ta: u8,
    pub sp: u8,
}

/// Three votes in {0, 0.5, 1}, an optional re-annotation and, for two-subject
/// instances, a subject-preservation label per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagenHubPayload {
    pub votes: Vec<f64>,
    #[serde(default)]
    pub r#override: Option<GoldOverride>,
    #[serde(default)]
    pub per_subject_sp: Option<[u8; 2]>,
}

/// Five binary alignment votes and five 1-5 preservation ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KittenPayload {
    pub ta_votes: Vec<i64>,
    pub sp_ratings: Vec<i64>,
}

/// Positive iff both ratings are at least 3 and at least one is 4.
pub fn binarize_dreambench(r1: i64, r2: i64) -> Result<Label> {
    for r in [r1, r2] {
        if !(0..=4).contains(&r) {
            return Err(Error::domain(format!("rating {r} outside 0-4")));
        }
    }
    Ok(Label::from_bool(r1.min(r2) >= 3 && r1.max(r2) == 4))
}

fn label_bit(v: u8, what: &str) -> Result<Label> {
    Label::try_from(v).map_err(|_| Error::domain(format!("{what} must be 0 or 1, got {v}")))
}

/// Unanimous 1 votes make both labels positive; a re-annotation overrides the
/// votes; with per-subject labels, sp is their minimum.
pub fn binarize_imagenhub(
    votes: &[f64],
    override_: Option<GoldOverride>,
    per_subject_sp: Option<[u8; 2]>,
) -> Result<BinaryGold> {
    if votes.len() != 3 {
        return Err(Error::domain(format!("expected 3 votes, got {}", votes.len())));
    }
    if let Some(v) = votes.iter().find(|v| ![0.0, 0.5, 1.0].contains(*v)) {
        return Err(Error::domain(format!("vote {v} not in {{0, 0.5, 1}}")));
    }
    let unanimous = Label::from_bool(votes.iter().all(|v| *v == 1.0));
    if let Some(o) = override_ {
        return Ok(BinaryGold {
            ta: label_bit(o.ta, "override ta")?,
            sp: label_bit(o.sp, "override sp")?,
        });
    }
    let sp = match per_subject_sp {
        Some([a, b]) => label_bit(a, "subject sp")?.min(label_bit(b, "subject sp")?),
        None => unanimous,
    };
    Ok(BinaryGold { ta: unanimous, sp })
}

/// Majority of five alignment votes; preservation is positive iff at least
/// three ratings are 4 or higher and the mean is at least 4.
pub fn binarize_kitten(ta_votes: &[i64], sp_ratings: &[i64]) -> Result<BinaryGold> {
    if ta_votes.len() != 5 || sp_ratings.len() != 5 {
        return Err(Error::domain(format!(
            "expected 5 votes and 5 ratings, got {} and {}",
            ta_votes.len(),
            sp_ratings.len()
        )));
    }
    if ta_votes.iter().any(|v| !(0..=1).contains(v)) {
        return Err(Error::domain("alignment votes must be 0 or 1"));
    }
    if sp_ratings.iter().any(|r| !(1..=5).contains(r)) {
        return Err(Error::domain("preservation ratings must be in 1-5"));
    }
    let yes = ta_votes.iter().filter(|v| **v == 1).count();
    let high = sp_ratings.iter().filter(|r| **r >= 4).count();
    let sum: i64 = sp_ratings.iter().sum();
    Ok(BinaryGold {
        ta: Label::from_bool(yes >= 3),
        sp: Label::from_bool(high >= 3 && sum >= 20),
    })
}

pub fn combine_multi_subject(a: ScorePair, b: ScorePair) -> ScorePair {
    ScorePair {
        ta: a.ta.min(b.ta),
        sp: a.sp.min(b.sp),
    }
}

impl AnnotationRecord {
    pub fn gold(&self) -> Result<BinaryGold> {
        let payload_err = |e: serde_json::Error| {
            Error::domain(format!(
                "{} annotation {}: {e}",
                self.benchmark.as_str(),
                self.instance_id
            ))
        };
        match self.benchmark {
            Benchmark::DreamBenchPP => {
                let p: DreamBenchPayload = serde_json::from_value(self.raw.clone()).map_err(payload_err)?;
                Ok(BinaryGold {
                    ta: binarize_dreambench(p.ta[0], p.ta[1])?,
                    sp: binarize_dreambench(p.sp[0], p.sp[1])?,
                })
            }
            Benchmark::ImagenHub => {
                let p: ImagenHubPayload = serde_json::from_value(self.raw.clone()).map_err(payload_err)?;
                binarize_imagenhub(&p.votes, p.r#override, p.per_subject_sp)
            }
            Benchmark::Kitten => {
                let p: KittenPayload = serde_json::from_value(self.raw.clone()).map_err(payload_err)?;
                binarize_kitten(&p.ta_votes, &p.sp_ratings)
            }
            Benchmark::ImageRag => Err(Error::domain(
                "preference annotations have no binary gold; use the preference evaluation",
            )),
        }
    }
}
