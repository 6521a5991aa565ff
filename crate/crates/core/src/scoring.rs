//! Metric adapters producing `(ta, sp)` scores per instance.
//!
//! * `token-pair`: the judged model emits two binary tokens, the first for
//!   textual alignment and the second for subject preservation; each score is
//!   `P("1") / (P("0") + P("1"))` at its position.
//! * `embed-sim`: cosine similarity of embeddings, target image vs. prompt
//!   text (ta) and reference vs. target image (sp).
//! * `crop-ir`: the subject is detected and cropped in the target before the
//!   image-image cosine (sp only).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::assemble::TripletRecord;
use crate::clients::{ClientError, ClientSet, EmbedInput, ImageInputMode, ModelClient, TokenDist};
use crate::error::{Error, Result};
use crate::imaging::crop;
use crate::markup::MarkedPrompt;
use crate::par::bounded_map;
use crate::store::ImageStore;
use crate::types::{ImageRef, ScorePair};

pub const SCORES_KIND: &str = "scores";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "token-pair")]
    TokenPair,
    #[serde(rename = "embed-sim")]
    EmbedSim,
    #[serde(rename = "crop-ir")]
    CropIr,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::TokenPair, Metric::EmbedSim, Metric::CropIr];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::TokenPair => "token-pair",
            Metric::EmbedSim => "embed-sim",
            Metric::CropIr => "crop-ir",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown metric {s:?}")))
    }
}

/// Scores for one instance. A criterion the metric does not measure is `None`;
/// a failed instance carries `error` and no scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub instance_id: String,
    pub metric: String,
    pub ta: Option<f64>,
    pub sp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScoreRecord {
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    pub fn pair(&self) -> Option<ScorePair> {
        Some(ScorePair {
            ta: self.ta?,
            sp: self.sp?,
        })
    }
}

/// What a metric needs to score one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreInstance {
    pub id: String,
    pub image_ref: ImageRef,
    pub image_tgt: ImageRef,
    pub prompt: MarkedPrompt,
    pub entity: String,
}

impl From<&TripletRecord> for ScoreInstance {
    fn from(t: &TripletRecord) -> Self {
        Self {
            id: t.id.clone(),
            image_ref: t.image_ref.clone(),
            image_tgt: t.image_tgt.clone(),
            prompt: t.prompt.text.clone(),
            entity: t.prompt.entity.clone(),
        }
    }
}

/// Model input: the two images travel as separate attachments and the prompt
/// keeps its markup verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct FormattedInput {
    pub reference: ImageRef,
    pub target: ImageRef,
    pub prompt: MarkedPrompt,
}

pub fn format_input(reference: &ImageRef, target: &ImageRef, prompt: &str) -> Result<FormattedInput> {
    let prompt = MarkedPrompt::parse(prompt).map_err(|e| Error::domain(e.to_string()))?;
    Ok(FormattedInput {
        reference: reference.clone(),
        target: target.clone(),
        prompt,
    })
}

pub fn format_triplet(t: &TripletRecord) -> Result<FormattedInput> {
    format_input(&t.image_ref, &t.image_tgt, t.prompt.text.text())
}

/// `P("1") / (P("0") + P("1"))`.
pub fn binary_score(d: &TokenDist) -> Result<f64> {
    let (p0, p1) = (d.prob("0"), d.prob("1"));
    let denom = p0 + p1;
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::Score(format!(
            "position {}: P(\"0\") + P(\"1\") is {denom}",
            d.position
        )));
    }
    Ok(p1 / denom)
}

/// ta from the first position, sp from the second.
pub fn extract_scores(dists: &[TokenDist]) -> Result<ScorePair> {
    match dists {
        [ta, sp, ..] => ScorePair::new(binary_score(ta)?, binary_score(sp)?),
        _ => Err(Error::Score(format!("need 2 token positions, got {}", dists.len()))),
    }
}

fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::domain("cosine of a zero or non-finite vector"));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::domain(format!("vector lengths differ: {} vs {}", a.len(), b.len())));
    }
    let (a, b) = (normalized(a)?, normalized(b)?);
    Ok(a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0))
}

fn client_err(e: ClientError) -> Error {
    Error::Score(e.to_string())
}

/// Cosine between the reference and the top detection of `entity` in the
/// target; `floor` when nothing is detected.
pub fn crop_ir_score(
    reference: &image::RgbImage,
    target: &image::RgbImage,
    entity: &str,
    detector: &ModelClient,
    embedder: &ModelClient,
    floor: f64,
) -> Result<(f64, Option<crate::types::BBox>)> {
    let dets = detector.detect(target, entity).map_err(client_err)?;
    let Some(top) = dets.first() else {
        return Ok((floor, None));
    };
    let cropped = crop(target, top.bbox)?;
    let r = embedder.embed(EmbedInput::Image(reference)).map_err(client_err)?;
    let c = embedder.embed(EmbedInput::Image(&cropped)).map_err(client_err)?;
    Ok((cosine_score(&r, &c)?, Some(top.bbox)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub input_mode: ImageInputMode,
    pub crop_floor: f64,
    /// Largest tolerated share of failed instances.
    pub max_failure_rate: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            input_mode: ImageInputMode::Separate,
            crop_floor: -1.0,
            max_failure_rate: 0.1,
        }
    }
}

pub struct Scorer<'a> {
    pub store: &'a ImageStore,
    pub clients: &'a ClientSet,
    pub config: ScoringConfig,
}

impl Scorer<'_> {
    pub fn score_one(&self, inst: &ScoreInstance, metric: Metric) -> ScoreRecord {
        let mut rec = ScoreRecord {
            instance_id: inst.id.clone(),
            metric: metric.as_str().to_string(),
            ta: None,
            sp: None,
            raw: None,
            error: None,
        };
        match self.try_score(inst, metric) {
            Ok((ta, sp, raw)) => {
                rec.ta = ta;
                rec.sp = sp;
                rec.raw = Some(raw);
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        rec
    }

    fn try_score(&self, inst: &ScoreInstance, metric: Metric) -> Result<(Option<f64>, Option<f64>, Value)> {
        let reference = self.store.load(&inst.image_ref)?;
        let target = self.store.load(&inst.image_tgt)?;
        match metric {
            Metric::TokenPair => {
                let dists = self
                    .clients
                    .scorer
                    .infer_tokens(&reference, &target, &inst.prompt, self.config.input_mode)
                    .map_err(client_err)?;
                let s = extract_scores(&dists)?;
                Ok((Some(s.ta), Some(s.sp), json!({ "positions": dists })))
            }
            Metric::EmbedSim => {
                let e = &self.clients.embedder;
                let r = e.embed(EmbedInput::Image(&reference)).map_err(client_err)?;
                let t = e.embed(EmbedInput::Image(&target)).map_err(client_err)?;
                let p = e.embed(EmbedInput::Text(&inst.prompt.plain())).map_err(client_err)?;
                let ta = cosine_score(&t, &p)?;
                let sp = cosine_score(&r, &t)?;
                Ok((Some(ta), Some(sp), json!({ "cos_text": ta, "cos_image": sp })))
            }
            Metric::CropIr => {
                let (sp, bbox) = crop_ir_score(
                    &reference,
                    &target,
                    &inst.entity,
                    &self.clients.detector,
                    &self.clients.embedder,
                    self.config.crop_floor,
                )?;
                Ok((None, Some(sp), json!({ "cosine": sp, "crop": bbox })))
            }
        }
    }

    /// Scores every instance; failures become error records in place.
    pub fn batch_score(&self, instances: &[ScoreInstance], metric: Metric, concurrency: usize) -> Vec<ScoreRecord> {
        bounded_map(instances, concurrency, |inst| self.score_one(inst, metric))
    }
}

/// Errors when the share of failed records exceeds `ceiling`.
pub fn check_failure_rate(records: &[ScoreRecord], ceiling: f64) -> Result<()> {
    if records.is_empty() {
        return Ok(());
    }
    let failed = records.iter().filter(|r| r.is_error()).count();
    let rate = failed as f64 / records.len() as f64;
    if rate > ceiling {
        return Err(Error::Score(format!(
            "{failed} of {} instances failed ({:.1}% > {:.1}%)",
            records.len(),
            rate * 100.0,
            ceiling * 100.0
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::mock::{detection_key, gold_table, MockFixtures, MockSettings, MockTransport};
    use crate::clients::{Detection, ResponseCache};
    use crate::types::{BBox, Label};
    use image::{Rgb, RgbImage};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    #[test]
    fn formula_cases() {
        let d = |p0: f64, p1: f64| TokenDist {
            position: 0,
            probs: [("0".to_string(), p0), ("1".to_string(), p1)].into(),
        };
        assert!((binary_score(&d(0.2, 0.6)).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(binary_score(&d(0.3, 0.3)).unwrap(), 0.5);
        assert_eq!(binary_score(&d(0.0, 1.0)).unwrap(), 1.0);
        assert!(binary_score(&d(0.0, 0.0)).is_err());
        let s = extract_scores(&[d(0.2, 0.6), d(0.5, 0.5), d(1.0, 0.0)]).unwrap();
        assert!((s.ta - 0.75).abs() < 1e-12);
        assert_eq!(s.sp, 0.5);
        assert!(extract_scores(&[d(0.2, 0.6)]).is_err());
    }

    #[test]
    fn format_keeps_markup() {
        let r = ImageRef { path: "r".into(), width: 1, height: 1, content_hash: "a".into() };
        let t = ImageRef { content_hash: "b".into(), ..r.clone() };
        let f = format_input(&r, &t, "A <u>dog</u> sits on a mat").unwrap();
        assert_eq!(f.prompt.text(), "A <u>dog</u> sits on a mat");
        assert_ne!(f.reference, f.target);
        assert!(format_input(&r, &t, "<u>dog</u>").is_ok());
        assert!(format_input(&r, &t, "<u>a</u> <u>b</u>").is_err());
        assert!(format_input(&r, &t, "no span").is_err());
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine_score(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for i in 0..16 {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        let oracle = dot / (na.sqrt() * nb.sqrt());
        assert!((cosine_score(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    fn fixture(n: usize) -> (tempfile::TempDir, ImageStore, Vec<ScoreInstance>, MockFixtures) {
        let dir = tempfile::tempdir().unwrap();
        let store = ImageStore::new(dir.path());
        let mut fx = MockFixtures::default();
        let mut rows = Vec::new();
        let insts: Vec<ScoreInstance> = (0..n)
            .map(|i| {
                let r = store.save(&RgbImage::from_pixel(8, 8, Rgb([i as u8, 0, 0])), "i").unwrap();
                let t = store.save(&RgbImage::from_pixel(16, 16, Rgb([0, i as u8, 9])), "i").unwrap();
                let prompt = MarkedPrompt::parse(format!("A <u>dog</u> number {i}")).unwrap();
                rows.push((r.content_hash.clone(), t.content_hash.clone(), prompt.text().to_string(), i));
                ScoreInstance { id: format!("x{i}"), image_ref: r, image_tgt: t, prompt, entity: "dog".into() }
            })
            .collect();
        fx.gold = gold_table(rows.iter().map(|(r, t, p, i)| {
            (r.as_str(), t.as_str(), p.as_str(), Label::from_bool(i % 2 == 0), Label::from_bool(i % 3 == 0))
        }));
        (dir, store, insts, fx)
    }

    #[test]
    fn batch_properties() {
        let (_d, store, insts, mut fx) = fixture(12);
        fx.failures.insert(insts[5].image_tgt.content_hash.clone());
        let cache = Arc::new(ResponseCache::in_memory());
        let clients = ClientSet::uniform(Arc::new(MockTransport::new(fx, MockSettings::default())), Some(cache));
        let scorer = Scorer { store: &store, clients: &clients, config: ScoringConfig::default() };
        let one = scorer.batch_score(&insts, Metric::TokenPair, 1);
        assert_eq!(one.iter().filter(|r| r.is_error()).count(), 1);
        assert!(one[5].is_error());
        for (i, r) in one.iter().enumerate().filter(|(i, _)| *i != 5) {
            assert_eq!(r.ta.unwrap() > 0.5, i % 2 == 0);
            assert_eq!(r.sp.unwrap() > 0.5, i % 3 == 0);
        }
        let calls = clients.total_transport_calls();
        let eight = scorer.batch_score(&insts, Metric::TokenPair, 8);
        assert_eq!(one, eight);
        // the failed instance is not cached and is retried
        assert_eq!(clients.total_transport_calls(), calls + 1);
        assert!(check_failure_rate(&one, 0.1).is_ok());
        assert!(check_failure_rate(&one, 0.05).is_err());
    }

    #[test]
    fn crop_ir_cases() {
        let (_d, store, insts, mut fx) = fixture(2);
        let target = store.load(&insts[0].image_tgt).unwrap();
        fx.detections.insert(
            detection_key(&insts[0].image_tgt.content_hash, "dog"),
            vec![
                Detection { bbox: BBox::new(0, 0, 8, 8), confidence: 0.4 },
                Detection { bbox: BBox::new(0, 0, 16, 16), confidence: 0.9 },
            ],
        );
        let clients = ClientSet::uniform(Arc::new(MockTransport::new(fx, MockSettings::default())), None);
        let (s, bbox) = crop_ir_score(&target, &target, "dog", &clients.detector, &clients.embedder, -1.0).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(bbox, Some(BBox::new(0, 0, 16, 16)));
        let other = store.load(&insts[1].image_tgt).unwrap();
        assert_eq!(crop_ir_score(&target, &other, "dog", &clients.detector, &clients.embedder, -1.0).unwrap().0, -1.0);
        let scorer = Scorer { store: &store, clients: &clients, config: ScoringConfig::default() };
        let rec = scorer.score_one(&insts[0], Metric::CropIr);
        assert!(rec.ta.is_none() && rec.sp.is_some());
        let emb = scorer.score_one(&insts[0], Metric::EmbedSim);
        assert!(emb.ta.unwrap().abs() <= 1.0 && emb.sp.unwrap().abs() <= 1.0);
    }

    proptest! {
        #[test]
        fn score_in_unit_interval_and_monotone(p0 in 0.0f64..1.0, p1 in 0.0f64..1.0, bump in 1e-6f64..1.0) {
            prop_assume!(p0 + p1 > 0.0);
            let mk = |a: f64, b: f64| TokenDist { position: 0, probs: [("0".into(), a), ("1".into(), b)].into() };
            let s = binary_score(&mk(p0, p1)).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            if p0 > 0.0 {
                prop_assert!(binary_score(&mk(p0, p1 + bump)).unwrap() > s);
            }
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-5.0f64..5.0, 6),
            b in prop::collection::vec(-5.0f64..5.0, 6),
            k in 0.01f64..100.0,
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let ab = cosine_score(&a, &b).unwrap();
            prop_assert!((ab - cosine_score(&b, &a).unwrap()).abs() < 1e-12);
            let ka: Vec<f64> = a.iter().map(|x| x * k).collect();
            prop_assert!((ab - cosine_score(&ka, &b).unwrap()).abs() < 1e-9);
        }
    }
}
