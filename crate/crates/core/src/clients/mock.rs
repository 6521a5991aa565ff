//! Deterministic offline stand-ins for every model.
//!
//! Responses are pure functions of the request and a fixture table; nothing
//! in here holds mutable state.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{encode_png, Attachment, ClientError, Detection, Op, QualityCheck, Request, TokenDist, Transport};
use crate::imaging::{self, Mask};
use crate::markup::MarkedPrompt;
use crate::seed::{digest_parts, rng_for};
use crate::types::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityFixture {
    #[serde(default)]
    pub blurry: bool,
    #[serde(default = "yes")]
    pub subject_present: bool,
    #[serde(default)]
    pub overlay_text: bool,
}

fn yes() -> bool {
    true
}

impl QualityFixture {
    pub const CLEAN: QualityFixture = QualityFixture {
        blurry: false,
        subject_present: true,
        overlay_text: false,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldBits {
    pub ta: Label,
    pub sp: Label,
}

/// Lookup tables behind the mock models. Keys are pixel content hashes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MockFixtures {
    /// Keyed by [`detection_key`].
    pub detections: BTreeMap<String, Vec<Detection>>,
    pub quality: BTreeMap<String, QualityFixture>,
    /// Verdict for images missing from `quality`.
    pub quality_default: bool,
    /// Caption overrides keyed by source image hash.
    pub captions: BTreeMap<String, String>,
    /// Perturbation overrides keyed by input caption text.
    pub perturbations: BTreeMap<String, String>,
    /// Gold labels keyed by [`inference_key`].
    pub gold: BTreeMap<String, GoldBits>,
    /// Image hashes whose requests fail at the transport.
    pub failures: BTreeSet<String>,
}

impl MockFixtures {
    pub fn load(path: &Path) -> crate::Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| crate::Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn merge(&mut self, other: MockFixtures) {
        self.detections.extend(other.detections);
        self.quality.extend(other.quality);
        self.quality_default |= other.quality_default;
        self.captions.extend(other.captions);
        self.perturbations.extend(other.perturbations);
        self.gold.extend(other.gold);
        self.failures.extend(other.failures);
    }
}

pub fn detection_key(image_hash: &str, entity: &str) -> String {
    format!("{image_hash}|{}", entity.to_lowercase())
}

pub fn inference_key(ref_hash: &str, tgt_hash: &str, prompt: &str) -> String {
    digest_parts([ref_hash, tgt_hash, prompt])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InferenceMock {
    /// P("1") = 0.95 on gold 1, 0.05 on gold 0.
    Oracle,
    /// Oracle probabilities plus seeded uniform noise in `[-amplitude, amplitude]`.
    Noisy { amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSettings {
    pub embed_dim: usize,
    pub inference: InferenceMock,
    pub seed: u64,
}

impl Default for MockSettings {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            inference: InferenceMock::Oracle,
            seed: 0,
        }
    }
}

const CAPTION_TEMPLATES: [&str; 6] = [
    "A {e} stands next to a wooden fence on a sunny afternoon.",
    "A {e} rests on a green lawn beside a red ball.",
    "A {e} is seen near a stone wall under a cloudy sky.",
    "A {e} sits in front of a blue door on a quiet street.",
    "A {e} waits beside a small table in a bright kitchen.",
    "A {e} appears on a sandy beach with a boat in the distance.",
];

/// Word → plausible wrong alternative, used by the mock perturber.
pub const SWAP_DICTIONARY: &[(&str, &str)] = &[
    ("rock", "branch"),
    ("wooden", "metal"),
    ("fence", "hedge"),
    ("sunny", "rainy"),
    ("green", "brown"),
    ("lawn", "patio"),
    ("red", "blue"),
    ("ball", "frisbee"),
    ("stone", "brick"),
    ("wall", "fence"),
    ("cloudy", "clear"),
    ("sky", "ceiling"),
    ("blue", "yellow"),
    ("door", "window"),
    ("quiet", "busy"),
    ("street", "road"),
    ("small", "large"),
    ("table", "chair"),
    ("bright", "dim"),
    ("kitchen", "garage"),
    ("sandy", "rocky"),
    ("beach", "meadow"),
    ("boat", "kayak"),
    ("mat", "rug"),
];

pub struct MockTransport {
    fixtures: Arc<MockFixtures>,
    settings: MockSettings,
}

impl MockTransport {
    pub fn new(fixtures: MockFixtures, settings: MockSettings) -> Self {
        Self {
            fixtures: Arc::new(fixtures),
            settings,
        }
    }

    pub fn fixtures(&self) -> &MockFixtures {
        &self.fixtures
    }

    fn check_failure(&self, req: &Request) -> Result<(), ClientError> {
        let hit = req
            .attachments
            .iter()
            .map(Attachment::hash)
            .chain(["source_hash", "ref_hash", "tgt_hash"].iter().filter_map(|k| req.param_str(k)))
            .any(|h| self.fixtures.failures.contains(h));
        if hit {
            return Err(ClientError::Transport {
                attempts: 1,
                message: "injected mock failure".into(),
            });
        }
        Ok(())
    }

    fn caption(&self, req: &Request) -> Result<Value, ClientError> {
        let entity = req.param_str("entity").unwrap_or("subject");
        let source = req
            .param_str("source_hash")
            .or_else(|| req.attachments.first().map(Attachment::hash))
            .unwrap_or("");
        if let Some(text) = self.fixtures.captions.get(source) {
            return Ok(json!({ "text": text }));
        }
        let pick = digest_parts(["caption", source]);
        let idx = usize::from_str_radix(&pick[..4], 16).unwrap_or(0) % CAPTION_TEMPLATES.len();
        Ok(json!({ "text": CAPTION_TEMPLATES[idx].replace("{e}", entity) }))
    }

    fn perturb(&self, req: &Request) -> Result<Value, ClientError> {
        let caption = req
            .param_str("caption")
            .ok_or_else(|| ClientError::Precondition("missing caption".into()))?;
        if let Some(tagged) = self.fixtures.perturbations.get(caption) {
            return Ok(json!({ "text": tagged }));
        }
        Ok(json!({ "text": dictionary_swap(caption) }))
    }

    fn inpaint(&self, req: &Request) -> Result<Value, ClientError> {
        let (image, mask) = match req.attachments.as_slice() {
            [Attachment::Rgb { image, .. }, Attachment::Mask { mask, .. }] => (image, mask),
            _ => return Err(ClientError::Precondition("inpaint needs image + mask".into())),
        };
        let label = format!("inpaint|{}|{}", req.attachments[0].hash(), req.attachments[1].hash());
        let mut rng = rng_for(req.seed, &label);
        let mut out: RgbImage = image.as_ref().clone();
        for (x, y) in mask.iter_on() {
            out.put_pixel(x, y, Rgb([rng.random(), rng.random(), rng.random()]));
        }
        Ok(json!({ "png_base64": encode_png(&out) }))
    }

    fn detect(&self, req: &Request) -> Result<Value, ClientError> {
        let hash = req.attachments.first().map(Attachment::hash).unwrap_or("");
        let entity = req.text.as_deref().unwrap_or("");
        let dets = self
            .fixtures
            .detections
            .get(&detection_key(hash, entity))
            .cloned()
            .unwrap_or_default();
        Ok(json!({ "detections": dets }))
    }

    fn embed(&self, req: &Request) -> Result<Value, ClientError> {
        let content = match (req.attachments.first(), &req.text) {
            (Some(a), _) => format!("image:{}", a.hash()),
            (None, Some(t)) => format!("text:{t}"),
            (None, None) => return Err(ClientError::Precondition("nothing to embed".into())),
        };
        let mut rng = rng_for(self.settings.seed, &format!("embed|{content}"));
        let mut v: Vec<f64> = (0..self.settings.embed_dim.max(1))
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(json!({ "vector": v }))
    }

    fn judge(&self, req: &Request) -> Result<Value, ClientError> {
        let hash = req.attachments.first().map(Attachment::hash).unwrap_or("");
        let check: QualityCheck = serde_json::from_value(req.params.clone())
            .map_err(|e| ClientError::Precondition(format!("bad quality check: {e}")))?;
        let verdict = match self.fixtures.quality.get(hash) {
            None => self.fixtures.quality_default,
            Some(f) if f.blurry => false,
            Some(f) => match check {
                QualityCheck::SubjectPresent { .. } => f.subject_present,
                QualityCheck::NoOverlayText => !f.overlay_text,
            },
        };
        Ok(json!({ "verdict": verdict }))
    }

    fn infer(&self, req: &Request) -> Result<Value, ClientError> {
        let ref_hash = req.param_str("ref_hash").unwrap_or("");
        let tgt_hash = req.param_str("tgt_hash").unwrap_or("");
        let prompt = req.text.as_deref().unwrap_or("");
        let key = inference_key(ref_hash, tgt_hash, prompt);
        let gold = self
            .fixtures
            .gold
            .get(&key)
            .ok_or_else(|| ClientError::MissingFixture(format!("inference {key}")))?;
        let positions: Vec<TokenDist> = [gold.ta, gold.sp]
            .into_iter()
            .enumerate()
            .map(|(pos, bit)| {
                let base = if bit.is_pos() { 0.95 } else { 0.05 };
                let p = match self.settings.inference {
                    InferenceMock::Oracle => base,
                    InferenceMock::Noisy { amplitude } => {
                        let mut rng = rng_for(self.settings.seed, &format!("infer|{key}|{pos}"));
                        let a = amplitude.abs();
                        let noise = if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
                        (base + noise).clamp(0.0, 1.0)
                    }
                };
                TokenDist::binary(pos, p)
            })
            .collect();
        Ok(json!({ "positions": positions }))
    }
}

impl Transport for MockTransport {
    fn call(&self, req: &Request) -> Result<Value, ClientError> {
        self.check_failure(req)?;
        match req.op {
            Op::Caption => self.caption(req),
            Op::PerturbCaption => self.perturb(req),
            Op::Inpaint => self.inpaint(req),
            Op::Detect => self.detect(req),
            Op::Embed => self.embed(req),
            Op::JudgeQuality => self.judge(req),
            Op::InferTokens => self.infer(req),
        }
    }
}

/// Wraps the first dictionary word outside the subject span as
/// `<swap>word</swap><alternative>`. Returns the caption unchanged when no
/// dictionary word is found.
pub fn dictionary_swap(caption: &str) -> String {
    let (span_lo, span_hi) = MarkedPrompt::parse(caption)
        .map(|p| p.tagged_span())
        .unwrap_or((usize::MAX, usize::MAX));
    for (start, word) in words(caption) {
        let end = start + word.len();
        if start < span_hi && end > span_lo {
            continue;
        }
        let lower = word.to_lowercase();
        if let Some((_, alt)) = SWAP_DICTIONARY.iter().find(|(w, _)| *w == lower) {
            return format!("{}<swap>{word}</swap><{alt}>{}", &caption[..start], &caption[end..]);
        }
    }
    caption.to_string()
}

fn words(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphabetic(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, &text[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &text[s..]));
    }
    out.into_iter()
}

/// Gold table for the oracle inference mock, built from labeled instances.
pub fn gold_table<'a>(
    rows: impl IntoIterator<Item = (&'a str, &'a str, &'a str, Label, Label)>,
) -> BTreeMap<String, GoldBits> {
    rows.into_iter()
        .map(|(r, t, p, ta, sp)| (inference_key(r, t, p), GoldBits { ta, sp }))
        .collect()
}

/// Convenience: the content hash the mock sees for an image.
pub fn image_key(img: &RgbImage) -> String {
    imaging::content_hash(img)
}

/// Convenience: the content hash the mock sees for a mask.
pub fn mask_key(mask: &Mask) -> String {
    mask.content_hash()
}
