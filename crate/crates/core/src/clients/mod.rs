//! External model clients.
//!
//! Every model the pipeline depends on (captioner, inpainter, detector,
//! embedder, quality judge, two-token scorer) is reached through a
//! [`ModelClient`]. The client owns request encoding, response decoding and
//! post-condition enforcement; the wire is a [`Transport`], of which two are
//! shipped: [`http::HttpTransport`] (HTTP-JSON) and [`mock::MockTransport`]
//! (deterministic, offline). An optional [`cache::ResponseCache`] sits in
//! front of the transport.

pub mod cache;
pub mod http;
pub mod mock;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use base64::Engine;
use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::imaging::{self, Mask};
use crate::markup::MarkedPrompt;
use crate::seed::digest_parts;
use crate::types::BBox;

pub use cache::ResponseCache;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("request precondition violated: {0}")]
    Precondition(String),
    #[error("model returned empty text")]
    EmptyText,
    #[error("no mock fixture for {0}")]
    MissingFixture(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub endpoint: String,
    pub timeout_secs: f64,
    pub retries: u32,
    pub cache_enabled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080".into(),
            timeout_secs: 60.0,
            retries: 2,
            cache_enabled: true,
            api_key: None,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if !(self.timeout_secs > 0.0) {
            return Err(ClientError::Precondition(format!(
                "timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        Ok(())
    }
}

/// Distribution over token strings at one generated position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDist {
    pub position: usize,
    pub probs: BTreeMap<String, f64>,
}

impl TokenDist {
    pub fn binary(position: usize, p_one: f64) -> Self {
        let mut probs = BTreeMap::new();
        probs.insert("0".to_string(), 1.0 - p_one);
        probs.insert("1".to_string(), p_one);
        Self { position, probs }
    }

    pub fn prob(&self, token: &str) -> f64 {
        self.probs.get(token).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InpaintParams {
    pub eta: f64,
    pub guidance_scale: f64,
}

impl Default for InpaintParams {
    fn default() -> Self {
        Self {
            eta: 1.0,
            guidance_scale: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
}

/// Question posed to the quality judge. `true` answers mean "acceptable".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum QualityCheck {
    SubjectPresent { entity: String },
    NoOverlayText,
}

impl QualityCheck {
    pub fn question(&self) -> String {
        match self {
            QualityCheck::SubjectPresent { entity } => format!(
                "Is a {entity} clearly visible and in focus in this image? Answer yes or no."
            ),
            QualityCheck::NoOverlayText => {
                "Is this frame free of subtitles, captions and credits? Answer yes or no.".into()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageInputMode {
    /// Reference and target passed as two separate images.
    #[default]
    Separate,
    /// Both images concatenated side by side into one input.
    Concatenated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Caption,
    PerturbCaption,
    Inpaint,
    Detect,
    Embed,
    JudgeQuality,
    InferTokens,
}

impl Op {
    pub fn as_str(&self) -> &'static str {
        match self {
            Op::Caption => "caption",
            Op::PerturbCaption => "perturb_caption",
            Op::Inpaint => "inpaint",
            Op::Detect => "detect",
            Op::Embed => "embed",
            Op::JudgeQuality => "judge_quality",
            Op::InferTokens => "infer_tokens",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Attachment {
    Rgb { image: Arc<RgbImage>, hash: String },
    Mask { mask: Arc<Mask>, hash: String },
}

impl Attachment {
    pub fn rgb(image: RgbImage) -> Self {
        let hash = imaging::content_hash(&image);
        Attachment::Rgb {
            image: Arc::new(image),
            hash,
        }
    }

    pub fn mask(mask: Mask) -> Self {
        let hash = mask.content_hash();
        Attachment::Mask {
            mask: Arc::new(mask),
            hash,
        }
    }

    pub fn hash(&self) -> &str {
        match self {
            Attachment::Rgb { hash, .. } | Attachment::Mask { hash, .. } => hash,
        }
    }

    pub fn to_wire(&self) -> Value {
        let (kind, png) = match self {
            Attachment::Rgb { image, .. } => ("rgb", encode_png(image.as_ref())),
            Attachment::Mask { mask, .. } => ("mask", encode_png(&mask.to_gray())),
        };
        json!({ "kind": kind, "content_hash": self.hash(), "png_base64": png })
    }
}

fn encode_png<P, C>(img: &image::ImageBuffer<P, C>) -> String
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("png encoding to memory");
    base64::engine::general_purpose::STANDARD.encode(buf.into_inner())
}

pub fn decode_png_rgb(b64: &str) -> Result<RgbImage, ClientError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64)
        .map_err(|e| ClientError::BadResponse(format!("base64: {e}")))?;
    image::load_from_memory(&bytes)
        .map(|i| i.to_rgb8())
        .map_err(|e| ClientError::BadResponse(format!("image: {e}")))
}

#[derive(Debug, Clone)]
pub struct Request {
    pub op: Op,
    pub attachments: Vec<Attachment>,
    pub text: Option<String>,
    pub params: Value,
    pub seed: u64,
}

impl Request {
    pub fn new(op: Op) -> Self {
        Self {
            op,
            attachments: Vec::new(),
            text: None,
            params: json!({}),
            seed: 0,
        }
    }

    /// Digest of (operation, content hashes, text, params, seed).
    pub fn cache_key(&self) -> String {
        let hashes: Vec<&str> = self.attachments.iter().map(Attachment::hash).collect();
        let params = serde_json::to_string(&self.params).unwrap_or_default();
        let seed = self.seed.to_string();
        let mut parts = vec![self.op.as_str()];
        parts.extend(hashes);
        parts.push("|");
        parts.push(self.text.as_deref().unwrap_or(""));
        parts.push(&params);
        parts.push(&seed);
        digest_parts(parts)
    }

    pub fn to_wire(&self) -> Value {
        json!({
            "op": self.op.as_str(),
            "images": self.attachments.iter().map(Attachment::to_wire).collect::<Vec<_>>(),
            "text": self.text,
            "params": self.params,
            "seed": self.seed,
        })
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.params.get(key).and_then(Value::as_str)
    }
}

/// Moves a request to a model and returns its JSON response.
pub trait Transport: Send + Sync {
    fn call(&self, req: &Request) -> Result<Value, ClientError>;
}

#[derive(Debug, Deserialize)]
struct TextResponse {
    text: String,
}

#[derive(Debug, Deserialize)]
struct ImageResponse {
    png_base64: String,
}

#[derive(Debug, Deserialize)]
struct DetectResponse {
    detections: Vec<Detection>,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct VerdictResponse {
    verdict: bool,
}

#[derive(Debug, Deserialize)]
struct TokensResponse {
    positions: Vec<TokenDist>,
}

pub enum EmbedInput<'a> {
    Image(&'a RgbImage),
    Text(&'a str),
}

/// Instruction sent with the bbox-annotated target image.
pub const CAPTION_INSTRUCTION: &str = "Describe this image in one or two sentences. \
The {entity} inside the red bounding box must be mentioned explicitly by name and should be \
the focus of the description. Do not mention the bounding box itself.";

/// Few-shot instruction for single-detail caption corruption.
pub const PERTURBATION_PROMPT: &str = r#"Misalignment Injection Instructions (Short Captions)
1. Understand the Caption: Carefully read the short caption to fully grasp the scene it describes.
2. Identify and Swap: Select a single visual detail within the caption to modify. Replace this detail with a different, incorrect, but still plausible visual detail. For example, you might change a color, an object, or a location. Do not modify the underlined entity (if any).
3. Apply the Tags: Enclose the original visual detail within <swap> tags. Immediately after the closing </swap> tag, write the new, incorrect visual detail. There should be no space between the closing </swap> and the new word.
   Example: If the original sentence is "The cat sat on the red mat," and you want to change "red" to "blue," the result should be: "The cat sat on the <swap>red</swap><blue> mat."
4. Final Check: Ensure the modified caption is grammatically correct and reads naturally, even though it now contains a factual error. The sentence should be internally logical, despite contradicting the actual visual content. Again, ensure the underlined entity (if any) remains completely unchanged.

Here are some examples:

INPUT: A woman is sitting in a living room, and <u>she</u> is looking at something with a concerned expression
OUTPUT: A woman is sitting in a <swap>living room</swap><kitchen>, and <u>she</u> is looking at something with a concerned expression.

INPUT: Two men are sitting on a leather couch in a living room. One <u>man</u> is sitting on the left side of the couch, looking at a laptop. The other man is sitting on the right side of the couch, talking on a phone. The room is decorated with various items, including a large model of a spaceship.
OUTPUT: Two men are sitting on a leather couch in a living room. One <u>man</u> is sitting on the left side of the couch, looking at a laptop. The other man is sitting on the right side of the couch, talking on a phone. The room is decorated with various items, including a large model of a <swap>spaceship</swap><sailboat>.

Now it's your turn! Follow the instructions. Answer only with the corrupted sentence, Don't forget to add the tags.

INPUT: {caption}

OUTPUT:"#;

/// Typed access to one model behind a transport, with optional caching.
pub struct ModelClient {
    transport: Arc<dyn Transport>,
    cache: Option<Arc<ResponseCache>>,
    calls: AtomicU64,
}

impl ModelClient {
    pub fn new(transport: Arc<dyn Transport>, cache: Option<Arc<ResponseCache>>) -> Self {
        Self {
            transport,
            cache,
            calls: AtomicU64::new(0),
        }
    }

    /// Number of requests that reached the transport.
    pub fn transport_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn call(&self, req: &Request) -> Result<Value, ClientError> {
        let key = self.cache.as_ref().map(|_| req.cache_key());
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(hit) = cache.get(key) {
                return Ok(hit);
            }
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let value = self.transport.call(req)?;
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            cache.put(key, &value);
        }
        Ok(value)
    }

    fn call_typed<T: DeserializeOwned>(&self, req: &Request) -> Result<T, ClientError> {
        let v = self.call(req)?;
        serde_json::from_value(v)
            .map_err(|e| ClientError::BadResponse(format!("{}: {e}", req.op.as_str())))
    }

    /// Captions an image whose subject is already outlined. `source_hash` names
    /// the un-annotated image for provenance and fixture lookup.
    pub fn caption(
        &self,
        annotated: &RgbImage,
        entity: &str,
        bbox: BBox,
        source_hash: &str,
    ) -> Result<String, ClientError> {
        bbox.check_within(annotated.width(), annotated.height())
            .map_err(|e| ClientError::Precondition(e.to_string()))?;
        let mut req = Request::new(Op::Caption);
        req.attachments.push(Attachment::rgb(annotated.clone()));
        req.text = Some(CAPTION_INSTRUCTION.replace("{entity}", entity));
        req.params = json!({ "entity": entity, "bbox": bbox, "source_hash": source_hash });
        let resp: TextResponse = self.call_typed(&req)?;
        let text = resp.text.trim().to_string();
        if text.is_empty() {
            return Err(ClientError::EmptyText);
        }
        Ok(text)
    }

    /// Asks for a single-detail corruption, returned with `<swap>` tags.
    pub fn perturb_caption(&self, caption: &str) -> Result<String, ClientError> {
        MarkedPrompt::parse(caption).map_err(|e| ClientError::Precondition(e.to_string()))?;
        let mut req = Request::new(Op::PerturbCaption);
        req.text = Some(PERTURBATION_PROMPT.replace("{caption}", caption));
        req.params = json!({ "caption": caption });
        let resp: TextResponse = self.call_typed(&req)?;
        let text = resp.text.trim().to_string();
        if text.is_empty() {
            return Err(ClientError::EmptyText);
        }
        Ok(text)
    }

    /// Inpaints `patch`; pixels outside the patch are copied from the input
    /// regardless of what the model returns.
    pub fn inpaint(
        &self,
        img: &RgbImage,
        patch: &Mask,
        params: InpaintParams,
        seed: u64,
    ) -> Result<RgbImage, ClientError> {
        if patch.dims() != img.dimensions() {
            return Err(ClientError::Precondition("mask dims differ from image".into()));
        }
        if !(params.guidance_scale > 0.0) {
            return Err(ClientError::Precondition("guidance_scale must be positive".into()));
        }
        if patch.area() == 0 {
            return Ok(img.clone());
        }
        let mut req = Request::new(Op::Inpaint);
        req.attachments.push(Attachment::rgb(img.clone()));
        req.attachments.push(Attachment::mask(patch.clone()));
        req.params = json!({ "eta": params.eta, "guidance_scale": params.guidance_scale });
        req.seed = seed;
        let resp: ImageResponse = self.call_typed(&req)?;
        let generated = decode_png_rgb(&resp.png_base64)?;
        imaging::composite(img, &generated, patch)
            .map_err(|_| ClientError::BadResponse("inpainted image has wrong dimensions".into()))
    }

    /// Detections inside the image, sorted by descending confidence.
    pub fn detect(&self, img: &RgbImage, entity: &str) -> Result<Vec<Detection>, ClientError> {
        let mut req = Request::new(Op::Detect);
        req.attachments.push(Attachment::rgb(img.clone()));
        req.text = Some(entity.to_string());
        let resp: DetectResponse = self.call_typed(&req)?;
        let mut dets: Vec<Detection> = resp
            .detections
            .into_iter()
            .filter(|d| d.bbox.check_within(img.width(), img.height()).is_ok())
            .filter(|d| d.confidence.is_finite())
            .collect();
        dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        Ok(dets)
    }

    /// L2-normalized embedding.
    pub fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f64>, ClientError> {
        let mut req = Request::new(Op::Embed);
        match input {
            EmbedInput::Image(img) => {
                req.attachments.push(Attachment::rgb(img.clone()));
                req.params = json!({ "modality": "image" });
            }
            EmbedInput::Text(t) => {
                req.text = Some(t.to_string());
                req.params = json!({ "modality": "text" });
            }
        }
        let resp: EmbedResponse = self.call_typed(&req)?;
        let norm = resp.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(ClientError::BadResponse("zero or non-finite embedding".into()));
        }
        Ok(resp.vector.iter().map(|v| v / norm).collect())
    }

    pub fn judge_quality(&self, img: &RgbImage, check: &QualityCheck) -> Result<bool, ClientError> {
        let mut req = Request::new(Op::JudgeQuality);
        req.attachments.push(Attachment::rgb(img.clone()));
        req.text = Some(check.question());
        req.params = serde_json::to_value(check).unwrap_or_default();
        let resp: VerdictResponse = self.call_typed(&req)?;
        Ok(resp.verdict)
    }

    /// Per-position token distributions for the first generated positions.
    pub fn infer_tokens(
        &self,
        reference: &RgbImage,
        target: &RgbImage,
        prompt: &MarkedPrompt,
        mode: ImageInputMode,
    ) -> Result<Vec<TokenDist>, ClientError> {
        let mut req = Request::new(Op::InferTokens);
        let ref_hash = imaging::content_hash(reference);
        let tgt_hash = imaging::content_hash(target);
        match mode {
            ImageInputMode::Separate => {
                req.attachments.push(Attachment::rgb(reference.clone()));
                req.attachments.push(Attachment::rgb(target.clone()));
            }
            ImageInputMode::Concatenated => {
                req.attachments
                    .push(Attachment::rgb(imaging::hconcat(reference, target)));
            }
        }
        req.text = Some(prompt.text().to_string());
        req.params = json!({ "ref_hash": ref_hash, "tgt_hash": tgt_hash, "mode": mode });
        let resp: TokensResponse = self.call_typed(&req)?;
        let mut positions = resp.positions;
        if positions.len() < 2 {
            return Err(ClientError::BadResponse(format!(
                "expected at least 2 token positions, got {}",
                positions.len()
            )));
        }
        for d in &mut positions {
            if d.probs.values().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(ClientError::BadResponse("negative or non-finite probability".into()));
            }
            d.probs.entry("0".into()).or_insert(0.0);
            d.probs.entry("1".into()).or_insert(0.0);
        }
        Ok(positions)
    }
}

/// One client per model role.
#[derive(Clone)]
pub struct ClientSet {
    pub captioner: Arc<ModelClient>,
    pub inpainter: Arc<ModelClient>,
    pub detector: Arc<ModelClient>,
    pub embedder: Arc<ModelClient>,
    pub judge: Arc<ModelClient>,
    pub scorer: Arc<ModelClient>,
}

impl ClientSet {
    /// All roles served by one transport, sharing one optional cache.
    pub fn uniform(transport: Arc<dyn Transport>, cache: Option<Arc<ResponseCache>>) -> Self {
        let make = || Arc::new(ModelClient::new(transport.clone(), cache.clone()));
        Self {
            captioner: make(),
            inpainter: make(),
            detector: make(),
            embedder: make(),
            judge: make(),
            scorer: make(),
        }
    }

    pub fn total_transport_calls(&self) -> u64 {
        [
            &self.captioner,
            &self.inpainter,
            &self.detector,
            &self.embedder,
            &self.judge,
            &self.scorer,
        ]
        .iter()
        .map(|c| c.transport_calls())
        .sum()
    }
}
