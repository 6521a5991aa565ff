//! Prompts for target images: captions of the outlined subject (positives),
//! captions borrowed from another image of the same entity type (swap
//! negatives), and single-detail corruptions of positives (hard negatives).

use std::collections::BTreeMap;
use std::fmt;

use image::RgbImage;
use rand::seq::SliceRandom;
use regex::RegexBuilder;
use serde::{Deserialize, Serialize};

use crate::clients::ModelClient;
use crate::error::{Error, Result};
use crate::imaging::{draw_bbox, OutlineStyle};
use crate::markup::{MarkedPrompt, CLOSE, OPEN};
use crate::par::bounded_map;
use crate::seed::{digest_parts, rng_for};
use crate::types::{BBox, ImageRef, Label};

pub const SWAP_OPEN: &str = "<swap>";
pub const SWAP_CLOSE: &str = "</swap>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Positive,
    SwapNegative,
    HardNegative,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Positive => "positive",
            PromptKind::SwapNegative => "swap_negative",
            PromptKind::HardNegative => "hard_negative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub text: MarkedPrompt,
    /// Byte range of the subject inside `text`, tags excluded.
    pub subject_span: (usize, usize),
    pub ta_label: Label,
    pub kind: PromptKind,
    pub source_image: ImageRef,
    pub entity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_from: Option<String>,
}

impl PromptRecord {
    pub fn new(
        text: MarkedPrompt,
        kind: PromptKind,
        source_image: ImageRef,
        entity: &str,
        derived_from: Option<String>,
    ) -> Self {
        let id = digest_parts([kind.as_str(), source_image.content_hash.as_str(), text.text()])[..24].to_string();
        Self {
            id,
            subject_span: text.span(),
            ta_label: Label::from_bool(kind == PromptKind::Positive),
            text,
            kind,
            source_image,
            entity: entity.to_string(),
            derived_from,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subject_span != self.text.span() {
            return Err(Error::domain(format!("prompt {}: subject span out of sync", self.id)));
        }
        if self.ta_label.is_pos() != (self.kind == PromptKind::Positive) {
            return Err(Error::domain(format!("prompt {}: label does not match kind", self.id)));
        }
        if self.kind == PromptKind::HardNegative && self.derived_from.is_none() {
            return Err(Error::domain(format!("prompt {}: hard negative without source", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRejectReason {
    MissingImage,
    InvalidBbox,
    SubjectMissing,
    ClientError,
    MalformedTags,
    SubjectModified,
    MultiEdit,
    NoChange,
    NoDonor,
}

impl PromptRejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptRejectReason::MissingImage => "missing_image",
            PromptRejectReason::InvalidBbox => "invalid_bbox",
            PromptRejectReason::SubjectMissing => "subject_missing",
            PromptRejectReason::ClientError => "client_error",
            PromptRejectReason::MalformedTags => "malformed_tags",
            PromptRejectReason::SubjectModified => "subject_modified",
            PromptRejectReason::MultiEdit => "multi_edit",
            PromptRejectReason::NoChange => "no_change",
            PromptRejectReason::NoDonor => "no_donor",
        }
    }
}

impl fmt::Display for PromptRejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sidecar log line for a prompt that was not emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRejection {
    /// Target image hash or source prompt id.
    pub source: String,
    pub kind: PromptKind,
    pub reason: PromptRejectReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl PromptRejection {
    fn new(source: &str, kind: PromptKind, reason: PromptRejectReason, detail: Option<String>) -> Self {
        Self {
            source: source.to_string(),
            kind,
            reason,
            detail,
        }
    }
}

/// Byte range of the first mention of `entity` in `caption`: case-insensitive,
/// on word boundaries, multi-word entities matched as phrases, and a plural
/// `s`/`es` suffix allowed.
pub fn find_subject_mention(caption: &str, entity: &str) -> Option<(usize, usize)> {
    let words: Vec<String> = entity.split_whitespace().map(regex::escape).collect();
    if words.is_empty() {
        return None;
    }
    let pattern = format!(r"\b{}(?:e?s)?\b", words.join(r"\s+"));
    let re = RegexBuilder::new(&pattern).case_insensitive(true).build().ok()?;
    re.find(caption).map(|m| (m.start(), m.end()))
}

/// Wraps the first mention of `entity` in `<u>…</u>`, keeping its casing.
pub fn mark_subject(caption: &str, entity: &str) -> Option<MarkedPrompt> {
    if caption.contains(OPEN) || caption.contains(CLOSE) {
        return None;
    }
    let (s, e) = find_subject_mention(caption, entity)?;
    let text = format!("{}{OPEN}{}{CLOSE}{}", &caption[..s], &caption[s..e], &caption[e..]);
    MarkedPrompt::parse(text).ok()
}

/// Captions `tgt` with its subject outlined and marks the subject mention.
pub fn caption_positive(
    tgt: &ImageRef,
    tgt_image: &RgbImage,
    bbox: BBox,
    entity: &str,
    captioner: &ModelClient,
) -> std::result::Result<PromptRecord, PromptRejection> {
    let reject = |reason, detail| PromptRejection::new(&tgt.content_hash, PromptKind::Positive, reason, detail);
    let annotated = draw_bbox(tgt_image, bbox, OutlineStyle::default())
        .map_err(|e| reject(PromptRejectReason::InvalidBbox, Some(e.to_string())))?;
    let caption = captioner
        .caption(&annotated, entity, bbox, &tgt.content_hash)
        .map_err(|e| reject(PromptRejectReason::ClientError, Some(e.to_string())))?;
    let marked = mark_subject(&caption, entity)
        .ok_or_else(|| reject(PromptRejectReason::SubjectMissing, Some(caption.clone())))?;
    Ok(PromptRecord::new(marked, PromptKind::Positive, tgt.clone(), entity, None))
}

/// Reattaches a positive caption to a different image of the same entity type.
pub fn swap_negative(donor: &PromptRecord, recipient: &ImageRef, same_entity: bool) -> Result<PromptRecord> {
    if donor.kind != PromptKind::Positive {
        return Err(Error::domain("swap donor must be a positive prompt"));
    }
    if !same_entity {
        return Err(Error::domain("swap requires the same entity type"));
    }
    if donor.source_image.content_hash == recipient.content_hash {
        return Err(Error::domain("swap donor and recipient are the same image"));
    }
    Ok(PromptRecord::new(
        donor.text.clone(),
        PromptKind::SwapNegative,
        recipient.clone(),
        &donor.entity,
        Some(donor.id.clone()),
    ))
}

/// A single replacement; `offset` is a byte position in the original text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapEdit {
    pub original: String,
    pub replacement: String,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwapParse {
    pub original: String,
    pub corrupted: String,
    pub edit: SwapEdit,
}

fn has_stray_brackets(s: &str) -> bool {
    s.replace(OPEN, "").replace(CLOSE, "").contains(['<', '>'])
}

/// Parses exactly one `<swap>X</swap><Y>` group. The bracketless
/// `<swap>X</swap>Y` form is accepted too, with `Y` running to the next
/// whitespace or punctuation.
pub fn parse_swap_tags(tagged: &str) -> Result<SwapParse> {
    let bad = |m: &str| Error::Parse(format!("swap tags: {m}"));
    let opens = tagged.matches(SWAP_OPEN).count();
    let closes = tagged.matches(SWAP_CLOSE).count();
    if opens == 0 && closes == 0 {
        return Err(bad("no swap group"));
    }
    if opens != 1 || closes != 1 {
        return Err(bad(&format!("expected one group, found {opens} open / {closes} close tags")));
    }
    let open_at = tagged.find(SWAP_OPEN).unwrap_or_default();
    let close_at = tagged.find(SWAP_CLOSE).unwrap_or_default();
    if close_at < open_at {
        return Err(bad("closing tag before opening tag"));
    }
    let prefix = &tagged[..open_at];
    let original = &tagged[open_at + SWAP_OPEN.len()..close_at];
    let rest = &tagged[close_at + SWAP_CLOSE.len()..];
    if original.trim().is_empty() {
        return Err(bad("empty original detail"));
    }
    if original.contains(['<', '>']) {
        return Err(bad("nested or malformed tags inside the swap group"));
    }
    let (replacement, suffix) = if let Some(inner) = rest.strip_prefix('<') {
        let end = inner.find('>').ok_or_else(|| bad("unterminated replacement"))?;
        let r = &inner[..end];
        if r.contains('<') {
            return Err(bad("malformed replacement"));
        }
        (r, &inner[end + 1..])
    } else {
        let end = rest
            .char_indices()
            .find(|(_, c)| c.is_whitespace() || (c.is_ascii_punctuation() && *c != '-' && *c != '\''))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        (&rest[..end], &rest[end..])
    };
    if replacement.trim().is_empty() {
        return Err(bad("empty replacement"));
    }
    if has_stray_brackets(prefix) || has_stray_brackets(suffix) {
        return Err(bad("stray angle brackets outside the swap group"));
    }
    Ok(SwapParse {
        original: format!("{prefix}{original}{suffix}"),
        corrupted: format!("{prefix}{replacement}{suffix}"),
        edit: SwapEdit {
            original: original.to_string(),
            replacement: replacement.to_string(),
            offset: prefix.len(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Validation {
    pub ok: bool,
    pub reason: Option<PromptRejectReason>,
}

impl Validation {
    const OK: Validation = Validation { ok: true, reason: None };

    fn fail(reason: PromptRejectReason) -> Self {
        Self {
            ok: false,
            reason: Some(reason),
        }
    }
}

/// Checks that `corrupted` is `orig` with exactly `edit` applied, outside the
/// subject span and its tags.
pub fn validate_perturbation(orig: &PromptRecord, corrupted: &str, edit: &SwapEdit) -> Validation {
    let text = orig.text.text();
    if corrupted == text || edit.original == edit.replacement {
        return Validation::fail(PromptRejectReason::NoChange);
    }
    let (ts, te) = orig.text.tagged_span();
    let prefix = text.bytes().zip(corrupted.bytes()).take_while(|(a, b)| a == b).count();
    let max_suffix = text.len().min(corrupted.len()) - prefix;
    let suffix = text
        .bytes()
        .rev()
        .zip(corrupted.bytes().rev())
        .take(max_suffix)
        .take_while(|(a, b)| a == b)
        .count();
    let (diff_lo, diff_hi) = (prefix, text.len() - suffix);
    let touches_span = diff_lo < te && ts < diff_hi.max(diff_lo + 1);
    let same_subject = MarkedPrompt::parse(corrupted)
        .map(|p| p.subject() == orig.text.subject())
        .unwrap_or(false);
    if touches_span || !same_subject {
        return Validation::fail(PromptRejectReason::SubjectModified);
    }
    let end = edit.offset + edit.original.len();
    if text.get(edit.offset..end) != Some(edit.original.as_str()) {
        return Validation::fail(PromptRejectReason::MultiEdit);
    }
    if end > ts && edit.offset < te {
        return Validation::fail(PromptRejectReason::SubjectModified);
    }
    let applied = format!("{}{}{}", &text[..edit.offset], edit.replacement, &text[end..]);
    if applied != corrupted {
        return Validation::fail(PromptRejectReason::MultiEdit);
    }
    Validation::OK
}

/// Requests a single-detail corruption of a positive and validates it.
pub fn perturb_hard_negative(
    positive: &PromptRecord,
    perturber: &ModelClient,
) -> std::result::Result<PromptRecord, PromptRejection> {
    let reject = |reason, detail| PromptRejection::new(&positive.id, PromptKind::HardNegative, reason, detail);
    if positive.kind != PromptKind::Positive {
        return Err(reject(PromptRejectReason::MalformedTags, Some("source is not a positive".into())));
    }
    let tagged = perturber
        .perturb_caption(positive.text.text())
        .map_err(|e| reject(PromptRejectReason::ClientError, Some(e.to_string())))?;
    let parsed = parse_swap_tags(&tagged).map_err(|e| reject(PromptRejectReason::MalformedTags, Some(e.to_string())))?;
    // The edit offset refers to the model's echo of the caption; when the echo
    // differs from the positive, validation reports the extra edits.
    let verdict = validate_perturbation(positive, &parsed.corrupted, &parsed.edit);
    if let Some(reason) = verdict.reason {
        return Err(reject(reason, Some(tagged)));
    }
    let text = MarkedPrompt::parse(parsed.corrupted)
        .map_err(|e| reject(PromptRejectReason::SubjectModified, Some(e.to_string())))?;
    Ok(PromptRecord::new(
        text,
        PromptKind::HardNegative,
        positive.source_image.clone(),
        &positive.entity,
        Some(positive.id.clone()),
    ))
}

/// A target image to write prompts for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTarget {
    pub image: ImageRef,
    pub bbox: BBox,
    pub entity: String,
    /// Subject group; swap donors must come from a different group.
    pub group: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub swaps_per_target: usize,
    pub hard_negatives: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            swaps_per_target: 1,
            hard_negatives: true,
        }
    }
}

#[derive(Debug, Default)]
pub struct PromptOutput {
    pub prompts: Vec<PromptRecord>,
    pub rejections: Vec<PromptRejection>,
}

impl PromptOutput {
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for p in &self.prompts {
            *m.entry(format!("kept.{}", p.kind.as_str())).or_default() += 1;
        }
        for r in &self.rejections {
            *m.entry(format!("rejected.{}", r.reason)).or_default() += 1;
        }
        m
    }
}

/// Runs all three prompt kinds over `targets`. `load` returns the decoded
/// target image or a reason it is unavailable.
pub fn generate_prompts(
    targets: &[PromptTarget],
    load: impl Fn(&ImageRef) -> Result<RgbImage> + Sync,
    captioner: &ModelClient,
    perturber: &ModelClient,
    config: PromptConfig,
    seed: u64,
    concurrency: usize,
) -> PromptOutput {
    let mut out = PromptOutput::default();
    let captions = bounded_map(targets, concurrency, |t| {
        let img = load(&t.image).map_err(|e| {
            PromptRejection::new(
                &t.image.content_hash,
                PromptKind::Positive,
                PromptRejectReason::MissingImage,
                Some(e.to_string()),
            )
        })?;
        caption_positive(&t.image, &img, t.bbox, &t.entity, captioner)
    });
    let mut positives: Vec<(usize, PromptRecord)> = Vec::new();
    for (i, c) in captions.into_iter().enumerate() {
        match c {
            Ok(p) => positives.push((i, p)),
            Err(r) => out.rejections.push(r),
        }
    }

    let mut swaps = Vec::new();
    if config.swaps_per_target > 0 {
        for (i, t) in targets.iter().enumerate() {
            let own = positives.iter().find(|(j, _)| *j == i).map(|(_, p)| p.text.text());
            let mut donors: Vec<&PromptRecord> = positives
                .iter()
                .filter(|(j, p)| {
                    let d = &targets[*j];
                    *j != i
                        && own != Some(p.text.text())
                        && d.group != t.group
                        && d.entity.eq_ignore_ascii_case(&t.entity)
                        && p.source_image.content_hash != t.image.content_hash
                })
                .map(|(_, p)| p)
                .collect();
            if donors.is_empty() {
                out.rejections.push(PromptRejection::new(
                    &t.image.content_hash,
                    PromptKind::SwapNegative,
                    PromptRejectReason::NoDonor,
                    None,
                ));
                continue;
            }
            let mut rng = rng_for(seed, &format!("swap|{}", t.image.content_hash));
            donors.shuffle(&mut rng);
            for donor in donors.into_iter().take(config.swaps_per_target) {
                match swap_negative(donor, &t.image, true) {
                    Ok(p) => swaps.push(p),
                    Err(e) => out.rejections.push(PromptRejection::new(
                        &donor.id,
                        PromptKind::SwapNegative,
                        PromptRejectReason::NoDonor,
                        Some(e.to_string()),
                    )),
                }
            }
        }
    }

    let mut hard = Vec::new();
    if config.hard_negatives {
        let results = bounded_map(&positives, concurrency, |(_, p)| perturb_hard_negative(p, perturber));
        for r in results {
            match r {
                Ok(p) => hard.push(p),
                Err(r) => out.rejections.push(r),
            }
        }
    }

    out.prompts.extend(positives.into_iter().map(|(_, p)| p));
    out.prompts.extend(swaps);
    out.prompts.extend(hard);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::mock::{MockFixtures, MockSettings, MockTransport};
    use crate::imaging::content_hash;
    use image::Rgb;
    use std::sync::Arc;

    const LIZARD_IN: &str = "A lizard is perched on a rock, surrounded by other rocks and foliage. The <u>lizard</u> is facing the camera, with its head raised and its tail curled behind it.";
    const LIZARD_OUT: &str = "A lizard is perched on a <swap>rock</swap><branch>, surrounded by other rocks and foliage. The <u>lizard</u> is facing the camera, with its head raised and its tail curled behind it.";

    fn img_ref(tag: &str) -> ImageRef {
        ImageRef {
            path: format!("{tag}.png"),
            width: 10,
            height: 10,
            content_hash: format!("hash-{tag}"),
        }
    }

    fn positive(text: &str) -> PromptRecord {
        PromptRecord::new(MarkedPrompt::parse(text).unwrap(), PromptKind::Positive, img_ref("a"), "lizard", None)
    }

    fn mock(fx: MockFixtures) -> ModelClient {
        ModelClient::new(Arc::new(MockTransport::new(fx, MockSettings::default())), None)
    }

    #[test]
    fn mentions() {
        assert_eq!(mark_subject("A dog runs on grass", "dog").unwrap().text(), "A <u>dog</u> runs on grass");
        assert_eq!(
            mark_subject("A Dog chases another dog", "dog").unwrap().text(),
            "A <u>Dog</u> chases another dog"
        );
        assert_eq!(mark_subject("Two dogs play", "dog").unwrap().subject(), "dogs");
        assert_eq!(
            mark_subject("A teddy  bear on a bed", "teddy bear").unwrap().subject(),
            "teddy  bear"
        );
        assert!(mark_subject("A hotdog stand", "dog").is_none());
        assert!(mark_subject("A cat sleeps", "dog").is_none());
    }

    #[test]
    fn lizard_parses_exactly() {
        let p = parse_swap_tags(LIZARD_OUT).unwrap();
        assert_eq!(p.original, LIZARD_IN);
        assert_eq!(
            p.corrupted,
            "A lizard is perched on a branch, surrounded by other rocks and foliage. The <u>lizard</u> is facing the camera, with its head raised and its tail curled behind it."
        );
        assert_eq!(p.edit.original, "rock");
        assert_eq!(p.edit.replacement, "branch");
        assert_eq!(&LIZARD_IN[p.edit.offset..p.edit.offset + 4], "rock");
        let v = validate_perturbation(&positive(LIZARD_IN), &p.corrupted, &p.edit);
        assert_eq!(v, Validation::OK);
    }

    #[test]
    fn swap_tag_forms() {
        let p = parse_swap_tags("The cat sat on the <swap>red</swap><blue> mat.").unwrap();
        assert_eq!(p.corrupted, "The cat sat on the blue mat.");
        let lenient = parse_swap_tags("The cat sat on the <swap>red</swap>blue mat.").unwrap();
        assert_eq!(lenient.corrupted, p.corrupted);
        let end = parse_swap_tags("on the <swap>mat</swap>rug.").unwrap();
        assert_eq!(end.corrupted, "on the rug.");
        let multi = parse_swap_tags("in a <swap>living room</swap><kitchen>, and <u>she</u> looks").unwrap();
        assert_eq!(multi.corrupted, "in a kitchen, and <u>she</u> looks");
    }

    #[test]
    fn swap_tag_errors() {
        for bad in [
            "no tags at all",
            "a <swap>red</swap><blue> and <swap>big</swap><small> cat",
            "a <swap>re<swap>d</swap></swap><blue> cat",
            "a <swap>red</swap><blue cat",
            "a </swap>red<swap><blue> cat",
            "a <swap></swap><blue> cat",
            "a <swap>red</swap><> cat",
            "a <swap>red</swap> blue cat",
            "a <b>bold</b> <swap>red</swap><blue> cat",
        ] {
            assert!(parse_swap_tags(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn validator_rejections() {
        let pos = positive(LIZARD_IN);
        let subject_edit = SwapEdit {
            original: "lizard".into(),
            replacement: "gecko".into(),
            offset: LIZARD_IN.find("<u>lizard").unwrap() + 3,
        };
        let corrupted = LIZARD_IN.replace("<u>lizard</u>", "<u>gecko</u>");
        let v = validate_perturbation(&pos, &corrupted, &subject_edit);
        assert_eq!(v.reason, Some(PromptRejectReason::SubjectModified));

        let p = parse_swap_tags(LIZARD_OUT).unwrap();
        let extra = p.corrupted.replace("foliage", "grass");
        let v = validate_perturbation(&pos, &extra, &p.edit);
        assert_eq!(v.reason, Some(PromptRejectReason::MultiEdit));

        let same = SwapEdit {
            original: "rock".into(),
            replacement: "rock".into(),
            offset: p.edit.offset,
        };
        assert_eq!(validate_perturbation(&pos, LIZARD_IN, &same).reason, Some(PromptRejectReason::NoChange));
    }

    #[test]
    fn hard_negative_from_mock() {
        let fx = MockFixtures {
            perturbations: [(LIZARD_IN.to_string(), LIZARD_OUT.to_string())].into(),
            ..MockFixtures::default()
        };
        let pos = positive(LIZARD_IN);
        let hn = perturb_hard_negative(&pos, &mock(fx)).unwrap();
        assert_eq!(hn.kind, PromptKind::HardNegative);
        assert_eq!(hn.ta_label, Label::Neg);
        assert_eq!(hn.derived_from.as_deref(), Some(pos.id.as_str()));
        assert!(hn.text.text().contains("on a branch,"));
        hn.validate().unwrap();

        let touching = LIZARD_IN.replace("<u>lizard</u>", "<u><swap>lizard</swap><gecko></u>");
        let fx = MockFixtures {
            perturbations: [(LIZARD_IN.to_string(), touching)].into(),
            ..MockFixtures::default()
        };
        let r = perturb_hard_negative(&pos, &mock(fx)).unwrap_err();
        assert_eq!(r.reason, PromptRejectReason::SubjectModified);

        let fx = MockFixtures {
            perturbations: [(LIZARD_IN.to_string(), LIZARD_IN.to_string())].into(),
            ..MockFixtures::default()
        };
        assert_eq!(perturb_hard_negative(&pos, &mock(fx)).unwrap_err().reason, PromptRejectReason::MalformedTags);
    }

    #[test]
    fn swaps() {
        let pos = positive(LIZARD_IN);
        let s = swap_negative(&pos, &img_ref("b"), true).unwrap();
        assert_eq!(s.text, pos.text);
        assert_eq!(s.subject_span, pos.subject_span);
        assert_eq!((s.kind, s.ta_label), (PromptKind::SwapNegative, Label::Neg));
        assert!(swap_negative(&pos, &img_ref("a"), true).is_err());
        assert!(swap_negative(&pos, &img_ref("b"), false).is_err());
        assert!(swap_negative(&s, &img_ref("c"), true).is_err());
    }

    #[test]
    fn caption_and_batch() {
        let imgs: Vec<RgbImage> = (0..4u8)
            .map(|i| RgbImage::from_fn(30, 30, |x, y| Rgb([i * 40, x as u8, y as u8])))
            .collect();
        let targets: Vec<PromptTarget> = imgs
            .iter()
            .enumerate()
            .map(|(i, img)| PromptTarget {
                image: ImageRef {
                    path: format!("{i}.png"),
                    width: 30,
                    height: 30,
                    content_hash: content_hash(img),
                },
                bbox: BBox::new(5, 5, 10, 10),
                entity: if i < 3 { "dog".into() } else { "cat".into() },
                group: format!("g{}", i / 2),
            })
            .collect();
        let mut fx = MockFixtures::default();
        fx.captions.insert(content_hash(&imgs[1]), "A dog runs on grass".into());
        let client = mock(fx);
        let load = |r: &ImageRef| Ok(imgs[r.path[..1].parse::<usize>().unwrap()].clone());
        let out = generate_prompts(&targets, load, &client, &client, PromptConfig::default(), 4, 2);
        let count = |k| out.prompts.iter().filter(|p| p.kind == k).count();
        assert_eq!(count(PromptKind::Positive), 4);
        assert_eq!(count(PromptKind::SwapNegative), 3);
        // the fixture caption has no swappable word, so its perturbation is untagged
        assert_eq!(count(PromptKind::HardNegative), 3);
        assert!(out.prompts.iter().any(|p| p.text.text() == "A <u>dog</u> runs on grass"));
        let reasons: Vec<_> = out.rejections.iter().map(|r| r.reason).collect();
        assert_eq!(reasons, vec![PromptRejectReason::NoDonor, PromptRejectReason::MalformedTags]);
        for p in &out.prompts {
            p.validate().unwrap();
        }
        let again = generate_prompts(&targets, load, &client, &client, PromptConfig::default(), 4, 1);
        assert_eq!(again.prompts, out.prompts);
    }
}
