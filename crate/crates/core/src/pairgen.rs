//! Subject-preservation pairs from video scenes.
//!
//! Within a scene every frame shows the same subject; a crop of the subject in
//! one frame paired with any other full frame is a positive. Across two
//! scenes with the same entity type but different subjects, crops paired with
//! the other scene's frames are negatives. Named entities (recurring TV
//! characters) additionally yield cross-scene positives.

use std::collections::{BTreeMap, HashSet};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::clients::{ModelClient, QualityCheck};
use crate::error::{Error, Result};
use crate::imaging::{blur_score, crop};
use crate::par::bounded_map;
use crate::seed::digest_parts;
use crate::store::ImageStore;
use crate::types::{BBox, ImageRef, Label, SubjectInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSource {
    Mementos,
    TvqaPlus,
    Fixture,
}

/// Scene frame as written in a scene manifest (paths, not yet hashed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub image: String,
    #[serde(default)]
    pub bbox: Option<BBox>,
    pub entity: String,
    #[serde(default)]
    pub named_entity: bool,
    #[serde(default)]
    pub identity: Option<String>,
}

/// One line of the scene manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: String,
    pub source: SceneSource,
    pub frames: Vec<FrameSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub image: ImageRef,
    pub bbox: Option<BBox>,
    pub entity: String,
    pub named_entity: bool,
    pub identity: Option<String>,
}

impl SceneFrame {
    pub fn subject(&self) -> Option<SubjectInstance> {
        self.bbox.map(|bbox| SubjectInstance {
            frame: self.image.clone(),
            entity: self.entity.clone(),
            named_entity: self.named_entity,
            identity: self.identity.clone(),
            bbox,
            mask_path: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub source: SceneSource,
    pub frames: Vec<SceneFrame>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| Error::domain(format!("scene {} has no frames", self.scene_id)))?;
        if let Some(f) = self.frames.iter().find(|f| f.entity != first.entity) {
            return Err(Error::domain(format!(
                "scene {} mixes entities {:?} and {:?}",
                self.scene_id, first.entity, f.entity
            )));
        }
        Ok(())
    }

    pub fn entity(&self) -> &str {
        self.frames.first().map(|f| f.entity.as_str()).unwrap_or("")
    }

    /// Identity of the depicted subject; falls back to the scene id.
    pub fn identity(&self) -> &str {
        self.frames
            .iter()
            .find_map(|f| f.identity.as_deref())
            .unwrap_or(&self.scene_id)
    }

    pub fn is_named(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.named_entity && f.identity.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairProvenance {
    IntraScene,
    CrossSceneNegative,
    NamedEntityPositive,
    InpaintPositive,
    InpaintNegative,
}

impl PairProvenance {
    pub fn label(self) -> Label {
        Label::from_bool(matches!(
            self,
            PairProvenance::IntraScene
                | PairProvenance::NamedEntityPositive
                | PairProvenance::InpaintPositive
        ))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairProvenance::IntraScene => "intra_scene",
            PairProvenance::CrossSceneNegative => "cross_scene_negative",
            PairProvenance::NamedEntityPositive => "named_entity_positive",
            PairProvenance::InpaintPositive => "inpaint_positive",
            PairProvenance::InpaintNegative => "inpaint_negative",
        }
    }
}

/// An `{image_ref, image_tgt}` pair with its subject-preservation label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    /// Subject crop.
    pub image_ref: ImageRef,
    /// Full target image.
    pub tgt: ImageRef,
    /// Where the subject sits in `tgt`; used to outline it for captioning.
    pub tgt_bbox: BBox,
    pub sp_label: Label,
    pub entity: String,
    pub provenance: PairProvenance,
    /// Subject group of the target (scene or source subject id).
    pub tgt_group: String,
    pub source_ids: Vec<String>,
}

impl PairRecord {
    pub fn new(
        image_ref: ImageRef,
        tgt: ImageRef,
        tgt_bbox: BBox,
        entity: &str,
        provenance: PairProvenance,
        tgt_group: &str,
        source_ids: Vec<String>,
    ) -> Self {
        let id = digest_parts([
            image_ref.content_hash.as_str(),
            tgt.content_hash.as_str(),
            provenance.as_str(),
        ])[..24]
            .to_string();
        Self {
            id,
            image_ref,
            tgt,
            tgt_bbox,
            sp_label: provenance.label(),
            entity: entity.to_string(),
            provenance,
            tgt_group: tgt_group.to_string(),
            source_ids,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairBatch {
    pub records: Vec<PairRecord>,
    pub warnings: Vec<String>,
}

impl PairBatch {
    pub fn extend(&mut self, other: PairBatch) {
        self.records.extend(other.records);
        self.warnings.extend(other.warnings);
    }
}

/// Subject crops of a scene's frames, stored once and reused across pairings.
struct SceneCrops<'a> {
    scene: &'a Scene,
    crops: Vec<Option<ImageRef>>,
}

impl<'a> SceneCrops<'a> {
    fn build(scene: &'a Scene, store: &ImageStore, warnings: &mut Vec<String>) -> Result<Self> {
        let mut crops = Vec::with_capacity(scene.frames.len());
        for (i, f) in scene.frames.iter().enumerate() {
            match f.bbox {
                None => {
                    warnings.push(format!("{}#{i}: frame without bbox skipped", scene.scene_id));
                    crops.push(None);
                }
                Some(b) => {
                    let img = store.load(&f.image)?;
                    crops.push(Some(store.save(&crop(&img, b)?, "crops")?));
                }
            }
        }
        Ok(Self { scene, crops })
    }

    fn frame_id(&self, i: usize) -> String {
        format!("{}#{i}", self.scene.scene_id)
    }

    /// Every usable crop of `self` against every usable full frame of `other`.
    fn pair_with(&self, other: &SceneCrops<'_>, provenance: PairProvenance) -> Vec<PairRecord> {
        let mut out = Vec::new();
        for (i, c) in self.crops.iter().enumerate() {
            let Some(c) = c else { continue };
            for (j, f) in other.scene.frames.iter().enumerate() {
                let Some(tgt_bbox) = f.bbox else { continue };
                out.push(PairRecord::new(
                    c.clone(),
                    f.image.clone(),
                    tgt_bbox,
                    &f.entity,
                    provenance,
                    other.scene.identity(),
                    vec![self.frame_id(i), other.frame_id(j)],
                ));
            }
        }
        out
    }
}

pub fn build_intra_scene_positives(scene: &Scene, store: &ImageStore) -> Result<PairBatch> {
    scene.validate()?;
    let mut batch = PairBatch::default();
    let crops = SceneCrops::build(scene, store, &mut batch.warnings)?;
    for (i, c) in crops.crops.iter().enumerate() {
        let Some(c) = c else { continue };
        for (j, f) in scene.frames.iter().enumerate() {
            if i == j {
                continue;
            }
            let Some(tgt_bbox) = f.bbox else { continue };
            batch.records.push(PairRecord::new(
                c.clone(),
                f.image.clone(),
                tgt_bbox,
                &f.entity,
                PairProvenance::IntraScene,
                scene.identity(),
                vec![crops.frame_id(i), crops.frame_id(j)],
            ));
        }
    }
    Ok(batch)
}

fn check_pairable(a: &Scene, b: &Scene) -> Result<()> {
    a.validate()?;
    b.validate()?;
    if a.scene_id == b.scene_id {
        return Err(Error::domain(format!("scene {} paired with itself", a.scene_id)));
    }
    if a.entity() != b.entity() {
        return Err(Error::domain(format!(
            "entity mismatch: {:?} vs {:?}",
            a.entity(),
            b.entity()
        )));
    }
    Ok(())
}

/// Crops of `a` against full frames of `b`, and vice versa, labeled 0.
/// Scene `b` may be empty, in which case nothing is produced.
pub fn build_cross_scene_negatives(a: &Scene, b: &Scene, store: &ImageStore) -> Result<PairBatch> {
    if b.frames.is_empty() || a.frames.is_empty() {
        return Ok(PairBatch::default());
    }
    check_pairable(a, b)?;
    if a.identity() == b.identity() {
        return Err(Error::domain(format!(
            "scenes {} and {} show the same subject {:?}",
            a.scene_id,
            b.scene_id,
            a.identity()
        )));
    }
    let mut batch = PairBatch::default();
    let ca = SceneCrops::build(a, store, &mut batch.warnings)?;
    let cb = SceneCrops::build(b, store, &mut batch.warnings)?;
    batch.records.extend(ca.pair_with(&cb, PairProvenance::CrossSceneNegative));
    batch.records.extend(cb.pair_with(&ca, PairProvenance::CrossSceneNegative));
    Ok(batch)
}

/// Cross-scene positives for a named entity recurring in two scenes.
pub fn build_named_entity_positives(a: &Scene, b: &Scene, store: &ImageStore) -> Result<PairBatch> {
    if !a.is_named() || !b.is_named() {
        return Err(Error::domain("named-entity pairing requires named, identified scenes"));
    }
    check_pairable(a, b)?;
    if a.identity() != b.identity() {
        return Err(Error::domain(format!(
            "identity mismatch: {:?} vs {:?}",
            a.identity(),
            b.identity()
        )));
    }
    let mut batch = PairBatch::default();
    let ca = SceneCrops::build(a, store, &mut batch.warnings)?;
    let cb = SceneCrops::build(b, store, &mut batch.warnings)?;
    batch.records.extend(ca.pair_with(&cb, PairProvenance::NamedEntityPositive));
    batch.records.extend(cb.pair_with(&ca, PairProvenance::NamedEntityPositive));
    Ok(batch)
}

/// The canonical two-scene, two-frame enumeration: intra-scene positives of
/// both scenes and the cross-scene negatives between them.
pub fn enumerate_two_scene(
    a: &Scene,
    b: &Scene,
    store: &ImageStore,
) -> Result<(Vec<PairRecord>, Vec<PairRecord>)> {
    for s in [a, b] {
        if s.frames.len() != 2 {
            return Err(Error::domain(format!(
                "scene {} must have exactly 2 frames, has {}",
                s.scene_id,
                s.frames.len()
            )));
        }
    }
    let mut positives = build_intra_scene_positives(a, store)?.records;
    positives.extend(build_intra_scene_positives(b, store)?.records);
    let negatives = build_cross_scene_negatives(a, b, store)?.records;
    Ok((positives, negatives))
}

/// Builds every pair a set of scenes supports: intra-scene positives per
/// scene, negatives for every same-entity scene pair with distinct subjects,
/// and named-entity positives for scene pairs sharing an identity.
pub fn build_all_pairs(scenes: &[Scene], store: &ImageStore) -> Result<PairBatch> {
    let mut batch = PairBatch::default();
    for s in scenes {
        if s.frames.len() >= 2 {
            batch.extend(build_intra_scene_positives(s, store)?);
        }
    }
    for (i, a) in scenes.iter().enumerate() {
        for b in &scenes[i + 1..] {
            if a.frames.is_empty() || b.frames.is_empty() || a.entity() != b.entity() {
                continue;
            }
            if a.identity() != b.identity() {
                batch.extend(build_cross_scene_negatives(a, b, store)?);
            } else if a.is_named() && b.is_named() {
                batch.extend(build_named_entity_positives(a, b, store)?);
            }
        }
    }
    let mut seen = HashSet::new();
    batch.records.retain(|r| seen.insert(r.id.clone()));
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameRejectReason {
    MissingImage,
    MissingBbox,
    Blur,
    SubjectAbsent,
    OverlayText,
    ClientError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRejection {
    pub scene_id: String,
    pub frame_index: usize,
    pub reason: FrameRejectReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameFilterConfig {
    /// Minimum Laplacian variance on 0–255 luma.
    pub blur_threshold: f64,
}

impl Default for FrameFilterConfig {
    fn default() -> Self {
        Self {
            blur_threshold: 100.0,
        }
    }
}

/// A frame with its decoded pixels, ready for filtering.
pub struct FrameCandidate<'a> {
    pub scene_id: &'a str,
    pub frame_index: usize,
    pub source: SceneSource,
    pub entity: &'a str,
    pub image: &'a RgbImage,
}

#[derive(Debug, Default)]
pub struct FilterOutcome {
    /// Indices into the candidate slice.
    pub kept: Vec<usize>,
    pub rejections: Vec<FrameRejection>,
}

impl FilterOutcome {
    pub fn counts(&self) -> BTreeMap<FrameRejectReason, usize> {
        let mut m = BTreeMap::new();
        for r in &self.rejections {
            *m.entry(r.reason).or_default() += 1;
        }
        m
    }
}

/// Keeps a frame iff it is sharp enough, the judge confirms the subject is
/// present, and (TVQA+ only) the judge confirms no subtitles or credits.
pub fn filter_frames(
    frames: &[FrameCandidate<'_>],
    judge: &ModelClient,
    config: FrameFilterConfig,
    concurrency: usize,
) -> FilterOutcome {
    let verdicts = bounded_map(frames, concurrency, |f| check_frame(f, judge, config));
    let mut out = FilterOutcome::default();
    for (i, (f, v)) in frames.iter().zip(verdicts).enumerate() {
        match v {
            None => out.kept.push(i),
            Some((reason, detail)) => out.rejections.push(FrameRejection {
                scene_id: f.scene_id.to_string(),
                frame_index: f.frame_index,
                reason,
                detail,
            }),
        }
    }
    out
}

fn check_frame(
    f: &FrameCandidate<'_>,
    judge: &ModelClient,
    config: FrameFilterConfig,
) -> Option<(FrameRejectReason, Option<String>)> {
    let score = blur_score(f.image);
    if score < config.blur_threshold {
        return Some((FrameRejectReason::Blur, Some(format!("laplacian variance {score:.2}"))));
    }
    let mut checks = vec![(
        QualityCheck::SubjectPresent {
            entity: f.entity.to_string(),
        },
        FrameRejectReason::SubjectAbsent,
    )];
    if f.source == SceneSource::TvqaPlus {
        checks.push((QualityCheck::NoOverlayText, FrameRejectReason::OverlayText));
    }
    for (check, reason) in checks {
        match judge.judge_quality(f.image, &check) {
            Ok(true) => {}
            Ok(false) => return Some((reason, None)),
            Err(e) => return Some((FrameRejectReason::ClientError, Some(e.to_string()))),
        }
    }
    None
}

/// Fills missing boxes with the detector's top hit; frames with no hit stay box-less.
pub fn localize_frames(scene: &mut Scene, store: &ImageStore, detector: &ModelClient) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    for (i, f) in scene.frames.iter_mut().enumerate() {
        if f.bbox.is_some() {
            continue;
        }
        let img = store.load(&f.image)?;
        match detector.detect(&img, &f.entity) {
            Ok(dets) => match dets.first() {
                Some(d) => f.bbox = Some(d.bbox),
                None => warnings.push(format!("{}#{i}: no {} detected", scene.scene_id, f.entity)),
            },
            Err(e) => warnings.push(format!("{}#{i}: detection failed: {e}", scene.scene_id)),
        }
    }
    Ok(warnings)
}
