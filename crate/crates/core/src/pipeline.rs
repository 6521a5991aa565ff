//! Stage drivers that run each forge step over manifest inputs.

use std::collections::{BTreeMap, HashSet};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::clients::ClientSet;
use crate::error::Result;
use crate::identgen::{
    process_subject, IdentConfig, IdentDropReason, IdentVerdict, SubjectAudit, SubjectMask, SubjectSpec,
};
use crate::pairgen::{
    build_all_pairs, filter_frames, localize_frames, FrameCandidate, FrameFilterConfig, FrameRejectReason,
    FrameRejection, PairRecord, Scene, SceneFrame, SceneSpec,
};
use crate::par::bounded_map;
use crate::promptgen::{generate_prompts, PromptConfig, PromptOutput, PromptTarget};
use crate::store::ImageStore;
use crate::types::ImageRef;

#[derive(Debug, Default)]
pub struct PairsStage {
    pub pairs: Vec<PairRecord>,
    pub rejections: Vec<FrameRejection>,
    pub warnings: Vec<String>,
}

impl PairsStage {
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for p in &self.pairs {
            *m.entry(format!("kept.{}", p.provenance.as_str())).or_default() += 1;
        }
        for r in &self.rejections {
            let key = serde_json::to_value(r.reason).ok().and_then(|v| v.as_str().map(str::to_string));
            *m.entry(format!("rejected.{}", key.unwrap_or_default())).or_default() += 1;
        }
        m
    }
}

fn reject(spec: &SceneSpec, i: usize, reason: FrameRejectReason, detail: String) -> FrameRejection {
    FrameRejection {
        scene_id: spec.scene_id.clone(),
        frame_index: i,
        reason,
        detail: Some(detail),
    }
}

/// Loads, filters and localizes every scene's frames, then builds all pairs.
pub fn forge_pairs(
    specs: &[SceneSpec],
    store: &ImageStore,
    clients: &ClientSet,
    filter: FrameFilterConfig,
    concurrency: usize,
) -> Result<PairsStage> {
    let mut out = PairsStage::default();
    let mut scenes = Vec::new();
    for spec in specs {
        let mut loaded: Vec<(usize, RgbImage, ImageRef)> = Vec::new();
        for (i, f) in spec.frames.iter().enumerate() {
            match store.open(&f.image) {
                Ok((img, r)) => match f.bbox.map(|b| b.check_within(r.width, r.height)) {
                    Some(Err(e)) => out.rejections.push(reject(spec, i, FrameRejectReason::MissingBbox, e.to_string())),
                    _ => loaded.push((i, img, r)),
                },
                Err(e) => out.rejections.push(reject(spec, i, FrameRejectReason::MissingImage, e.to_string())),
            }
        }
        let candidates: Vec<FrameCandidate<'_>> = loaded
            .iter()
            .map(|(i, img, _)| FrameCandidate {
                scene_id: &spec.scene_id,
                frame_index: *i,
                source: spec.source,
                entity: &spec.frames[*i].entity,
                image: img,
            })
            .collect();
        let outcome = filter_frames(&candidates, &clients.judge, filter, concurrency);
        out.rejections.extend(outcome.rejections);
        let frames = outcome
            .kept
            .iter()
            .map(|&k| {
                let (i, _, r) = &loaded[k];
                let f = &spec.frames[*i];
                SceneFrame {
                    image: r.clone(),
                    bbox: f.bbox,
                    entity: f.entity.clone(),
                    named_entity: f.named_entity,
                    identity: f.identity.clone(),
                }
            })
            .collect::<Vec<_>>();
        if frames.is_empty() {
            out.warnings.push(format!("scene {}: no frames survived filtering", spec.scene_id));
            continue;
        }
        let mut scene = Scene {
            scene_id: spec.scene_id.clone(),
            source: spec.source,
            frames,
        };
        scene.validate()?;
        out.warnings.extend(localize_frames(&mut scene, store, &clients.detector)?);
        scenes.push(scene);
    }
    let batch = build_all_pairs(&scenes, store)?;
    out.pairs = batch.records;
    out.warnings.extend(batch.warnings);
    Ok(out)
}

pub fn resolve_subject(spec: &SubjectSpec, store: &ImageStore) -> Result<(SubjectMask, RgbImage)> {
    let (img, r) = store.open(&spec.image)?;
    let mask = store.load_mask(&spec.mask)?;
    Ok((SubjectMask::new(&spec.id, r, mask, spec.category, &spec.entity)?, img))
}

#[derive(Debug, Default)]
pub struct IdentStage {
    pub pairs: Vec<PairRecord>,
    pub audits: Vec<SubjectAudit>,
}

impl IdentStage {
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for a in &self.audits {
            let key = match &a.verdict {
                IdentVerdict::Keep => "kept".to_string(),
                IdentVerdict::Drop(r) => {
                    let r = serde_json::to_value(r).ok().and_then(|v| v.as_str().map(str::to_string));
                    format!("dropped.{}", r.unwrap_or_default())
                }
            };
            *m.entry(key).or_default() += 1;
        }
        m
    }
}

/// Runs the inpainting pipeline per subject; unreadable subjects are audited
/// as dropped rather than failing the stage.
pub fn forge_ident(
    specs: &[SubjectSpec],
    store: &ImageStore,
    clients: &ClientSet,
    config: &IdentConfig,
    seed: u64,
    concurrency: usize,
) -> Result<IdentStage> {
    let results = bounded_map(specs, concurrency, |spec| -> Result<_> {
        let (subject, original) = match resolve_subject(spec, store) {
            Ok(x) => x,
            Err(e) => {
                return Ok((
                    None,
                    SubjectAudit {
                        subject_id: spec.id.clone(),
                        category: spec.category,
                        area: 0,
                        variants: Vec::new(),
                        chosen: None,
                        verdict: IdentVerdict::Drop(IdentDropReason::MissingImage),
                        warnings: vec![e.to_string()],
                    },
                ))
            }
        };
        let o = process_subject(&subject, &original, &clients.inpainter, config, seed, store)?;
        Ok((o.pairs, o.audit))
    });
    let mut out = IdentStage::default();
    for r in results {
        let (pairs, audit) = r?;
        if let Some((p, n)) = pairs {
            out.pairs.push(p);
            out.pairs.push(n);
        }
        out.audits.push(audit);
    }
    Ok(out)
}

/// One prompt target per distinct pair target image, in first-seen order.
pub fn prompt_targets(pairs: &[PairRecord]) -> Vec<PromptTarget> {
    let mut seen = HashSet::new();
    pairs
        .iter()
        .filter(|p| seen.insert(p.tgt.content_hash.clone()))
        .map(|p| PromptTarget {
            image: p.tgt.clone(),
            bbox: p.tgt_bbox,
            entity: p.entity.clone(),
            group: p.tgt_group.clone(),
        })
        .collect()
}

pub fn forge_prompts(
    pairs: &[PairRecord],
    store: &ImageStore,
    clients: &ClientSet,
    config: PromptConfig,
    seed: u64,
    concurrency: usize,
) -> PromptOutput {
    let targets = prompt_targets(pairs);
    generate_prompts(
        &targets,
        |r| store.load(r),
        &clients.captioner,
        &clients.captioner,
        config,
        seed,
        concurrency,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}
