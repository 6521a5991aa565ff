//! Synthetic corpus for offline runs: scenes, maskable subjects, a small
//! annotated benchmark, and the mock tables that drive every model role.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;

use crate::assemble::TripletRecord;
use crate::clients::mock::{detection_key, gold_table, GoldBits, MockFixtures, QualityFixture};
use crate::clients::Detection;
use crate::error::{Error, Result};
use crate::identgen::SubjectSpec;
use crate::imaging::Mask;
use crate::jsonl::write_records;
use crate::markup::MarkedPrompt;
use crate::metaeval::binarize::{AnnotationRecord, Benchmark};
use crate::metaeval::imagerag::{Axis, Choice, PreferencePair};
use crate::pairgen::{FrameSpec, SceneSource, SceneSpec};
use crate::scoring::ScoreInstance;
use crate::seed::rng_for;
use crate::store::ImageStore;
use crate::types::{BBox, CategoryTag, Label};

pub const SCENES_FILE: &str = "scenes.jsonl";
pub const SUBJECTS_FILE: &str = "subjects.jsonl";
pub const MOCK_FILE: &str = "mock.json";
pub const BENCH_INSTANCES_FILE: &str = "bench/instances.jsonl";
pub const BENCH_ANNOTATIONS_FILE: &str = "bench/annotations.jsonl";
pub const BENCH_PREFERENCES_FILE: &str = "bench/preferences.jsonl";

const FRAME_W: u32 = 64;
const FRAME_H: u32 = 48;
const FRAME_BOX: BBox = BBox {
    x: 10,
    y: 8,
    w: 36,
    h: 28,
};
const SUBJECT_W: u32 = 640;
const SUBJECT_H: u32 = 480;

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub scenes: Vec<SceneSpec>,
    pub subjects: Vec<SubjectSpec>,
    pub mock: MockFixtures,
    pub bench_instances: Vec<ScoreInstance>,
    pub annotations: Vec<AnnotationRecord>,
    pub preferences: Vec<PreferencePair>,
}

fn noise(w: u32, h: u32, seed: u64, label: &str) -> RgbImage {
    let mut rng = rng_for(seed, label);
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

fn smooth(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| Rgb([(x * 2) as u8, (y * 2) as u8, 128]))
}

pub fn ellipse_mask(w: u32, h: u32, rx: f64, ry: f64) -> Mask {
    let (cx, cy) = (f64::from(w) / 2.0, f64::from(h) / 2.0);
    Mask::from_fn(w, h, |x, y| {
        let dx = (f64::from(x) + 0.5 - cx) / rx;
        let dy = (f64::from(y) + 0.5 - cy) / ry;
        dx * dx + dy * dy <= 1.0
    })
}

/// Noisy background with the masked subject painted a flat `fill`.
pub fn subject_image(mask: &Mask, fill: u8, seed: u64, label: &str) -> RgbImage {
    let mut img = noise(mask.width(), mask.height(), seed, label);
    for (x, y) in mask.iter_on() {
        img.put_pixel(x, y, Rgb([fill; 3]));
    }
    img
}

enum FrameKind {
    Clean,
    Blurry,
    Overlay,
    NoBox,
}

struct SceneDef {
    id: &'static str,
    source: SceneSource,
    entity: &'static str,
    identity: Option<&'static str>,
    frames: &'static [FrameKind],
}

const SCENES: &[SceneDef] = &[
    SceneDef { id: "dog-park", source: SceneSource::Mementos, entity: "dog", identity: None, frames: &[FrameKind::Clean, FrameKind::Clean] },
    SceneDef { id: "dog-beach", source: SceneSource::Mementos, entity: "dog", identity: None, frames: &[FrameKind::Clean, FrameKind::Clean] },
    SceneDef { id: "dog-yard", source: SceneSource::Mementos, entity: "dog", identity: None, frames: &[FrameKind::Clean, FrameKind::Blurry, FrameKind::Clean] },
    SceneDef { id: "cat-sofa", source: SceneSource::Mementos, entity: "cat", identity: None, frames: &[FrameKind::Clean, FrameKind::Clean] },
    SceneDef { id: "cat-window", source: SceneSource::Mementos, entity: "cat", identity: None, frames: &[FrameKind::Clean, FrameKind::NoBox] },
    SceneDef { id: "ep1-kitchen", source: SceneSource::TvqaPlus, entity: "person", identity: Some("alice"), frames: &[FrameKind::Clean, FrameKind::Overlay, FrameKind::Clean] },
    SceneDef { id: "ep2-hallway", source: SceneSource::TvqaPlus, entity: "person", identity: Some("alice"), frames: &[FrameKind::Clean, FrameKind::Clean] },
    SceneDef { id: "ep1-office", source: SceneSource::TvqaPlus, entity: "person", identity: Some("bob"), frames: &[FrameKind::Clean, FrameKind::Clean] },
    SceneDef { id: "car-street", source: SceneSource::Fixture, entity: "car", identity: None, frames: &[FrameKind::Clean, FrameKind::Clean] },
    SceneDef { id: "car-garage", source: SceneSource::Fixture, entity: "car", identity: None, frames: &[FrameKind::Clean, FrameKind::Clean] },
];

struct SubjectDef {
    id: &'static str,
    category: CategoryTag,
    entity: &'static str,
    radii: (f64, f64),
    fill: u8,
}

const SUBJECTS: &[SubjectDef] = &[
    SubjectDef { id: "subj-dog", category: CategoryTag::Animal, entity: "dog", radii: (300.0, 220.0), fill: 0 },
    SubjectDef { id: "subj-cat", category: CategoryTag::Animal, entity: "cat", radii: (290.0, 215.0), fill: 255 },
    SubjectDef { id: "subj-car", category: CategoryTag::Object, entity: "car", radii: (300.0, 225.0), fill: 0 },
    SubjectDef { id: "subj-mug", category: CategoryTag::Object, entity: "mug", radii: (280.0, 220.0), fill: 255 },
    SubjectDef { id: "subj-woman", category: CategoryTag::Human, entity: "woman", radii: (300.0, 220.0), fill: 0 },
    SubjectDef { id: "subj-man", category: CategoryTag::Human, entity: "man", radii: (295.0, 225.0), fill: 255 },
    // drops: mask below the area floor, and mid-gray pixels too close to inpainting noise
    SubjectDef { id: "subj-tiny-vase", category: CategoryTag::Object, entity: "vase", radii: (100.0, 80.0), fill: 0 },
    SubjectDef { id: "subj-gray-lamp", category: CategoryTag::Object, entity: "lamp", radii: (300.0, 220.0), fill: 128 },
];

fn synth_scenes(store: &ImageStore, seed: u64, mock: &mut MockFixtures) -> Result<Vec<SceneSpec>> {
    let mut out = Vec::new();
    for def in SCENES {
        let mut frames = Vec::new();
        for (i, kind) in def.frames.iter().enumerate() {
            let img = match kind {
                FrameKind::Blurry => smooth(FRAME_W, FRAME_H),
                _ => noise(FRAME_W, FRAME_H, seed, &format!("frame|{}|{i}", def.id)),
            };
            let r = store.save(&img, "frames")?;
            match kind {
                FrameKind::Overlay => {
                    mock.quality.insert(
                        r.content_hash.clone(),
                        QualityFixture {
                            overlay_text: true,
                            ..QualityFixture::CLEAN
                        },
                    );
                }
                FrameKind::NoBox => {
                    mock.detections.insert(
                        detection_key(&r.content_hash, def.entity),
                        vec![Detection {
                            bbox: FRAME_BOX,
                            confidence: 0.9,
                        }],
                    );
                }
                _ => {}
            }
            frames.push(FrameSpec {
                image: r.path,
                bbox: (!matches!(kind, FrameKind::NoBox)).then_some(FRAME_BOX),
                entity: def.entity.to_string(),
                named_entity: def.identity.is_some(),
                identity: def.identity.map(str::to_string),
            });
        }
        out.push(SceneSpec {
            scene_id: def.id.to_string(),
            source: def.source,
            frames,
        });
    }
    Ok(out)
}

fn synth_subjects(store: &ImageStore, seed: u64) -> Result<Vec<SubjectSpec>> {
    SUBJECTS
        .iter()
        .map(|def| {
            let mask = ellipse_mask(SUBJECT_W, SUBJECT_H, def.radii.0, def.radii.1);
            let img = subject_image(&mask, def.fill, seed, &format!("subject|{}", def.id));
            Ok(SubjectSpec {
                id: def.id.to_string(),
                image: store.save(&img, "subjects")?.path,
                mask: store.save_mask(&mask, "masks")?,
                category: def.category,
                entity: def.entity.to_string(),
            })
        })
        .collect()
}

const BENCH_CATEGORIES: [(CategoryTag, &str); 3] = [
    (CategoryTag::Animal, "dog"),
    (CategoryTag::Human, "woman"),
    (CategoryTag::Object, "backpack"),
];

/// A two-rater DreamBench++ payload whose binarization is `label`.
fn ratings_for(label: Label, rng: &mut impl Rng) -> [i64; 2] {
    let cells: Vec<[i64; 2]> = (0..=4)
        .flat_map(|a| (0..=4).map(move |b| [a, b]))
        .filter(|[a, b]| (a.min(b) >= &3 && a.max(b) == &4) == label.is_pos())
        .collect();
    cells[rng.random_range(0..cells.len())]
}

struct Bench {
    instances: Vec<ScoreInstance>,
    annotations: Vec<AnnotationRecord>,
    gold: BTreeMap<String, GoldBits>,
    labels: Vec<(Label, Label)>,
}

fn synth_bench(store: &ImageStore, seed: u64, per_category: usize) -> Result<Bench> {
    let mut rng = rng_for(seed, "bench");
    let mut b = Bench {
        instances: Vec::new(),
        annotations: Vec::new(),
        gold: BTreeMap::new(),
        labels: Vec::new(),
    };
    for (cat, entity) in BENCH_CATEGORIES {
        for k in 0..per_category {
            let id = format!("{}-{k:03}", cat.as_str());
            let image_ref = store.save(&noise(32, 32, seed, &format!("bench-ref|{id}")), "bench")?;
            let image_tgt = store.save(&noise(48, 48, seed, &format!("bench-tgt|{id}")), "bench")?;
            let prompt = MarkedPrompt::parse(format!("A <u>{entity}</u> next to a window, scene {k}."))?;
            let ta = Label::from_bool(k % 2 == 0);
            let sp = Label::from_bool((k / 2) % 2 == 0);
            b.gold.extend(gold_table([(
                image_ref.content_hash.as_str(),
                image_tgt.content_hash.as_str(),
                prompt.text(),
                ta,
                sp,
            )]));
            b.annotations.push(AnnotationRecord {
                instance_id: id.clone(),
                benchmark: Benchmark::DreamBenchPP,
                category: cat,
                raw: json!({ "ta": ratings_for(ta, &mut rng), "sp": ratings_for(sp, &mut rng) }),
            });
            b.instances.push(ScoreInstance {
                id,
                image_ref,
                image_tgt,
                prompt,
                entity: entity.to_string(),
            });
            b.labels.push((ta, sp));
        }
    }
    Ok(b)
}

fn preferences(bench: &Bench, n: usize, seed: u64) -> Vec<PreferencePair> {
    let mut idx: Vec<usize> = (0..bench.instances.len()).collect();
    idx.shuffle(&mut rng_for(seed, "preferences"));
    idx.chunks_exact(2)
        .take(n)
        .enumerate()
        .map(|(k, c)| {
            let (a, b) = (c[0], c[1]);
            let (la, lb) = (bench.labels[a], bench.labels[b]);
            let pick = |x: u8, y: u8| if x >= y { Choice::A } else { Choice::B };
            let total = |l: (Label, Label)| l.0.bit() + l.1.bit();
            PreferencePair {
                pair_id: format!("pref-{k:03}"),
                image_a: bench.instances[a].id.clone(),
                image_b: bench.instances[b].id.clone(),
                choice: [
                    (Axis::Textual, pick(la.0.bit(), lb.0.bit())),
                    (Axis::Visual, pick(la.1.bit(), lb.1.bit())),
                    (Axis::Overall, pick(total(la), total(lb))),
                ]
                .into(),
            }
        })
        .collect()
}

/// Writes all corpus images into `store` and returns the manifests.
pub fn synth_corpus(store: &ImageStore, seed: u64) -> Result<SynthCorpus> {
    let mut mock = MockFixtures {
        quality_default: true,
        ..MockFixtures::default()
    };
    let scenes = synth_scenes(store, seed, &mut mock)?;
    let subjects = synth_subjects(store, seed)?;
    let bench = synth_bench(store, seed, 20)?;
    let prefs = preferences(&bench, 26, seed);
    mock.gold.extend(bench.gold);
    Ok(SynthCorpus {
        scenes,
        subjects,
        mock,
        preferences: prefs,
        bench_instances: bench.instances,
        annotations: bench.annotations,
    })
}

pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    write_records(&dir.join(SCENES_FILE), None, &corpus.scenes)?;
    write_records(&dir.join(SUBJECTS_FILE), None, &corpus.subjects)?;
    write_records(&dir.join(BENCH_INSTANCES_FILE), None, &corpus.bench_instances)?;
    write_records(&dir.join(BENCH_ANNOTATIONS_FILE), None, &corpus.annotations)?;
    write_records(&dir.join(BENCH_PREFERENCES_FILE), None, &corpus.preferences)?;
    write_mock(&corpus.mock, &dir.join(MOCK_FILE))
}

pub fn write_mock(mock: &MockFixtures, path: &Path) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(mock)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Gold table under which the oracle inference mock reproduces each
/// triplet's own labels.
pub fn oracle_gold(triplets: &[TripletRecord]) -> BTreeMap<String, GoldBits> {
    gold_table(triplets.iter().map(|t| {
        (
            t.image_ref.content_hash.as_str(),
            t.image_tgt.content_hash.as_str(),
            t.prompt.text.text(),
            t.ta_label,
            t.sp_label,
        )
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::blur_score;

    #[test]
    fn corpus_shape() {
        let dir = tempfile::tempdir().unwrap();
        let store = ImageStore::new(dir.path());
        let c = synth_corpus(&store, 7).unwrap();
        assert!(c.scenes.len() >= 8);
        assert!(c.subjects.len() >= 8);
        assert_eq!(c.bench_instances.len(), 60);
        assert_eq!(c.preferences.len(), 26);
        assert_eq!(c.mock.gold.len(), 60);
        for a in &c.annotations {
            a.gold().unwrap();
        }
        let blurry = smooth(FRAME_W, FRAME_H);
        assert!(blur_score(&blurry) < 100.0);
        assert!(blur_score(&noise(FRAME_W, FRAME_H, 0, "x")) > 100.0);
        let again = synth_corpus(&store, 7).unwrap();
        assert_eq!(again.scenes, c.scenes);
        assert_eq!(again.subjects, c.subjects);
    }

    #[test]
    fn subject_areas_straddle_floor() {
        let big = ellipse_mask(SUBJECT_W, SUBJECT_H, 280.0, 215.0).area();
        let tiny = ellipse_mask(SUBJECT_W, SUBJECT_H, 100.0, 80.0).area();
        assert!(big > 60_000 && tiny < 60_000);
    }
}
