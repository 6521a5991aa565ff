//! Identity-sensitive pairs from masked inpainting.
//!
//! For a subject with a segmentation mask, several patch sets covering part
//! of the mask are inpainted. The variant whose patches changed most (masked
//! MSE) becomes the target of a negative pair; the untouched image is the
//! target of a positive pair. Both use the same tight crop of the subject as
//! reference.

use image::RgbImage;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clients::{InpaintParams, ModelClient};
use crate::error::{Error, Result};
use crate::imaging::{crop, masked_mse, IntegralMask, Mask};
use crate::pairgen::{PairProvenance, PairRecord};
use crate::seed::{derive_seed, rng_for};
use crate::store::ImageStore;
use crate::types::{BBox, CategoryTag, ImageRef};

/// A subject's gold segmentation mask over its source image.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectMask {
    pub id: String,
    pub image: ImageRef,
    pub mask: Mask,
    pub category: CategoryTag,
    pub entity: String,
    pub area: u64,
}

impl SubjectMask {
    pub fn new(
        id: impl Into<String>,
        image: ImageRef,
        mask: Mask,
        category: CategoryTag,
        entity: impl Into<String>,
    ) -> Result<Self> {
        let id = id.into();
        if mask.dims() != (image.width, image.height) {
            return Err(Error::domain(format!(
                "subject {id}: mask {:?} does not match image {}x{}",
                mask.dims(),
                image.width,
                image.height
            )));
        }
        let area = mask.area();
        if area == 0 {
            return Err(Error::domain(format!("subject {id}: empty mask")));
        }
        Ok(Self {
            id,
            image,
            mask,
            category,
            entity: entity.into(),
            area,
        })
    }

    pub fn bbox(&self) -> BBox {
        self.mask.tight_bbox().expect("nonempty mask")
    }
}

/// Line of the subject manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub id: String,
    pub image: String,
    pub mask: String,
    pub category: CategoryTag,
    pub entity: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchSizeMode {
    /// Each patch side length is drawn from the band.
    Side,
    /// Each patch area is drawn from the band.
    Area,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    pub mode: PatchSizeMode,
    pub band: (u32, u32),
    pub coverage: (f64, f64),
    /// Full restarts before giving up.
    pub attempts: u32,
    /// Patch draws per restart.
    pub draws: u32,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            mode: PatchSizeMode::Side,
            band: (250, 300),
            coverage: (0.30, 0.50),
            attempts: 32,
            draws: 400,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.band;
        let (clo, chi) = self.coverage;
        if lo == 0 || lo > hi {
            return Err(Error::domain(format!("bad patch band {lo}..{hi}")));
        }
        if !(0.0 < clo && clo <= chi && chi <= 1.0) {
            return Err(Error::domain(format!("bad coverage band {clo}..{chi}")));
        }
        if self.attempts == 0 || self.draws == 0 {
            return Err(Error::domain("patch attempts and draws must be positive"));
        }
        Ok(())
    }

    fn draw_size(&self, rng: &mut ChaCha8Rng) -> Option<(u32, u32)> {
        let (lo, hi) = self.band;
        match self.mode {
            PatchSizeMode::Side => Some((rng.random_range(lo..=hi), rng.random_range(lo..=hi))),
            PatchSizeMode::Area => {
                let area = rng.random_range(lo..=hi);
                let aspect: f64 = rng.random_range(0.5..=2.0);
                let w = ((f64::from(area) * aspect).sqrt().round() as u32).max(1);
                let h_lo = lo.div_ceil(w);
                let h_hi = hi / w;
                (h_lo <= h_hi).then(|| (w, rng.random_range(h_lo..=h_hi)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentThresholds {
    pub min_area_object: u64,
    pub min_area_animal: u64,
    pub min_area_human: u64,
    pub mse_object: f64,
    pub mse_animal: f64,
    pub mse_human: f64,
}

impl Default for IdentThresholds {
    fn default() -> Self {
        Self {
            min_area_object: 60_000,
            min_area_animal: 60_000,
            min_area_human: 20_000,
            mse_object: 6_500.0,
            mse_animal: 5_400.0,
            mse_human: 20_000.0,
        }
    }
}

impl IdentThresholds {
    pub fn validate(&self) -> Result<()> {
        let areas = [self.min_area_object, self.min_area_animal, self.min_area_human];
        let mses = [self.mse_object, self.mse_animal, self.mse_human];
        if areas.contains(&0) || mses.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::domain("identity thresholds must be positive"));
        }
        Ok(())
    }

    pub fn min_area(&self, category: CategoryTag) -> Result<u64> {
        match category {
            CategoryTag::Object => Ok(self.min_area_object),
            CategoryTag::Animal => Ok(self.min_area_animal),
            CategoryTag::Human => Ok(self.min_area_human),
            other => Err(Error::domain(format!("no identity thresholds for {other}"))),
        }
    }

    pub fn mse_cutoff(&self, category: CategoryTag) -> Result<f64> {
        match category {
            CategoryTag::Object => Ok(self.mse_object),
            CategoryTag::Animal => Ok(self.mse_animal),
            CategoryTag::Human => Ok(self.mse_human),
            other => Err(Error::domain(format!("no identity thresholds for {other}"))),
        }
    }
}

/// A sampled sub-mask and the rectangles it is made of.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub mask: Mask,
    pub patches: Vec<BBox>,
    pub coverage: f64,
}

/// Samples rectangles fully inside the subject mask until their union covers
/// a fraction of the mask inside the coverage band.
pub fn sample_patch_mask(
    subject: &SubjectMask,
    config: &PatchConfig,
    thresholds: &IdentThresholds,
    seed: u64,
) -> Result<PatchSample> {
    config.validate()?;
    let min_area = thresholds.min_area(subject.category)?;
    if subject.area < min_area {
        return Err(Error::domain(format!(
            "subject {} has mask area {} below the {} minimum of {min_area}",
            subject.id, subject.area, subject.category
        )));
    }
    let (w, h) = subject.mask.dims();
    let bounds = subject.bbox();
    let integral = IntegralMask::new(&subject.mask);
    let area = subject.area as f64;
    let (clo, chi) = config.coverage;
    let mut rng = rng_for(seed, "patches");
    for _ in 0..config.attempts {
        let mut union = Mask::empty(w, h);
        let mut covered = 0u64;
        let mut patches = Vec::new();
        for _ in 0..config.draws {
            let Some((pw, ph)) = config.draw_size(&mut rng) else {
                continue;
            };
            if pw > bounds.w || ph > bounds.h {
                continue;
            }
            let x = rng.random_range(bounds.x..=bounds.x + bounds.w - pw);
            let y = rng.random_range(bounds.y..=bounds.y + bounds.h - ph);
            let rect = BBox::new(x, y, pw, ph);
            if integral.count(rect) != rect.area() {
                continue;
            }
            let added = union.count_off_in(rect);
            if added == 0 || (covered + added) as f64 > chi * area {
                continue;
            }
            covered += union.fill_rect(rect);
            patches.push(rect);
            if covered as f64 >= clo * area {
                return Ok(PatchSample {
                    mask: union,
                    patches,
                    coverage: covered as f64 / area,
                });
            }
        }
    }
    Err(Error::Sampling(format!(
        "subject {}: no patch set reached {:.0}-{:.0}% coverage after {} attempts",
        subject.id,
        clo * 100.0,
        chi * 100.0,
        config.attempts
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchSetMode {
    /// Every variant samples its own patch set.
    #[default]
    Independent,
    /// All variants inpaint the same patch set with different seeds.
    Shared,
}

#[derive(Debug, Clone)]
pub struct InpaintVariant {
    pub index: usize,
    pub image: RgbImage,
    pub patch: PatchSample,
    pub mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentConfig {
    pub patch: PatchConfig,
    pub thresholds: IdentThresholds,
    pub variants: usize,
    pub patch_sets: PatchSetMode,
    pub inpaint: InpaintParams,
}

impl Default for IdentConfig {
    fn default() -> Self {
        Self {
            patch: PatchConfig::default(),
            thresholds: IdentThresholds::default(),
            variants: 5,
            patch_sets: PatchSetMode::Independent,
            inpaint: InpaintParams::default(),
        }
    }
}

#[derive(Debug, Default)]
pub struct VariantBatch {
    pub variants: Vec<InpaintVariant>,
    pub warnings: Vec<String>,
}

/// Inpaints `config.variants` patch sets. Per-variant failures become
/// warnings; the call fails only when every requested variant failed.
pub fn generate_variants(
    subject: &SubjectMask,
    original: &RgbImage,
    inpainter: &ModelClient,
    config: &IdentConfig,
    seed: u64,
) -> Result<VariantBatch> {
    let mut batch = VariantBatch::default();
    let mut last_err = None;
    for i in 0..config.variants {
        let patch_label = match config.patch_sets {
            PatchSetMode::Independent => format!("{}|patch|{i}", subject.id),
            PatchSetMode::Shared => format!("{}|patch|0", subject.id),
        };
        let attempt = sample_patch_mask(
            subject,
            &config.patch,
            &config.thresholds,
            derive_seed(seed, &patch_label),
        )
        .and_then(|patch| {
            let inpaint_seed = derive_seed(seed, &format!("{}|inpaint|{i}", subject.id));
            let image = inpainter.inpaint(original, &patch.mask, config.inpaint, inpaint_seed)?;
            let mse = masked_mse(original, &image, &patch.mask)?;
            Ok(InpaintVariant {
                index: i,
                image,
                patch,
                mse,
            })
        });
        match attempt {
            Ok(v) => batch.variants.push(v),
            Err(e) => {
                batch.warnings.push(format!("{} variant {i}: {e}", subject.id));
                last_err = Some(e);
            }
        }
    }
    match last_err {
        Some(e) if batch.variants.is_empty() => Err(e),
        _ => Ok(batch),
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_first(values: &[f64]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best.ok_or_else(|| Error::domain("no variants to select from"))
}

pub fn select_max_mse(variants: &[InpaintVariant]) -> Result<&InpaintVariant> {
    let mses: Vec<f64> = variants.iter().map(|v| v.mse).collect();
    Ok(&variants[argmax_first(&mses)?])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentDropReason {
    MissingImage,
    MaskTooSmall,
    LowMse,
    SamplingFailed,
    ClientError,
    Unsupported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "reason")]
pub enum IdentVerdict {
    Keep,
    Drop(IdentDropReason),
}

/// Area and MSE cutoffs; both comparisons keep values equal to the cutoff.
pub fn identity_verdict(
    category: CategoryTag,
    area: u64,
    max_mse: f64,
    thresholds: &IdentThresholds,
) -> Result<IdentVerdict> {
    if area < thresholds.min_area(category)? {
        return Ok(IdentVerdict::Drop(IdentDropReason::MaskTooSmall));
    }
    if !(max_mse >= thresholds.mse_cutoff(category)?) {
        return Ok(IdentVerdict::Drop(IdentDropReason::LowMse));
    }
    Ok(IdentVerdict::Keep)
}

pub fn apply_identity_filters(
    subject: &SubjectMask,
    chosen: &InpaintVariant,
    thresholds: &IdentThresholds,
) -> Result<IdentVerdict> {
    identity_verdict(subject.category, subject.area, chosen.mse, thresholds)
}

/// Positive (original target) and negative (inpainted target) pairs sharing
/// one reference crop.
pub fn emit_ident_pairs(
    subject: &SubjectMask,
    original: &RgbImage,
    chosen: &InpaintVariant,
    store: &ImageStore,
) -> Result<(PairRecord, PairRecord)> {
    let bbox = subject.bbox();
    let reference = store.save(&crop(original, bbox)?, "crops")?;
    let inpainted = store.save(&chosen.image, "inpainted")?;
    let sources = |tag: &str| vec![subject.id.clone(), tag.to_string()];
    let positive = PairRecord::new(
        reference.clone(),
        subject.image.clone(),
        bbox,
        &subject.entity,
        PairProvenance::InpaintPositive,
        &subject.id,
        sources("original"),
    );
    let negative = PairRecord::new(
        reference,
        inpainted,
        bbox,
        &subject.entity,
        PairProvenance::InpaintNegative,
        &subject.id,
        sources(&format!("variant{}", chosen.index)),
    );
    Ok((positive, negative))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantAudit {
    pub index: usize,
    pub mse: f64,
    pub coverage: f64,
    pub patches: Vec<BBox>,
}

/// Per-subject audit line: every variant's MSE, the chosen one, and the verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectAudit {
    pub subject_id: String,
    pub category: CategoryTag,
    pub area: u64,
    pub variants: Vec<VariantAudit>,
    pub chosen: Option<usize>,
    pub verdict: IdentVerdict,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct SubjectOutcome {
    pub pairs: Option<(PairRecord, PairRecord)>,
    pub audit: SubjectAudit,
}

/// Full per-subject pipeline: size filter, variants, selection, MSE filter, pairs.
pub fn process_subject(
    subject: &SubjectMask,
    original: &RgbImage,
    inpainter: &ModelClient,
    config: &IdentConfig,
    seed: u64,
    store: &ImageStore,
) -> Result<SubjectOutcome> {
    let mut audit = SubjectAudit {
        subject_id: subject.id.clone(),
        category: subject.category,
        area: subject.area,
        variants: Vec::new(),
        chosen: None,
        verdict: IdentVerdict::Keep,
        warnings: Vec::new(),
    };
    let drop = |mut audit: SubjectAudit, reason| {
        audit.verdict = IdentVerdict::Drop(reason);
        Ok(SubjectOutcome { pairs: None, audit })
    };
    let min_area = match config.thresholds.min_area(subject.category) {
        Ok(m) => m,
        Err(e) => {
            audit.warnings.push(e.to_string());
            return drop(audit, IdentDropReason::Unsupported);
        }
    };
    if subject.area < min_area {
        return drop(audit, IdentDropReason::MaskTooSmall);
    }
    let batch = match generate_variants(subject, original, inpainter, config, seed) {
        Ok(b) => b,
        Err(e) => {
            let reason = match e {
                Error::Sampling(_) => IdentDropReason::SamplingFailed,
                _ => IdentDropReason::ClientError,
            };
            audit.warnings.push(e.to_string());
            return drop(audit, reason);
        }
    };
    audit.warnings.extend(batch.warnings);
    audit.variants = batch
        .variants
        .iter()
        .map(|v| VariantAudit {
            index: v.index,
            mse: v.mse,
            coverage: v.patch.coverage,
            patches: v.patch.patches.clone(),
        })
        .collect();
    if batch.variants.is_empty() {
        return Ok(SubjectOutcome { pairs: None, audit });
    }
    let chosen = select_max_mse(&batch.variants)?;
    audit.chosen = Some(chosen.index);
    audit.verdict = apply_identity_filters(subject, chosen, &config.thresholds)?;
    if audit.verdict != IdentVerdict::Keep {
        return Ok(SubjectOutcome { pairs: None, audit });
    }
    let pairs = emit_ident_pairs(subject, original, chosen, store)?;
    Ok(SubjectOutcome {
        pairs: Some(pairs),
        audit,
    })
}
