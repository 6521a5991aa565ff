//! Joins image pairs with the prompts of their target images into labeled
//! triplets, balances the four label classes and persists the dataset.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{read_records, write_records, ManifestHeader};
use crate::pairgen::{PairProvenance, PairRecord};
use crate::promptgen::{PromptKind, PromptRecord};
use crate::seed::{digest_parts, rng_for};
use crate::store::ImageStore;
use crate::types::{ImageRef, Label};

pub const MANIFEST_KIND: &str = "triplets";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripletProvenance {
    pub pair: PairProvenance,
    pub prompt: PromptKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub id: String,
    pub image_ref: ImageRef,
    pub prompt: PromptRecord,
    pub image_tgt: ImageRef,
    pub ta_label: Label,
    pub sp_label: Label,
    pub provenance: TripletProvenance,
    pub pair_id: String,
}

impl TripletRecord {
    pub fn class(&self) -> LabelClass {
        LabelClass {
            ta: self.ta_label,
            sp: self.sp_label,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.prompt.validate()?;
        if self.ta_label != self.prompt.ta_label {
            return Err(Error::domain(format!("triplet {}: ta label differs from prompt", self.id)));
        }
        if self.sp_label != self.provenance.pair.label() {
            return Err(Error::domain(format!("triplet {}: sp label differs from pair", self.id)));
        }
        if self.prompt.source_image.content_hash != self.image_tgt.content_hash {
            return Err(Error::domain(format!("triplet {}: prompt belongs to another image", self.id)));
        }
        Ok(())
    }
}

/// One of the four `(ta, sp)` label combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelClass {
    pub ta: Label,
    pub sp: Label,
}

impl LabelClass {
    pub const ALL: [LabelClass; 4] = [
        LabelClass { ta: Label::Neg, sp: Label::Neg },
        LabelClass { ta: Label::Neg, sp: Label::Pos },
        LabelClass { ta: Label::Pos, sp: Label::Neg },
        LabelClass { ta: Label::Pos, sp: Label::Pos },
    ];

    /// `"<ta><sp>"`, e.g. `"10"` for aligned text and a different subject.
    pub fn key(&self) -> String {
        format!("{}{}", self.ta.bit(), self.sp.bit())
    }
}

pub fn label_histogram(triplets: &[TripletRecord]) -> BTreeMap<String, usize> {
    let mut h: BTreeMap<String, usize> = LabelClass::ALL.iter().map(|c| (c.key(), 0)).collect();
    for t in triplets {
        *h.entry(t.class().key()).or_default() += 1;
    }
    h
}

#[derive(Debug, Default)]
pub struct Assembly {
    pub triplets: Vec<TripletRecord>,
    pub warnings: Vec<String>,
}

/// One triplet per pair and prompt of the pair's target image; labels come
/// from the prompt kind (ta) and the pair provenance (sp) independently.
pub fn assemble_triplets(pairs: &[PairRecord], prompts: &[PromptRecord]) -> Assembly {
    let mut by_image: HashMap<&str, Vec<&PromptRecord>> = HashMap::new();
    for p in prompts {
        by_image.entry(p.source_image.content_hash.as_str()).or_default().push(p);
    }
    let mut out = Assembly::default();
    for pair in pairs {
        let Some(ps) = by_image.get(pair.tgt.content_hash.as_str()) else {
            out.warnings.push(format!("pair {}: target has no prompts", pair.id));
            continue;
        };
        for p in ps {
            out.triplets.push(TripletRecord {
                id: digest_parts([pair.id.as_str(), p.id.as_str()])[..24].to_string(),
                image_ref: pair.image_ref.clone(),
                prompt: (*p).clone(),
                image_tgt: pair.tgt.clone(),
                ta_label: p.ta_label,
                sp_label: pair.sp_label,
                provenance: TripletProvenance {
                    pair: pair.provenance,
                    prompt: p.kind,
                },
                pair_id: pair.id.clone(),
            });
        }
    }
    out
}

/// Downsamples every present class to the size of the smallest one, keeping
/// the input order of the survivors.
pub fn balance_by_undersampling(triplets: &[TripletRecord], seed: u64) -> Assembly {
    let mut classes: BTreeMap<LabelClass, Vec<usize>> = BTreeMap::new();
    for (i, t) in triplets.iter().enumerate() {
        classes.entry(t.class()).or_default().push(i);
    }
    let mut out = Assembly::default();
    for c in LabelClass::ALL {
        if !classes.contains_key(&c) {
            out.warnings.push(format!("class {} absent; balancing over present classes", c.key()));
        }
    }
    let Some(m) = classes.values().map(Vec::len).min() else {
        return out;
    };
    let mut keep = Vec::with_capacity(m * classes.len());
    for (c, mut idx) in classes {
        idx.shuffle(&mut rng_for(seed, &format!("balance|{}", c.key())));
        keep.extend_from_slice(&idx[..m]);
    }
    keep.sort_unstable();
    out.triplets = keep.into_iter().map(|i| triplets[i].clone()).collect();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub triplets: Vec<TripletRecord>,
    pub label_histogram: BTreeMap<String, usize>,
    pub run_seed: u64,
    pub config_digest: String,
}

impl DatasetManifest {
    pub fn new(triplets: Vec<TripletRecord>, run_seed: u64, config_digest: impl Into<String>) -> Self {
        Self {
            label_histogram: label_histogram(&triplets),
            triplets,
            run_seed,
            config_digest: config_digest.into(),
        }
    }

    pub fn header(&self) -> ManifestHeader {
        let mut h = ManifestHeader::new(MANIFEST_KIND, self.run_seed, &self.config_digest);
        h.label_histogram = Some(self.label_histogram.clone());
        h
    }
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    write_records(path, Some(&manifest.header()), &manifest.triplets)
}

/// Reads a manifest and checks every referenced image against its hash.
pub fn read_manifest(path: &Path, store: &ImageStore) -> Result<DatasetManifest> {
    let manifest = read_manifest_unverified(path)?;
    let mut checked = std::collections::HashSet::new();
    for t in &manifest.triplets {
        for r in [&t.image_ref, &t.image_tgt] {
            if checked.insert(r.content_hash.clone()) {
                store.verify(r)?;
            }
        }
    }
    Ok(manifest)
}

/// Reads a manifest without touching image files.
pub fn read_manifest_unverified(path: &Path) -> Result<DatasetManifest> {
    let (header, triplets) = read_records::<TripletRecord>(path, true)?;
    let header = header.expect("header required");
    let schema = |message: String| Error::Schema {
        path: path.display().to_string(),
        line: 1,
        message,
    };
    if header.kind != MANIFEST_KIND {
        return Err(schema(format!("expected a {MANIFEST_KIND} manifest, found {}", header.kind)));
    }
    let histogram = label_histogram(&triplets);
    if let Some(h) = &header.label_histogram {
        if *h != histogram {
            return Err(schema("label histogram does not match records".into()));
        }
    }
    Ok(DatasetManifest {
        triplets,
        label_histogram: histogram,
        run_seed: header.seed,
        config_digest: header.config_digest,
    })
}
