//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::panic::catch_unwind;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{ensure, Context, Result};
use image::{Rgb, RgbImage};
use rand::Rng;
use refeval_core::assemble::{assemble_triplets, balance_by_undersampling, label_histogram, LabelClass};
use refeval_core::clients::mock::{MockSettings, MockTransport};
use refeval_core::clients::{ClientSet, TokenDist};
use refeval_core::fixtures::{ellipse_mask, oracle_gold, synth_corpus};
use refeval_core::identgen::{
    identity_verdict, sample_patch_mask, IdentConfig, IdentDropReason, IdentThresholds, IdentVerdict, PatchConfig,
    SubjectMask,
};
use refeval_core::markup::MarkedPrompt;
use refeval_core::metaeval::binarize::GoldOverride;
use refeval_core::metaeval::{
    binarize_dreambench, binarize_imagenhub, binarize_kitten, bootstrap_compare, evaluate, gold_from_triplets,
    join_scores, roc_auc, unified_auc, BinaryGold, BootstrapConfig, Mark, MetricScores,
};
use refeval_core::pairgen::{enumerate_two_scene, FrameFilterConfig, PairProvenance, Scene, SceneFrame, SceneSource};
use refeval_core::pipeline::{forge_ident, forge_pairs, forge_prompts};
use refeval_core::promptgen::{
    parse_swap_tags, validate_perturbation, PromptConfig, PromptKind, PromptRecord, PromptRejectReason, SwapEdit,
};
use refeval_core::scoring::{extract_scores, Metric, ScoreInstance, Scorer, ScoringConfig};
use refeval_core::seed::rng_for;
use refeval_core::store::ImageStore;
use refeval_core::{BBox, CategoryTag, ImageRef, Label};

fn textured(seed: u32) -> RgbImage {
    RgbImage::from_fn(24, 20, |x, y| {
        let v = (x.wrapping_mul(2654435761).wrapping_add(y.wrapping_mul(40503)).wrapping_add(seed * 977)) >> 7;
        Rgb([v as u8, (v >> 8) as u8, (v >> 16) as u8])
    })
}

fn two_frame_scene(store: &ImageStore, id: &str, seed: u32) -> Result<Scene> {
    let frames = (0..2)
        .map(|i| {
            Ok(SceneFrame {
                image: store.save(&textured(seed * 10 + i), "frames")?,
                bbox: Some(BBox::new(2 + i, 3, 10, 8)),
                entity: "dog".into(),
                named_entity: false,
                identity: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        scene_id: id.into(),
        source: SceneSource::Fixture,
        frames,
    })
}

fn c1_two_scene_enumeration() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let store = ImageStore::new(dir.path());
    let a = two_frame_scene(&store, "s1", 1)?;
    let b = two_frame_scene(&store, "s2", 2)?;
    let (pos, neg) = enumerate_two_scene(&a, &b, &store)?;
    ensure!(pos.len() == 4 && neg.len() == 8, "got {} positives, {} negatives", pos.len(), neg.len());
    ensure!(pos.iter().all(|r| r.sp_label == Label::Pos && r.provenance == PairProvenance::IntraScene));
    ensure!(neg.iter().all(|r| r.sp_label == Label::Neg && r.provenance == PairProvenance::CrossSceneNegative));
    Ok("4 positives, 8 negatives".into())
}

fn c2_unified_rows() -> Result<String> {
    let mut notes = Vec::new();
    for (ta, sp, printed) in [(80.2, 79.4, 79.8), (82.5, 86.0, 84.2), (97.0, 82.2, 88.9)] {
        let exact = unified_auc(ta, sp)?;
        let hm = |a: f64, b: f64| 2.0 * a * b / (a + b);
        if (exact - printed).abs() <= 0.05 {
            notes.push(format!("{printed} ok ({exact:.2})"));
            continue;
        }
        // printed inputs carry one decimal; accept if the printed output is
        // reachable from inputs inside their rounding interval
        let lo = hm(ta - 0.05, sp - 0.05);
        let hi = hm(ta + 0.05, sp + 0.05);
        ensure!(
            lo - 0.05 <= printed && printed <= hi + 0.05,
            "({ta}, {sp}) gives {exact:.3}, interval [{lo:.3}, {hi:.3}], printed {printed}"
        );
        notes.push(format!("{printed} via input rounding interval (exact {exact:.2})"));
    }
    Ok(notes.join("; "))
}

fn brute_auc(scores: &[f64], labels: &[Label]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, li) in labels.iter().enumerate() {
        for (j, lj) in labels.iter().enumerate() {
            if li.is_pos() && !lj.is_pos() {
                den += 1.0;
                num += match scores[i].partial_cmp(&scores[j]) {
                    Some(std::cmp::Ordering::Greater) => 1.0,
                    Some(std::cmp::Ordering::Equal) => 0.5,
                    _ => 0.0,
                };
            }
        }
    }
    num / den
}

fn c3_auc_oracle() -> Result<String> {
    let mut worst: f64 = 0.0;
    for d in 0..50 {
        let mut rng = rng_for(d, "auc-oracle");
        let labels: Vec<Label> = (0..200)
            .map(|i| if i < 2 { Label::from_bool(i == 0) } else { Label::from_bool(rng.random_bool(0.4)) })
            .collect();
        let scores: Vec<f64> = (0..200).map(|_| f64::from(rng.random_range(0..12u8)) / 11.0).collect();
        let got = roc_auc(&scores, &labels)?;
        worst = worst.max((got - brute_auc(&scores, &labels)).abs());
    }
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    Ok(format!("50 tied datasets, max deviation {worst:.1e}"))
}

fn c4_binarization() -> Result<String> {
    for r1 in 0..=4 {
        for r2 in 0..=4 {
            let expect = matches!((r1, r2), (4, 4) | (4, 3) | (3, 4));
            ensure!(binarize_dreambench(r1, r2)?.is_pos() == expect, "dreambench ({r1}, {r2})");
        }
    }
    let gold = |ta: Label, sp: Label| BinaryGold { ta, sp };
    let (p, n) = (Label::Pos, Label::Neg);
    ensure!(binarize_imagenhub(&[1.0, 1.0, 1.0], None, None)? == gold(p, p));
    ensure!(binarize_imagenhub(&[1.0, 1.0, 0.5], None, None)? == gold(n, n));
    ensure!(binarize_imagenhub(&[0.0, 0.0, 0.0], Some(GoldOverride { ta: 1, sp: 0 }), None)? == gold(p, n));
    ensure!(binarize_imagenhub(&[1.0, 1.0, 1.0], None, Some([1, 0]))? == gold(p, n));
    ensure!(binarize_imagenhub(&[1.0, 1.0], None, None).is_err());
    ensure!(binarize_kitten(&[1, 1, 1, 0, 0], &[4, 4, 5, 3, 3])? == gold(p, n));
    ensure!(binarize_kitten(&[1, 0, 1, 0, 0], &[4, 4, 4, 4, 4])? == gold(n, p));
    ensure!(binarize_kitten(&[1, 1, 1, 1, 1], &[5, 5, 4, 3, 3])?.sp == p);
    Ok("dreambench, imagenhub and kitten rules hold".into())
}

fn c5_bootstrap() -> Result<String> {
    let cfg = BootstrapConfig::default();
    let mut rng = rng_for(5, "bootstrap-acceptance");
    let labels: Vec<Label> = (0..300).map(|i| Label::from_bool(i % 3 == 0)).collect();
    let scores: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
    for seed in 0..20 {
        let r = bootstrap_compare(&scores, &scores, &labels, &cfg, seed)?;
        ensure!(r.mark == Mark::None, "identical metrics marked {:?} at seed {seed}", r.mark);
    }
    let labels: Vec<Label> = (0..500).map(|i| Label::from_bool(i % 2 == 0)).collect();
    let perfect: Vec<f64> = labels.iter().map(|l| f64::from(l.bit())).collect();
    let inverted: Vec<f64> = perfect.iter().map(|s| 1.0 - s).collect();
    ensure!(roc_auc(&perfect, &labels)? == 1.0 && roc_auc(&inverted, &labels)? == 0.0);
    let up = bootstrap_compare(&inverted, &perfect, &labels, &cfg, 1)?;
    let down = bootstrap_compare(&perfect, &inverted, &labels, &cfg, 1)?;
    ensure!(up.mark == Mark::Over && down.mark == Mark::Under, "{:?} / {:?}", up.mark, down.mark);
    let small: Vec<Label> = (0..26).map(|i| Label::from_bool(i % 2 == 0)).collect();
    let s: Vec<f64> = (0..26).map(f64::from).collect();
    let r = bootstrap_compare(&s, &s, &small, &cfg, 3)?;
    ensure!(cfg.resample_len(26) == 104 && r.resample_len == 104, "resample length {}", r.resample_len);
    Ok("no marks on 20 seeds, 1.0 vs 0.0 significant both ways, 26 -> 104".into())
}

fn c6_patch_sampler() -> Result<String> {
    let mask = ellipse_mask(900, 700, 400.0, 300.0);
    let (w, h) = mask.dims();
    let img = ImageRef {
        path: "subject.png".into(),
        width: w,
        height: h,
        content_hash: "0".repeat(64),
    };
    let s = SubjectMask::new("s", img, mask, CategoryTag::Object, "bag")?;
    let (cfg, th) = (PatchConfig::default(), IdentThresholds::default());
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for seed in 0..1000 {
        let p = sample_patch_mask(&s, &cfg, &th, seed)?;
        ensure!((0.30..=0.50).contains(&p.coverage), "seed {seed}: coverage {}", p.coverage);
        ensure!(p.mask.is_subset_of(&s.mask), "seed {seed}: union leaves the mask");
        for r in &p.patches {
            let corners = [(r.x, r.y), (r.x + r.w - 1, r.y), (r.x, r.y + r.h - 1), (r.x + r.w - 1, r.y + r.h - 1)];
            ensure!(corners.iter().all(|&(x, y)| s.mask.get(x, y)), "seed {seed}: patch {r:?} outside");
        }
        lo = lo.min(p.coverage);
        hi = hi.max(p.coverage);
    }
    Ok(format!("1000 samples, coverage {lo:.3}-{hi:.3}"))
}

fn c7_identity_boundaries() -> Result<String> {
    let th = IdentThresholds::default();
    let small = IdentVerdict::Drop(IdentDropReason::MaskTooSmall);
    let low = IdentVerdict::Drop(IdentDropReason::LowMse);
    let big = 1_000_000;
    for (cat, below, at) in [(CategoryTag::Object, 59_999, 60_000), (CategoryTag::Human, 19_999, 20_000)] {
        ensure!(identity_verdict(cat, below, 1e9, &th)? == small, "{cat:?} area {below}");
        ensure!(identity_verdict(cat, at, 1e9, &th)? == IdentVerdict::Keep, "{cat:?} area {at}");
    }
    for (cat, below, at) in [
        (CategoryTag::Object, 6_499.0, 6_500.0),
        (CategoryTag::Animal, 5_399.0, 5_400.0),
        (CategoryTag::Human, 19_999.0, 20_000.0),
    ] {
        ensure!(identity_verdict(cat, big, below, &th)? == low, "{cat:?} mse {below}");
        ensure!(identity_verdict(cat, big, at, &th)? == IdentVerdict::Keep, "{cat:?} mse {at}");
    }
    Ok("area and MSE cutoffs inclusive".into())
}

const LIZARD_IN: &str = "A lizard is perched on a rock, surrounded by other rocks and foliage. The <u>lizard</u> is facing the camera, with its head raised and its tail curled behind it.";
const LIZARD_OUT: &str = "A lizard is perched on a <swap>rock</swap><branch>, surrounded by other rocks and foliage. The <u>lizard</u> is facing the camera, with its head raised and its tail curled behind it.";
const LIZARD_CORRUPTED: &str = "A lizard is perched on a branch, surrounded by other rocks and foliage. The <u>lizard</u> is facing the camera, with its head raised and its tail curled behind it.";

fn c8_lizard() -> Result<String> {
    let p = parse_swap_tags(LIZARD_OUT)?;
    ensure!(p.original == LIZARD_IN, "original differs: {}", p.original);
    ensure!(p.corrupted == LIZARD_CORRUPTED, "corrupted differs: {}", p.corrupted);
    ensure!(p.edit.original == "rock" && p.edit.replacement == "branch");
    let img = ImageRef {
        path: "a.png".into(),
        width: 8,
        height: 8,
        content_hash: "a".repeat(64),
    };
    let pos = PromptRecord::new(MarkedPrompt::parse(LIZARD_IN)?, PromptKind::Positive, img, "lizard", None);
    ensure!(validate_perturbation(&pos, &p.corrupted, &p.edit).ok, "valid edit rejected");
    let subject_edit = SwapEdit {
        original: "lizard".into(),
        replacement: "gecko".into(),
        offset: LIZARD_IN.find("<u>lizard").context("subject tag")? + 3,
    };
    let v = validate_perturbation(&pos, &LIZARD_IN.replace("<u>lizard</u>", "<u>gecko</u>"), &subject_edit);
    ensure!(v.reason == Some(PromptRejectReason::SubjectModified), "subject edit: {v:?}");
    let v = validate_perturbation(&pos, &p.corrupted.replace("foliage", "grass"), &p.edit);
    ensure!(v.reason == Some(PromptRejectReason::MultiEdit), "multi edit: {v:?}");
    Ok("exact parse; subject and multi edits rejected".into())
}

fn c9_end_to_end() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let store = ImageStore::new(dir.path());
    let corpus = synth_corpus(&store, 21)?;
    ensure!(corpus.scenes.len() >= 8 && corpus.subjects.len() >= 6);
    let clients = ClientSet::uniform(Arc::new(MockTransport::new(corpus.mock.clone(), MockSettings::default())), None);
    let pairs = forge_pairs(&corpus.scenes, &store, &clients, FrameFilterConfig::default(), 4)?;
    let ident = forge_ident(&corpus.subjects, &store, &clients, &IdentConfig::default(), 21, 4)?;
    let kept = ident.audits.iter().filter(|a| a.verdict == IdentVerdict::Keep).count();
    ensure!(kept >= 6, "{kept} subjects kept");
    let mut all = pairs.pairs;
    all.extend(ident.pairs);
    let prompts = forge_prompts(&all, &store, &clients, PromptConfig::default(), 21, 4);
    let raw = assemble_triplets(&all, &prompts.prompts).triplets;
    let hist = label_histogram(&raw);
    for c in LabelClass::ALL {
        ensure!(hist.get(&c.key()).copied().unwrap_or(0) > 0, "class {} missing", c.key());
    }
    let balanced = balance_by_undersampling(&raw, 21).triplets;
    let counts: BTreeMap<String, usize> = label_histogram(&balanced);
    let sizes: Vec<usize> = counts.values().copied().collect();
    ensure!(sizes.len() == 4 && sizes.windows(2).all(|w| w[0] == w[1]), "{counts:?}");

    let mut fx = corpus.mock.clone();
    fx.gold.extend(oracle_gold(&balanced));
    let oracle = ClientSet::uniform(Arc::new(MockTransport::new(fx, MockSettings::default())), None);
    let scorer = Scorer {
        store: &store,
        clients: &oracle,
        config: ScoringConfig::default(),
    };
    let instances: Vec<ScoreInstance> = balanced.iter().map(ScoreInstance::from).collect();
    let records = scorer.batch_score(&instances, Metric::TokenPair, 4);
    let gold = gold_from_triplets(&balanced);
    let mut warnings = Vec::new();
    let metric = MetricScores {
        metric: "oracle".into(),
        joined: join_scores(&gold, &records, &mut warnings),
    };
    let report = evaluate("forged", &gold, &[metric], None, &BootstrapConfig::default(), 21)?;
    let cell = &report.rows[0].cells[0];
    let (ta, sp) = (
        cell.ta.as_ref().context("ta")?.value,
        cell.sp.as_ref().context("sp")?.value,
    );
    ensure!(ta >= 99.0 && sp >= 99.0, "TA {ta}, SP {sp}");
    Ok(format!(
        "{} scenes, {kept} subjects, {} triplets per class, TA {ta:.1}, SP {sp:.1}",
        corpus.scenes.len(),
        sizes[0]
    ))
}

fn random_dist(position: usize, rng: &mut impl Rng) -> TokenDist {
    let mut t = TokenDist::binary(position, rng.random());
    let p0 = t.probs["0"] * rng.random::<f64>();
    t.probs.insert("0".into(), p0);
    t.probs.insert("yes".into(), rng.random());
    t
}

fn c10_score_extraction() -> Result<String> {
    let mut rng = rng_for(10, "extract");
    for _ in 0..1000 {
        let s = extract_scores(&[random_dist(0, &mut rng), random_dist(1, &mut rng)])?;
        ensure!((0.0..=1.0).contains(&s.ta) && (0.0..=1.0).contains(&s.sp), "{s:?}");
    }
    let uniform = |p: f64| {
        let mut t = TokenDist::binary(0, 0.5);
        t.probs.insert("0".into(), p);
        t.probs.insert("1".into(), p);
        t
    };
    for p in [0.01, 0.3, 0.5] {
        let s = extract_scores(&[uniform(p), uniform(p)])?;
        ensure!(s.ta == 0.5 && s.sp == 0.5, "uniform {p}: {s:?}");
    }
    let mut prev = -1.0;
    for k in 0..=100 {
        let mut t = TokenDist::binary(0, f64::from(k) / 100.0 * 0.7);
        t.probs.insert("0".into(), 0.3);
        let s = extract_scores(&[t.clone(), t])?.ta;
        ensure!(s > prev, "not strictly increasing at step {k}");
        prev = s;
    }

    let dir = tempfile::tempdir()?;
    let store = ImageStore::new(dir.path());
    let corpus = synth_corpus(&store, 4)?;
    let clients = ClientSet::uniform(Arc::new(MockTransport::new(corpus.mock, MockSettings::default())), None);
    let scorer = Scorer {
        store: &store,
        clients: &clients,
        config: ScoringConfig::default(),
    };
    let multiset = |conc: usize| {
        let mut v: Vec<String> = scorer
            .batch_score(&corpus.bench_instances, Metric::TokenPair, conc)
            .iter()
            .map(|r| format!("{}|{:?}|{:?}|{:?}", r.instance_id, r.ta, r.sp, r.error))
            .collect();
        v.sort();
        v
    };
    ensure!(multiset(1) == multiset(8), "concurrency changed scores");
    Ok("bounded, 0.5 on uniform, strictly monotone, concurrency-invariant".into())
}

type Check = fn() -> Result<String>;

fn main() -> ExitCode {
    let checks: [(&str, Check); 10] = [
        ("two-scene enumeration", c1_two_scene_enumeration),
        ("unified harmonic mean", c2_unified_rows),
        ("roc auc vs brute force", c3_auc_oracle),
        ("binarization truth tables", c4_binarization),
        ("paired bootstrap", c5_bootstrap),
        ("patch sampler", c6_patch_sampler),
        ("identity filter boundaries", c7_identity_boundaries),
        ("perturbation parse and validation", c8_lizard),
        ("end-to-end mock run", c9_end_to_end),
        ("score extraction", c10_score_extraction),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        match catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Ok(Err(e)) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {e:#}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {:>2} {name}: panicked", i + 1);
            }
        }
    }
    println!("{} of {} acceptance criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
