use std::sync::Arc;

use refeval_core::assemble::{assemble_triplets, balance_by_undersampling, label_histogram, LabelClass};
use refeval_core::clients::mock::{MockSettings, MockTransport};
use refeval_core::clients::ClientSet;
use refeval_core::fixtures::{oracle_gold, synth_corpus};
use refeval_core::identgen::{IdentConfig, IdentDropReason, IdentVerdict};
use refeval_core::metaeval::{evaluate, gold_from_triplets, join_scores, BootstrapConfig, MetricScores};
use refeval_core::pairgen::{FrameFilterConfig, FrameRejectReason, PairProvenance};
use refeval_core::pipeline::{forge_ident, forge_pairs, forge_prompts};
use refeval_core::promptgen::PromptConfig;
use refeval_core::scoring::{Metric, ScoreInstance, Scorer, ScoringConfig};
use refeval_core::store::ImageStore;

#[test]
fn forge_score_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let store = ImageStore::new(dir.path());
    let corpus = synth_corpus(&store, 11).unwrap();
    let clients = ClientSet::uniform(
        Arc::new(MockTransport::new(corpus.mock.clone(), MockSettings::default())),
        None,
    );

    let pairs = forge_pairs(&corpus.scenes, &store, &clients, FrameFilterConfig::default(), 4).unwrap();
    let reasons: Vec<_> = pairs.rejections.iter().map(|r| r.reason).collect();
    assert!(reasons.contains(&FrameRejectReason::Blur));
    assert!(reasons.contains(&FrameRejectReason::OverlayText));
    for p in [
        PairProvenance::IntraScene,
        PairProvenance::CrossSceneNegative,
        PairProvenance::NamedEntityPositive,
    ] {
        assert!(pairs.pairs.iter().any(|r| r.provenance == p), "{p:?}");
    }

    let ident = forge_ident(&corpus.subjects, &store, &clients, &IdentConfig::default(), 11, 4).unwrap();
    let kept = ident.audits.iter().filter(|a| a.verdict == IdentVerdict::Keep).count();
    assert_eq!(kept, 6);
    let verdict = |id: &str| ident.audits.iter().find(|a| a.subject_id == id).unwrap().verdict;
    assert_eq!(verdict("subj-tiny-vase"), IdentVerdict::Drop(IdentDropReason::MaskTooSmall));
    assert_eq!(verdict("subj-gray-lamp"), IdentVerdict::Drop(IdentDropReason::LowMse));

    let mut all_pairs = pairs.pairs.clone();
    all_pairs.extend(ident.pairs);
    let prompts = forge_prompts(&all_pairs, &store, &clients, PromptConfig::default(), 11, 4);
    let assembly = assemble_triplets(&all_pairs, &prompts.prompts);
    let hist = label_histogram(&assembly.triplets);
    for c in LabelClass::ALL {
        assert!(hist.get(&c.key()).copied().unwrap_or(0) > 0, "class {} missing", c.key());
    }
    let balanced = balance_by_undersampling(&assembly.triplets, 11).triplets;
    let counts: Vec<usize> = label_histogram(&balanced).into_values().collect();
    assert_eq!(counts.len(), 4);
    assert!(counts.windows(2).all(|w| w[0] == w[1]));

    let mut fx = corpus.mock.clone();
    fx.gold.extend(oracle_gold(&balanced));
    let scoring_clients = ClientSet::uniform(Arc::new(MockTransport::new(fx, MockSettings::default())), None);
    let scorer = Scorer {
        store: &store,
        clients: &scoring_clients,
        config: ScoringConfig::default(),
    };
    let instances: Vec<ScoreInstance> = balanced.iter().map(ScoreInstance::from).collect();
    let records = scorer.batch_score(&instances, Metric::TokenPair, 4);
    assert!(records.iter().all(|r| !r.is_error()));

    let gold = gold_from_triplets(&balanced);
    let mut warnings = Vec::new();
    let metrics = vec![MetricScores {
        metric: "token-pair".into(),
        joined: join_scores(&gold, &records, &mut warnings),
    }];
    let report = evaluate("forged", &gold, &metrics, None, &BootstrapConfig::default(), 11).unwrap();
    let cell = &report.rows[0].cells[0];
    assert!(cell.ta.as_ref().unwrap().value >= 99.0);
    assert!(cell.sp.as_ref().unwrap().value >= 99.0);
}
