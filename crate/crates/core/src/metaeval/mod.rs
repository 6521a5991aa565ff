//! Meta-evaluation: gold binarization, ROC AUC per criterion, unified scores,
//! paired bootstrap significance and pairwise preference accuracy.

pub mod auc;
pub mod binarize;
pub mod bootstrap;
pub mod imagerag;
pub mod report;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use auc::{roc_auc, unified_auc};
pub use binarize::{
    binarize_dreambench, binarize_imagenhub, binarize_kitten, combine_multi_subject, AnnotationRecord,
    Benchmark, BinaryGold,
};
pub use bootstrap::{bootstrap_compare, BootstrapConfig, BootstrapResult, Mark};
pub use imagerag::{imagerag_accuracy, Axis, Choice, PreferencePair};
pub use report::{CategoryCells, Cell, ComparisonReport, MetricRow, PreferenceReport, PreferenceRow};

use crate::assemble::TripletRecord;
use crate::error::{Error, Result};
use crate::scoring::ScoreRecord;
use crate::seed::derive_seed;
use crate::types::Label;

pub const ALL_CATEGORIES: &str = "All";

/// Gold labels of one evaluated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRow {
    pub instance_id: String,
    pub category: String,
    pub gold: BinaryGold,
}

pub fn gold_from_annotations(records: &[AnnotationRecord]) -> Result<Vec<GoldRow>> {
    records
        .iter()
        .map(|r| {
            Ok(GoldRow {
                instance_id: r.instance_id.clone(),
                category: r.category.display_name().to_string(),
                gold: r.gold()?,
            })
        })
        .collect()
}

/// Gold taken from an assembled manifest's own labels, one category per entity.
pub fn gold_from_triplets(triplets: &[TripletRecord]) -> Vec<GoldRow> {
    triplets
        .iter()
        .map(|t| GoldRow {
            instance_id: t.id.clone(),
            category: ALL_CATEGORIES.to_string(),
            gold: BinaryGold {
                ta: t.ta_label,
                sp: t.sp_label,
            },
        })
        .collect()
}

/// A metric's scores for one instance after joining with gold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JoinedScore {
    pub ta: Option<f64>,
    pub sp: Option<f64>,
}

fn opt_min(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a?.min(b?))
}

/// Looks up each gold instance in `records`. Two-subject instances scored per
/// subject as `<id>::0` and `<id>::1` are combined by the per-criterion minimum.
pub fn join_scores(gold: &[GoldRow], records: &[ScoreRecord], warnings: &mut Vec<String>) -> Vec<Option<JoinedScore>> {
    let by_id: HashMap<&str, &ScoreRecord> = records
        .iter()
        .filter(|r| !r.is_error())
        .map(|r| (r.instance_id.as_str(), r))
        .collect();
    gold.iter()
        .map(|g| {
            let id = g.instance_id.as_str();
            if let Some(r) = by_id.get(id) {
                return Some(JoinedScore { ta: r.ta, sp: r.sp });
            }
            match (by_id.get(format!("{id}::0").as_str()), by_id.get(format!("{id}::1").as_str())) {
                (Some(a), Some(b)) => Some(JoinedScore {
                    ta: opt_min(a.ta, b.ta),
                    sp: opt_min(a.sp, b.sp),
                }),
                _ => {
                    warnings.push(format!("no score for instance {id}"));
                    None
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Criterion {
    Ta,
    Sp,
}

impl Criterion {
    fn name(self) -> &'static str {
        match self {
            Criterion::Ta => "ta",
            Criterion::Sp => "sp",
        }
    }

    fn score(self, s: &JoinedScore) -> Option<f64> {
        match self {
            Criterion::Ta => s.ta,
            Criterion::Sp => s.sp,
        }
    }

    fn label(self, g: &BinaryGold) -> Label {
        match self {
            Criterion::Ta => g.ta,
            Criterion::Sp => g.sp,
        }
    }
}

/// Metric name with its joined scores, aligned to the gold rows.
pub struct MetricScores {
    pub metric: String,
    pub joined: Vec<Option<JoinedScore>>,
}

fn single_auc(gold: &[GoldRow], m: &MetricScores, rows: &[usize], c: Criterion, ctx: &str) -> Result<Option<(f64, usize)>> {
    let pts: Vec<(f64, Label)> = rows
        .iter()
        .filter_map(|&i| Some((c.score(m.joined[i].as_ref()?)?, c.label(&gold[i].gold))))
        .collect();
    if pts.is_empty() {
        return Ok(None);
    }
    let (s, l): (Vec<f64>, Vec<Label>) = pts.into_iter().unzip();
    let auc = roc_auc(&s, &l).map_err(|e| match e {
        Error::UndefinedAuc(m) => Error::UndefinedAuc(format!("{ctx} {}: {m}", c.name())),
        other => other,
    })?;
    Ok(Some((auc, s.len())))
}

/// Rows where both metrics have every requested criterion.
fn shared_rows(rows: &[usize], a: &MetricScores, b: &MetricScores, crits: &[Criterion]) -> Vec<usize> {
    rows.iter()
        .copied()
        .filter(|&i| {
            [a, b].iter().all(|m| {
                m.joined[i]
                    .as_ref()
                    .is_some_and(|s| crits.iter().all(|c| c.score(s).is_some()))
            })
        })
        .collect()
}

fn column(gold: &[GoldRow], m: &MetricScores, rows: &[usize], c: Criterion) -> (Vec<f64>, Vec<Label>) {
    rows.iter()
        .map(|&i| {
            let s = m.joined[i].as_ref().and_then(|s| c.score(s)).unwrap_or_default();
            (s, c.label(&gold[i].gold))
        })
        .unzip()
}

fn scaled(r: &BootstrapResult) -> (Mark, [f64; 2]) {
    (r.mark, [r.ci_lower * 100.0, r.ci_upper * 100.0])
}

/// Per-category ROC AUC (ta, sp, unified) of every metric, with significance
/// against `reference` when given. Undefined AUCs are errors.
pub fn evaluate(
    benchmark: &str,
    gold: &[GoldRow],
    metrics: &[MetricScores],
    reference: Option<&str>,
    config: &BootstrapConfig,
    seed: u64,
) -> Result<ComparisonReport> {
    let mut categories: Vec<String> = gold
        .iter()
        .map(|g| g.category.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut groups: Vec<(String, Vec<usize>)> = categories
        .iter()
        .map(|c| (c.clone(), (0..gold.len()).filter(|&i| &gold[i].category == c).collect()))
        .collect();
    if categories.len() > 1 {
        categories.push(ALL_CATEGORIES.to_string());
        groups.push((ALL_CATEGORIES.to_string(), (0..gold.len()).collect()));
    }
    let ref_scores = match reference {
        Some(r) => Some(
            metrics
                .iter()
                .find(|m| m.metric == r)
                .ok_or_else(|| Error::domain(format!("reference metric {r} has no scores")))?,
        ),
        None => None,
    };
    let mut rows = Vec::new();
    for m in metrics {
        let mut cells = Vec::new();
        for (cat, idx) in &groups {
            let ctx = format!("{} / {cat}", m.metric);
            let ta = single_auc(gold, m, idx, Criterion::Ta, &ctx)?;
            let sp = single_auc(gold, m, idx, Criterion::Sp, &ctx)?;
            let mut cc = CategoryCells {
                category: cat.clone(),
                ta: ta.map(|(v, n)| Cell::plain(v * 100.0, n)),
                sp: sp.map(|(v, n)| Cell::plain(v * 100.0, n)),
                unified: match (ta, sp) {
                    (Some((a, na)), Some((b, nb))) => Some(Cell::plain(unified_auc(a * 100.0, b * 100.0)?, na.min(nb))),
                    _ => None,
                },
            };
            if let Some(r) = ref_scores.filter(|r| r.metric != m.metric) {
                let cat_seed = derive_seed(seed, cat);
                for (crit, cell) in [(Criterion::Ta, &mut cc.ta), (Criterion::Sp, &mut cc.sp)] {
                    let Some(cell) = cell.as_mut() else { continue };
                    let shared = shared_rows(idx, r, m, &[crit]);
                    if shared.is_empty() {
                        continue;
                    }
                    let (rs, l) = column(gold, r, &shared, crit);
                    let (os, _) = column(gold, m, &shared, crit);
                    let res = bootstrap_compare(&rs, &os, &l, config, derive_seed(cat_seed, crit.name()))?;
                    (cell.mark, _) = scaled(&res);
                    cell.ci = Some(scaled(&res).1);
                }
                if let Some(cell) = cc.unified.as_mut() {
                    let shared = shared_rows(idx, r, m, &[Criterion::Ta, Criterion::Sp]);
                    if !shared.is_empty() {
                        let (rt, lt) = column(gold, r, &shared, Criterion::Ta);
                        let (rsp, ls) = column(gold, r, &shared, Criterion::Sp);
                        let (ot, _) = column(gold, m, &shared, Criterion::Ta);
                        let (osp, _) = column(gold, m, &shared, Criterion::Sp);
                        let paired = bootstrap::PairedRows {
                            reference: [&rt, &rsp],
                            other: [&ot, &osp],
                            labels: [&lt, &ls],
                        };
                        let res = bootstrap::bootstrap_compare_unified(&paired, config, derive_seed(cat_seed, "unified"))?;
                        (cell.mark, _) = scaled(&res);
                        cell.ci = Some(scaled(&res).1);
                    }
                }
            }
            cells.push(cc);
        }
        rows.push(MetricRow {
            metric: m.metric.clone(),
            cells,
        });
    }
    Ok(ComparisonReport {
        benchmark: benchmark.to_string(),
        reference_metric: reference.map(str::to_string),
        n_bootstrap: config.n_bootstrap,
        p_level: config.p_level,
        seed,
        categories,
        rows,
    })
}

/// A precomputed `(ta, sp)` AUC pair, on the 0-100 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucTableRow {
    pub metric: String,
    pub category: String,
    pub ta: f64,
    pub sp: f64,
}

/// Builds a report from already computed AUCs, filling in the unified column.
pub fn report_from_auc_table(benchmark: &str, rows: &[AucTableRow]) -> Result<ComparisonReport> {
    let mut categories: Vec<String> = Vec::new();
    let mut metrics: Vec<MetricRow> = Vec::new();
    for r in rows {
        if !categories.contains(&r.category) {
            categories.push(r.category.clone());
        }
        let cells = CategoryCells {
            category: r.category.clone(),
            ta: Some(Cell::plain(r.ta, 0)),
            sp: Some(Cell::plain(r.sp, 0)),
            unified: Some(Cell::plain(unified_auc(r.ta, r.sp)?, 0)),
        };
        match metrics.iter_mut().find(|m| m.metric == r.metric) {
            Some(m) => m.cells.push(cells),
            None => metrics.push(MetricRow {
                metric: r.metric.clone(),
                cells: vec![cells],
            }),
        }
    }
    Ok(ComparisonReport {
        benchmark: benchmark.to_string(),
        reference_metric: None,
        n_bootstrap: 0,
        p_level: 0.0,
        seed: 0,
        categories,
        rows: metrics,
    })
}
