//! Subcommand implementations. Every output carries a manifest header with the
//! run seed and config digest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use refeval_core::assemble::{
    assemble_triplets, balance_by_undersampling, label_histogram, read_manifest, read_manifest_unverified,
    write_manifest, DatasetManifest,
};
use refeval_core::clients::mock::MockFixtures;
use refeval_core::fixtures::{oracle_gold, synth_corpus, write_corpus, write_mock};
use refeval_core::identgen::{IdentVerdict, SubjectSpec};
use refeval_core::jsonl::{read_records, write_records, ManifestHeader};
use refeval_core::metaeval::imagerag::{axis_scores, bootstrap_accuracy, AxisAccuracy};
use refeval_core::metaeval::{
    evaluate, gold_from_annotations, gold_from_triplets, imagerag_accuracy, join_scores, report_from_auc_table,
    AnnotationRecord, AucTableRow, Cell, GoldRow, Mark, MetricScores, PreferencePair, PreferenceReport, PreferenceRow,
};
use refeval_core::pairgen::{PairRecord, SceneSpec};
use refeval_core::pipeline::{forge_ident, forge_pairs, forge_prompts};
use refeval_core::promptgen::PromptRecord;
use refeval_core::scoring::{check_failure_rate, Metric, ScoreInstance, ScoreRecord, Scorer, SCORES_KIND};
use refeval_core::seed::derive_seed;
use refeval_core::store::ImageStore;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{ClientMode, RunConfig};
use crate::{Cli, Command, Eval, Fixtures, Forge, Global, Score};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_STRICT: u8 = 3;

pub const PAIRS_KIND: &str = "pairs";
pub const PROMPTS_KIND: &str = "prompts";
pub const EVAL_KIND: &str = "eval_report";
pub const STAGE_KIND: &str = "stage_report";

#[derive(Debug)]
pub struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.downcast_ref::<UsageError>().is_some()) {
        EXIT_USAGE
    } else {
        EXIT_RUNTIME
    }
}

struct Ctx {
    cfg: RunConfig,
    digest: String,
    store: ImageStore,
    strict: bool,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p.as_mut().filter(|p| p.is_relative()) {
        *path = base.join(&*path);
    }
}

impl Ctx {
    fn new(g: &Global) -> Result<Self> {
        if let Some(p) = &g.config {
            if !p.exists() {
                return Err(usage(format!("config {} does not exist", p.display())));
            }
        }
        let mut cfg = RunConfig::load(g.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
        let base = g
            .config
            .as_ref()
            .and_then(|p| p.parent())
            .map(Path::to_path_buf)
            .unwrap_or_default();
        rebase(&base, &mut cfg.paths.store);
        rebase(&base, &mut cfg.paths.cache_dir);
        rebase(&base, &mut cfg.clients.mock_fixtures);
        cfg.apply_env(|k| std::env::var(k).ok());
        if let Some(s) = g.seed {
            cfg.seed = s;
        }
        if let Some(c) = g.concurrency {
            cfg.concurrency = c;
        }
        if let Some(s) = &g.store {
            cfg.paths.store = Some(s.clone());
        }
        if let Some(m) = &g.mock {
            cfg.clients.mode = ClientMode::Mock;
            cfg.clients.mock_fixtures = Some(m.clone());
        }
        cfg.validate().map_err(|e| usage(format!("invalid configuration: {e:#}")))?;
        let store = ImageStore::new(cfg.paths.store.clone().unwrap_or_else(|| PathBuf::from(".")));
        Ok(Self {
            digest: cfg.digest(),
            cfg,
            store,
            strict: g.strict,
        })
    }

    fn header(&self, kind: &str) -> ManifestHeader {
        ManifestHeader::new(kind, self.cfg.seed, &self.digest)
    }

    fn write_stage_report<T: Serialize>(
        &self,
        out: &Path,
        stage: &str,
        counts: BTreeMap<String, usize>,
        warnings: &[String],
        details: &T,
    ) -> Result<PathBuf> {
        let path = out.with_extension("report.json");
        let body = serde_json::json!({
            "header": self.header(STAGE_KIND),
            "stage": stage,
            "output": out.file_name().map(|n| n.to_string_lossy().to_string()),
            "counts": counts,
            "warnings": warnings,
            "details": details,
        });
        write_json(&path, &body)?;
        Ok(path)
    }

    fn finish(&self, stage: &str, kept: usize, rejected: usize, out: &Path) -> ExitCode {
        println!("{stage}: kept {kept}, rejected {rejected} -> {}", out.display());
        if self.strict && rejected > 0 {
            eprintln!("{stage}: {rejected} rejection(s) under --strict");
            return ExitCode::from(EXIT_STRICT);
        }
        ExitCode::SUCCESS
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(usage(format!("input {} does not exist", path.display())));
    }
    Ok(())
}

fn read_plain<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    require(path)?;
    Ok(read_records(path, false)?.1)
}

fn read_kind<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>> {
    require(path)?;
    let (header, records) = read_records(path, true)?;
    let header = header.expect("header checked by reader");
    if header.kind != kind {
        return Err(usage(format!(
            "{} is a {:?} manifest, expected {kind:?}",
            path.display(),
            header.kind
        )));
    }
    Ok(records)
}

fn read_many<T: DeserializeOwned>(paths: &[PathBuf], kind: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_kind(p, kind)?);
    }
    Ok(out)
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let ctx = Ctx::new(&cli.global)?;
    match cli.command {
        Command::Forge(f) => forge(&ctx, f),
        Command::Score(s) => score(&ctx, s),
        Command::Eval(e) => eval(&ctx, e),
        Command::Fixtures(f) => fixtures(&ctx, f),
    }
}

fn forge(ctx: &Ctx, cmd: Forge) -> Result<ExitCode> {
    let conc = ctx.cfg.concurrency;
    let seed = ctx.cfg.seed;
    match cmd {
        Forge::Pairs { scenes, out } => {
            let specs: Vec<SceneSpec> = read_plain(&scenes)?;
            let clients = ctx.cfg.clients()?;
            let stage = forge_pairs(&specs, &ctx.store, &clients, ctx.cfg.pairs, conc)?;
            write_records(&out, Some(&ctx.header(PAIRS_KIND)), &stage.pairs)?;
            ctx.write_stage_report(&out, "pairs", stage.counts(), &stage.warnings, &stage.rejections)?;
            Ok(ctx.finish("pairs", stage.pairs.len(), stage.rejections.len(), &out))
        }
        Forge::Ident { subjects, out } => {
            let specs: Vec<SubjectSpec> = read_plain(&subjects)?;
            let clients = ctx.cfg.clients()?;
            let stage = forge_ident(&specs, &ctx.store, &clients, &ctx.cfg.ident, seed, conc)?;
            write_records(&out, Some(&ctx.header(PAIRS_KIND)), &stage.pairs)?;
            let warnings: Vec<String> = stage.audits.iter().flat_map(|a| a.warnings.clone()).collect();
            ctx.write_stage_report(&out, "ident", stage.counts(), &warnings, &stage.audits)?;
            let dropped = stage.audits.iter().filter(|a| a.verdict != IdentVerdict::Keep).count();
            Ok(ctx.finish("ident", stage.pairs.len(), dropped, &out))
        }
        Forge::Prompts { pairs, out } => {
            let pairs: Vec<PairRecord> = read_many(&pairs, PAIRS_KIND)?;
            let clients = ctx.cfg.clients()?;
            let prompts = forge_prompts(&pairs, &ctx.store, &clients, ctx.cfg.prompts, seed, conc);
            write_records(&out, Some(&ctx.header(PROMPTS_KIND)), &prompts.prompts)?;
            ctx.write_stage_report(&out, "prompts", prompts.counts(), &[], &prompts.rejections)?;
            Ok(ctx.finish("prompts", prompts.prompts.len(), prompts.rejections.len(), &out))
        }
        Forge::Assemble {
            pairs,
            prompts,
            out,
            no_balance,
        } => {
            let pairs: Vec<PairRecord> = read_many(&pairs, PAIRS_KIND)?;
            let prompts: Vec<PromptRecord> = read_kind(&prompts, PROMPTS_KIND)?;
            let raw = assemble_triplets(&pairs, &prompts);
            let unmatched = raw.warnings.len();
            let mut warnings = raw.warnings;
            let mut counts: BTreeMap<String, usize> = label_histogram(&raw.triplets)
                .into_iter()
                .map(|(k, v)| (format!("assembled.{k}"), v))
                .collect();
            let triplets = if no_balance {
                raw.triplets
            } else {
                let b = balance_by_undersampling(&raw.triplets, seed);
                warnings.extend(b.warnings);
                b.triplets
            };
            let manifest = DatasetManifest::new(triplets, seed, &ctx.digest);
            counts.extend(manifest.label_histogram.iter().map(|(k, v)| (format!("kept.{k}"), *v)));
            counts.insert("pairs_without_prompts".into(), unmatched);
            write_manifest(&manifest, &out)?;
            ctx.write_stage_report(&out, "assemble", counts, &warnings, &manifest.label_histogram)?;
            Ok(ctx.finish("assemble", manifest.triplets.len(), unmatched, &out))
        }
    }
}

fn score(ctx: &Ctx, cmd: Score) -> Result<ExitCode> {
    let Score::Run {
        manifest,
        instances,
        metric,
        out,
    } = cmd;
    let metric: Metric = metric.parse().map_err(|e| usage(format!("{e}")))?;
    let instances: Vec<ScoreInstance> = match (&manifest, &instances) {
        (Some(m), _) => {
            require(m)?;
            read_manifest(m, &ctx.store)?.triplets.iter().map(ScoreInstance::from).collect()
        }
        (None, Some(i)) => read_plain(i)?,
        (None, None) => return Err(usage("either --manifest or --instances is required")),
    };
    let mut ids = HashSet::new();
    if let Some(dup) = instances.iter().find(|i| !ids.insert(i.id.as_str())) {
        return Err(usage(format!("duplicate instance id {}", dup.id)));
    }

    let header = ctx.header(SCORES_KIND);
    let mut done: HashMap<String, ScoreRecord> = HashMap::new();
    if out.exists() {
        if let Ok((Some(h), prev)) = read_records::<ScoreRecord>(&out, true) {
            if h == header {
                done.extend(
                    prev.into_iter()
                        .filter(|r| !r.is_error() && r.metric == metric.as_str() && ids.contains(r.instance_id.as_str()))
                        .map(|r| (r.instance_id.clone(), r)),
                );
            }
        }
    }
    let reused = done.len();
    let todo: Vec<ScoreInstance> = instances.iter().filter(|i| !done.contains_key(&i.id)).cloned().collect();
    let clients = ctx.cfg.clients()?;
    let scorer = Scorer {
        store: &ctx.store,
        clients: &clients,
        config: ctx.cfg.scoring,
    };
    for r in scorer.batch_score(&todo, metric, ctx.cfg.concurrency) {
        done.insert(r.instance_id.clone(), r);
    }
    let records: Vec<ScoreRecord> = instances
        .iter()
        .map(|i| done.remove(&i.id).expect("every instance scored"))
        .collect();
    write_records(&out, Some(&header), &records)?;
    let failed: Vec<String> = records
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.instance_id)))
        .collect();
    let counts = BTreeMap::from([
        ("scored".to_string(), records.len() - failed.len()),
        ("failed".to_string(), failed.len()),
        ("reused".to_string(), reused),
    ]);
    ctx.write_stage_report(&out, "score", counts, &failed, &metric.as_str())?;
    check_failure_rate(&records, ctx.cfg.scoring.max_failure_rate)?;
    Ok(ctx.finish("score", records.len() - failed.len(), failed.len(), &out))
}

fn load_scores(paths: &[PathBuf]) -> Result<Vec<(String, Vec<ScoreRecord>)>> {
    let mut out: Vec<(String, Vec<ScoreRecord>)> = Vec::new();
    for p in paths {
        let recs: Vec<ScoreRecord> = read_kind(p, SCORES_KIND)?;
        let name = match recs.first() {
            Some(r) => r.metric.clone(),
            None => p.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default(),
        };
        if out.iter().any(|(n, _)| *n == name) {
            return Err(usage(format!("metric {name} given twice")));
        }
        out.push((name, recs));
    }
    Ok(out)
}

fn check_reference(reference: &Option<String>, metrics: &[(String, Vec<ScoreRecord>)]) -> Result<()> {
    match reference {
        Some(r) if !metrics.iter().any(|(n, _)| n == r) => Err(usage(format!("reference metric {r} has no score file"))),
        _ => Ok(()),
    }
}

fn write_report_pair<T: Serialize>(ctx: &Ctx, out: &Path, report: &T, table: &str) -> Result<()> {
    write_json(out, &serde_json::json!({ "header": ctx.header(EVAL_KIND), "report": report }))?;
    std::fs::write(out.with_extension("txt"), table).with_context(|| format!("writing table next to {}", out.display()))?;
    print!("{table}");
    Ok(())
}

fn eval(ctx: &Ctx, cmd: Eval) -> Result<ExitCode> {
    match cmd {
        Eval::Report {
            annotations,
            manifest,
            scores,
            reference,
            benchmark,
            out,
        } => {
            let gold: Vec<GoldRow> = match (&annotations, &manifest) {
                (Some(a), _) => gold_from_annotations(&read_plain::<AnnotationRecord>(a)?)?,
                (None, Some(m)) => {
                    require(m)?;
                    gold_from_triplets(&read_manifest_unverified(m)?.triplets)
                }
                (None, None) => return Err(usage("either --annotations or --manifest is required")),
            };
            let loaded = load_scores(&scores)?;
            check_reference(&reference, &loaded)?;
            let mut warnings = Vec::new();
            let metrics: Vec<MetricScores> = loaded
                .iter()
                .map(|(name, recs)| MetricScores {
                    metric: name.clone(),
                    joined: join_scores(&gold, recs, &mut warnings),
                })
                .collect();
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let report = evaluate(
                &benchmark,
                &gold,
                &metrics,
                reference.as_deref(),
                &ctx.cfg.eval.bootstrap,
                ctx.cfg.seed,
            )?;
            write_report_pair(ctx, &out, &report, &report.to_table())?;
            let missing = warnings.len();
            if ctx.strict && missing > 0 {
                return Ok(ExitCode::from(EXIT_STRICT));
            }
            Ok(ExitCode::SUCCESS)
        }
        Eval::Compare { table, benchmark, out } => {
            let rows: Vec<AucTableRow> = read_plain(&table)?;
            let report = report_from_auc_table(&benchmark, &rows)?;
            write_report_pair(ctx, &out, &report, &report.to_table())?;
            Ok(ExitCode::SUCCESS)
        }
        Eval::Preference {
            pairs,
            scores,
            reference,
            out,
        } => {
            let pairs: Vec<PreferencePair> = read_plain(&pairs)?;
            let loaded = load_scores(&scores)?;
            check_reference(&reference, &loaded)?;
            let decimals = ctx.cfg.eval.rounding_decimals;
            let mut outcomes: Vec<(String, Vec<AxisAccuracy>)> = Vec::new();
            let mut warnings = 0;
            for (name, recs) in &loaded {
                let o = imagerag_accuracy(&pairs, &axis_scores(recs), decimals)?;
                for w in &o.warnings {
                    eprintln!("warning: {name}: {w}");
                }
                warnings += o.warnings.len();
                outcomes.push((name.clone(), o.axes));
            }
            let ref_axes = reference
                .as_ref()
                .and_then(|r| outcomes.iter().find(|(n, _)| n == r))
                .map(|(_, a)| a.clone());
            let cfg = &ctx.cfg.eval.bootstrap;
            let mut rows = Vec::new();
            for (name, axes) in &outcomes {
                let mut cells = Vec::new();
                for a in axes {
                    let mut cell = Cell::plain(a.accuracy, a.n_pairs);
                    if let Some(ra) = ref_axes.as_ref().filter(|_| Some(name) != reference.as_ref()) {
                        let r = ra.iter().find(|x| x.axis == a.axis).expect("same axes");
                        let seed = derive_seed(ctx.cfg.seed, &format!("preference|{:?}", a.axis));
                        let b = bootstrap_accuracy(r, a, cfg, seed)?;
                        cell.mark = b.mark;
                        cell.ci = Some([b.ci_lower, b.ci_upper]);
                    } else {
                        cell.mark = Mark::None;
                    }
                    cells.push((a.axis, cell));
                }
                rows.push(PreferenceRow {
                    metric: name.clone(),
                    axes: cells,
                });
            }
            let report = PreferenceReport {
                reference_metric: reference.clone(),
                rounding_decimals: decimals,
                n_bootstrap: cfg.n_bootstrap,
                p_level: cfg.p_level,
                seed: ctx.cfg.seed,
                rows,
            };
            write_report_pair(ctx, &out, &report, &report.to_table())?;
            if ctx.strict && warnings > 0 {
                return Ok(ExitCode::from(EXIT_STRICT));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

const SYNTH_CONFIG: &str = "refeval.toml";

fn fixtures(ctx: &Ctx, cmd: Fixtures) -> Result<ExitCode> {
    match cmd {
        Fixtures::Synth { out } => {
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let store = ImageStore::new(&out);
            let corpus = synth_corpus(&store, ctx.cfg.seed)?;
            write_corpus(&corpus, &out)?;
            let toml = format!(
                "seed = {}\n\n[paths]\nstore = \".\"\n\n[clients]\nmode = \"mock\"\nmock_fixtures = \"mock.json\"\n",
                ctx.cfg.seed
            );
            std::fs::write(out.join(SYNTH_CONFIG), toml)?;
            println!(
                "synth: {} scenes, {} subjects, {} benchmark instances, {} preference pairs -> {}",
                corpus.scenes.len(),
                corpus.subjects.len(),
                corpus.bench_instances.len(),
                corpus.preferences.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Fixtures::Oracle { manifest, mock, out } => {
            require(&manifest)?;
            require(&mock)?;
            let m = read_manifest_unverified(&manifest)?;
            let mut fx = MockFixtures::load(&mock)?;
            let before = fx.gold.len();
            fx.gold.extend(oracle_gold(&m.triplets));
            write_mock(&fx, &out)?;
            println!("oracle: {} gold entries added -> {}", fx.gold.len() - before, out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
