use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{LoadedConfig, RunConfig};
use super::run::{file_digest, read_json, write_file, RunDir};
use super::{CliError, Command, ConfigArgs, EvalArgs, ReasonArgs, ReviewExportArgs, ReviewImportArgs, SynthArgs, TrainArgs};
use crate::corpus::{
    load_manifest, make_patient_folds, synth_generate, ConceptBank, DatasetManifest, SplitPlan,
};
use crate::digest::sha256_fields;
use crate::encoder::load_checkpoint;
use crate::enrichment::{enrich_manifest, ReportCache, RetryingClient, StubReportClient};
use crate::guidelines::{Guideline, GuidelineKind};
use crate::metrics::{
    aggregate_rubric, blinding_denylist, evaluate, export_case_bundles, import_rubric_scores,
    record_scores_imported, scan_for_tokens, unseal, CaseMaterial, ClassificationReport,
    PredictionSet, RubricAggregate,
};
use crate::reasoning::{
    build_reasoning_prompt, generate_explanation, ExplanationTranscript, FollowUpRule,
    StubReasoningClient,
};
use crate::training::{
    ablation_ladder, fit_fold, predict_split, ImageCache, TextSourceKind, TrainingData,
    VariantSpec,
};

/// Runs one parsed command.
pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Prepare(a) => prepare(&a),
        Command::Synth(a) => synth(&a),
        Command::Enrich(a) => enrich(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Reason(a) => reason(&a),
        Command::ReviewExport(a) => review_export(&a),
        Command::ReviewImport(a) => review_import(&a),
        Command::ReviewUnseal(a) => review_unseal(&a),
        Command::Report(a) => report(&a),
    }
}

struct Context {
    loaded: LoadedConfig,
    run: RunDir,
    bank: ConceptBank,
    manifest: DatasetManifest,
}

impl Context {
    fn open(args: &ConfigArgs) -> Result<Self, CliError> {
        let loaded = RunConfig::load(&args.config, &args.overrides)?;
        let run = RunDir::create(&loaded.config.output_dir)?;
        run.snapshot_config(&loaded)?;
        let bank = loaded.config.bank()?;
        let manifest = load_manifest(&loaded.config.corpus.manifest, &bank)?;
        Ok(Self {
            loaded,
            run,
            bank,
            manifest,
        })
    }

    fn config(&self) -> &RunConfig {
        &self.loaded.config
    }

    /// Folds from `folds.json`, created on first use.
    fn plan(&self) -> Result<SplitPlan, CliError> {
        let path = self.run.folds_path();
        let c = &self.config().corpus;
        if path.exists() {
            let plan = SplitPlan::load(&path)?;
            if plan.k != c.folds || plan.seed != c.seed {
                return Err(CliError::Integrity(format!(
                    "{} was made with k={} seed={}, config asks for k={} seed={}",
                    path.display(),
                    plan.k,
                    plan.seed,
                    c.folds,
                    c.seed
                )));
            }
            return Ok(plan);
        }
        let plan = make_patient_folds(&self.manifest, c.folds, c.seed)?;
        plan.save(&path)?;
        Ok(plan)
    }

    fn guideline(&self, kind: GuidelineKind) -> Result<Guideline, CliError> {
        let registry = self.config().registry()?;
        let g = registry.get(kind, self.config().corpus.modality)?.clone();
        let (field, expected) = match kind {
            GuidelineKind::Reporting => ("enrichment.guideline_id", &self.config().enrichment.guideline_id),
            GuidelineKind::Diagnostic => ("reasoning.guideline_id", &self.config().reasoning.guideline_id),
        };
        if let Some(id) = expected {
            if *id != g.guideline_id {
                return Err(CliError::Config {
                    field: field.into(),
                    message: format!("expected guideline `{id}`, the registry has `{}`", g.guideline_id),
                });
            }
        }
        Ok(g)
    }

    fn record(&self, command: &str, artifacts: Vec<PathBuf>, details: serde_json::Value) -> Result<(), CliError> {
        self.run.record(command, &self.loaded, artifacts, details)
    }

    /// Reports for every sample, generated through the cache.
    fn reports(&self) -> Result<(BTreeMap<String, String>, crate::enrichment::CacheStats), CliError> {
        let c = &self.config().enrichment;
        let client = RetryingClient::new(StubReportClient::new(), c.max_retries);
        let cache = ReportCache::open(self.config().cache_dir())?;
        let guideline = self.guideline(GuidelineKind::Reporting)?;
        let reports = enrich_manifest(
            &client,
            &self.manifest,
            &self.bank,
            &guideline,
            &self.config().prompt_options(),
            &cache,
        )?;
        Ok((reports, cache.stats()))
    }

    fn variants(&self, name: Option<&str>, ablation: bool) -> Result<Vec<VariantSpec>, CliError> {
        let configured = self.config().model.variant;
        if ablation {
            return Ok(ablation_ladder());
        }
        let Some(name) = name else {
            return Ok(vec![configured]);
        };
        let mut known = vec![configured];
        known.extend(ablation_ladder().into_iter().filter(|v| v.slug() != configured.slug()));
        known
            .iter()
            .find(|v| v.slug() == name)
            .copied()
            .map(|v| vec![v])
            .ok_or_else(|| CliError::Config {
                field: "--variant".into(),
                message: format!(
                    "unknown variant `{name}` (known: {})",
                    known.iter().map(|v| v.slug()).collect::<Vec<_>>().join(", ")
                ),
            })
    }
}

fn prepare(args: &ConfigArgs) -> Result<(), CliError> {
    let ctx = Context::open(args)?;
    let plan = ctx.plan()?;
    let assets = write_assets(&ctx)?;
    let sizes = plan.fold_sizes();
    let patients = ctx.manifest.patients().len();
    println!(
        "{}: {} records, {} patients, {} concepts; folds (patients) {:?}",
        ctx.manifest.corpus_name,
        ctx.manifest.len(),
        patients,
        ctx.bank.len(),
        sizes
    );
    ctx.record(
        "prepare",
        vec![ctx.run.folds_path(), assets],
        json!({"records": ctx.manifest.len(), "patients": patients, "fold_patients": sizes}),
    )
}

fn write_assets(ctx: &Context) -> Result<PathBuf, CliError> {
    let c = ctx.config();
    let image_digest = {
        let mut fields = Vec::with_capacity(2 * ctx.manifest.len());
        for r in &ctx.manifest.records {
            fields.push(r.sample_id.clone());
            fields.push(file_digest(&r.image_path)?);
        }
        sha256_fields(fields)
    };
    let bank_digest = sha256_fields(
        ctx.bank
            .entries()
            .iter()
            .flat_map(|e| [e.key.as_str(), e.display_name.as_str(), e.category.as_str()]),
    );
    let guidelines: Vec<_> = c
        .registry()?
        .iter()
        .map(|g| {
            json!({
                "guideline_id": g.guideline_id,
                "kind": g.kind,
                "modality": g.modality,
                "version_hash": g.version_hash,
            })
        })
        .collect();
    ctx.run.write_json(
        "assets.json",
        &json!({
            "manifest": {"path": c.corpus.manifest, "sha256": file_digest(&c.corpus.manifest)?},
            "bank": {"id": ctx.bank.bank_id(), "sha256": bank_digest},
            "images": {"count": ctx.manifest.len(), "sha256": image_digest},
            "guidelines": guidelines,
        }),
    )
}

fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let bank = ConceptBank::synthetic(args.concepts);
    let data_dir = args.out.join("data");
    let corpus = synth_generate(args.n, &bank, args.seed, &data_dir)?;
    let rel = |p: &Path| p.strip_prefix(&args.out).map(Path::to_path_buf).unwrap_or(p.to_path_buf());
    let config = RunConfig::synthetic(
        rel(&corpus.manifest_path),
        rel(&corpus.bank_path),
        args.concepts,
        args.seed,
    );
    let text = toml::to_string_pretty(&config).map_err(|e| CliError::Config {
        field: "config".into(),
        message: e.to_string(),
    })?;
    let config_path = args.out.join("run.toml");
    write_file(&config_path, text.as_bytes())?;
    println!(
        "wrote {} samples to {} and config {}",
        corpus.manifest.len(),
        data_dir.display(),
        config_path.display()
    );
    Ok(())
}

fn enrich(args: &ConfigArgs) -> Result<(), CliError> {
    let ctx = Context::open(args)?;
    let (reports, stats) = ctx.reports()?;
    let total = stats.hits + stats.misses;
    let hit_rate = if total == 0 { 0.0 } else { 100.0 * stats.hits as f64 / total as f64 };
    let path = ctx.run.write_json("enrich/reports.json", &reports)?;
    println!(
        "enriched {} samples: {} cache hits, {} misses ({hit_rate:.1}% hits)",
        reports.len(),
        stats.hits,
        stats.misses
    );
    ctx.record(
        "enrich",
        vec![path],
        json!({"samples": reports.len(), "hits": stats.hits, "misses": stats.misses, "hit_rate": hit_rate}),
    )
}

fn train(args: &TrainArgs) -> Result<(), CliError> {
    let ctx = Context::open(&args.config)?;
    let plan = ctx.plan()?;
    let variants = ctx.variants(args.variant.as_deref(), args.ablation)?;
    let folds: Vec<usize> = match args.fold {
        Some(f) if f >= plan.k => {
            return Err(CliError::Config {
                field: "--fold".into(),
                message: format!("fold {f} out of range 0..{}", plan.k),
            })
        }
        Some(f) => vec![f],
        None => (0..plan.k).collect(),
    };
    let needs_reports = variants
        .iter()
        .any(|v| v.text_source() == TextSourceKind::EnrichedReports);
    let reports = if needs_reports { Some(ctx.reports()?.0) } else { None };
    let images = ImageCache::load(&ctx.manifest)?;
    let data = TrainingData {
        manifest: &ctx.manifest,
        reports: reports.as_ref(),
        modality: ctx.config().corpus.modality,
        images: &images,
    };
    let mut artifacts = Vec::new();
    let mut details = serde_json::Map::new();
    for spec in &variants {
        let slug = spec.slug();
        let mut rows = Vec::new();
        for &fold in &folds {
            let split = plan.split(&ctx.manifest, fold)?;
            let dir = ctx.run.fold_dir(&slug, fold);
            let outcome = fit_fold(
                spec,
                &ctx.config().model.encoder,
                &data,
                &split,
                &ctx.config().model.train,
                Some(&dir),
            )?;
            println!(
                "{slug} fold {fold}: auroc {:.4}, concept auroc {}, best epoch {} of {}",
                outcome.report.auroc,
                fmt_opt(outcome.report.mean_concept_auroc),
                outcome.best_epoch,
                outcome.epochs_run
            );
            for f in ["metrics.jsonl", "checkpoint.bin", "predictions.csv", "report.json"] {
                artifacts.push(dir.join(f));
            }
            rows.push(json!({
                "fold": fold,
                "auroc": outcome.report.auroc,
                "mean_concept_auroc": outcome.report.mean_concept_auroc,
                "best_epoch": outcome.best_epoch,
                "epochs_run": outcome.epochs_run,
                "stopped_early": outcome.stopped_early,
            }));
        }
        details.insert(slug, json!(rows));
    }
    ctx.record("train", artifacts, serde_json::Value::Object(details))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some(MeanStd { mean, std })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub report: ClassificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub variant: VariantSpec,
    pub slug: String,
    pub folds: Vec<FoldMetrics>,
    pub auroc: Option<MeanStd>,
    pub balanced_accuracy: Option<MeanStd>,
    pub sensitivity: Option<MeanStd>,
    pub specificity: Option<MeanStd>,
    pub f1: Option<MeanStd>,
    pub mean_concept_auroc: Option<MeanStd>,
}

impl EvalSummary {
    fn new(variant: VariantSpec, folds: Vec<FoldMetrics>) -> Self {
        let col = |f: &dyn Fn(&ClassificationReport) -> f64| {
            mean_std(&folds.iter().map(|m| f(&m.report)).collect::<Vec<_>>())
        };
        let concept: Vec<f64> = folds.iter().filter_map(|m| m.report.mean_concept_auroc).collect();
        Self {
            slug: variant.slug(),
            auroc: col(&|r| r.auroc),
            balanced_accuracy: col(&|r| r.balanced_accuracy),
            sensitivity: col(&|r| r.confusion.sensitivity),
            specificity: col(&|r| r.confusion.specificity),
            f1: col(&|r| r.confusion.f1),
            mean_concept_auroc: mean_std(&concept),
            variant,
            folds,
        }
    }
}

fn fold_dirs(dir: &Path) -> Result<Vec<(usize, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(CliError::io(dir))? {
        let path = entry.map_err(CliError::io(dir))?.path();
        let fold = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("fold-"))
            .and_then(|k| k.parse::<usize>().ok());
        if let (Some(k), true) = (fold, path.join("checkpoint.bin").exists()) {
            out.push((k, path));
        }
    }
    out.sort();
    Ok(out)
}

fn trained_variants(ctx: &Context, name: Option<&str>) -> Result<Vec<(String, PathBuf)>, CliError> {
    let root = ctx.run.path("train");
    if let Some(n) = name {
        let dir = root.join(n);
        if !dir.is_dir() {
            return Err(CliError::Missing(format!(
                "no trained variant `{n}` under {}; run `train` first",
                root.display()
            )));
        }
        return Ok(vec![(n.to_string(), dir)]);
    }
    if !root.is_dir() {
        return Err(CliError::Missing(format!("{} does not exist; run `train` first", root.display())));
    }
    let mut out: Vec<(String, PathBuf)> = fs::read_dir(&root)
        .map_err(CliError::io(&root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .filter_map(|p| Some((p.file_name()?.to_str()?.to_string(), p)))
        .collect();
    out.sort();
    Ok(out)
}

fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let ctx = Context::open(&args.config)?;
    let plan = ctx.plan()?;
    let images = ImageCache::load(&ctx.manifest)?;
    let data = TrainingData {
        manifest: &ctx.manifest,
        reports: None,
        modality: ctx.config().corpus.modality,
        images: &images,
    };
    let threshold = ctx.config().model.train.threshold;
    let mut summaries = Vec::new();
    let mut artifacts = Vec::new();
    for (slug, dir) in trained_variants(&ctx, args.variant.as_deref())? {
        let mut folds = Vec::new();
        let mut variant = None;
        for (fold, fold_dir) in fold_dirs(&dir)? {
            let (model, meta) = load_checkpoint(&fold_dir.join("checkpoint.bin"))?;
            if variant.is_none() {
                variant = serde_json::from_value::<VariantSpec>(meta["variant"].clone()).ok();
            }
            let split = plan.split(&ctx.manifest, fold)?;
            let recomputed = predict_split(&model, &data, &split.test)?;
            let stored = PredictionSet::load_csv(&fold_dir.join("predictions.csv"))?;
            if stored != recomputed {
                return Err(CliError::Integrity(format!(
                    "{}: checkpoint predictions differ from the stored predictions",
                    fold_dir.display()
                )));
            }
            let report = evaluate(&recomputed, threshold)?;
            println!(
                "{slug} fold {fold}: n {} auroc {:.4} bal.acc {:.4} sens {:.4} spec {:.4} concept auroc {}",
                report.n,
                report.auroc,
                report.balanced_accuracy,
                report.confusion.sensitivity,
                report.confusion.specificity,
                fmt_opt(report.mean_concept_auroc)
            );
            folds.push(FoldMetrics { fold, report });
        }
        if folds.is_empty() {
            return Err(CliError::Missing(format!("no trained folds under {}", dir.display())));
        }
        let variant = variant.ok_or_else(|| {
            CliError::Integrity(format!("{}: checkpoint metadata lacks the variant", dir.display()))
        })?;
        let summary = EvalSummary::new(variant, folds);
        artifacts.push(ctx.run.write_json(&format!("eval/{slug}.json"), &summary)?);
        summaries.push(summary);
    }
    artifacts.push(ctx.run.write_json("eval/report.json", &summaries)?);
    let details: Vec<_> = summaries
        .iter()
        .map(|s| json!({"variant": s.slug, "auroc": s.auroc, "mean_concept_auroc": s.mean_concept_auroc}))
        .collect();
    ctx.record("eval", artifacts, json!(details))
}

fn pick_variant(ctx: &Context, name: Option<&str>) -> Result<String, CliError> {
    Ok(match name {
        Some(n) => n.to_string(),
        None => ctx.config().model.variant.slug(),
    })
}

fn reason(args: &ReasonArgs) -> Result<(), CliError> {
    let ctx = Context::open(&args.config)?;
    let plan = ctx.plan()?;
    let slug = pick_variant(&ctx, args.variant.as_deref())?;
    let ckpt = ctx.run.fold_dir(&slug, args.fold).join("checkpoint.bin");
    if !ckpt.exists() {
        return Err(CliError::Missing(format!("{} does not exist; run `train` first", ckpt.display())));
    }
    let (model, _) = load_checkpoint(&ckpt)?;
    let split = plan.split(&ctx.manifest, args.fold)?;
    let guideline = ctx.guideline(GuidelineKind::Diagnostic)?;
    let rule = FollowUpRule {
        keywords: ctx.config().reasoning.follow_up_keywords.clone(),
    };
    let client = RetryingClient::new(StubReasoningClient::new(), ctx.config().enrichment.max_retries);
    let images = ImageCache::load(&ctx.manifest)?;
    let out_dir = ctx.run.reason_dir(&slug, args.fold);
    let mut index = Vec::new();
    for &i in &split.test {
        let r = &ctx.manifest.records[i];
        let img = images.get(&r.sample_id)?;
        let pred = model.predict(&r.sample_id, &img)?;
        let prompt = build_reasoning_prompt(&pred, &ctx.bank, &guideline, &ctx.manifest.corpus_name)?;
        let explanation = generate_explanation(&client, &prompt, &rule)?;
        let transcript = ExplanationTranscript::new(
            &r.sample_id,
            crate::enrichment::GenerationClient::client_id(&client),
            &prompt,
            &explanation,
        );
        transcript.save(&out_dir.join(format!("{}.json", r.sample_id)))?;
        index.push(json!({
            "sample_id": r.sample_id,
            "prompt_hash": prompt.prompt_hash,
            "inferred_birads": explanation.inferred_birads,
            "follow_up": explanation.follow_up,
            "ungrounded": explanation.ungrounded_terms().collect::<Vec<_>>(),
        }));
    }
    let flagged = index
        .iter()
        .filter(|e| e["ungrounded"].as_array().is_some_and(|a| !a.is_empty()))
        .count();
    let index_path = out_dir.join("index.json");
    write_file(&index_path, serde_json::to_string_pretty(&index).expect("index serializes").as_bytes())?;
    println!(
        "{} explanations written to {} ({flagged} with ungrounded terms)",
        index.len(),
        out_dir.display()
    );
    ctx.record(
        "reason",
        vec![index_path],
        json!({"variant": slug, "fold": args.fold, "explanations": index.len(), "flagged": flagged}),
    )
}

fn review_export(args: &ReviewExportArgs) -> Result<(), CliError> {
    let ctx = Context::open(&args.config)?;
    let slug = pick_variant(&ctx, args.variant.as_deref())?;
    let dir = ctx.run.reason_dir(&slug, args.fold);
    if !dir.is_dir() {
        return Err(CliError::Missing(format!("{} does not exist; run `reason` first", dir.display())));
    }
    let mut materials = Vec::new();
    for entry in fs::read_dir(&dir).map_err(CliError::io(&dir))? {
        let path = entry.map_err(CliError::io(&dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") || path.ends_with("index.json") {
            continue;
        }
        let t = ExplanationTranscript::load(&path)?;
        let r = ctx.manifest.get(&t.sample_id).ok_or_else(|| {
            CliError::Integrity(format!("transcript for unknown sample `{}`", t.sample_id))
        })?;
        let y_true = r
            .label
            .as_binary()
            .ok_or_else(|| CliError::Integrity(format!("sample `{}` has a non-binary label", r.sample_id)))?;
        materials.push(CaseMaterial {
            sample_id: r.sample_id.clone(),
            patient_id: r.patient_id.clone(),
            image_path: r.image_path.clone(),
            prompt_text: t.prompt,
            explanation_text: t.raw_text,
            y_true,
        });
    }
    let n = args.n.unwrap_or(ctx.config().reasoning.review_cases).min(materials.len());
    let review_dir = ctx.run.review_dir();
    let export = export_case_bundles(&materials, n, ctx.config().reasoning.review_seed, &review_dir)?;
    let hits = scan_for_tokens(&export.bundle_dir, &blinding_denylist(&materials))?;
    if let Some((path, token)) = hits.first() {
        return Err(CliError::Integrity(format!(
            "bundle file {} contains the blinded token `{token}` ({} hits in total)",
            path.display(),
            hits.len()
        )));
    }
    println!(
        "exported {} cases to {}; key sealed at {}",
        export.case_ids.len(),
        export.bundle_dir.display(),
        export.sealed_path.display()
    );
    ctx.record(
        "review-export",
        vec![export.bundle_dir.clone(), export.sealed_path.clone()],
        json!({"cases": export.case_ids, "variant": slug, "fold": args.fold}),
    )
}

fn require_export(review_dir: &Path) -> Result<(), CliError> {
    if review_dir.join("sealed").is_dir() {
        Ok(())
    } else {
        Err(CliError::Missing(format!(
            "no review export under {}; run `review-export` first",
            review_dir.display()
        )))
    }
}

fn review_import(args: &ReviewImportArgs) -> Result<(), CliError> {
    let ctx = Context::open(&args.config)?;
    let scores = import_rubric_scores(&args.scores)?;
    let raw = fs::read(&args.scores).map_err(CliError::io(&args.scores))?;
    let review_dir = ctx.run.review_dir();
    require_export(&review_dir)?;
    record_scores_imported(&review_dir, &scores, &raw)?;
    let aggregate = aggregate_rubric(&scores)?;
    let path = ctx.run.write_json("review/rubric.json", &aggregate)?;
    println!(
        "imported {} scores: CIntS {:.1}, CIgS {:.1}, BAS {:.1}",
        aggregate.n, aggregate.mean_cints, aggregate.mean_cigs, aggregate.mean_bas
    );
    ctx.record("review-import", vec![path], json!(aggregate))
}

fn review_unseal(args: &ConfigArgs) -> Result<(), CliError> {
    let ctx = Context::open(args)?;
    require_export(&ctx.run.review_dir())?;
    let key = unseal(&ctx.run.review_dir())?;
    let path = ctx.run.write_json("review/unsealed_key.json", &key)?;
    println!("unsealed {} key entries to {}", key.len(), path.display());
    ctx.record("review-unseal", vec![path], json!({"entries": key.len()}))
}

fn cell(v: &Option<MeanStd>) -> String {
    v.map_or_else(|| "n/a".into(), |m| format!("{:.1} ± {:.1}", 100.0 * m.mean, 100.0 * m.std))
}

fn report(args: &ConfigArgs) -> Result<(), CliError> {
    let ctx = Context::open(args)?;
    let eval_path = ctx.run.path("eval/report.json");
    if !eval_path.exists() {
        return Err(CliError::Missing(format!("{} does not exist; run `eval` first", eval_path.display())));
    }
    let summaries: Vec<EvalSummary> = read_json(&eval_path)?;
    let rubric_path = ctx.run.path("review/rubric.json");
    let rubric: Option<RubricAggregate> = if rubric_path.exists() {
        Some(read_json(&rubric_path)?)
    } else {
        None
    };

    let mut md = format!("# Run report: {}\n\n", ctx.manifest.corpus_name);
    md.push_str("## Diagnostic performance (mean ± sd over folds, %)\n\n");
    md.push_str("| Variant | AUROC | Balanced acc. | Sensitivity | Specificity | F1 |\n");
    md.push_str("|---|---|---|---|---|---|\n");
    for s in &summaries {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            s.slug,
            cell(&s.auroc),
            cell(&s.balanced_accuracy),
            cell(&s.sensitivity),
            cell(&s.specificity),
            cell(&s.f1)
        ));
    }
    md.push_str("\n## Ablation over model components\n\n");
    md.push_str("| Variant | Concepts | Contrastive text | Guideline text | AUROC | Concept AUROC |\n");
    md.push_str("|---|---|---|---|---|---|\n");
    let ladder: Vec<String> = ablation_ladder().iter().map(VariantSpec::slug).collect();
    let mut rows: Vec<&EvalSummary> = summaries.iter().collect();
    rows.sort_by_key(|s| ladder.iter().position(|l| *l == s.slug).unwrap_or(usize::MAX));
    let mark = |b: bool| if b { "yes" } else { "no" };
    for s in rows {
        let text = s.variant.text_source();
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            s.slug,
            mark(s.variant.loss_weights.nu > 0.0),
            mark(text != TextSourceKind::None),
            mark(text == TextSourceKind::EnrichedReports),
            cell(&s.auroc),
            cell(&s.mean_concept_auroc)
        ));
    }
    md.push_str("\n## Explanation rubric (%)\n\n");
    match &rubric {
        Some(r) => md.push_str(&format!(
            "| n | CIntS | CIgS | BAS |\n|---|---|---|---|\n| {} | {:.1} | {:.1} | {:.1} |\n",
            r.n, r.mean_cints, r.mean_cigs, r.mean_bas
        )),
        None => md.push_str("No reviewer scores imported yet.\n"),
    }
    let md_path = ctx.run.path("report.md");
    write_file(&md_path, md.as_bytes())?;
    let json_path = ctx.run.write_json("report.json", &json!({"variants": summaries, "rubric": rubric}))?;
    print!("{md}");
    ctx.record("report", vec![md_path, json_path], json!({"variants": summaries.len()}))
}
