//! One function per subcommand. Each command runs one pipeline stage,
//! seals a manifest, and is idempotent through the generation caches.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crc_core::backend::Backend;
use crc_core::corpus::{
    corpus_contexts, iterate_contexts, load_corpus, validate_corpus, Corpus, LoadOptions,
    TurnContext,
};
use crc_core::metrics::{evaluate, render_table};
use crc_core::pipeline::{
    export_correction_training, export_experience_training, export_reflection_training,
    read_jsonl, run_annotation, run_batch_inference, run_experience, write_jsonl, AnnotatedPair,
    ManifestDraft, PredictionRecord, PromptPlan, QuarantinedRecord, StageRecord,
};

use crate::artifacts::{Layout, SplitFile};
use crate::config::ResolvedConfig;
use crate::CliError;

/// Flags that win over their config counterparts.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunFlags {
    pub workers: Option<usize>,
    pub lenient: bool,
}

fn workers(config: &ResolvedConfig, flags: RunFlags) -> usize {
    flags.workers.unwrap_or(config.raw.workers).max(1)
}

/// Wall-clock seconds, except for fully mocked runs, which use a logical
/// clock so their artifact trees are byte-identical across runs.
fn now(config: &ResolvedConfig) -> u64 {
    if config.all_backends_mock() {
        0
    } else {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default()
            .as_secs()
    }
}

fn load(config: &ResolvedConfig) -> Result<Corpus, CliError> {
    load_corpus(&config.raw.corpus, LoadOptions::default()).map_err(CliError::domain)
}

fn plan(config: &ResolvedConfig) -> Result<PromptPlan, CliError> {
    Ok(PromptPlan::new(
        config.style,
        config.scheme()?,
        Some(config.raw.templates.char_budget),
        &config.registry,
    ))
}

fn backend(config: &ResolvedConfig, layout: &Layout, role: &str) -> Result<Backend, CliError> {
    let backend_config = config
        .backends
        .get(role)
        .ok_or_else(|| CliError::usage(format!("no backend configured for {role}")))?
        .clone();
    let cache_path = layout
        .root()
        .join("cache")
        .join(format!("{role}.jsonl"));
    Backend::with_cache(backend_config, &cache_path).map_err(CliError::domain)
}

fn draft(
    config: &ResolvedConfig,
    corpus_fingerprint: &str,
    stage: &str,
    roles: &[&str],
    started: u64,
) -> Result<ManifestDraft, CliError> {
    let scheme = config.scheme()?;
    let mut draft = ManifestDraft::new(stage, &config.config_hash(), corpus_fingerprint)
        .split(config.raw.split.seed, config.raw.split.ratio)
        .templates(
            &config.raw.templates.style,
            &scheme.name,
            &scheme.delimiter,
            Some(config.raw.templates.char_budget),
        )
        .started_at(started);
    for role in roles {
        let fingerprint = config
            .backends
            .get(*role)
            .map(|b| b.fingerprint())
            .unwrap_or_default();
        draft = draft.backend(role, &fingerprint);
    }
    Ok(draft)
}

fn print_backend_stats(role: &str, backend: &Backend) {
    let stats = backend.stats();
    println!(
        "{role}: {} backend call(s), {} cache hit(s)",
        stats.generation_calls, stats.cache_hits
    );
}

/// Load, validate, and summarize the corpus.
pub fn cmd_ingest(config: &ResolvedConfig, flags: RunFlags) -> Result<(), CliError> {
    let corpus = load(config)?;
    let report = validate_corpus(&corpus);

    let system_turns: usize = corpus
        .examples
        .iter()
        .map(|e| e.system_turn_count())
        .sum();
    let triples: usize = corpus.examples.iter().map(|e| e.knowledge.len()).sum();
    println!(
        "dialogues: {}  system turns: {}  knowledge triples: {}",
        corpus.len(),
        system_turns,
        triples
    );
    println!("corpus fingerprint: {}", corpus.fingerprint());

    if report.is_clean() {
        println!("validation: clean");
        return Ok(());
    }
    for finding in &report.findings {
        println!("finding: {finding}");
    }
    if flags.lenient {
        println!("validation: {} finding(s), continuing (--lenient)", report.findings.len());
        Ok(())
    } else {
        Err(CliError::Domain(format!(
            "validation produced {} finding(s)",
            report.findings.len()
        )))
    }
}

/// Split the corpus into experience and reflection sets by dialogue.
pub fn cmd_split(config: &ResolvedConfig, _flags: RunFlags) -> Result<(), CliError> {
    let corpus = load(config)?;
    let layout = Layout::new(&config.raw.output_dir);
    let started = now(config);

    let (experience, reflection) =
        crc_core::corpus::split_train(&corpus, config.raw.split.ratio, config.raw.split.seed)
            .map_err(CliError::domain)?;

    let manifest_draft = draft(config, &corpus.fingerprint(), "split", &[], started)?;
    let run_id = manifest_draft.run_id();
    let split_file = SplitFile {
        manifest_ref: run_id.clone(),
        seed: config.raw.split.seed,
        ratio: config.raw.split.ratio,
        experience_ids: experience.iter().map(|e| e.id.clone()).collect(),
        reflection_ids: reflection.iter().map(|e| e.id.clone()).collect(),
    };
    split_file.write(&layout.split_file())?;

    let mut counts = BTreeMap::new();
    counts.insert("dialogues".to_string(), corpus.len() as u64);
    counts.insert("experience".to_string(), experience.len() as u64);
    counts.insert("reflection".to_string(), reflection.len() as u64);
    layout.write_manifest(&manifest_draft.seal(counts, now(config)))?;

    println!(
        "split {} dialogues into {} experience / {} reflection (seed {})",
        corpus.len(),
        experience.len(),
        reflection.len(),
        config.raw.split.seed
    );
    Ok(())
}

fn contexts_for_ids<'a>(
    corpus: &'a Corpus,
    ids: &[String],
) -> Result<Vec<TurnContext<'a>>, CliError> {
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let mut contexts = Vec::new();
    for example in &corpus.examples {
        if wanted.contains(example.id.as_str()) {
            contexts.extend(iterate_contexts(example).map_err(CliError::domain)?);
        }
    }
    Ok(contexts)
}

/// Generate experience-stage responses over the reflection split.
pub fn cmd_gen_experience(config: &ResolvedConfig, flags: RunFlags) -> Result<(), CliError> {
    let layout = Layout::new(&config.raw.output_dir);
    layout.require(&layout.split_file(), "split")?;
    let corpus = load(config)?;
    let split = SplitFile::read(&layout.split_file())?;
    let contexts = contexts_for_ids(&corpus, &split.reflection_ids)?;
    let started = now(config);

    let manifest_draft = draft(
        config,
        &corpus.fingerprint(),
        "gen-experience",
        &["generator"],
        started,
    )?;
    let run_id = manifest_draft.run_id();

    let generator = backend(config, &layout, "generator")?;
    let plan = plan(config)?;
    let records = run_experience(&contexts, &generator, &plan, workers(config, flags), &run_id)
        .map_err(CliError::domain)?;
    write_jsonl(&layout.experience_generations(), &records).map_err(CliError::domain)?;

    let mut counts = BTreeMap::new();
    counts.insert("contexts".to_string(), contexts.len() as u64);
    counts.insert("records".to_string(), records.len() as u64);
    layout.write_manifest(&manifest_draft.seal(counts, now(config)))?;

    println!(
        "generated {} experience response(s) over the reflection split",
        records.len()
    );
    print_backend_stats("generator", &generator);
    Ok(())
}

/// Audit generated responses with the annotator backend.
pub fn cmd_annotate(config: &ResolvedConfig, flags: RunFlags) -> Result<(), CliError> {
    let layout = Layout::new(&config.raw.output_dir);
    layout.require(&layout.experience_generations(), "gen-experience")?;
    let corpus = load(config)?;
    let split = SplitFile::read(&layout.split_file())?;
    let contexts = contexts_for_ids(&corpus, &split.reflection_ids)?;
    let records: Vec<StageRecord> =
        read_jsonl(&layout.experience_generations()).map_err(CliError::domain)?;
    let started = now(config);

    let manifest_draft = draft(
        config,
        &corpus.fingerprint(),
        "annotate",
        &["annotator"],
        started,
    )?;
    let run_id = manifest_draft.run_id();

    let annotator = backend(config, &layout, "annotator")?;
    let outcome = run_annotation(&contexts, &records, &annotator, workers(config, flags), &run_id)
        .map_err(CliError::domain)?;
    write_jsonl(&layout.annotations(), &outcome.pairs).map_err(CliError::domain)?;
    write_jsonl(&layout.annotation_rejects(), &outcome.quarantined).map_err(CliError::domain)?;

    let mut counts = BTreeMap::new();
    counts.insert("records".to_string(), records.len() as u64);
    counts.insert("annotated".to_string(), outcome.pairs.len() as u64);
    counts.insert("quarantined".to_string(), outcome.quarantined.len() as u64);
    layout.write_manifest(&manifest_draft.seal(counts, now(config)))?;

    println!(
        "annotated {} record(s), quarantined {}",
        outcome.pairs.len(),
        outcome.quarantined.len()
    );
    print_backend_stats("annotator", &annotator);
    Ok(())
}

/// Export the three training files from the split and the annotations.
pub fn cmd_export_train(config: &ResolvedConfig, _flags: RunFlags) -> Result<(), CliError> {
    let layout = Layout::new(&config.raw.output_dir);
    layout.require(&layout.annotations(), "annotate")?;
    layout.require(&layout.split_file(), "split")?;
    let corpus = load(config)?;
    let split = SplitFile::read(&layout.split_file())?;
    let experience_contexts = contexts_for_ids(&corpus, &split.experience_ids)?;
    let reflection_contexts = contexts_for_ids(&corpus, &split.reflection_ids)?;
    let pairs: Vec<AnnotatedPair> = read_jsonl(&layout.annotations()).map_err(CliError::domain)?;
    let started = now(config);

    let manifest_draft = draft(config, &corpus.fingerprint(), "export-train", &[], started)?
        .note("correction training target is the corpus gold response");
    let run_id = manifest_draft.run_id();
    let plan = plan(config)?;
    let include_consistent = config.raw.export.include_consistent;

    let experience = export_experience_training(&experience_contexts, &plan, &run_id);
    let reflection = export_reflection_training(
        &pairs,
        &reflection_contexts,
        &plan,
        &run_id,
        include_consistent,
    )
    .map_err(CliError::domain)?;
    let correction = export_correction_training(
        &pairs,
        &reflection_contexts,
        &plan,
        &run_id,
        include_consistent,
    )
    .map_err(CliError::domain)?;

    write_jsonl(&layout.train_experience(), &experience.records).map_err(CliError::domain)?;
    write_jsonl(&layout.train_reflection(), &reflection.records).map_err(CliError::domain)?;
    write_jsonl(&layout.train_correction(), &correction.records).map_err(CliError::domain)?;

    let mut rejects: Vec<QuarantinedRecord> = Vec::new();
    for (stage, outcome) in [
        ("experience", &experience),
        ("reflection", &reflection),
        ("correction", &correction),
    ] {
        rejects.extend(outcome.quarantined.iter().cloned().map(|mut q| {
            q.error = format!("{stage}: {}", q.error);
            q
        }));
    }
    write_jsonl(&layout.export_rejects(), &rejects).map_err(CliError::domain)?;

    let mut counts = BTreeMap::new();
    counts.insert("annotated".to_string(), pairs.len() as u64);
    counts.insert("experience".to_string(), experience.records.len() as u64);
    counts.insert("reflection".to_string(), reflection.records.len() as u64);
    counts.insert("correction".to_string(), correction.records.len() as u64);
    counts.insert("rejected".to_string(), rejects.len() as u64);
    counts.insert(
        "skipped_consistent".to_string(),
        (reflection.skipped_consistent + correction.skipped_consistent) as u64,
    );
    layout.write_manifest(&manifest_draft.seal(counts, now(config)))?;

    println!(
        "exported {} experience / {} reflection / {} correction training record(s), {} rejected",
        experience.records.len(),
        reflection.records.len(),
        correction.records.len(),
        rejects.len()
    );
    Ok(())
}

/// Two-pass inference over the configured slice of the corpus.
pub fn cmd_infer(config: &ResolvedConfig, flags: RunFlags) -> Result<(), CliError> {
    let layout = Layout::new(&config.raw.output_dir);
    let corpus = load(config)?;
    let contexts = match config.raw.infer.split.as_str() {
        "all" => corpus_contexts(&corpus).map_err(CliError::domain)?,
        side => {
            layout.require(&layout.split_file(), "split")?;
            let split = SplitFile::read(&layout.split_file())?;
            let ids = if side == "experience" {
                &split.experience_ids
            } else {
                &split.reflection_ids
            };
            contexts_for_ids(&corpus, ids)?
        }
    };
    let started = now(config);

    let manifest_draft = draft(
        config,
        &corpus.fingerprint(),
        "infer",
        &["reflector", "corrector"],
        started,
    )?;
    let run_id = manifest_draft.run_id();

    let reflector = backend(config, &layout, "reflector")?;
    let corrector = backend(config, &layout, "corrector")?;
    let plan = plan(config)?;
    let predictions = run_batch_inference(
        &contexts,
        &reflector,
        &corrector,
        &plan,
        config.on_malformed,
        workers(config, flags),
        &run_id,
    )
    .map_err(CliError::domain)?;
    write_jsonl(&layout.predictions(), &predictions).map_err(CliError::domain)?;

    let fallbacks = predictions.iter().filter(|p| p.fallback).count();
    let mut counts = BTreeMap::new();
    counts.insert("contexts".to_string(), contexts.len() as u64);
    counts.insert("predictions".to_string(), predictions.len() as u64);
    counts.insert("fallbacks".to_string(), fallbacks as u64);
    layout.write_manifest(&manifest_draft.seal(counts, now(config)))?;

    println!(
        "wrote {} prediction(s) ({} fallback(s))",
        predictions.len(),
        fallbacks
    );
    print_backend_stats("reflector", &reflector);
    print_backend_stats("corrector", &corrector);
    Ok(())
}

#[derive(Serialize)]
struct EvalFile {
    manifest_ref: String,
    predictions_manifest: String,
    report: crc_core::metrics::EvalReport,
}

/// Score the predictions file against the corpus and print the table.
pub fn cmd_eval(config: &ResolvedConfig, _flags: RunFlags) -> Result<(), CliError> {
    let layout = Layout::new(&config.raw.output_dir);
    layout.require(&layout.predictions(), "infer")?;
    let corpus = load(config)?;
    let predictions: Vec<PredictionRecord> =
        read_jsonl(&layout.predictions()).map_err(CliError::domain)?;
    let started = now(config);

    // A predictions file mixing manifests would mix incompatible runs.
    let mut manifest_refs: BTreeSet<&str> =
        predictions.iter().map(|p| p.manifest_ref.as_str()).collect();
    if manifest_refs.len() > 1 {
        let a = manifest_refs.pop_first().unwrap_or_default();
        let b = manifest_refs.pop_first().unwrap_or_default();
        return Err(CliError::Domain(format!(
            "predictions reference multiple manifests: {a} and {b}"
        )));
    }
    let predictions_manifest = manifest_refs
        .pop_first()
        .unwrap_or_default()
        .to_string();

    let pairs: Vec<(crc_core::corpus::ContextRef, String)> = predictions
        .iter()
        .map(|p| (p.context_ref.clone(), p.final_response.clone()))
        .collect();
    let report = evaluate(&pairs, &corpus, &config.policy).map_err(CliError::domain)?;

    let manifest_draft = draft(config, &corpus.fingerprint(), "eval", &[], started)?;
    let run_id = manifest_draft.run_id();
    let eval_file = EvalFile {
        manifest_ref: run_id.clone(),
        predictions_manifest,
        report: report.clone(),
    };
    let mut text = serde_json::to_string_pretty(&eval_file).map_err(CliError::domain)?;
    text.push('\n');
    std::fs::create_dir_all(layout.root()).map_err(CliError::domain)?;
    std::fs::write(layout.eval_report(), text).map_err(CliError::domain)?;

    let mut counts = BTreeMap::new();
    counts.insert("predictions".to_string(), predictions.len() as u64);
    layout.write_manifest(&manifest_draft.seal(counts, now(config)))?;

    print!("{}", render_table("crc", &report));
    Ok(())
}
