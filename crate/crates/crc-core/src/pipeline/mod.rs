//! Stage orchestration: experience generation over the reflection split,
//! annotation, training-data export, and two-pass inference.
//!
//! Every stage runner fans work out over a bounded pool and gathers
//! results back in input order, so output files are byte-identical
//! regardless of worker count when the backends are deterministic.
//! Resumability comes from the generation cache: re-running a stage
//! re-derives the same cache keys and skips completed work.

mod manifest;

pub use manifest::{ManifestDraft, RunManifest};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError};
use crate::corpus::{ContextRef, TurnContext};
use crate::promptkit::{
    assemble_stage_input_budgeted, build_annotation_prompt, AssembledInput, DelimiterScheme,
    PromptError, SchemeRegistry, Stage, StageTemplate, Style, ANNOTATION_REMINDER,
};
use crate::reflection::{parse_annotator_reply, parse_c, serialize_c, ReflectionResult};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("context {context_ref}: {source}")]
    Generation {
        context_ref: ContextRef,
        source: BackendError,
    },
    #[error("context {context_ref}: {source}")]
    Prompt {
        context_ref: ContextRef,
        source: PromptError,
    },
    #[error("context {context_ref}: unparseable first-pass output {raw:?}: {detail}")]
    MalformedReflection {
        context_ref: ContextRef,
        raw: String,
        detail: String,
    },
    #[error("no context found for {0}")]
    UnresolvedContext(ContextRef),
    #[error("{failed} of {total} contexts failed; first failure: {first}")]
    Batch {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    FileFormat {
        path: String,
        line: usize,
        message: String,
    },
}

/// Everything needed to render stage inputs consistently across a run:
/// template style, delimiter scheme, character budget, and the resolved
/// per-stage instructions.
#[derive(Debug, Clone)]
pub struct PromptPlan {
    pub style: Style,
    pub scheme: DelimiterScheme,
    pub char_budget: Option<usize>,
    instructions: BTreeMap<String, String>,
}

impl PromptPlan {
    pub fn new(
        style: Style,
        scheme: DelimiterScheme,
        char_budget: Option<usize>,
        registry: &SchemeRegistry,
    ) -> Self {
        let mut instructions = BTreeMap::new();
        for stage in Stage::ALL {
            instructions.insert(stage.name().to_string(), registry.instruction(stage).to_string());
        }
        Self {
            style,
            scheme,
            char_budget,
            instructions,
        }
    }

    pub fn bare(scheme: DelimiterScheme, char_budget: Option<usize>) -> Self {
        Self::new(Style::Bare, scheme, char_budget, &SchemeRegistry::builtin())
    }

    pub fn template(&self, stage: Stage) -> StageTemplate {
        match self.style {
            Style::Bare => StageTemplate::bare(stage),
            Style::Instructed => StageTemplate::instructed_with(
                stage,
                self.instructions
                    .get(stage.name())
                    .cloned()
                    .unwrap_or_default(),
            ),
        }
    }

    pub fn assemble(
        &self,
        ctx: &TurnContext<'_>,
        stage: Stage,
        reflection: Option<&ReflectionResult>,
    ) -> Result<AssembledInput, PromptError> {
        let template = self.template(stage);
        let budget = self.char_budget.unwrap_or(usize::MAX);
        assemble_stage_input_budgeted(ctx, &template, &self.scheme, reflection, budget)
    }
}

/// One generated response for one context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub context_ref: ContextRef,
    pub input: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    pub manifest_ref: String,
}

/// One annotated generation: the reflection triple built from the model's
/// own response and the annotator's verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedPair {
    pub context_ref: ContextRef,
    pub reflection: ReflectionResult,
    /// Annotator prose above the verdict line, kept as provenance.
    pub analysis: String,
    pub manifest_ref: String,
}

/// One line of a training export file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub input: String,
    pub target: String,
    pub context_ref: ContextRef,
    pub manifest_ref: String,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub context_ref: ContextRef,
    /// Raw first-pass output; the serialized reflection envelope when the
    /// pass parsed.
    pub first_pass: String,
    #[serde(rename = "final")]
    pub final_response: String,
    pub manifest_ref: String,
    /// True when the first pass was unparseable and its raw text was
    /// returned under the fallback policy.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

/// A record that failed a stage and was set aside instead of dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantinedRecord {
    pub context_ref: ContextRef,
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub error: String,
    pub manifest_ref: String,
}

/// Map work over items with a bounded worker pool; results come back in
/// input order regardless of scheduling.
fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                results.lock().expect("results lock")[i] = Some(result);
            });
        }
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("worker filled every slot"))
        .collect()
}

fn prompt_err(ctx: &TurnContext<'_>, source: PromptError) -> PipelineError {
    PipelineError::Prompt {
        context_ref: ctx.context_ref(),
        source,
    }
}

fn generation_err(ctx: &TurnContext<'_>, source: BackendError) -> PipelineError {
    PipelineError::Generation {
        context_ref: ctx.context_ref(),
        source,
    }
}

fn truncation_note(assembled: &AssembledInput) -> Option<String> {
    (assembled.dropped_history > 0).then(|| {
        format!(
            "dropped {} oldest history turn(s) to fit the character budget",
            assembled.dropped_history
        )
    })
}

/// Generate experience-stage responses for every context (normally the
/// reflection split). One record per context; failures abort with the
/// offending context attached, and completed generations stay cached.
pub fn run_experience(
    contexts: &[TurnContext<'_>],
    generator: &Backend,
    plan: &PromptPlan,
    workers: usize,
    manifest_ref: &str,
) -> Result<Vec<StageRecord>, PipelineError> {
    let results = parallel_map(contexts, workers, |ctx| {
        let assembled = plan
            .assemble(ctx, Stage::Experience, None)
            .map_err(|e| prompt_err(ctx, e))?;
        let record = generator
            .generate(&assembled.text)
            .map_err(|e| generation_err(ctx, e))?;
        Ok(StageRecord {
            context_ref: ctx.context_ref(),
            provenance: truncation_note(&assembled),
            input: assembled.text,
            output: record.output,
            manifest_ref: manifest_ref.to_string(),
        })
    });
    results.into_iter().collect()
}

#[derive(Debug, Default)]
pub struct AnnotationOutcome {
    pub pairs: Vec<AnnotatedPair>,
    pub quarantined: Vec<QuarantinedRecord>,
}

/// Reflection plus retained analysis on success; (prompt, error) when the
/// reply had no usable verdict.
type AnnotateAttempt = Result<(ReflectionResult, String), (String, String)>;

fn annotate_once(
    ctx: &TurnContext<'_>,
    response: &str,
    annotator: &Backend,
    reminder: bool,
) -> Result<AnnotateAttempt, PipelineError> {
    let mut prompt = build_annotation_prompt(ctx, response)
        .map_err(|e| prompt_err(ctx, e))?
        .rendered;
    if reminder {
        prompt.push_str("\n\n");
        prompt.push_str(ANNOTATION_REMINDER);
    }
    let reply = annotator
        .generate(&prompt)
        .map_err(|e| generation_err(ctx, e))?;
    let parsed = parse_annotator_reply(&reply.output).and_then(|verdict| {
        ReflectionResult::new(response, verdict.types, verdict.suggestion)
            .map(|reflection| (reflection, verdict.analysis))
    });
    Ok(match parsed {
        Ok(done) => Ok(done),
        Err(err) => Err((prompt, format!("{err} (raw reply: {})", reply.output))),
    })
}

/// Run the consistency audit over generated records. Replies without a
/// usable verdict are retried once with a reminder suffix and then
/// quarantined; nothing is silently dropped.
pub fn run_annotation(
    contexts: &[TurnContext<'_>],
    records: &[StageRecord],
    annotator: &Backend,
    workers: usize,
    manifest_ref: &str,
) -> Result<AnnotationOutcome, PipelineError> {
    let by_ref: BTreeMap<ContextRef, &TurnContext<'_>> = contexts
        .iter()
        .map(|ctx| (ctx.context_ref(), ctx))
        .collect();

    let results = parallel_map(records, workers, |record| {
        let ctx = *by_ref
            .get(&record.context_ref)
            .ok_or_else(|| PipelineError::UnresolvedContext(record.context_ref.clone()))?;
        // The annotator audits the model's own response, not the gold one.
        match annotate_once(ctx, &record.output, annotator, false)? {
            Ok(done) => Ok(Ok(done)),
            Err(_) => match annotate_once(ctx, &record.output, annotator, true)? {
                Ok(done) => Ok(Ok(done)),
                Err((prompt, error)) => Ok(Err((prompt, error))),
            },
        }
    });

    let mut outcome = AnnotationOutcome::default();
    for (record, result) in records.iter().zip(results) {
        match result? {
            Ok((reflection, analysis)) => outcome.pairs.push(AnnotatedPair {
                context_ref: record.context_ref.clone(),
                analysis,
                reflection,
                manifest_ref: manifest_ref.to_string(),
            }),
            Err((prompt, error)) => outcome.quarantined.push(QuarantinedRecord {
                context_ref: record.context_ref.clone(),
                input: prompt,
                output: Some(record.output.clone()),
                error,
                manifest_ref: manifest_ref.to_string(),
            }),
        }
    }
    Ok(outcome)
}

#[derive(Debug, Default)]
pub struct ExportOutcome {
    pub records: Vec<TrainingRecord>,
    pub quarantined: Vec<QuarantinedRecord>,
    /// Pairs skipped because they were fully consistent and the exporter
    /// was asked to drop those.
    pub skipped_consistent: usize,
}

fn context_index<'a, 'c>(
    contexts: &'c [TurnContext<'a>],
) -> BTreeMap<ContextRef, &'c TurnContext<'a>> {
    contexts.iter().map(|ctx| (ctx.context_ref(), ctx)).collect()
}

/// Export experience-stage training data: stage input paired with the
/// gold response, over the experience split.
pub fn export_experience_training(
    contexts: &[TurnContext<'_>],
    plan: &PromptPlan,
    manifest_ref: &str,
) -> ExportOutcome {
    let mut outcome = ExportOutcome::default();
    for ctx in contexts {
        match plan.assemble(ctx, Stage::Experience, None) {
            Ok(assembled) => outcome.records.push(TrainingRecord {
                input: assembled.text,
                target: ctx.gold_response().to_string(),
                context_ref: ctx.context_ref(),
                manifest_ref: manifest_ref.to_string(),
            }),
            Err(err) => outcome.quarantined.push(QuarantinedRecord {
                context_ref: ctx.context_ref(),
                input: String::new(),
                output: None,
                error: err.to_string(),
                manifest_ref: manifest_ref.to_string(),
            }),
        }
    }
    outcome
}

/// Export reflection-stage training data. The target is the serialized
/// envelope over the model's own response, not the gold response, so
/// the trained model learns to critique what it actually generates.
pub fn export_reflection_training(
    pairs: &[AnnotatedPair],
    contexts: &[TurnContext<'_>],
    plan: &PromptPlan,
    manifest_ref: &str,
    include_consistent: bool,
) -> Result<ExportOutcome, PipelineError> {
    let by_ref = context_index(contexts);
    let mut outcome = ExportOutcome::default();
    for pair in pairs {
        if !include_consistent && pair.reflection.is_consistent() {
            outcome.skipped_consistent += 1;
            continue;
        }
        let ctx = *by_ref
            .get(&pair.context_ref)
            .ok_or_else(|| PipelineError::UnresolvedContext(pair.context_ref.clone()))?;
        match plan.assemble(ctx, Stage::Reflection, None) {
            Ok(assembled) => outcome.records.push(TrainingRecord {
                input: assembled.text,
                target: serialize_c(&pair.reflection),
                context_ref: pair.context_ref.clone(),
                manifest_ref: manifest_ref.to_string(),
            }),
            Err(err) => outcome.quarantined.push(QuarantinedRecord {
                context_ref: pair.context_ref.clone(),
                input: String::new(),
                output: Some(serialize_c(&pair.reflection)),
                error: err.to_string(),
                manifest_ref: manifest_ref.to_string(),
            }),
        }
    }
    Ok(outcome)
}

/// Export correction-stage training data. The input embeds the serialized
/// reflection; the target is the corpus gold response, the only
/// context-consistent supervision available for the corrected output.
pub fn export_correction_training(
    pairs: &[AnnotatedPair],
    contexts: &[TurnContext<'_>],
    plan: &PromptPlan,
    manifest_ref: &str,
    include_consistent: bool,
) -> Result<ExportOutcome, PipelineError> {
    let by_ref = context_index(contexts);
    let mut outcome = ExportOutcome::default();
    for pair in pairs {
        if !include_consistent && pair.reflection.is_consistent() {
            outcome.skipped_consistent += 1;
            continue;
        }
        let ctx = *by_ref
            .get(&pair.context_ref)
            .ok_or_else(|| PipelineError::UnresolvedContext(pair.context_ref.clone()))?;
        if ctx.gold_response().trim().is_empty() {
            outcome.quarantined.push(QuarantinedRecord {
                context_ref: pair.context_ref.clone(),
                input: String::new(),
                output: None,
                error: "empty gold response".to_string(),
                manifest_ref: manifest_ref.to_string(),
            });
            continue;
        }
        match plan.assemble(ctx, Stage::Correction, Some(&pair.reflection)) {
            Ok(assembled) => outcome.records.push(TrainingRecord {
                input: assembled.text,
                target: ctx.gold_response().to_string(),
                context_ref: pair.context_ref.clone(),
                manifest_ref: manifest_ref.to_string(),
            }),
            Err(err) => outcome.quarantined.push(QuarantinedRecord {
                context_ref: pair.context_ref.clone(),
                input: String::new(),
                output: Some(serialize_c(&pair.reflection)),
                error: err.to_string(),
                manifest_ref: manifest_ref.to_string(),
            }),
        }
    }
    Ok(outcome)
}

/// What to do when the first pass emits something `parse_c` rejects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MalformedPolicy {
    /// Propagate an error carrying the raw output.
    #[default]
    Fail,
    /// Return the raw first-pass text as the final response, flagged.
    Fallback,
}

/// Result of two-pass inference for one context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrcInference {
    pub context_ref: ContextRef,
    pub first_pass_raw: String,
    pub reflection: Option<ReflectionResult>,
    pub correction_input: Option<String>,
    pub final_response: String,
    pub fallback: bool,
}

/// Two-pass inference: the reflector produces the envelope, the corrector
/// conditions on it. Both passes always run; a fully consistent
/// reflection still goes through correction.
pub fn infer_crc(
    ctx: &TurnContext<'_>,
    reflector: &Backend,
    corrector: &Backend,
    plan: &PromptPlan,
    policy: MalformedPolicy,
) -> Result<CrcInference, PipelineError> {
    let reflection_input = plan
        .assemble(ctx, Stage::Reflection, None)
        .map_err(|e| prompt_err(ctx, e))?;
    let pass1 = reflector
        .generate(&reflection_input.text)
        .map_err(|e| generation_err(ctx, e))?;

    match parse_c(&pass1.output) {
        Ok(reflection) => {
            let correction_input = plan
                .assemble(ctx, Stage::Correction, Some(&reflection))
                .map_err(|e| prompt_err(ctx, e))?;
            let pass2 = corrector
                .generate(&correction_input.text)
                .map_err(|e| generation_err(ctx, e))?;
            Ok(CrcInference {
                context_ref: ctx.context_ref(),
                first_pass_raw: pass1.output,
                reflection: Some(reflection),
                correction_input: Some(correction_input.text),
                final_response: pass2.output,
                fallback: false,
            })
        }
        Err(err) => match policy {
            MalformedPolicy::Fail => Err(PipelineError::MalformedReflection {
                context_ref: ctx.context_ref(),
                raw: pass1.output,
                detail: err.to_string(),
            }),
            MalformedPolicy::Fallback => Ok(CrcInference {
                context_ref: ctx.context_ref(),
                final_response: pass1.output.clone(),
                first_pass_raw: pass1.output,
                reflection: None,
                correction_input: None,
                fallback: true,
            }),
        },
    }
}

/// Batch two-pass inference. Predictions come back in context order for
/// any worker count; failures are aggregated with their context refs.
pub fn run_batch_inference(
    contexts: &[TurnContext<'_>],
    reflector: &Backend,
    corrector: &Backend,
    plan: &PromptPlan,
    policy: MalformedPolicy,
    workers: usize,
    manifest_ref: &str,
) -> Result<Vec<PredictionRecord>, PipelineError> {
    let results = parallel_map(contexts, workers, |ctx| {
        infer_crc(ctx, reflector, corrector, plan, policy)
    });

    let total = results.len();
    let mut predictions = Vec::with_capacity(total);
    let mut failures: Vec<String> = Vec::new();
    for result in results {
        match result {
            Ok(inference) => predictions.push(PredictionRecord {
                context_ref: inference.context_ref,
                first_pass: inference.first_pass_raw,
                final_response: inference.final_response,
                manifest_ref: manifest_ref.to_string(),
                fallback: inference.fallback,
            }),
            Err(err) => failures.push(err.to_string()),
        }
    }
    if !failures.is_empty() {
        return Err(PipelineError::Batch {
            failed: failures.len(),
            total,
            first: failures.remove(0),
        });
    }
    Ok(predictions)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let io_err = |source: std::io::Error| PipelineError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("record serializes");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| PipelineError::FileFormat {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}
