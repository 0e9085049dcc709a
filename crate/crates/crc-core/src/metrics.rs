//! Evaluation metrics: word-level F1, corpus BLEU, distinct-n, knowledge
//! F1, goal success rate, and subgoal failure rate.
//!
//! All metrics share one tokenization policy so scores are comparable and
//! reproducible. `Auto` mode resolves per string: predominantly-CJK text
//! is segmented into characters (Latin runs inside it stay words), other
//! text splits on whitespace. Reports carry a fingerprint of the policy
//! that produced them.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{ContextRef, Corpus, KnowledgeTriple, TurnContext};
use crate::hashutil;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenMode {
    Auto,
    Word,
    Char,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizationPolicy {
    pub mode: TokenMode,
    pub lowercase: bool,
    pub strip_punct: bool,
}

impl Default for TokenizationPolicy {
    fn default() -> Self {
        Self {
            mode: TokenMode::Auto,
            lowercase: true,
            strip_punct: true,
        }
    }
}

impl TokenizationPolicy {
    pub fn fingerprint(&self) -> String {
        let canonical = format!(
            "{:?}|lowercase={}|strip_punct={}",
            self.mode, self.lowercase, self.strip_punct
        );
        hashutil::short_hex_digest(&[canonical.as_bytes()])
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{3400}'..='\u{4DBF}'   // CJK extension A
        | '\u{4E00}'..='\u{9FFF}' // CJK unified
        | '\u{F900}'..='\u{FAFF}' // CJK compatibility
        | '\u{3040}'..='\u{309F}' // hiragana
        | '\u{30A0}'..='\u{30FF}' // katakana
        | '\u{AC00}'..='\u{D7AF}' // hangul
    )
}

fn is_strippable_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{2000}'..='\u{206F}'   // general punctuation
            | '\u{3000}'..='\u{303F}' // CJK symbols and punctuation
            | '\u{FF01}'..='\u{FF0F}' // fullwidth forms
            | '\u{FF1A}'..='\u{FF20}'
            | '\u{FF3B}'..='\u{FF40}'
            | '\u{FF5B}'..='\u{FF65}')
}

fn normalize_chars(text: &str, policy: &TokenizationPolicy) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if policy.strip_punct && is_strippable_punct(c) {
            out.push(' ');
        } else if policy.lowercase {
            out.extend(c.to_lowercase());
        } else {
            out.push(c);
        }
    }
    out
}

fn char_mode_tokens(normalized: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in normalized.chars() {
        if c.is_whitespace() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
        } else if is_cjk(c) {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(c.to_string());
        } else {
            word.push(c);
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn resolve_mode(text: &str, policy: &TokenizationPolicy) -> TokenMode {
    match policy.mode {
        TokenMode::Auto => {
            let letters = text.chars().filter(|c| c.is_alphabetic()).count();
            let cjk = text.chars().filter(|c| is_cjk(*c)).count();
            if letters > 0 && 2 * cjk > letters {
                TokenMode::Char
            } else {
                TokenMode::Word
            }
        }
        fixed => fixed,
    }
}

pub fn tokenize(text: &str, policy: &TokenizationPolicy) -> Vec<String> {
    let normalized = normalize_chars(text, policy);
    match resolve_mode(text, policy) {
        TokenMode::Char => char_mode_tokens(&normalized),
        _ => normalized.split_whitespace().map(str::to_string).collect(),
    }
}

/// Normalized form for substring matching: tokens joined by one space.
pub fn normalize_for_match(text: &str, policy: &TokenizationPolicy) -> String {
    tokenize(text, policy).join(" ")
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("reference is empty after tokenization")]
    EmptyReference,
    #[error("hypothesis/reference length mismatch: {hyps} vs {refs}")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("hypothesis list is empty")]
    EmptyHypothesisList,
    #[error("prediction/context count mismatch: {predictions} vs {contexts}")]
    PredictionMismatch { predictions: usize, contexts: usize },
    #[error("no predictions to evaluate")]
    EmptyPredictions,
    #[error("prediction references unknown context {0}")]
    UnresolvedRef(ContextRef),
    #[error("duplicate prediction for context {0}")]
    DuplicateRef(ContextRef),
    #[error("predictions reference multiple manifests: {a} and {b}")]
    MixedManifests { a: String, b: String },
}

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut map = HashMap::new();
    for token in tokens {
        *map.entry(token.as_str()).or_insert(0) += 1;
    }
    map
}

/// Multiset token overlap F1 between a hypothesis and a reference.
pub fn word_f1(
    hyp: &str,
    reference: &str,
    policy: &TokenizationPolicy,
) -> Result<f64, MetricsError> {
    let ref_tokens = tokenize(reference, policy);
    if ref_tokens.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let hyp_tokens = tokenize(hyp, policy);
    if hyp_tokens.is_empty() {
        return Ok(0.0);
    }
    let ref_counts = counts(&ref_tokens);
    let hyp_counts = counts(&hyp_tokens);
    let overlap: usize = hyp_counts
        .iter()
        .map(|(token, &count)| count.min(*ref_counts.get(token).unwrap_or(&0)))
        .sum();
    if overlap == 0 {
        return Ok(0.0);
    }
    let precision = overlap as f64 / hyp_tokens.len() as f64;
    let recall = overlap as f64 / ref_tokens.len() as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut map = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            let key: Vec<&str> = window.iter().map(String::as_str).collect();
            *map.entry(key).or_insert(0) += 1;
        }
    }
    map
}

const BLEU_EPSILON: f64 = 1e-9;

/// Corpus-level BLEU with clipped modified n-gram precisions, the
/// standard brevity penalty, and epsilon smoothing applied only to zero
/// precisions.
pub fn bleu<S: AsRef<str>>(
    hyps: &[S],
    refs: &[S],
    max_n: usize,
    policy: &TokenizationPolicy,
) -> Result<f64, MetricsError> {
    if hyps.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricsError::EmptyHypothesisList);
    }
    let max_n = max_n.max(1);

    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;

    for (hyp, reference) in hyps.iter().zip(refs) {
        let hyp_tokens = tokenize(hyp.as_ref(), policy);
        let ref_tokens = tokenize(reference.as_ref(), policy);
        hyp_len += hyp_tokens.len();
        ref_len += ref_tokens.len();
        for n in 1..=max_n {
            let hyp_ngrams = ngram_counts(&hyp_tokens, n);
            let ref_ngrams = ngram_counts(&ref_tokens, n);
            for (ngram, count) in &hyp_ngrams {
                total[n - 1] += count;
                matched[n - 1] += count.min(ref_ngrams.get(ngram).unwrap_or(&0));
            }
        }
    }

    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0f64;
    for n in 0..max_n {
        let precision = if total[n] == 0 {
            0.0
        } else {
            matched[n] as f64 / total[n] as f64
        };
        let precision = if precision == 0.0 { BLEU_EPSILON } else { precision };
        log_sum += precision.ln() / max_n as f64;
    }
    let brevity = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(brevity * log_sum.exp())
}

/// Distinct-n: unique n-grams across all hypotheses over the total n-gram
/// count. Zero when no hypothesis reaches n tokens.
pub fn distinct_n<S: AsRef<str>>(
    hyps: &[S],
    n: usize,
    policy: &TokenizationPolicy,
) -> Result<f64, MetricsError> {
    if hyps.is_empty() {
        return Err(MetricsError::EmptyHypothesisList);
    }
    let n = n.max(1);
    let mut unique: HashSet<Vec<String>> = HashSet::new();
    let mut total = 0usize;
    for hyp in hyps {
        let tokens = tokenize(hyp.as_ref(), policy);
        if tokens.len() < n {
            continue;
        }
        for window in tokens.windows(n) {
            total += 1;
            unique.insert(window.to_vec());
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(unique.len() as f64 / total as f64)
}

fn entity_tokens(triples: &[KnowledgeTriple], policy: &TokenizationPolicy) -> BTreeSet<String> {
    let mut tokens = BTreeSet::new();
    for triple in triples {
        tokens.extend(tokenize(&triple.head, policy));
        tokens.extend(tokenize(&triple.tail, policy));
    }
    tokens
}

/// Knowledge F1: set F1 between the knowledge-entity tokens appearing in
/// the hypothesis and those appearing in the reference. Returns `None`
/// (context skipped, not scored zero) when the reference carries no
/// entity tokens.
pub fn knowledge_f1(
    hyp: &str,
    reference: &str,
    triples: &[KnowledgeTriple],
    policy: &TokenizationPolicy,
) -> Option<f64> {
    let entities = entity_tokens(triples, policy);
    if entities.is_empty() {
        return None;
    }
    let ref_tokens: BTreeSet<String> = tokenize(reference, policy).into_iter().collect();
    let hyp_tokens: BTreeSet<String> = tokenize(hyp, policy).into_iter().collect();
    let gold: BTreeSet<&String> = entities.iter().filter(|t| ref_tokens.contains(*t)).collect();
    if gold.is_empty() {
        return None;
    }
    let predicted: BTreeSet<&String> =
        entities.iter().filter(|t| hyp_tokens.contains(*t)).collect();
    let overlap = predicted.intersection(&gold).count();
    if overlap == 0 {
        return Some(0.0);
    }
    let precision = overlap as f64 / predicted.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    Some(2.0 * precision * recall / (precision + recall))
}

/// A subgoal is achieved when its normalized topic occurs inside the
/// normalized prediction; empty topics are vacuously achieved.
pub fn subgoal_achieved(prediction: &str, topic: &str, policy: &TokenizationPolicy) -> bool {
    let topic = normalize_for_match(topic, policy);
    if topic.is_empty() {
        return true;
    }
    normalize_for_match(prediction, policy).contains(&topic)
}

fn check_paired<S: AsRef<str>>(
    predictions: &[S],
    contexts: &[TurnContext<'_>],
) -> Result<(), MetricsError> {
    if predictions.len() != contexts.len() {
        return Err(MetricsError::PredictionMismatch {
            predictions: predictions.len(),
            contexts: contexts.len(),
        });
    }
    Ok(())
}

/// Goal success rate: the fraction of dialogues whose final-target
/// subgoal is achieved at every context that carries it, over dialogues
/// containing the final target.
pub fn goal_success<S: AsRef<str>>(
    predictions: &[S],
    contexts: &[TurnContext<'_>],
    policy: &TokenizationPolicy,
) -> Result<f64, MetricsError> {
    check_paired(predictions, contexts)?;
    // example id -> all final-target contexts achieved so far
    let mut dialogues: HashMap<&str, bool> = HashMap::new();
    for (prediction, ctx) in predictions.iter().zip(contexts) {
        let Some(target) = ctx.final_target() else {
            continue;
        };
        if ctx.subgoal() != target {
            continue;
        }
        let achieved = subgoal_achieved(prediction.as_ref(), &target.topic, policy);
        dialogues
            .entry(ctx.example_id())
            .and_modify(|ok| *ok &= achieved)
            .or_insert(achieved);
    }
    if dialogues.is_empty() {
        return Ok(0.0);
    }
    let succeeded = dialogues.values().filter(|ok| **ok).count();
    Ok(succeeded as f64 / dialogues.len() as f64)
}

/// Fraction of non-vacuous per-turn subgoals the predictions fail to
/// achieve, over every context.
pub fn subgoal_failure_rate<S: AsRef<str>>(
    predictions: &[S],
    contexts: &[TurnContext<'_>],
    policy: &TokenizationPolicy,
) -> Result<f64, MetricsError> {
    check_paired(predictions, contexts)?;
    let mut total = 0usize;
    let mut achieved = 0usize;
    for (prediction, ctx) in predictions.iter().zip(contexts) {
        let topic = &ctx.subgoal().topic;
        if normalize_for_match(topic, policy).is_empty() {
            continue; // vacuous
        }
        total += 1;
        if subgoal_achieved(prediction.as_ref(), topic, policy) {
            achieved += 1;
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(1.0 - achieved as f64 / total as f64)
}

/// Per-context metric values inside an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerContextEval {
    pub context_ref: ContextRef,
    pub word_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge_f1: Option<f64>,
    /// `None` when the subgoal is vacuous (empty topic).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subgoal_achieved: Option<bool>,
}

/// Corpus-level evaluation report. F1-style values are percentages;
/// BLEU-2 and Dist-2 are fractions, matching the usual reporting
/// convention for these metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub word_f1: f64,
    pub bleu2: f64,
    pub dist2: f64,
    pub knowledge_f1: f64,
    pub goal_success: f64,
    pub subgoal_failure: f64,
    pub scored_contexts: usize,
    pub knowledge_scored_contexts: usize,
    pub policy_fingerprint: String,
    pub per_example: Vec<PerContextEval>,
}

/// Score predictions against the corpus under one policy. Every
/// prediction must resolve to a system-turn context.
pub fn evaluate(
    predictions: &[(ContextRef, String)],
    corpus: &Corpus,
    policy: &TokenizationPolicy,
) -> Result<EvalReport, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::EmptyPredictions);
    }
    let mut by_ref: HashMap<ContextRef, TurnContext<'_>> = HashMap::new();
    for example in &corpus.examples {
        if let Ok(contexts) = crate::corpus::iterate_contexts(example) {
            for ctx in contexts {
                by_ref.insert(ctx.context_ref(), ctx);
            }
        }
    }

    let mut contexts = Vec::with_capacity(predictions.len());
    let mut hyps = Vec::with_capacity(predictions.len());
    let mut golds = Vec::with_capacity(predictions.len());
    let mut seen: HashSet<&ContextRef> = HashSet::with_capacity(predictions.len());
    for (context_ref, hyp) in predictions {
        if !seen.insert(context_ref) {
            return Err(MetricsError::DuplicateRef(context_ref.clone()));
        }
        let ctx = by_ref
            .get(context_ref)
            .copied()
            .ok_or_else(|| MetricsError::UnresolvedRef(context_ref.clone()))?;
        contexts.push(ctx);
        hyps.push(hyp.clone());
        golds.push(ctx.gold_response().to_string());
    }

    let mut per_example = Vec::with_capacity(contexts.len());
    let mut word_sum = 0.0f64;
    let mut knowledge_sum = 0.0f64;
    let mut knowledge_scored = 0usize;
    for (ctx, hyp) in contexts.iter().zip(&hyps) {
        let word = word_f1(hyp, ctx.gold_response(), policy)?;
        word_sum += word;
        let knowledge = knowledge_f1(hyp, ctx.gold_response(), ctx.knowledge(), policy);
        if let Some(value) = knowledge {
            knowledge_sum += value;
            knowledge_scored += 1;
        }
        let topic = &ctx.subgoal().topic;
        let achieved = if normalize_for_match(topic, policy).is_empty() {
            None
        } else {
            Some(subgoal_achieved(hyp, topic, policy))
        };
        per_example.push(PerContextEval {
            context_ref: ctx.context_ref(),
            word_f1: word,
            knowledge_f1: knowledge,
            subgoal_achieved: achieved,
        });
    }

    let bleu2 = bleu(&hyps, &golds, 2, policy)?;
    let dist2 = distinct_n(&hyps, 2, policy)?;
    let success = goal_success(&hyps, &contexts, policy)?;
    let failure = subgoal_failure_rate(&hyps, &contexts, policy)?;

    Ok(EvalReport {
        word_f1: 100.0 * word_sum / contexts.len() as f64,
        bleu2,
        dist2,
        knowledge_f1: if knowledge_scored == 0 {
            0.0
        } else {
            100.0 * knowledge_sum / knowledge_scored as f64
        },
        goal_success: 100.0 * success,
        subgoal_failure: 100.0 * failure,
        scored_contexts: contexts.len(),
        knowledge_scored_contexts: knowledge_scored,
        policy_fingerprint: policy.fingerprint(),
        per_example,
    })
}

/// Plain-text result table: method column plus the five metric columns.
pub fn render_table(method: &str, report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
        "Method", "W F1", "BLEU-2", "Dist-2", "K F1", "Succ"
    ));
    out.push_str(&format!(
        "{:<16} {:>7.2} {:>7.3} {:>7.3} {:>7.2} {:>7.2}\n",
        method,
        report.word_f1,
        report.bleu2,
        report.dist2,
        report.knowledge_f1,
        report.goal_success
    ));
    out.push_str(&format!(
        "subgoal failure rate: {:.2}% over {} contexts\n",
        report.subgoal_failure, report.scored_contexts
    ));
    out
}
