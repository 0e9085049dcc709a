//! The reflection triple and its wire format.
//!
//! A reflection bundles the generated response `r`, the set of elements it
//! is inconsistent with `e`, and a correction suggestion `s`. The
//! serialized envelope `r###e:###s` is the interchange format between the
//! reflection and correction stages, on disk and over the wire; parsing
//! splits on the last two `###` occurrences so the free-text response may
//! itself contain `###`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Field separator of the reflection envelope.
pub const ENVELOPE_SEPARATOR: &str = "###";

/// Suggestion sentinel for fully consistent responses.
pub const NO_SUGGESTION: &str = "none";

/// Types code emitted when no inconsistency was found.
pub const NO_INCONSISTENCY_CODE: &str = "NONE";

/// Which element of the dialogue context a response conflicts with.
/// Declaration order fixes the canonical code order UP, DH, DK, SG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InconsistencyType {
    UserProfile,
    DialogueHistory,
    DomainKnowledge,
    Subgoal,
}

impl InconsistencyType {
    pub const ALL: [InconsistencyType; 4] = [
        InconsistencyType::UserProfile,
        InconsistencyType::DialogueHistory,
        InconsistencyType::DomainKnowledge,
        InconsistencyType::Subgoal,
    ];

    pub fn code(self) -> &'static str {
        match self {
            InconsistencyType::UserProfile => "UP",
            InconsistencyType::DialogueHistory => "DH",
            InconsistencyType::DomainKnowledge => "DK",
            InconsistencyType::Subgoal => "SG",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "UP" => Some(InconsistencyType::UserProfile),
            "DH" => Some(InconsistencyType::DialogueHistory),
            "DK" => Some(InconsistencyType::DomainKnowledge),
            "SG" => Some(InconsistencyType::Subgoal),
            _ => None,
        }
    }
}

impl fmt::Display for InconsistencyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ReflectionError {
    #[error("reflection response must not be empty")]
    EmptyResponse,
    #[error("inconsistent reflection requires a non-empty suggestion")]
    EmptySuggestion,
    #[error("suggestion must not contain the envelope separator {ENVELOPE_SEPARATOR:?}")]
    SeparatorInSuggestion,
    #[error("envelope has fewer than two {ENVELOPE_SEPARATOR:?} separators")]
    MissingSeparators,
    #[error("type field must end with ':'")]
    MissingColon,
    #[error("unknown inconsistency code {0:?}")]
    UnknownCode(String),
    #[error("{NO_INCONSISTENCY_CODE} cannot be combined with other codes")]
    MixedNone,
    #[error("no VERDICT line found in annotator reply")]
    MissingVerdict,
    #[error("VERDICT line is missing the '|' between types and suggestion")]
    MalformedVerdict,
}

/// The reflection triple. Construction normalizes the consistent case:
/// empty types always pair with the `"none"` suggestion sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionResult {
    response: String,
    types: BTreeSet<InconsistencyType>,
    suggestion: String,
}

impl ReflectionResult {
    pub fn new(
        response: impl Into<String>,
        types: BTreeSet<InconsistencyType>,
        suggestion: impl Into<String>,
    ) -> Result<Self, ReflectionError> {
        let response = response.into();
        let suggestion = suggestion.into();
        if response.is_empty() {
            return Err(ReflectionError::EmptyResponse);
        }
        if types.is_empty() {
            // Any leftover prose is dropped; the consistent case is a sentinel.
            return Ok(Self {
                response,
                types,
                suggestion: NO_SUGGESTION.to_string(),
            });
        }
        if suggestion.trim().is_empty() {
            return Err(ReflectionError::EmptySuggestion);
        }
        if suggestion.contains(ENVELOPE_SEPARATOR) {
            return Err(ReflectionError::SeparatorInSuggestion);
        }
        Ok(Self {
            response,
            types,
            suggestion,
        })
    }

    pub fn consistent(response: impl Into<String>) -> Result<Self, ReflectionError> {
        Self::new(response, BTreeSet::new(), NO_SUGGESTION)
    }

    pub fn response(&self) -> &str {
        &self.response
    }

    pub fn types(&self) -> &BTreeSet<InconsistencyType> {
        &self.types
    }

    pub fn suggestion(&self) -> &str {
        &self.suggestion
    }

    pub fn is_consistent(&self) -> bool {
        self.types.is_empty()
    }
}

fn types_code(types: &BTreeSet<InconsistencyType>) -> String {
    if types.is_empty() {
        NO_INCONSISTENCY_CODE.to_string()
    } else {
        types
            .iter()
            .map(|t| t.code())
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn parse_types_code(code: &str) -> Result<BTreeSet<InconsistencyType>, ReflectionError> {
    let trimmed = code.trim();
    if trimmed == NO_INCONSISTENCY_CODE {
        return Ok(BTreeSet::new());
    }
    let mut types = BTreeSet::new();
    let mut saw_none = false;
    for part in trimmed.split(',') {
        let part = part.trim();
        if part == NO_INCONSISTENCY_CODE {
            saw_none = true;
            continue;
        }
        match InconsistencyType::from_code(part) {
            Some(t) => {
                types.insert(t);
            }
            None => return Err(ReflectionError::UnknownCode(part.to_string())),
        }
    }
    if saw_none {
        return Err(ReflectionError::MixedNone);
    }
    Ok(types)
}

/// Serialize the triple as `response###codes:###suggestion`, codes in the
/// fixed order UP, DH, DK, SG (or `NONE`). Total on valid results; the
/// separator-in-suggestion case is rejected at construction.
pub fn serialize_c(result: &ReflectionResult) -> String {
    format!(
        "{r}{sep}{e}:{sep}{s}",
        r = result.response,
        e = types_code(&result.types),
        s = result.suggestion,
        sep = ENVELOPE_SEPARATOR
    )
}

/// Inverse of [`serialize_c`] on its image. Splits on the last two `###`
/// occurrences, so a response containing `###` still parses.
pub fn parse_c(text: &str) -> Result<ReflectionResult, ReflectionError> {
    let last = text.rfind(ENVELOPE_SEPARATOR).ok_or(ReflectionError::MissingSeparators)?;
    let (head, suggestion) = (&text[..last], &text[last + ENVELOPE_SEPARATOR.len()..]);
    let mid = head.rfind(ENVELOPE_SEPARATOR).ok_or(ReflectionError::MissingSeparators)?;
    let (response, types_field) = (&head[..mid], &head[mid + ENVELOPE_SEPARATOR.len()..]);

    let types_field = types_field.strip_suffix(':').ok_or(ReflectionError::MissingColon)?;
    let types = parse_types_code(types_field)?;
    if response.is_empty() {
        return Err(ReflectionError::EmptyResponse);
    }
    ReflectionResult::new(response, types, suggestion)
}

/// Parsed verdict of an annotator reply: the inconsistency set, the
/// suggestion, and the free-form analysis above the verdict line (kept as
/// provenance).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatorVerdict {
    pub types: BTreeSet<InconsistencyType>,
    pub suggestion: String,
    pub analysis: String,
}

/// Marker the annotation prompt asks the annotator to begin its final
/// line with.
pub const VERDICT_PREFIX: &str = "VERDICT:";

/// Scan an annotator reply for the last `VERDICT: <types>|<suggestion>`
/// line and parse it. Everything above the verdict line is returned as
/// analysis.
pub fn parse_annotator_reply(text: &str) -> Result<AnnotatorVerdict, ReflectionError> {
    let mut verdict_line: Option<(usize, &str)> = None;
    let mut offset = 0usize;
    for line in text.split('\n') {
        let trimmed = line.trim();
        if trimmed.starts_with(VERDICT_PREFIX) {
            verdict_line = Some((offset, trimmed));
        }
        offset += line.len() + 1;
    }
    let (line_start, line) = verdict_line.ok_or(ReflectionError::MissingVerdict)?;

    let payload = line[VERDICT_PREFIX.len()..].trim();
    let bar = payload.find('|').ok_or(ReflectionError::MalformedVerdict)?;
    let (types_part, suggestion_part) = (&payload[..bar], &payload[bar + 1..]);
    let types = parse_types_code(types_part)?;
    let mut suggestion = suggestion_part.trim().to_string();
    if types.is_empty() {
        suggestion = NO_SUGGESTION.to_string();
    } else if suggestion.is_empty() {
        return Err(ReflectionError::EmptySuggestion);
    }

    Ok(AnnotatorVerdict {
        types,
        suggestion,
        analysis: text[..line_start].trim_end().to_string(),
    })
}
