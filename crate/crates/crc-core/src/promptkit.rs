//! Rendering of dialogue contexts into stage inputs and the annotation
//! prompt.
//!
//! Stage inputs are the concatenation `[DK]delim[SG]delim[UP]delim[DH]`
//! with stage-specific suffixes: bare reflection inputs end with
//! `###stage2_R`, bare correction inputs embed the serialized reflection
//! and end with `###stage3_C`. Instructed templates prefix a task
//! instruction instead of using markers. Every render is deterministic;
//! assembly fails loudly when the delimiter occurs inside a block, because
//! exported training data must re-parse unambiguously.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueTurn, Speaker, TurnContext};
use crate::reflection::{serialize_c, ReflectionResult, VERDICT_PREFIX};

/// Version tag of the block rendering syntax, recorded in run manifests.
pub const BLOCK_SYNTAX_VERSION: &str = "blocks/1";

/// Suffix marking a bare reflection-stage input.
pub const REFLECTION_MARKER: &str = "###stage2_R";
/// Suffix marking a bare correction-stage input.
pub const CORRECTION_MARKER: &str = "###stage3_C";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Experience,
    Reflection,
    Correction,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Experience, Stage::Reflection, Stage::Correction];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Experience => "experience",
            Stage::Reflection => "reflection",
            Stage::Correction => "correction",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    /// Marker-suffixed inputs for models fine-tuned on raw concatenations.
    Bare,
    /// Instruction-prefixed inputs for chat-style models.
    Instructed,
}

const INSTRUCT_EXPERIENCE: &str = "Respond to user utterances based on domain knowledge, user profile, dialogue history, and the current dialogue goal.";
const INSTRUCT_REFLECTION: &str = "Respond to user utterances based on domain knowledge, user profile, dialogue history, and the current dialogue goal, and annotate the response with the types of inconsistencies compared to predefined information, along with suggestions for generating better responses.";
const INSTRUCT_CORRECTION: &str = "Correct the pre-response and respond to user utterances based on domain knowledge, user profile, dialogue history, current dialogue goal, pre-response, types of inconsistencies between the pre-response and predefined information, and suggestions for generating a better response.";

fn default_instruction(stage: Stage) -> &'static str {
    match stage {
        Stage::Experience => INSTRUCT_EXPERIENCE,
        Stage::Reflection => INSTRUCT_REFLECTION,
        Stage::Correction => INSTRUCT_CORRECTION,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTemplate {
    pub stage: Stage,
    pub style: Style,
    /// Empty for bare templates.
    pub instruction: String,
}

impl StageTemplate {
    pub fn bare(stage: Stage) -> Self {
        Self {
            stage,
            style: Style::Bare,
            instruction: String::new(),
        }
    }

    pub fn instructed(stage: Stage) -> Self {
        Self {
            stage,
            style: Style::Instructed,
            instruction: default_instruction(stage).to_string(),
        }
    }

    pub fn instructed_with(stage: Stage, instruction: impl Into<String>) -> Self {
        Self {
            stage,
            style: Style::Instructed,
            instruction: instruction.into(),
        }
    }

    /// Marker appended to bare inputs; `None` for experience and all
    /// instructed templates.
    pub fn marker(&self) -> Option<&'static str> {
        match (self.style, self.stage) {
            (Style::Bare, Stage::Reflection) => Some(REFLECTION_MARKER),
            (Style::Bare, Stage::Correction) => Some(CORRECTION_MARKER),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelimiterScheme {
    pub name: String,
    pub delimiter: String,
}

impl DelimiterScheme {
    pub fn new(name: impl Into<String>, delimiter: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            delimiter: delimiter.into(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("unknown delimiter scheme {0:?}")]
    UnknownScheme(String),
    #[error("delimiter {delimiter:?} occurs inside the {block} block; assembly would be ambiguous")]
    DelimiterCollision { block: &'static str, delimiter: String },
    #[error("correction stage requires a reflection result")]
    MissingReflection,
    #[error("reflection result supplied for {0} stage")]
    UnexpectedReflection(Stage),
    #[error("response must not be empty")]
    EmptyResponse,
    #[error("empty delimiter in scheme {0:?}")]
    EmptyDelimiter(String),
    #[error("registry file: {0}")]
    RegistryFile(String),
    #[error("input does not end with the expected stage marker {0:?}")]
    MissingMarker(&'static str),
    #[error("input does not start with the template instruction")]
    MissingInstruction,
    #[error("expected {expected} delimiter-separated sections, found {found}")]
    SectionCount { expected: usize, found: usize },
}

/// Named delimiter schemes plus optional per-stage instruction overrides.
/// The built-ins cover the delimiters models commonly use.
#[derive(Debug, Clone)]
pub struct SchemeRegistry {
    schemes: BTreeMap<String, DelimiterScheme>,
    instructions: BTreeMap<Stage, String>,
}

impl Default for SchemeRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl SchemeRegistry {
    pub fn builtin() -> Self {
        let mut schemes = BTreeMap::new();
        for (name, delimiter) in [
            ("sep", "[SEP]"),
            ("eos", "</s>"),
            ("endoftext", "<|endoftext|>"),
            ("space", " "),
        ] {
            schemes.insert(name.to_string(), DelimiterScheme::new(name, delimiter));
        }
        Self {
            schemes,
            instructions: BTreeMap::new(),
        }
    }

    pub fn lookup(&self, name: &str) -> Result<&DelimiterScheme, PromptError> {
        self.schemes
            .get(name)
            .ok_or_else(|| PromptError::UnknownScheme(name.to_string()))
    }

    /// Stage instruction, honoring registry overrides.
    pub fn instruction(&self, stage: Stage) -> &str {
        self.instructions
            .get(&stage)
            .map(String::as_str)
            .unwrap_or_else(|| default_instruction(stage))
    }

    pub fn instructed_template(&self, stage: Stage) -> StageTemplate {
        StageTemplate::instructed_with(stage, self.instruction(stage))
    }

    /// Merge a TOML override file on top of the built-ins:
    ///
    /// ```toml
    /// [delimiters]
    /// pipe = "<|sep|>"
    ///
    /// [instructions]
    /// experience = "..."
    /// ```
    pub fn parse_overrides(text: &str) -> Result<Self, PromptError> {
        #[derive(Deserialize, Default)]
        #[serde(deny_unknown_fields)]
        struct OverrideFile {
            #[serde(default)]
            delimiters: BTreeMap<String, String>,
            #[serde(default)]
            instructions: BTreeMap<String, String>,
        }

        let parsed: OverrideFile =
            toml::from_str(text).map_err(|e| PromptError::RegistryFile(e.to_string()))?;
        let mut registry = Self::builtin();
        for (name, delimiter) in parsed.delimiters {
            if delimiter.is_empty() {
                return Err(PromptError::EmptyDelimiter(name));
            }
            registry
                .schemes
                .insert(name.clone(), DelimiterScheme::new(name, delimiter));
        }
        for (stage_name, instruction) in parsed.instructions {
            let stage = match stage_name.as_str() {
                "experience" => Stage::Experience,
                "reflection" => Stage::Reflection,
                "correction" => Stage::Correction,
                other => {
                    return Err(PromptError::RegistryFile(format!(
                        "unknown stage {other:?} in [instructions]"
                    )))
                }
            };
            registry.instructions.insert(stage, instruction);
        }
        Ok(registry)
    }

    pub fn load_overrides(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PromptError::RegistryFile(format!("{}: {e}", path.display())))?;
        Self::parse_overrides(&text)
    }
}

/// Convenience for the common single lookup.
pub fn registry_lookup(name: &str) -> Result<DelimiterScheme, PromptError> {
    SchemeRegistry::builtin().lookup(name).cloned()
}

/// The four context blocks in their rendered form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextBlocks {
    pub dk: String,
    pub sg: String,
    pub up: String,
    pub dh: String,
}

impl ContextBlocks {
    fn named(&self) -> [(&'static str, &str); 4] {
        [
            ("domain knowledge", &self.dk),
            ("subgoal", &self.sg),
            ("user profile", &self.up),
            ("dialogue history", &self.dh),
        ]
    }
}

fn render_turn(turn: &DialogueTurn) -> String {
    match turn.speaker {
        Speaker::User => format!("[USER] {}", turn.text),
        Speaker::System => format!("[System] {}", turn.text),
    }
}

fn render_history(turns: &[DialogueTurn]) -> String {
    turns.iter().map(render_turn).collect::<Vec<_>>().join("\n")
}

/// Render the DK/SG/UP/DH blocks of a context. Deterministic; empty lists
/// render as empty strings.
pub fn render_blocks(ctx: &TurnContext<'_>) -> ContextBlocks {
    let dk = ctx
        .knowledge()
        .iter()
        .map(|t| format!("<{}, {}, {}>", t.head, t.relation, t.tail))
        .collect::<Vec<_>>()
        .join("; ");
    let sg = format!(
        "Action: {}; Topic: {}",
        ctx.subgoal().action,
        ctx.subgoal().topic
    );
    let up = ctx
        .profile()
        .iter()
        .map(|p| format!("{}: {}", p.key, p.value))
        .collect::<Vec<_>>()
        .join("; ");
    let dh = render_history(ctx.history());
    ContextBlocks { dk, sg, up, dh }
}

/// An assembled stage input plus how many history turns were dropped to
/// fit the character budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledInput {
    pub text: String,
    pub dropped_history: usize,
}

fn check_collisions(blocks: &ContextBlocks, delimiter: &str) -> Result<(), PromptError> {
    for (name, text) in blocks.named() {
        if text.contains(delimiter) {
            return Err(PromptError::DelimiterCollision {
                block: name,
                delimiter: delimiter.to_string(),
            });
        }
    }
    Ok(())
}

fn assemble_from_blocks(
    blocks: &ContextBlocks,
    template: &StageTemplate,
    scheme: &DelimiterScheme,
    reflection: Option<&ReflectionResult>,
) -> Result<String, PromptError> {
    if scheme.delimiter.is_empty() {
        return Err(PromptError::EmptyDelimiter(scheme.name.clone()));
    }
    match (template.stage, reflection) {
        (Stage::Correction, None) => return Err(PromptError::MissingReflection),
        (Stage::Correction, Some(_)) => {}
        (stage, Some(_)) => return Err(PromptError::UnexpectedReflection(stage)),
        (_, None) => {}
    }
    check_collisions(blocks, &scheme.delimiter)?;

    let delim = &scheme.delimiter;
    let mut text = String::new();
    if template.style == Style::Instructed {
        text.push_str(&template.instruction);
        text.push_str(delim);
    }
    text.push_str(&blocks.dk);
    text.push_str(delim);
    text.push_str(&blocks.sg);
    text.push_str(delim);
    text.push_str(&blocks.up);
    text.push_str(delim);
    text.push_str(&blocks.dh);

    if let Some(reflection) = reflection {
        let envelope = serialize_c(reflection);
        if envelope.contains(delim.as_str()) {
            return Err(PromptError::DelimiterCollision {
                block: "reflection envelope",
                delimiter: delim.clone(),
            });
        }
        text.push_str(delim);
        text.push_str(&envelope);
    }
    match template.marker() {
        Some(REFLECTION_MARKER) => {
            text.push_str(delim);
            text.push_str(REFLECTION_MARKER);
        }
        // The correction marker directly follows the envelope.
        Some(CORRECTION_MARKER) => text.push_str(CORRECTION_MARKER),
        _ => {}
    }
    Ok(text)
}

/// Assemble a stage input without a length budget.
pub fn assemble_stage_input(
    ctx: &TurnContext<'_>,
    template: &StageTemplate,
    scheme: &DelimiterScheme,
    reflection: Option<&ReflectionResult>,
) -> Result<AssembledInput, PromptError> {
    let blocks = render_blocks(ctx);
    let text = assemble_from_blocks(&blocks, template, scheme, reflection)?;
    Ok(AssembledInput {
        text,
        dropped_history: 0,
    })
}

/// Assemble under a character budget by dropping the oldest history turns
/// first. DK, SG, and UP are never truncated, so the result may still
/// exceed the budget once history is exhausted.
pub fn assemble_stage_input_budgeted(
    ctx: &TurnContext<'_>,
    template: &StageTemplate,
    scheme: &DelimiterScheme,
    reflection: Option<&ReflectionResult>,
    char_budget: usize,
) -> Result<AssembledInput, PromptError> {
    let mut blocks = render_blocks(ctx);
    let history = ctx.history();
    let mut dropped = 0usize;
    loop {
        let text = assemble_from_blocks(&blocks, template, scheme, reflection)?;
        if text.chars().count() <= char_budget || dropped == history.len() {
            return Ok(AssembledInput {
                text,
                dropped_history: dropped,
            });
        }
        dropped += 1;
        blocks.dh = render_history(&history[dropped..]);
    }
}

/// A stage input split back into its parts; the check that exported
/// training data stays machine-readable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReparsedInput {
    pub blocks: ContextBlocks,
    /// Serialized reflection envelope, present for correction inputs.
    pub reflection_envelope: Option<String>,
}

/// Invert [`assemble_stage_input`]: strip instruction and marker, split on
/// the delimiter, and recover exactly four blocks (plus the envelope for
/// correction inputs).
pub fn reparse_stage_input(
    text: &str,
    template: &StageTemplate,
    scheme: &DelimiterScheme,
) -> Result<ReparsedInput, PromptError> {
    if scheme.delimiter.is_empty() {
        return Err(PromptError::EmptyDelimiter(scheme.name.clone()));
    }
    let delim = scheme.delimiter.as_str();
    let mut body = text;

    if template.style == Style::Instructed {
        body = body
            .strip_prefix(template.instruction.as_str())
            .and_then(|rest| rest.strip_prefix(delim))
            .ok_or(PromptError::MissingInstruction)?;
    }
    match template.marker() {
        Some(REFLECTION_MARKER) => {
            body = body
                .strip_suffix(REFLECTION_MARKER)
                .and_then(|rest| rest.strip_suffix(delim))
                .ok_or(PromptError::MissingMarker(REFLECTION_MARKER))?;
        }
        Some(CORRECTION_MARKER) => {
            body = body
                .strip_suffix(CORRECTION_MARKER)
                .ok_or(PromptError::MissingMarker(CORRECTION_MARKER))?;
        }
        _ => {}
    }

    let expected = if template.stage == Stage::Correction { 5 } else { 4 };
    let sections: Vec<&str> = body.split(delim).collect();
    if sections.len() != expected {
        return Err(PromptError::SectionCount {
            expected,
            found: sections.len(),
        });
    }
    Ok(ReparsedInput {
        blocks: ContextBlocks {
            dk: sections[0].to_string(),
            sg: sections[1].to_string(),
            up: sections[2].to_string(),
            dh: sections[3].to_string(),
        },
        reflection_envelope: sections.get(4).map(|s| s.to_string()),
    })
}

/// Rendered consistency-audit prompt for the annotator backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationPrompt {
    pub rendered: String,
}

const ANNOTATION_QUESTIONS: &str = "(1) Is user profile information applied?\n(2) Is the consistency with the dialogue history maintained?\n(3) Is domain knowledge information applied?\n(4) Is the current dialogue subgoal achieved?";

/// Footer instructing the annotator to finish with a machine-parseable
/// verdict line.
const ANNOTATION_FOOTER: &str = "First analyze the response against each of the four consistency requirements. Then end your reply with one final line of exactly this form:\nVERDICT: <types>|<suggestion>\nwhere <types> is a comma-separated list drawn from UP (user profile), DH (dialogue history), DK (domain knowledge), SG (subgoal) naming the elements the response is inconsistent with, or NONE if the response is consistent with all four; and <suggestion> is a short correction suggestion (leave it empty after the | when the verdict is NONE).";

/// Suffix appended when an annotator reply lacked a verdict line and the
/// call is retried once.
pub const ANNOTATION_REMINDER: &str = "Reminder: the final line of your reply must have exactly the form VERDICT: <types>|<suggestion> with <types> drawn from UP, DH, DK, SG or NONE.";

/// Render the consistency-audit prompt for one context/response pair.
pub fn build_annotation_prompt(
    ctx: &TurnContext<'_>,
    response: &str,
) -> Result<AnnotationPrompt, PromptError> {
    if response.trim().is_empty() {
        return Err(PromptError::EmptyResponse);
    }
    let blocks = render_blocks(ctx);
    let rendered = format!(
        "Currently, the prediction task is performed: respond to user utterances based on information such as user profile, domain knowledge, dialogue history, and domain and current dialogue subgoal. However, there may be situations where the response is inconsistent with the four predefined elements above. For a dialogue, you need to analyze the AI Assistant's response from the perspective of whether the response is consistent with the four predefined elements above, and identifies inconsistency types and correction suggestions. The consistency requirements of the response with the four predefined elements are:\n{questions}\n\n[Start of Predefined Elements]\nUser Profile: {up}\nDialogue History:\n{dh}\nDomain Knowledge: {dk}\nSubgoal: {sg}\n[End of Predefined Elements]\n\n[Start of the Assistant's Response]\n{response}\n[End of the Assistant's Response]\n\n{footer}",
        questions = ANNOTATION_QUESTIONS,
        up = blocks.up,
        dh = blocks.dh,
        dk = blocks.dk,
        sg = blocks.sg,
        response = response,
        footer = ANNOTATION_FOOTER,
    );
    debug_assert!(rendered.contains(VERDICT_PREFIX));
    Ok(AnnotationPrompt { rendered })
}
