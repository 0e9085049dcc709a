//! Corpus loading, validation, splitting, and per-turn context iteration.
//!
//! A corpus is a newline-delimited JSON file, one dialogue per line. Each
//! record carries a user profile, domain knowledge triples, the turn
//! sequence, and the goal path the system side is supposed to follow. The
//! loader is strict about schema and encoding; softer data problems (empty
//! fields, goal misalignment) surface as validation findings instead of
//! load failures so that `ingest --lenient` can report and proceed.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::hashutil;

/// Schema version tag required at the top of every corpus record.
pub const CORPUS_FORMAT: &str = "crc-corpus/1";

/// Actions that legitimately carry an empty topic. Everything else with an
/// empty topic is flagged by validation.
const SOCIAL_ACTIONS: &[&str] = &[
    "greeting",
    "greetings",
    "goodbye",
    "say goodbye",
    "farewell",
    "chitchat",
    "寒暄",
    "问候",
    "再见",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(String, String, String)", into = "(String, String, String)")]
pub struct KnowledgeTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl From<(String, String, String)> for KnowledgeTriple {
    fn from((head, relation, tail): (String, String, String)) -> Self {
        Self { head, relation, tail }
    }
}

impl From<KnowledgeTriple> for (String, String, String) {
    fn from(t: KnowledgeTriple) -> Self {
        (t.head, t.relation, t.tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    #[serde(alias = "User", alias = "USER")]
    User,
    #[serde(alias = "System", alias = "SYSTEM")]
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub speaker: Speaker,
    pub text: String,
}

/// One step of the goal path: a dialogue action plus the topic it targets.
/// The last subgoal of a dialogue is its final target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgoal {
    pub action: String,
    pub topic: String,
}

impl Subgoal {
    /// An empty topic on a social action is vacuous for goal matching.
    pub fn is_social(&self) -> bool {
        let action = self.action.trim().to_lowercase();
        SOCIAL_ACTIONS.iter().any(|s| *s == action)
    }
}

/// How the `goals` list lines up with the turn sequence. Corpora in the
/// wild attach goals either to every turn or only to system turns; the
/// loader detects which by length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalAlignment {
    PerTurn,
    PerSystemTurn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueExample {
    pub id: String,
    pub profile: Vec<ProfileEntry>,
    pub knowledge: Vec<KnowledgeTriple>,
    pub turns: Vec<DialogueTurn>,
    pub goals: Vec<Subgoal>,
    /// Detected at load; `None` when the goals length matches neither
    /// alignment (reported as a validation finding).
    #[serde(skip)]
    pub alignment: Option<GoalAlignment>,
}

impl DialogueExample {
    pub fn system_turn_count(&self) -> usize {
        self.turns.iter().filter(|t| t.speaker == Speaker::System).count()
    }

    fn detect_alignment(&self) -> Option<GoalAlignment> {
        if self.goals.len() == self.turns.len() && !self.turns.is_empty() {
            Some(GoalAlignment::PerTurn)
        } else if self.goals.len() == self.system_turn_count() && self.system_turn_count() > 0 {
            Some(GoalAlignment::PerSystemTurn)
        } else {
            None
        }
    }
}

/// Stable reference to one system turn of one dialogue; the join key
/// between pipeline artifacts and the corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextRef {
    pub example_id: String,
    pub turn_index: usize,
}

impl fmt::Display for ContextRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.example_id, self.turn_index)
    }
}

/// Generation-time view of one system turn: everything the model may
/// condition on, plus the gold response for that turn. History is the
/// strict prefix of the turn being generated; the turn itself never leaks
/// into its own context.
#[derive(Debug, Clone, Copy)]
pub struct TurnContext<'a> {
    example: &'a DialogueExample,
    turn_index: usize,
    subgoal: &'a Subgoal,
}

impl<'a> TurnContext<'a> {
    pub fn example_id(&self) -> &'a str {
        &self.example.id
    }

    pub fn turn_index(&self) -> usize {
        self.turn_index
    }

    pub fn context_ref(&self) -> ContextRef {
        ContextRef {
            example_id: self.example.id.clone(),
            turn_index: self.turn_index,
        }
    }

    pub fn profile(&self) -> &'a [ProfileEntry] {
        &self.example.profile
    }

    pub fn knowledge(&self) -> &'a [KnowledgeTriple] {
        &self.example.knowledge
    }

    /// Turns strictly before the turn being generated.
    pub fn history(&self) -> &'a [DialogueTurn] {
        &self.example.turns[..self.turn_index]
    }

    pub fn subgoal(&self) -> &'a Subgoal {
        self.subgoal
    }

    pub fn gold_response(&self) -> &'a str {
        &self.example.turns[self.turn_index].text
    }

    /// Final target of the owning dialogue (last subgoal of the goal path).
    pub fn final_target(&self) -> Option<&'a Subgoal> {
        self.example.goals.last()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("record {record}: input is not valid UTF-8")]
    Encoding { record: usize },
    #[error("record {record}: {message}")]
    Schema { record: usize, message: String },
    #[error("record {record}: unsupported format tag {found:?} (expected {CORPUS_FORMAT:?})")]
    FormatTag { record: usize, found: String },
    #[error("record {record}: duplicate dialogue id {id:?}")]
    DuplicateId { record: usize, id: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("split ratio {0} is outside (0, 1)")]
    InvalidRatio(f64),
    #[error("example {id:?} has no usable goal alignment")]
    UnalignedGoals { id: String },
}

/// One soft data problem found by validation. Findings are data, not
/// failures; callers decide whether they are fatal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub example_id: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.example_id, self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Force a goal alignment instead of detecting it by length. Useful
    /// for converted corpora whose alignment is known a priori.
    pub alignment: Option<GoalAlignment>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub examples: Vec<DialogueExample>,
}

// On-disk record shape. Kept separate from DialogueExample so the format
// tag stays out of the domain type.
#[derive(Serialize, Deserialize)]
struct RecordOnDisk {
    format: String,
    id: String,
    profile: Vec<ProfileEntry>,
    knowledge: Vec<KnowledgeTriple>,
    turns: Vec<DialogueTurn>,
    goals: Vec<Subgoal>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Content fingerprint over the canonical serialization; stable across
    /// load/save round trips.
    pub fn fingerprint(&self) -> String {
        let canonical = self.to_jsonl();
        hashutil::short_hex_digest(&[canonical.as_bytes()])
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for example in &self.examples {
            let record = RecordOnDisk {
                format: CORPUS_FORMAT.to_string(),
                id: example.id.clone(),
                profile: example.profile.clone(),
                knowledge: example.knowledge.clone(),
                turns: example.turns.clone(),
                goals: example.goals.clone(),
            };
            out.push_str(&serde_json::to_string(&record).expect("corpus record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        fs::write(path, self.to_jsonl()).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn get(&self, id: &str) -> Option<&DialogueExample> {
        self.examples.iter().find(|e| e.id == id)
    }
}

pub fn load_corpus(path: &Path, options: LoadOptions) -> Result<Corpus, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_corpus_from_reader(BufReader::new(file), options).map_err(|err| match err {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

/// Parse a corpus from any byte stream. Invalid UTF-8 is a hard error, not
/// a lossy replacement.
pub fn load_corpus_from_reader<R: Read>(
    reader: R,
    options: LoadOptions,
) -> Result<Corpus, CorpusError> {
    let mut examples = Vec::new();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();
    let mut record_no = 0usize;

    let mut buf = BufReader::new(reader);
    let mut line: Vec<u8> = Vec::new();
    loop {
        line.clear();
        let n = buf.read_until(b'\n', &mut line).map_err(|source| CorpusError::Io {
            path: "<reader>".to_string(),
            source,
        })?;
        if n == 0 {
            break;
        }
        record_no += 1;
        let text = std::str::from_utf8(&line)
            .map_err(|_| CorpusError::Encoding { record: record_no })?
            .trim();
        if text.is_empty() {
            record_no -= 1; // blank lines do not count as records
            continue;
        }

        let record: RecordOnDisk =
            serde_json::from_str(text).map_err(|e| CorpusError::Schema {
                record: record_no,
                message: e.to_string(),
            })?;
        if record.format != CORPUS_FORMAT {
            return Err(CorpusError::FormatTag {
                record: record_no,
                found: record.format,
            });
        }
        if !seen_ids.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId {
                record: record_no,
                id: record.id,
            });
        }
        let mut example = DialogueExample {
            id: record.id,
            profile: record.profile,
            knowledge: record.knowledge,
            turns: record.turns,
            goals: record.goals,
            alignment: None,
        };
        example.alignment = options.alignment.or_else(|| example.detect_alignment());
        examples.push(example);
    }

    Ok(Corpus { examples })
}

/// Check every type invariant and report what fails. An empty report means
/// the example is fully well-formed.
pub fn validate_example(example: &DialogueExample) -> ValidationReport {
    let mut findings = Vec::new();
    let mut push = |message: String| {
        findings.push(Finding {
            example_id: example.id.clone(),
            message,
        })
    };

    if example.id.trim().is_empty() {
        push("empty dialogue id".to_string());
    }
    for (i, entry) in example.profile.iter().enumerate() {
        if entry.key.trim().is_empty() {
            push(format!("empty profile key at index {i}"));
        }
        if entry.value.trim().is_empty() {
            push(format!("empty profile value at index {i}"));
        }
    }
    for (i, triple) in example.knowledge.iter().enumerate() {
        for (field, value) in [
            ("head", &triple.head),
            ("relation", &triple.relation),
            ("tail", &triple.tail),
        ] {
            if value.trim().is_empty() {
                push(format!("empty {field} in knowledge triple at index {i}"));
            }
        }
    }
    for (i, turn) in example.turns.iter().enumerate() {
        if turn.text.trim().is_empty() {
            push(format!("empty turn text at index {i}"));
        }
    }
    for (i, goal) in example.goals.iter().enumerate() {
        if goal.action.trim().is_empty() {
            push(format!("empty action at goal index {i}"));
        } else if goal.topic.trim().is_empty() && !goal.is_social() {
            push(format!(
                "empty topic at goal index {i} for non-social action {:?}",
                goal.action
            ));
        }
    }
    if example.system_turn_count() == 0 {
        push("no system turn".to_string());
    }
    if example.alignment.is_none() && example.detect_alignment().is_none() {
        push(format!(
            "goal alignment: {} goals fit neither {} turns nor {} system turns",
            example.goals.len(),
            example.turns.len(),
            example.system_turn_count()
        ));
    }

    ValidationReport { findings }
}

pub fn validate_corpus(corpus: &Corpus) -> ValidationReport {
    let mut findings = Vec::new();
    for example in &corpus.examples {
        findings.extend(validate_example(example).findings);
    }
    ValidationReport { findings }
}

/// One context per system turn, in order. Each context sees only the
/// strict prefix of the dialogue.
pub fn iterate_contexts(example: &DialogueExample) -> Result<Vec<TurnContext<'_>>, CorpusError> {
    let alignment = example
        .alignment
        .or_else(|| example.detect_alignment())
        .ok_or_else(|| CorpusError::UnalignedGoals {
            id: example.id.clone(),
        })?;

    let mut contexts = Vec::new();
    let mut system_ordinal = 0usize;
    for (turn_index, turn) in example.turns.iter().enumerate() {
        if turn.speaker != Speaker::System {
            continue;
        }
        let goal_index = match alignment {
            GoalAlignment::PerTurn => turn_index,
            GoalAlignment::PerSystemTurn => system_ordinal,
        };
        let subgoal = example
            .goals
            .get(goal_index)
            .ok_or_else(|| CorpusError::UnalignedGoals {
                id: example.id.clone(),
            })?;
        contexts.push(TurnContext {
            example,
            turn_index,
            subgoal,
        });
        system_ordinal += 1;
    }
    Ok(contexts)
}

/// All contexts of a corpus, in corpus order.
pub fn corpus_contexts(corpus: &Corpus) -> Result<Vec<TurnContext<'_>>, CorpusError> {
    let mut out = Vec::new();
    for example in &corpus.examples {
        out.extend(iterate_contexts(example)?);
    }
    Ok(out)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic whole-dialogue split into an experience set and a
/// reflection set. The shuffle is keyed only by `seed`, so the partition
/// is stable across platforms and runs; the split never separates turns
/// of one dialogue. Experience size is round-half-up of `ratio * N`.
pub fn split_train(
    corpus: &Corpus,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<&DialogueExample>, Vec<&DialogueExample>), CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::InvalidRatio(ratio));
    }

    let n = corpus.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut state = seed;
    for i in (1..n).rev() {
        let j = (splitmix64(&mut state) % (i as u64 + 1)) as usize;
        indices.swap(i, j);
    }

    let take = (ratio * n as f64 + 0.5).floor() as usize;
    let mut experience_idx: Vec<usize> = indices[..take].to_vec();
    let mut reflection_idx: Vec<usize> = indices[take..].to_vec();
    // Keep corpus order inside each side so downstream files are stable.
    experience_idx.sort_unstable();
    reflection_idx.sort_unstable();

    let experience = experience_idx.iter().map(|&i| &corpus.examples[i]).collect();
    let reflection = reflection_idx.iter().map(|&i| &corpus.examples[i]).collect();
    Ok((experience, reflection))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn figure_dialogue_jsonl() -> String {
        let record = serde_json::json!({
            "format": "crc-corpus/1",
            "id": "fig-1",
            "profile": [
                {"key": "Name", "value": "Shuaiguo Xu"},
                {"key": "Favorite Stars", "value": "Jimmy Lin"}
            ],
            "knowledge": [
                ["Grandpa's Love", "director", "Yanping Zhu"],
                ["Grandpa's Love", "star", "Jimmy Lin"]
            ],
            "turns": [
                {"speaker": "user", "text": "What is Jimmy Lin's constellation?"},
                {"speaker": "system", "text": "Jimmy Lin is a Libra."},
                {"speaker": "user", "text": "You know a lot!"},
                {"speaker": "system", "text": "Have you seen the movie Grandpa's Love starring him?"}
            ],
            "goals": [
                {"action": "Q&A", "topic": "Jimmy Lin's constellation"},
                {"action": "Movie recommendation", "topic": "Grandpa's Love"}
            ]
        });
        format!("{record}\n")
    }

    #[test]
    fn empty_file_loads_empty_corpus() {
        let corpus = load_corpus_from_reader(&b""[..], LoadOptions::default()).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn figure_dialogue_loads_with_system_contexts() {
        let corpus =
            load_corpus_from_reader(figure_dialogue_jsonl().as_bytes(), LoadOptions::default())
                .unwrap();
        assert_eq!(corpus.len(), 1);
        let example = &corpus.examples[0];
        assert_eq!(example.alignment, Some(GoalAlignment::PerSystemTurn));
        assert!(validate_example(example).is_clean());

        let contexts = iterate_contexts(example).unwrap();
        assert_eq!(contexts.len(), 2);
        let last = &contexts[1];
        assert_eq!(last.subgoal().action, "Movie recommendation");
        assert_eq!(last.subgoal().topic, "Grandpa's Love");
        assert_eq!(last.history().len(), 3);
        assert!(last.gold_response().contains("Grandpa's Love"));
    }

    #[test]
    fn missing_goals_field_names_the_field() {
        let line = r#"{"format":"crc-corpus/1","id":"x","profile":[],"knowledge":[],"turns":[{"speaker":"system","text":"hi"}]}"#;
        let err = load_corpus_from_reader(line.as_bytes(), LoadOptions::default()).unwrap_err();
        match err {
            CorpusError::Schema { record, message } => {
                assert_eq!(record, 1);
                assert!(message.contains("goals"), "message should name the field: {message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let doubled = figure_dialogue_jsonl().repeat(2);
        let err = load_corpus_from_reader(doubled.as_bytes(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { record: 2, .. }));
    }

    #[test]
    fn invalid_utf8_is_a_load_error() {
        let mut bytes = figure_dialogue_jsonl().into_bytes();
        bytes.extend_from_slice(b"{\"format\": \"\xff\xfe\"}\n");
        let err = load_corpus_from_reader(&bytes[..], LoadOptions::default()).unwrap_err();
        assert!(matches!(err, CorpusError::Encoding { record: 2 }));
    }

    #[test]
    fn empty_action_is_a_finding() {
        let mut corpus =
            load_corpus_from_reader(figure_dialogue_jsonl().as_bytes(), LoadOptions::default())
                .unwrap();
        corpus.examples[0].goals[1].action = String::new();
        let report = validate_example(&corpus.examples[0]);
        assert!(report
            .findings
            .iter()
            .any(|f| f.message == "empty action at goal index 1"));
    }

    #[test]
    fn misaligned_goals_are_a_finding_not_an_error() {
        let mut corpus =
            load_corpus_from_reader(figure_dialogue_jsonl().as_bytes(), LoadOptions::default())
                .unwrap();
        corpus.examples[0].goals.push(Subgoal {
            action: "Q&A".to_string(),
            topic: "extra".to_string(),
        });
        corpus.examples[0].alignment = corpus.examples[0].detect_alignment();
        assert_eq!(corpus.examples[0].alignment, None);
        let report = validate_example(&corpus.examples[0]);
        assert!(report.findings.iter().any(|f| f.message.contains("goal alignment")));
        assert!(iterate_contexts(&corpus.examples[0]).is_err());
    }

    #[test]
    fn context_history_is_strict_prefix() {
        // Turns 0, 2, 4 are system (zero-based), so history lengths are 0, 2, 4.
        let record = serde_json::json!({
            "format": "crc-corpus/1",
            "id": "five",
            "profile": [{"key": "Name", "value": "A"}],
            "knowledge": [],
            "turns": [
                {"speaker": "system", "text": "s1"},
                {"speaker": "user", "text": "u1"},
                {"speaker": "system", "text": "s2"},
                {"speaker": "user", "text": "u2"},
                {"speaker": "system", "text": "s3"}
            ],
            "goals": [
                {"action": "greeting", "topic": ""},
                {"action": "Q&A", "topic": "t1"},
                {"action": "Q&A", "topic": "t2"}
            ]
        });
        let corpus = load_corpus_from_reader(
            format!("{record}\n").as_bytes(),
            LoadOptions::default(),
        )
        .unwrap();
        let contexts = iterate_contexts(&corpus.examples[0]).unwrap();
        let lengths: Vec<usize> = contexts.iter().map(|c| c.history().len()).collect();
        assert_eq!(lengths, vec![0, 2, 4]);
        for ctx in &contexts {
            assert!(ctx.history().len() <= ctx.turn_index());
        }
    }

    #[test]
    fn forced_alignment_overrides_detection() {
        // 4 turns, 2 system turns, 4 goals: detection would pick PerTurn;
        // forcing PerSystemTurn makes the extra goals dangle and the
        // context builder reports the misalignment.
        let record = serde_json::json!({
            "format": "crc-corpus/1",
            "id": "forced",
            "profile": [],
            "knowledge": [],
            "turns": [
                {"speaker": "user", "text": "a"},
                {"speaker": "system", "text": "b"},
                {"speaker": "user", "text": "c"},
                {"speaker": "system", "text": "d"}
            ],
            "goals": [
                {"action": "Q&A", "topic": "t0"},
                {"action": "Q&A", "topic": "t1"},
                {"action": "Q&A", "topic": "t2"},
                {"action": "Q&A", "topic": "t3"}
            ]
        });
        let jsonl = format!("{record}\n");

        let detected =
            load_corpus_from_reader(jsonl.as_bytes(), LoadOptions::default()).unwrap();
        assert_eq!(detected.examples[0].alignment, Some(GoalAlignment::PerTurn));
        let contexts = iterate_contexts(&detected.examples[0]).unwrap();
        assert_eq!(contexts[0].subgoal().topic, "t1");
        assert_eq!(contexts[1].subgoal().topic, "t3");

        let forced = load_corpus_from_reader(
            jsonl.as_bytes(),
            LoadOptions {
                alignment: Some(GoalAlignment::PerSystemTurn),
            },
        )
        .unwrap();
        let contexts = iterate_contexts(&forced.examples[0]).unwrap();
        assert_eq!(contexts[0].subgoal().topic, "t0");
        assert_eq!(contexts[1].subgoal().topic, "t1");
    }

    #[test]
    fn no_system_turn_means_no_contexts() {
        let record = serde_json::json!({
            "format": "crc-corpus/1",
            "id": "u-only",
            "profile": [],
            "knowledge": [],
            "turns": [{"speaker": "user", "text": "hi"}],
            "goals": []
        });
        let corpus = load_corpus_from_reader(
            format!("{record}\n").as_bytes(),
            LoadOptions {
                alignment: Some(GoalAlignment::PerSystemTurn),
            },
        )
        .unwrap();
        assert!(iterate_contexts(&corpus.examples[0]).unwrap().is_empty());
    }

    fn synthetic_corpus(n: usize) -> Corpus {
        let mut lines = String::new();
        for i in 0..n {
            let record = serde_json::json!({
                "format": "crc-corpus/1",
                "id": format!("d{i}"),
                "profile": [{"key": "Name", "value": "X"}],
                "knowledge": [],
                "turns": [
                    {"speaker": "user", "text": "q"},
                    {"speaker": "system", "text": "a"}
                ],
                "goals": [{"action": "Q&A", "topic": "t"}]
            });
            lines.push_str(&record.to_string());
            lines.push('\n');
        }
        load_corpus_from_reader(lines.as_bytes(), LoadOptions::default()).unwrap()
    }

    #[test]
    fn split_sizes_follow_round_half_up() {
        let corpus = synthetic_corpus(100);
        let (exp, refl) = split_train(&corpus, 0.75, 7).unwrap();
        assert_eq!((exp.len(), refl.len()), (75, 25));

        let corpus = synthetic_corpus(3);
        let (exp, refl) = split_train(&corpus, 0.75, 7).unwrap();
        assert_eq!((exp.len(), refl.len()), (2, 1));
    }

    #[test]
    fn split_is_deterministic_and_exact() {
        let corpus = synthetic_corpus(41);
        let (a1, b1) = split_train(&corpus, 0.6, 99).unwrap();
        let (a2, b2) = split_train(&corpus, 0.6, 99).unwrap();
        let ids = |v: &[&DialogueExample]| v.iter().map(|e| e.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a1), ids(&a2));
        assert_eq!(ids(&b1), ids(&b2));

        let mut all: Vec<String> = ids(&a1);
        all.extend(ids(&b1));
        all.sort();
        let mut expected: Vec<String> = corpus.examples.iter().map(|e| e.id.clone()).collect();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let corpus = synthetic_corpus(0);
        assert!(matches!(split_train(&corpus, 0.75, 1), Err(CorpusError::EmptyCorpus)));
        let corpus = synthetic_corpus(4);
        assert!(matches!(split_train(&corpus, 1.0, 1), Err(CorpusError::InvalidRatio(_))));
    }

    #[test]
    fn save_load_round_trip_is_semantic_identity() {
        let corpus =
            load_corpus_from_reader(figure_dialogue_jsonl().as_bytes(), LoadOptions::default())
                .unwrap();
        let serialized = corpus.to_jsonl();
        let reloaded =
            load_corpus_from_reader(serialized.as_bytes(), LoadOptions::default()).unwrap();
        assert_eq!(corpus.examples, reloaded.examples);
        assert_eq!(corpus.fingerprint(), reloaded.fingerprint());
    }
}
