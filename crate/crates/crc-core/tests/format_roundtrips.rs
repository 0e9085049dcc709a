//! Property tests for the wire formats: the reflection envelope and the
//! assembled stage inputs must re-parse exactly.

use std::collections::BTreeSet;

use proptest::prelude::*;

use crc_core::corpus::{load_corpus_from_reader, Corpus, LoadOptions};
use crc_core::promptkit::{
    assemble_stage_input, registry_lookup, render_blocks, reparse_stage_input, Stage,
    StageTemplate, Style,
};
use crc_core::reflection::{parse_c, serialize_c, InconsistencyType, ReflectionResult};

fn type_set() -> impl Strategy<Value = BTreeSet<InconsistencyType>> {
    proptest::collection::btree_set(
        prop_oneof![
            Just(InconsistencyType::UserProfile),
            Just(InconsistencyType::DialogueHistory),
            Just(InconsistencyType::DomainKnowledge),
            Just(InconsistencyType::Subgoal),
        ],
        0..=4,
    )
}

// Responses deliberately include separator-like fragments.
fn response_strategy() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9#:., ]{1,60}".prop_filter("non-empty", |s| !s.trim().is_empty())
}

fn suggestion_strategy() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9:., ]{1,60}".prop_filter("non-empty, no separator", |s| {
        !s.trim().is_empty() && !s.contains("###")
    })
}

proptest! {
    #[test]
    fn envelope_round_trips(
        response in response_strategy(),
        types in type_set(),
        suggestion in suggestion_strategy(),
    ) {
        let result = ReflectionResult::new(response, types, suggestion).unwrap();
        let envelope = serialize_c(&result);
        let parsed = parse_c(&envelope).unwrap();
        prop_assert_eq!(&parsed, &result);
        // Canonical envelopes are fixed points of parse/serialize.
        prop_assert_eq!(serialize_c(&parsed), envelope);
    }
}

fn block_text() -> impl Strategy<Value = String> {
    // No '[' or '<', so neither "[SEP]" nor "</s>" can occur by accident.
    "[a-zA-Z0-9 .,:!?']{1,40}".prop_filter("non-empty", |s| !s.trim().is_empty())
}

fn fixture_corpus(
    profile_value: &str,
    triple_tail: &str,
    user_text: &str,
    system_text: &str,
    topic: &str,
) -> Corpus {
    let record = serde_json::json!({
        "format": "crc-corpus/1",
        "id": "prop",
        "profile": [{"key": "Name", "value": profile_value}],
        "knowledge": [["Head", "relation", triple_tail]],
        "turns": [
            {"speaker": "user", "text": user_text},
            {"speaker": "system", "text": system_text}
        ],
        "goals": [{"action": "Q&A", "topic": topic}]
    });
    load_corpus_from_reader(format!("{record}\n").as_bytes(), LoadOptions::default()).unwrap()
}

proptest! {
    #[test]
    fn stage_inputs_reparse_to_four_blocks(
        profile_value in block_text(),
        triple_tail in block_text(),
        user_text in block_text(),
        system_text in block_text(),
        topic in block_text(),
        scheme_name in prop_oneof![Just("sep"), Just("eos")],
        style in prop_oneof![Just(Style::Bare), Just(Style::Instructed)],
        stage in prop_oneof![Just(Stage::Experience), Just(Stage::Reflection), Just(Stage::Correction)],
        types in type_set(),
        suggestion in suggestion_strategy(),
    ) {
        let corpus = fixture_corpus(&profile_value, &triple_tail, &user_text, &system_text, &topic);
        let contexts = crc_core::corpus::iterate_contexts(&corpus.examples[0]).unwrap();
        let ctx = &contexts[0];
        let scheme = registry_lookup(scheme_name).unwrap();
        let template = match style {
            Style::Bare => StageTemplate::bare(stage),
            Style::Instructed => StageTemplate::instructed(stage),
        };
        let reflection = if stage == Stage::Correction {
            Some(ReflectionResult::new("generated reply", types, suggestion).unwrap())
        } else {
            None
        };

        let assembled = assemble_stage_input(ctx, &template, &scheme, reflection.as_ref()).unwrap();
        if style == Style::Bare {
            match stage {
                Stage::Reflection => prop_assert!(assembled.text.ends_with("###stage2_R")),
                Stage::Correction => prop_assert!(assembled.text.ends_with("###stage3_C")),
                Stage::Experience => {}
            }
        }

        let reparsed = reparse_stage_input(&assembled.text, &template, &scheme).unwrap();
        prop_assert_eq!(&reparsed.blocks, &render_blocks(ctx));
        match (&reflection, &reparsed.reflection_envelope) {
            (Some(expected), Some(envelope)) => {
                prop_assert_eq!(&parse_c(envelope).unwrap(), expected);
            }
            (None, None) => {}
            other => prop_assert!(false, "envelope mismatch: {other:?}"),
        }
    }
}

proptest! {
    #[test]
    fn split_partitions_exactly(
        n in 1usize..60,
        ratio in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let mut lines = String::new();
        for i in 0..n {
            let record = serde_json::json!({
                "format": "crc-corpus/1",
                "id": format!("d{i}"),
                "profile": [],
                "knowledge": [],
                "turns": [{"speaker": "system", "text": "x"}],
                "goals": [{"action": "greeting", "topic": ""}]
            });
            lines.push_str(&record.to_string());
            lines.push('\n');
        }
        let corpus = load_corpus_from_reader(lines.as_bytes(), LoadOptions::default()).unwrap();
        let (experience, reflection) = crc_core::corpus::split_train(&corpus, ratio, seed).unwrap();

        let expected = (ratio * n as f64 + 0.5).floor() as usize;
        prop_assert_eq!(experience.len(), expected);
        prop_assert_eq!(experience.len() + reflection.len(), n);

        let mut ids: Vec<&str> = experience.iter().chain(&reflection).map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), n, "partition must be disjoint and exhaustive");
    }
}
