//! Command-level tests: exit codes, prerequisite ordering, lenient mode,
//! and cache idempotence.

mod common;

use common::*;

#[test]
fn ingest_valid_corpus_exits_zero_with_counts() {
    let dir = tempfile::tempdir().unwrap();
    setup_run(dir.path());
    let output = crc(dir.path(), &["ingest"]);
    assert_success(&output, "ingest");
    let text = stdout(&output);
    assert!(text.contains("dialogues: 5"));
    assert!(text.contains("system turns: 11"));
    assert!(text.contains("validation: clean"));
}

#[test]
fn ingest_malformed_record_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = FIXTURE_CORPUS.to_string();
    corpus.push_str("{\"format\":\"crc-corpus/1\",\"id\":\"broken\"}\n");
    setup_run_with(dir.path(), &corpus, MOCK_CONFIG);
    let output = crc(dir.path(), &["ingest"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("record 6"));
}

#[test]
fn ingest_findings_fail_unless_lenient() {
    let dir = tempfile::tempdir().unwrap();
    // Empty action string: a validation finding, not a schema error.
    let corpus = FIXTURE_CORPUS.replace("\"action\":\"Q&A\",\"topic\":\"Jimmy Lin's constellation\"", "\"action\":\"\",\"topic\":\"Jimmy Lin's constellation\"");
    assert_ne!(corpus, FIXTURE_CORPUS);
    setup_run_with(dir.path(), &corpus, MOCK_CONFIG);

    let strict = crc(dir.path(), &["ingest"]);
    assert_eq!(strict.status.code(), Some(1));
    assert!(stdout(&strict).contains("empty action"));

    let lenient = crc(dir.path(), &["ingest", "--lenient"]);
    assert_success(&lenient, "ingest --lenient");
    assert!(stdout(&lenient).contains("empty action"));
}

#[test]
fn commands_enforce_stage_order() {
    let dir = tempfile::tempdir().unwrap();
    setup_run(dir.path());

    let output = crc(dir.path(), &["export-train"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("run `crc annotate` first"));

    let output = crc(dir.path(), &["gen-experience"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("run `crc split` first"));

    let output = crc(dir.path(), &["eval"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("run `crc infer` first"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = MOCK_CONFIG.replace("scheme = \"sep\"", "scheme = \"unknown\"");
    setup_run_with(dir.path(), FIXTURE_CORPUS, &config);
    let output = crc(dir.path(), &["ingest"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("unknown"));
}

#[test]
fn config_with_embedded_secret_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{MOCK_CONFIG}\n# token = \"sk-AAAAbbbbCCCCdddd1234\"\n");
    setup_run_with(dir.path(), FIXTURE_CORPUS, &config);
    let output = crc(dir.path(), &["ingest"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("credential"));
}

#[test]
fn full_sequence_produces_the_artifact_tree() {
    let dir = tempfile::tempdir().unwrap();
    setup_run(dir.path());
    run_full_sequence(dir.path(), "1");

    let out = dir.path().join("out");
    for file in [
        "split.json",
        "experience_generations.jsonl",
        "annotations.jsonl",
        "annotation_rejects.jsonl",
        "train_experience.jsonl",
        "train_reflection.jsonl",
        "train_correction.jsonl",
        "export_rejects.jsonl",
        "predictions.jsonl",
        "eval_report.json",
        "manifests/split.json",
        "manifests/gen-experience.json",
        "manifests/annotate.json",
        "manifests/export-train.json",
        "manifests/infer.json",
        "manifests/eval.json",
    ] {
        assert!(out.join(file).exists(), "missing artifact {file}");
    }

    let eval_output = crc(dir.path(), &["eval"]);
    assert_success(&eval_output, "eval");
    let table = stdout(&eval_output);
    assert!(table.contains("W F1"));
    assert!(table.contains("subgoal failure rate"));
}

#[test]
fn artifacts_reference_their_manifests_and_reparse() {
    use crc_core::pipeline::{read_jsonl, PredictionRecord, RunManifest, TrainingRecord};
    use crc_core::promptkit::{reparse_stage_input, DelimiterScheme, Stage, StageTemplate};

    let dir = tempfile::tempdir().unwrap();
    setup_run(dir.path());
    run_full_sequence(dir.path(), "1");
    let out = dir.path().join("out");

    let manifest = |stage: &str| -> RunManifest {
        serde_json::from_str(
            &std::fs::read_to_string(out.join("manifests").join(format!("{stage}.json"))).unwrap(),
        )
        .unwrap()
    };

    // Every artifact names the manifest of the stage that wrote it, and
    // every manifest names the config hash.
    let split: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("split.json")).unwrap()).unwrap();
    assert_eq!(split["manifest_ref"], manifest("split").run_id);

    let predictions: Vec<PredictionRecord> = read_jsonl(&out.join("predictions.jsonl")).unwrap();
    let infer_manifest = manifest("infer");
    assert!(predictions.iter().all(|p| p.manifest_ref == infer_manifest.run_id));
    assert!(!infer_manifest.config_hash.is_empty());
    assert_eq!(infer_manifest.config_hash, manifest("split").config_hash);

    // Exported training inputs re-parse under the manifest's delimiter:
    // four blocks, plus the envelope for correction.
    let export_manifest = manifest("export-train");
    let scheme = DelimiterScheme::new(
        export_manifest.scheme_name.clone(),
        export_manifest.delimiter.clone(),
    );
    for (file, stage) in [
        ("train_experience.jsonl", Stage::Experience),
        ("train_reflection.jsonl", Stage::Reflection),
        ("train_correction.jsonl", Stage::Correction),
    ] {
        let records: Vec<TrainingRecord> = read_jsonl(&out.join(file)).unwrap();
        assert!(!records.is_empty(), "{file} is empty");
        for record in &records {
            assert_eq!(record.manifest_ref, export_manifest.run_id);
            let reparsed =
                reparse_stage_input(&record.input, &StageTemplate::bare(stage), &scheme)
                    .unwrap_or_else(|e| panic!("{file}: input does not reparse: {e}"));
            assert_eq!(reparsed.reflection_envelope.is_some(), stage == Stage::Correction);
        }
    }
}

#[test]
fn rerun_serves_everything_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    setup_run(dir.path());
    run_full_sequence(dir.path(), "1");

    // Second gen-experience run: all cache hits, zero backend calls.
    let output = crc(dir.path(), &["gen-experience"]);
    assert_success(&output, "gen-experience rerun");
    let text = stdout(&output);
    assert!(
        text.contains("generator: 0 backend call(s)"),
        "expected zero calls, got: {text}"
    );

    let output = crc(dir.path(), &["infer"]);
    assert_success(&output, "infer rerun");
    let text = stdout(&output);
    assert!(text.contains("reflector: 0 backend call(s)"));
    assert!(text.contains("corrector: 0 backend call(s)"));
}

#[test]
fn workers_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    setup_run(dir.path());
    assert_success(&crc(dir.path(), &["split"]), "split");
    let output = crc(dir.path(), &["gen-experience", "--workers", "4"]);
    assert_success(&output, "gen-experience --workers 4");
}

#[test]
fn registry_override_changes_the_delimiter() {
    use crc_core::pipeline::{read_jsonl, TrainingRecord};

    let dir = tempfile::tempdir().unwrap();
    let config = MOCK_CONFIG.replace(
        "scheme = \"sep\"",
        "scheme = \"pipe\"\nregistry = \"registry.toml\"",
    );
    setup_run_with(dir.path(), FIXTURE_CORPUS, &config);
    std::fs::write(
        dir.path().join("registry.toml"),
        "[delimiters]\npipe = \"<|sep|>\"\n",
    )
    .unwrap();

    run_full_sequence(dir.path(), "1");
    let records: Vec<TrainingRecord> =
        read_jsonl(&dir.path().join("out").join("train_experience.jsonl")).unwrap();
    assert!(records[0].input.contains("<|sep|>"));
    assert!(!records[0].input.contains("[SEP]"));
}

#[test]
fn infer_can_target_one_side_of_the_split() {
    use crc_core::pipeline::{read_jsonl, PredictionRecord};

    let dir = tempfile::tempdir().unwrap();
    let config = MOCK_CONFIG.replace(
        "[backends.generator]",
        "[infer]\nsplit = \"reflection\"\n\n[backends.generator]",
    );
    setup_run_with(dir.path(), FIXTURE_CORPUS, &config);
    assert_success(&crc(dir.path(), &["split"]), "split");
    assert_success(&crc(dir.path(), &["infer"]), "infer");

    let out = dir.path().join("out");
    let split: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("split.json")).unwrap()).unwrap();
    let reflection_ids: Vec<String> = split["reflection_ids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let predictions: Vec<PredictionRecord> = read_jsonl(&out.join("predictions.jsonl")).unwrap();
    assert!(!predictions.is_empty());
    assert!(predictions
        .iter()
        .all(|p| reflection_ids.contains(&p.context_ref.example_id)));
}

#[test]
fn eval_on_gold_predictions_reports_the_identity_bound() {
    use crc_core::corpus::{corpus_contexts, load_corpus_from_reader, LoadOptions};
    use crc_core::pipeline::{write_jsonl, PredictionRecord};

    let dir = tempfile::tempdir().unwrap();
    setup_run(dir.path());
    // Hand-write a predictions file carrying the gold responses.
    let corpus =
        load_corpus_from_reader(FIXTURE_CORPUS.as_bytes(), LoadOptions::default()).unwrap();
    let contexts = corpus_contexts(&corpus).unwrap();
    let predictions: Vec<PredictionRecord> = contexts
        .iter()
        .map(|ctx| PredictionRecord {
            context_ref: ctx.context_ref(),
            first_pass: "gold###NONE:###none".to_string(),
            final_response: ctx.gold_response().to_string(),
            manifest_ref: "gold-fixture".to_string(),
            fallback: false,
        })
        .collect();
    write_jsonl(&dir.path().join("out").join("predictions.jsonl"), &predictions).unwrap();

    let output = crc(dir.path(), &["eval"]);
    assert_success(&output, "eval on gold");
    let table = stdout(&output);
    assert!(table.contains("100.00"), "missing W F1 identity: {table}");
    assert!(table.contains("1.000"), "missing BLEU identity: {table}");
}
