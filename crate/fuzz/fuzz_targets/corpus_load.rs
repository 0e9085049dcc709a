#![no_main]

use libfuzzer_sys::fuzz_target;

use crc_core::corpus::{load_corpus_from_reader, validate_corpus, LoadOptions};

fuzz_target!(|data: &[u8]| {
    let Ok(corpus) = load_corpus_from_reader(data, LoadOptions::default()) else {
        return;
    };
    // Whatever loads must validate and round-trip semantically.
    let _ = validate_corpus(&corpus);
    for example in &corpus.examples {
        let _ = crc_core::corpus::iterate_contexts(example);
    }
    let serialized = corpus.to_jsonl();
    let reloaded = load_corpus_from_reader(serialized.as_bytes(), LoadOptions::default())
        .expect("serialized corpus reloads");
    assert_eq!(corpus.fingerprint(), reloaded.fingerprint());
});
