#![no_main]

use libfuzzer_sys::fuzz_target;
use mvcl::corpus::{parse_sentence_examples, CorpusConfig};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_sentence_examples(text, &CorpusConfig::default());
    }
});
