//! cases.jsonl parsing must never panic: errors are the only acceptable
//! outcome for malformed bytes. The first input byte selects the tokenize
//! mode so both paths stay covered.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mvcl::corpus::{parse_cases, CorpusConfig, TokenizeMode};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let (mode_byte, body) = match text.as_bytes().first() {
        Some(b) => (*b, &text[1..]),
        None => return,
    };
    let config = CorpusConfig {
        tokenize_mode: if mode_byte % 2 == 0 {
            TokenizeMode::Character
        } else {
            TokenizeMode::Whitespace
        },
        ..CorpusConfig::default()
    };
    let _ = parse_cases(body, &config);
});
