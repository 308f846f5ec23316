#![no_main]

use libfuzzer_sys::fuzz_target;
use mvcl::corpus::parse_triples;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_triples(text);
    }
});
