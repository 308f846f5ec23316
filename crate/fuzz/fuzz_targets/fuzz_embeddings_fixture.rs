#![no_main]

use libfuzzer_sys::fuzz_target;
use mvcl::encoder::parse_embeddings_fixture;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_embeddings_fixture(text);
    }
});
