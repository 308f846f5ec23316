//! config.json deserialization plus validation: arbitrary values must be
//! rejected with errors, never panics.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mvcl::trainer::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = serde_json::from_str::<RunConfig>(text) {
        let _ = config.validate();
    }
});
