#![no_main]

use libfuzzer_sys::fuzz_target;
use tutorlens_core::classify::{classify_prompt, parse_taxonomy};

fuzz_target!(|data: &[u8]| {
    let Ok(raw) = std::str::from_utf8(data) else { return };
    if let Ok(taxonomy) = parse_taxonomy(raw) {
        // Any taxonomy that loads must label every prompt with one of its own types.
        let label = classify_prompt(raw, &taxonomy);
        assert!(taxonomy.fine_types.iter().any(|t| t.fine_id == label.fine_id));
    }
});
