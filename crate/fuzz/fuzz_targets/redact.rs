#![no_main]

use libfuzzer_sys::fuzz_target;
use tutorlens_core::privacy::{redact_text, RedactionRuleSet};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let rules = RedactionRuleSet::default();
    let (once, _) = redact_text(text, &rules);
    let (twice, spans) = redact_text(&once, &rules);
    assert_eq!(once, twice);
    assert!(spans.is_empty());
});
