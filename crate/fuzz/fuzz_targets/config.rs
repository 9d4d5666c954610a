#![no_main]

use libfuzzer_sys::fuzz_target;
use tutorlens_core::config::AppConfig;
use tutorlens_core::privacy::{RedactionRuleSet, RuleSetConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(raw) = std::str::from_utf8(data) else { return };
    let _ = AppConfig::parse(raw);
    if let Ok(cfg) = toml::from_str::<RuleSetConfig>(raw) {
        let _ = RedactionRuleSet::from_config(cfg);
    }
});
