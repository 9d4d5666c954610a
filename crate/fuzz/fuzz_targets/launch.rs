#![no_main]

use chrono::{TimeZone, Utc};
use libfuzzer_sys::fuzz_target;
use tutorlens_service::auth::{parse_launch, verify_launch, verify_token};

const KEY: &[u8] = b"fuzz-launch-key";

fuzz_target!(|data: &[u8]| {
    let now = Utc.with_ymd_and_hms(2024, 10, 1, 12, 0, 0).unwrap();
    if let Ok(payload) = parse_launch(data) {
        let _ = verify_launch(KEY, &payload, now);
    }
    if let Ok(token) = std::str::from_utf8(data) {
        // Nothing the fuzzer builds can carry a valid tag for a key it never saw.
        assert!(verify_token(KEY, token, now).is_err());
    }
});
