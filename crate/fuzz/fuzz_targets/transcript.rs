#![no_main]

use chrono::TimeDelta;
use libfuzzer_sys::fuzz_target;
use tutorlens_core::ingest::{parse_event_line, parse_transcript, sessionize};

fuzz_target!(|data: &[u8]| {
    let Ok(parsed) = parse_transcript(data) else { return };
    if let Ok(text) = std::str::from_utf8(data) {
        // Streaming and line-at-a-time parses accept the same records.
        let accepted = text
            .split('\n')
            .filter(|l| !l.trim().is_empty())
            .filter(|l| parse_event_line(l).is_ok())
            .count();
        assert_eq!(parsed.events.len(), accepted);
    }
    let total = parsed.events.len();
    let groups = sessionize(parsed.events, TimeDelta::minutes(30));
    assert_eq!(groups.iter().map(Vec::len).sum::<usize>(), total);
    assert!(groups.iter().all(|g| !g.is_empty()));
});
