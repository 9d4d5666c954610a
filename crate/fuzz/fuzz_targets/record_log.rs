#![no_main]

use libfuzzer_sys::fuzz_target;
use tutorlens_core::store::log::{decode_log, encode_record, header};

fuzz_target!(|data: &[u8]| {
    let Ok(decoded) = decode_log(data) else { return };
    // Re-encoding the recovered prefix reproduces exactly the bytes it came from.
    let mut rebuilt = header().to_vec();
    for r in &decoded.records {
        rebuilt.extend(encode_record(r));
    }
    assert_eq!(&data[..rebuilt.len()], &rebuilt[..]);
});
