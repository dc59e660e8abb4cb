#![no_main]
use libfuzzer_sys::fuzz_target;
use stmcheck::history::{decode, decode_lenient, encode, well_formed};
use stmcheck::relations::races;

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = decode_lenient(data) {
        let bytes = encode(&trace);
        assert_eq!(decode_lenient(&bytes).unwrap(), trace);
        let _ = well_formed(&trace);
    }
    if let Ok(trace) = decode(data) {
        let history = trace.history();
        let _ = races(&history);
    }
});
