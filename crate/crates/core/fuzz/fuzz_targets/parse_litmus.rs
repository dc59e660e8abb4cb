#![no_main]
use libfuzzer_sys::fuzz_target;
use stmcheck::harness::parse_litmus;

fuzz_target!(|data: &[u8]| {
    if let Ok(program) = parse_litmus(data) {
        let again = parse_litmus(program.to_json().as_bytes()).expect("emitted programs parse");
        assert_eq!(again.threads, program.threads);
        assert_eq!(again.post, program.post);
    }
});
