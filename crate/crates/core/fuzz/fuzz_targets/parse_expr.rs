#![no_main]
use libfuzzer_sys::fuzz_target;
use stmcheck::harness::parse_expr;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(e) = parse_expr(text) {
        assert_eq!(parse_expr(&e.to_string()).expect("display output parses"), e);
    }
});
