//! Runs the checked-in fuzz corpus through the same assertions as the fuzz
//! targets, so seeds stay meaningful without a fuzzing toolchain.

use std::fs;
use std::path::PathBuf;

use stmcheck::harness::{parse_expr, parse_litmus};
use stmcheck::history::{decode, decode_lenient, encode};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn decode_history_seeds() {
    let mut decoded = 0;
    for (name, bytes) in seeds("decode_history") {
        let trace = decode_lenient(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(decode_lenient(&encode(&trace)).unwrap(), trace, "{name}");
        decoded += usize::from(decode(&bytes).is_ok());
    }
    assert!(decoded >= 3);
}

#[test]
fn parse_litmus_seeds() {
    for (name, bytes) in seeds("parse_litmus") {
        if name.starts_with("reject_") {
            assert!(parse_litmus(&bytes).is_err(), "{name}");
            continue;
        }
        let program = parse_litmus(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = parse_litmus(program.to_json().as_bytes()).unwrap();
        assert_eq!(again.threads, program.threads, "{name}");
        assert_eq!(again.post, program.post, "{name}");
    }
}

#[test]
fn parse_expr_seeds() {
    for (name, bytes) in seeds("parse_expr") {
        let text = String::from_utf8(bytes).unwrap();
        let e = parse_expr(&text).unwrap_or_else(|err| panic!("{name}: {err}"));
        assert_eq!(parse_expr(&e.to_string()).unwrap(), e, "{name}");
    }
}
