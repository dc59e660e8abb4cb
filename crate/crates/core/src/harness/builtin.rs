//! Built-in litmus programs: privatization with and without a fence (the
//! delayed-commit and doomed-transaction shapes), publication, a racy
//! program, and privatization by agreement through a ready flag.
//!
//! Flags are plain registers starting at 0. The private flag of the
//! privatization programs is 0 while shared and 10 once privatized. In the
//! publication program it is 0 while private and 2 once published. The
//! ready flag is 0 until it is set to 7.

use super::program::{parse_litmus, LitmusProgram, ProgramError};

pub const BUILTIN_NAMES: [&str; 7] = ["fig1a", "fig1a_nofence", "fig1b", "fig1b_nofence", "fig2", "fig3", "fig6"];

fn privatize(fenced: bool, tail: &str, t2: &str, post: &str) -> String {
    let fence = if fenced { r#"{"op": "fence"},"# } else { "" };
    format!(
        r#"{{
  "registers": {{"x_is_private": 0, "x": 0}},
  "threads": [
    [{{"op": "atomic", "status": "l1", "body": [{{"op": "write", "reg": "x_is_private", "val": 10}}]}},
     {fence}
     {tail}],
    [{{"op": "atomic", "status": "l2", "body": [
       {{"op": "read", "var": "p", "reg": "x_is_private"}},
       {{"op": "if", "cond": "p = 0", "then": [{t2}]}}]}}]
  ],
  "post": "{post}"
}}"#
    )
}

fn source(name: &str) -> Option<String> {
    let fig1a = |fenced| {
        privatize(
            fenced,
            r#"{"op": "write", "reg": "x", "val": 1}"#,
            r#"{"op": "write", "reg": "x", "val": 42}"#,
            "l1 = committed => x = 1",
        )
    };
    let fig1b = |fenced| {
        privatize(
            fenced,
            r#"{"op": "write", "reg": "x", "val": 42}"#,
            r#"{"op": "read", "var": "l", "reg": "x"},
               {"op": "while", "cond": "l = 42", "body": [{"op": "read", "var": "l", "reg": "x"}]}"#,
            "true",
        )
    };
    Some(match name {
        "fig1a" => fig1a(true),
        "fig1a_nofence" => fig1a(false),
        "fig1b" => fig1b(true),
        "fig1b_nofence" => fig1b(false),
        "fig2" => r#"{
  "registers": {"x_is_private": 0, "x": 0},
  "threads": [
    [{"op": "write", "reg": "x", "val": 42},
     {"op": "atomic", "status": "l1", "body": [{"op": "write", "reg": "x_is_private", "val": 2}]}],
    [{"op": "atomic", "status": "l2", "body": [
       {"op": "read", "var": "p", "reg": "x_is_private"},
       {"op": "if", "cond": "p = 2", "then": [{"op": "read", "var": "l", "reg": "x"}]}]}]
  ],
  "post": "l2 = committed && l != 0 => l = 42"
}"#
        .to_string(),
        "fig3" => r#"{
  "registers": {"x": 0, "y": 0},
  "threads": [
    [{"op": "atomic", "status": "l", "body": [
       {"op": "write", "reg": "x", "val": 1},
       {"op": "write", "reg": "y", "val": 2}]}],
    [{"op": "read", "var": "l1", "reg": "x"},
     {"op": "read", "var": "l2", "reg": "y"}]
  ],
  "post": "x = l1 => y = l2"
}"#
        .to_string(),
        "fig6" => r#"{
  "registers": {"x_is_ready": 0, "x": 0},
  "threads": [
    [{"op": "atomic", "status": "l1", "body": [{"op": "write", "reg": "x", "val": 42}]},
     {"op": "write", "reg": "x_is_ready", "val": 7}],
    [{"op": "read", "var": "l2", "reg": "x_is_ready"},
     {"op": "while", "cond": "!l2", "body": [{"op": "read", "var": "l2", "reg": "x_is_ready"}]},
     {"op": "read", "var": "l3", "reg": "x"}]
  ],
  "post": "l1 = committed => l3 = 42"
}"#
        .to_string(),
        _ => return None,
    })
}

/// Looks up a built-in program by name.
pub fn builtin(name: &str) -> Result<LitmusProgram, ProgramError> {
    let src = source(name).ok_or_else(|| ProgramError::UnknownBuiltin(name.to_string()))?;
    let mut p = parse_litmus(src.as_bytes()).expect("built-in programs are valid");
    p.name = name.to_string();
    Ok(p)
}
