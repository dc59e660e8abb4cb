//! Line-delimited JSON encoding of traces, one action per line.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{well_formed, Action, ActionId, ActionKind, RegisterId, ThreadId, Trace, Value, WellFormednessReport};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireAction {
    id: u64,
    thread: u32,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    val: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cmd: Option<String>,
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: unknown kind {kind:?}")]
    UnknownKind { line: usize, kind: String },
    #[error("line {line}: duplicate id {id}")]
    DuplicateId { line: usize, id: u64 },
    #[error("trace is not well-formed: {} violation(s), first: rule {} at action {}",
        .0.violations.len(), .0.violations[0].rule, .0.violations[0].index)]
    IllFormed(WellFormednessReport),
}

fn to_wire(a: &Action) -> WireAction {
    let mut w = WireAction {
        id: a.id.0,
        thread: a.thread.0,
        kind: a.kind.name().to_string(),
        reg: None,
        val: None,
        cmd: None,
    };
    match &a.kind {
        ActionKind::Write { reg, val } => {
            w.reg = Some(reg.to_string());
            w.val = Some(*val);
        }
        ActionKind::Read { reg } => w.reg = Some(reg.to_string()),
        ActionKind::Ret { val } => w.val = Some(*val),
        ActionKind::Prim(cmd) => w.cmd = Some(cmd.clone()),
        _ => {}
    }
    w
}

fn from_wire(w: WireAction, line: usize) -> Result<Action, DecodeError> {
    let bad = |reason: &str| DecodeError::Malformed { line, reason: reason.to_string() };
    let WireAction { id, thread, kind, reg, val, cmd } = w;
    if thread == 0 {
        return Err(bad("thread ids start at 1"));
    }
    let needs = |want_reg: bool, want_val: bool, want_cmd: bool| -> Result<(), DecodeError> {
        for (present, wanted, field) in [
            (reg.is_some(), want_reg, "reg"),
            (val.is_some(), want_val, "val"),
            (cmd.is_some(), want_cmd, "cmd"),
        ] {
            if present && !wanted {
                return Err(bad(&format!("{kind} does not take {field}")));
            }
            if !present && wanted {
                return Err(bad(&format!("{kind} requires {field}")));
            }
        }
        Ok(())
    };
    let kind = match kind.as_str() {
        "txbegin" | "ok" | "txcommit" | "committed" | "aborted" | "retu" | "fbegin" | "fend" => {
            needs(false, false, false)?;
            match kind.as_str() {
                "txbegin" => ActionKind::TxBegin,
                "ok" => ActionKind::Ok,
                "txcommit" => ActionKind::TxCommit,
                "committed" => ActionKind::Committed,
                "aborted" => ActionKind::Aborted,
                "retu" => ActionKind::RetUnit,
                "fbegin" => ActionKind::FBegin,
                _ => ActionKind::FEnd,
            }
        }
        "write" => {
            needs(true, true, false)?;
            ActionKind::Write { reg: RegisterId::new(reg.as_deref().unwrap()), val: val.unwrap() }
        }
        "read" => {
            needs(true, false, false)?;
            ActionKind::Read { reg: RegisterId::new(reg.as_deref().unwrap()) }
        }
        "ret" => {
            needs(false, true, false)?;
            ActionKind::Ret { val: val.unwrap() }
        }
        "prim" => {
            needs(false, false, true)?;
            ActionKind::Prim(cmd.unwrap())
        }
        _ => return Err(DecodeError::UnknownKind { line, kind }),
    };
    Ok(Action { id: ActionId(id), thread: ThreadId(thread), kind })
}

/// Canonical bytes: one compact JSON object per line, each line ending in `\n`.
pub fn encode(trace: &Trace) -> Vec<u8> {
    let mut out = Vec::new();
    for a in &trace.actions {
        serde_json::to_writer(&mut out, &to_wire(a)).expect("wire actions always serialize");
        out.push(b'\n');
    }
    out
}

/// Schema checks only: field shapes, known kinds, unique ids.
pub fn decode_lenient(bytes: &[u8]) -> Result<Trace, DecodeError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| DecodeError::Malformed { line: 1, reason: e.to_string() })?;
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut actions = Vec::new();
    let mut seen = HashSet::new();
    if body.is_empty() {
        return Ok(Trace::default());
    }
    for (n, raw) in body.split('\n').enumerate() {
        let line = n + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            return Err(DecodeError::Malformed { line, reason: "empty line".into() });
        }
        let wire: WireAction = serde_json::from_str(raw)
            .map_err(|e| DecodeError::Malformed { line, reason: e.to_string() })?;
        let action = from_wire(wire, line)?;
        if !seen.insert(action.id) {
            return Err(DecodeError::DuplicateId { line, id: action.id.0 });
        }
        actions.push(action);
    }
    Ok(Trace::new(actions))
}

/// Schema checks followed by the well-formedness conditions.
pub fn decode(bytes: &[u8]) -> Result<Trace, DecodeError> {
    let trace = decode_lenient(bytes)?;
    let report = well_formed(&trace);
    if !report.is_ok() {
        return Err(DecodeError::IllFormed(report));
    }
    Ok(trace)
}
