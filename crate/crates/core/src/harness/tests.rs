use std::sync::Arc;

use super::*;
use crate::atomic::atomic_member;
use crate::history::{ActionKind, RegisterId};

fn program(json: &str) -> LitmusProgram {
    parse_litmus(json.as_bytes()).unwrap()
}

fn exec(p: &LitmusProgram, tm: TmKind) -> Execution {
    Execution::new(Arc::new(p.clone()), ExecConfig::new(tm)).unwrap()
}

/// Steps thread `t` while it can move; returns the number of steps taken.
fn drive(e: &mut Execution, t: u32, limit: usize) -> usize {
    let mut n = 0;
    while n < limit && e.options().contains(&Choice::new(t)) {
        e.step(Choice::new(t)).unwrap();
        n += 1;
    }
    n
}

fn local(e: &Execution, thread: usize, name: &str) -> Val {
    e.final_state().locals[thread][name]
}

fn reg(e: &Execution, name: &str) -> i64 {
    e.registers()[&RegisterId::new(name)]
}

fn no_dedup() -> ScheduleConfig {
    ScheduleConfig { dedup: Dedup::Off, ..ScheduleConfig::default() }
}

const ONE_TXN: &str = r#"{
  "registers": {"x": 0, "y": 0},
  "threads": [
    [{"op": "atomic", "status": "s", "body": [{"op": "write", "reg": "x", "val": 1}]}],
    [{"op": "write", "reg": "y", "val": 2}]
  ],
  "post": "true"
}"#;

#[test]
fn publication_in_program_order() {
    let p = builtin("fig2").unwrap();
    let mut e = exec(&p, TmKind::Tl2);
    drive(&mut e, 1, usize::MAX);
    drive(&mut e, 2, usize::MAX);
    assert!(e.is_finished());
    assert_eq!(local(&e, 1, "l"), Val::Int(42));
    assert_eq!(local(&e, 1, "l2"), Val::Status(Status::Committed));
    assert_eq!(local(&e, 0, "l1"), Val::Status(Status::Committed));
    assert!(e.post_holds().unwrap());
}

#[test]
fn straight_line_program() {
    let p = program(
        r#"{
  "registers": {"x": 0},
  "threads": [[
    {"op": "write", "reg": "x", "val": 5},
    {"op": "read", "var": "a", "reg": "x"},
    {"op": "assign", "var": "b", "expr": "a * 2 + 1"}
  ]],
  "post": "b = 11 && x = 5"
}"#,
    );
    for tm in [TmKind::Tl2, TmKind::Atomic] {
        let mut e = exec(&p, tm);
        assert_eq!(drive(&mut e, 1, usize::MAX), 2);
        assert!(e.is_finished());
        assert_eq!(local(&e, 0, "b"), Val::Int(11));
        assert!(e.post_holds().unwrap());
        assert_eq!(e.history().len(), 4);
    }
}

#[test]
fn delayed_commit_schedule() {
    let p = builtin("fig1a_nofence").unwrap();
    let mut e = exec(&p, TmKind::Tl2);
    // begin (2), read the flag (4), buffer the write (1), then commit up to
    // passing validation: commit request, trylock, clock, lock test, version
    assert_eq!(drive(&mut e, 2, 12), 12);
    drive(&mut e, 1, usize::MAX);
    assert_eq!(reg(&e, "x"), 1);
    drive(&mut e, 2, usize::MAX);
    assert!(e.is_finished());
    assert_eq!(reg(&e, "x"), 42);
    assert_eq!(local(&e, 0, "l1"), Val::Status(Status::Committed));
    assert_eq!(local(&e, 1, "l2"), Val::Status(Status::Committed));
    assert!(!e.post_holds().unwrap());
}

#[test]
fn fence_blocks_the_delayed_commit() {
    let p = builtin("fig1a").unwrap();
    let mut e = exec(&p, TmKind::Tl2);
    drive(&mut e, 2, 12);
    drive(&mut e, 1, usize::MAX);
    // thread 1 is stuck in its fence until the transaction of thread 2 ends
    assert!(!e.is_finished());
    assert_eq!(reg(&e, "x"), 0);
    drive(&mut e, 2, usize::MAX);
    drive(&mut e, 1, usize::MAX);
    assert!(e.is_finished());
    assert_eq!(reg(&e, "x"), 1);
    assert!(e.post_holds().unwrap());
}

#[test]
fn transaction_step_count() {
    let p = program(ONE_TXN);
    let mut e = exec(&p, TmKind::Tl2);
    // begin 2, write 1, commit: request, trylock, clock, reg, ver, unlock,
    // two handler steps
    assert_eq!(drive(&mut e, 1, usize::MAX), 11);
    let mut e = exec(&p, TmKind::Atomic);
    assert_eq!(drive(&mut e, 1, usize::MAX), 1);
}

#[test]
fn hand_counted_schedules() {
    let single = program(r#"{"registers": {"x": 0}, "threads": [[{"op": "write", "reg": "x", "val": 1}]], "post": "true"}"#);
    for tm in [TmKind::Tl2, TmKind::Atomic] {
        assert_eq!(explore(&single, tm, &no_dedup()).unwrap().schedules_explored, 1);
    }

    // two writes per thread: 4 choose 2
    let two_by_two = program(
        r#"{"registers": {"x": 0, "y": 0}, "threads": [
  [{"op": "write", "reg": "x", "val": 1}, {"op": "write", "reg": "x", "val": 2}],
  [{"op": "write", "reg": "y", "val": 3}, {"op": "write", "reg": "y", "val": 4}]
], "post": "true"}"#,
    );
    assert_eq!(explore(&two_by_two, TmKind::Tl2, &no_dedup()).unwrap().schedules_explored, 6);
    assert_eq!(explore(&two_by_two, TmKind::Atomic, &no_dedup()).unwrap().schedules_explored, 6);

    let three = program(
        r#"{"registers": {"x": 0}, "threads": [
  [{"op": "write", "reg": "x", "val": 1}],
  [{"op": "write", "reg": "x", "val": 2}],
  [{"op": "write", "reg": "x", "val": 3}]
], "post": "true"}"#,
    );
    let r = explore(&three, TmKind::Atomic, &no_dedup()).unwrap();
    assert_eq!(r.schedules_explored, 6);
    let mut finals: Vec<i64> = r.outcomes.iter().map(|o| o.state.registers[&RegisterId::new("x")]).collect();
    finals.sort();
    assert_eq!(finals, vec![1, 1, 2, 2, 3, 3]);

    // 11 transaction steps and one write: 12 places for the write
    let p = program(ONE_TXN);
    assert_eq!(explore(&p, TmKind::Tl2, &no_dedup()).unwrap().schedules_explored, 12);
    // the block commits or aborts, before or after the write
    assert_eq!(explore(&p, TmKind::Atomic, &no_dedup()).unwrap().schedules_explored, 4);
    // plus a spurious abort at its single request
    let spurious = ScheduleConfig { spurious_aborts: true, ..no_dedup() };
    assert_eq!(explore(&p, TmKind::Atomic, &spurious).unwrap().schedules_explored, 6);
}

#[test]
fn dedup_keeps_outcomes_and_histories() {
    for (name, p) in [("fig3", builtin("fig3").unwrap()), ("one_txn", program(ONE_TXN))] {
        let full = explore(&p, TmKind::Tl2, &no_dedup()).unwrap();
        let states = explore(&p, TmKind::Tl2, &ScheduleConfig { dedup: Dedup::States, ..Default::default() }).unwrap();
        let hist = explore(&p, TmKind::Tl2, &ScheduleConfig { dedup: Dedup::Histories, ..Default::default() }).unwrap();
        let finals = |r: &ExplorationReport| {
            let mut v: Vec<String> = r.outcomes.iter().map(|o| serde_json::to_string(&o.state).unwrap()).collect();
            v.sort();
            v.dedup();
            v
        };
        assert_eq!(finals(&full), finals(&states), "{name}");
        assert_eq!(finals(&full), finals(&hist), "{name}");
        assert_eq!(full.histories.len(), hist.histories.len(), "{name}");
        assert!(states.schedules_explored <= hist.schedules_explored);
        assert!(hist.schedules_explored <= full.schedules_explored);
    }
}

#[test]
fn litmus_verdicts() {
    let tl2 = ScheduleConfig::default();
    let count = |name: &str, tm| explore(&builtin(name).unwrap(), tm, &tl2).unwrap();
    assert!(count("fig1a", TmKind::Tl2).violations.is_empty());
    assert!(!count("fig1a_nofence", TmKind::Tl2).violations.is_empty());
    assert!(count("fig1b", TmKind::Tl2).divergences.is_empty());
    assert!(!count("fig1b_nofence", TmKind::Tl2).divergences.is_empty());
    assert!(!count("fig3", TmKind::Tl2).violations.is_empty());
    let atomic3 = count("fig3", TmKind::Atomic);
    assert!(atomic3.violations.is_empty() && !atomic3.drf());
    for name in ["fig2", "fig6"] {
        assert!(count(name, TmKind::Tl2).violations.is_empty(), "{name}");
        assert!(count(name, TmKind::Atomic).drf(), "{name}");
    }
}

#[test]
fn atomic_histories_are_atomic() {
    let spurious = ScheduleConfig { spurious_aborts: true, ..Default::default() };
    for name in BUILTIN_NAMES {
        let r = explore(&builtin(name).unwrap(), TmKind::Atomic, &spurious).unwrap();
        assert!(r.ill_formed.is_empty(), "{name}");
        for h in &r.histories {
            assert!(atomic_member(h), "{name}");
        }
    }
}

#[test]
fn spurious_aborts_roll_back_locals() {
    let p = builtin("fig2").unwrap();
    let config = ExecConfig { spurious_aborts: true, ..ExecConfig::new(TmKind::Atomic) };
    // thread 1 first, then thread 2 aborts spuriously at its second request
    let schedule = [Choice::new(1), Choice { thread: 1, alt: 0 }, Choice { thread: 2, alt: 3 }];
    let r = run(&p, &config, &schedule).unwrap();
    assert_eq!(r.state.locals[1]["l"], Val::Int(0));
    assert_eq!(r.state.locals[1]["p"], Val::Int(0));
    assert_eq!(r.state.locals[1]["l2"], Val::Status(Status::Aborted));
    assert!(r.history.actions().iter().any(|a| a.kind == ActionKind::Aborted));
}

#[test]
fn replay_is_deterministic() {
    for tm in [TmKind::Tl2, TmKind::Atomic] {
        for name in ["fig1a", "fig1b_nofence", "fig6"] {
            let p = builtin(name).unwrap();
            let config = ScheduleConfig { loop_bound: 3, ..ScheduleConfig::random(7, 40) };
            let report = explore(&p, tm, &config).unwrap();
            let exec = ExecConfig { loop_bound: 3, ..ExecConfig::new(tm) };
            for o in &report.outcomes {
                let a = run(&p, &exec, &o.schedule).unwrap();
                let b = run(&p, &exec, &o.schedule).unwrap();
                assert_eq!(a.trace, b.trace);
                assert_eq!(a.state, o.state);
                assert_eq!(a.history, report.histories[o.history]);
            }
            for d in &report.divergences {
                assert_eq!(run(&p, &exec, &d.schedule).unwrap().divergence, Some(d.kind));
            }
        }
    }
}

#[test]
fn same_program_both_tms() {
    // only TM-originated actions differ: non-transactional ones agree
    let p = builtin("fig3").unwrap();
    let nontxn = |tm| {
        let mut e = exec(&p, tm);
        drive(&mut e, 2, usize::MAX);
        drive(&mut e, 1, usize::MAX);
        e.history().actions().iter().filter(|a| a.thread.0 == 2).cloned().collect::<Vec<_>>()
    };
    assert_eq!(nontxn(TmKind::Tl2).len(), 4);
    assert_eq!(
        nontxn(TmKind::Tl2).iter().map(|a| a.kind.clone()).collect::<Vec<_>>(),
        nontxn(TmKind::Atomic).iter().map(|a| a.kind.clone()).collect::<Vec<_>>()
    );
}

#[test]
fn loop_bound_and_step_limits() {
    let p = program(
        r#"{"registers": {"x": 0}, "threads": [[
  {"op": "read", "var": "a", "reg": "x"},
  {"op": "while", "cond": "a = 0", "body": [{"op": "read", "var": "a", "reg": "x"}]}
]], "post": "true"}"#,
    );
    let r = explore(&p, TmKind::Tl2, &ScheduleConfig { loop_bound: 4, ..Default::default() }).unwrap();
    assert!(r.outcomes.is_empty());
    assert_eq!(r.divergences.len(), 1);
    assert_eq!(r.divergences[0].kind, DivergenceKind::LoopBound { thread: 1 });
    let r = explore(&p, TmKind::Tl2, &ScheduleConfig { max_steps: 3, ..Default::default() }).unwrap();
    assert_eq!(r.divergences[0].kind, DivergenceKind::MaxSteps);
    let r = explore(&p, TmKind::Tl2, &ScheduleConfig { max_schedules: 0, ..Default::default() }).unwrap();
    assert!(r.bound_exceeded);
}

#[test]
fn report_json_lists_violations() {
    let r = explore(&builtin("fig1a_nofence").unwrap(), TmKind::Tl2, &ScheduleConfig::default()).unwrap();
    let j = r.to_json();
    assert_eq!(j["program"], "fig1a_nofence");
    assert_eq!(j["tm"], "tl2");
    let v = &j["violations"][0];
    assert!(v["schedule"].as_array().unwrap().len() > 10);
    assert!(v["history"].as_array().unwrap().iter().any(|a| a["kind"] == "txcommit"));
}
