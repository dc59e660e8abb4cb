//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr, visible without `--nocapture`.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::sync::OnceLock;

use stmcheck::atomic::atomic_member;
use stmcheck::harness::{builtin, explore, DivergenceKind, ExplorationReport, ScheduleConfig, Status, TmKind, Val, BUILTIN_NAMES};
use stmcheck::history::build::{h0, h_bad};
use stmcheck::history::{well_formed, ActionKind, History, RegisterId, ThreadId};
use stmcheck::opacity::{
    check_strong_opacity, decomposed_check, is_acyclic, opacity_relation, NotOpaque, OpacityVerdict,
};
use stmcheck::relations::is_drf;
use stmcheck::tl2::client::{random_run, ClientPlan};
use stmcheck::tl2::{Faults, Tl2Config};

use common::{all_graphs, has_fence, oracle_strongly_opaque, random_history};

fn criterion(n: u32, name: &str, body: impl FnOnce() -> String) {
    let result = catch_unwind(AssertUnwindSafe(body));
    let line = match &result {
        Ok(detail) => format!("acceptance {n} {name}: PASS ({detail})\n"),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            format!("acceptance {n} {name}: FAIL ({msg})\n")
        }
    };
    let _ = std::io::stderr().write_all(line.as_bytes());
    if let Err(e) = result {
        resume_unwind(e);
    }
}

fn explore_builtin(name: &str, tm: TmKind, config: &ScheduleConfig) -> ExplorationReport {
    let report = explore(&builtin(name).unwrap(), tm, config).unwrap();
    assert!(!report.bound_exceeded, "{name}: bound exceeded");
    report
}

fn local<'a>(state: &'a stmcheck::harness::FinalState, thread: usize, name: &str) -> &'a Val {
    &state.locals[thread][name]
}

fn committed() -> Val {
    Val::Status(Status::Committed)
}

fn reg(name: &str) -> RegisterId {
    RegisterId::new(name)
}

/// Exhaustive ghost-mode TL2 exploration of every built-in program.
fn tl2_corpus() -> &'static Vec<ExplorationReport> {
    static CORPUS: OnceLock<Vec<ExplorationReport>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        BUILTIN_NAMES
            .iter()
            .map(|name| {
                let config = ScheduleConfig { ghost: true, loop_bound: 3, ..ScheduleConfig::default() };
                explore_builtin(name, TmKind::Tl2, &config)
            })
            .collect()
    })
}

fn drf_corpus() -> Vec<&'static History> {
    tl2_corpus().iter().flat_map(|r| r.drf_histories()).collect()
}

#[test]
fn privatization_with_fence() {
    criterion(1, "privatization with fence", || {
        let fenced = explore_builtin("fig1a", TmKind::Tl2, &ScheduleConfig::default());
        assert!(fenced.violations.is_empty(), "fenced program violated its postcondition");
        let unfenced = explore_builtin("fig1a_nofence", TmKind::Tl2, &ScheduleConfig::default());
        let delayed = unfenced
            .violating()
            .filter(|o| {
                let h = unfenced.histories[o.history].actions();
                let nu = h.iter().position(|a| a.thread == ThreadId(1) && a.kind == ActionKind::Write { reg: reg("x"), val: 1 });
                let commit2 = h.iter().position(|a| a.thread == ThreadId(2) && a.kind == ActionKind::TxCommit);
                o.state.registers[&reg("x")] == 42
                    && *local(&o.state, 0, "l1") == committed()
                    && *local(&o.state, 1, "l2") == committed()
                    && matches!((commit2, nu), (Some(c), Some(n)) if c < n)
            })
            .count();
        assert!(delayed >= 1, "no delayed-commit violation among {}", unfenced.violations.len());
        format!(
            "{} fenced schedules clean; {} of {} unfenced violations are delayed commits",
            fenced.schedules_explored,
            delayed,
            unfenced.violations.len()
        )
    });
}

#[test]
fn doomed_transaction() {
    criterion(2, "doomed transaction", || {
        let unfenced = explore_builtin("fig1b_nofence", TmKind::Tl2, &ScheduleConfig::default());
        let doomed = unfenced
            .divergences
            .iter()
            .filter(|d| d.kind == DivergenceKind::LoopBound { thread: 2 })
            .filter(|d| {
                unfenced.histories[d.history]
                    .actions()
                    .iter()
                    .any(|a| a.thread == ThreadId(2) && a.kind == ActionKind::Ret { val: 42 })
            })
            .count();
        assert!(doomed >= 1, "no divergence of the doomed reader");
        let fenced = explore_builtin("fig1b", TmKind::Tl2, &ScheduleConfig::default());
        assert!(fenced.divergences.is_empty(), "fenced program diverged");
        format!("{doomed} unfenced divergences at the loop bound, {} fenced schedules converge", fenced.schedules_explored)
    });
}

#[test]
fn publication_and_agreement() {
    criterion(3, "publication and privatization by agreement", || {
        let mut detail = Vec::new();
        for name in ["fig2", "fig6"] {
            let tl2 = explore_builtin(name, TmKind::Tl2, &ScheduleConfig::default());
            assert!(tl2.violations.is_empty(), "{name} violated under TL2");
            let atomic = explore_builtin(name, TmKind::Atomic, &ScheduleConfig::default());
            assert!(atomic.drf(), "{name} racy under the atomic TM");
            assert!(atomic.violations.is_empty(), "{name} violated under the atomic TM");
            detail.push(format!("{name}: {} TL2 schedules, {} atomic histories DRF", tl2.schedules_explored, atomic.histories.len()));
        }
        detail.join("; ")
    });
}

#[test]
fn racy_program() {
    criterion(4, "racy program", || {
        let atomic = explore_builtin("fig3", TmKind::Atomic, &ScheduleConfig::default());
        assert!(atomic.violations.is_empty(), "atomic TM violated the postcondition");
        assert!(!atomic.drf(), "no race reported");
        let tl2 = explore_builtin("fig3", TmKind::Tl2, &ScheduleConfig::default());
        let torn = tl2
            .violating()
            .filter(|o| *local(&o.state, 1, "l1") == Val::Int(1) && *local(&o.state, 1, "l2") == Val::Int(0))
            .count();
        assert!(torn >= 1, "no schedule reads between the two write-backs");
        format!("{} atomic schedules pass, {} racy histories, {torn} torn TL2 reads", atomic.schedules_explored, atomic.racy.len())
    });
}

#[test]
fn strong_opacity_soundness() {
    criterion(5, "strong-opacity soundness", || {
        let corpus = drf_corpus();
        assert!(corpus.len() >= 500, "only {} DRF histories", corpus.len());
        for h in &corpus {
            match check_strong_opacity(h).unwrap() {
                OpacityVerdict::StronglyOpaque { witness, races, .. } => {
                    assert!(races.is_empty());
                    assert!(atomic_member(&witness.serial), "witness not atomic");
                    assert!(opacity_relation(h, &witness.serial).unwrap(), "witness breaks hb");
                    assert!(well_formed(&witness.serial.to_trace()).is_ok(), "witness ill-formed");
                }
                other => panic!("DRF TL2 history classified {}", other.label()),
            }
        }
        let racy: usize = tl2_corpus().iter().map(|r| r.racy.len()).sum();
        format!("{} DRF TL2 histories strongly opaque, {racy} racy excluded", corpus.len())
    });
}

#[test]
fn oracle_equivalence() {
    criterion(6, "oracle equivalence", || {
        let (mut compared, mut opaque, mut fenced, mut racy, mut seed) = (0, 0, 0, 0, 0u64);
        while compared < 200 || opaque < 30 || compared - opaque < 30 {
            seed += 1;
            assert!(seed < 50_000, "generator too lopsided: {opaque} of {compared} opaque");
            let Some(h) = random_history(seed, 10) else { continue };
            let verdict = check_strong_opacity(&h).unwrap();
            let expected = match &verdict {
                OpacityVerdict::Racy(races) => {
                    assert!(!races.is_empty());
                    racy += 1;
                    continue;
                }
                OpacityVerdict::StronglyOpaque { .. } => true,
                OpacityVerdict::NotOpaque(_) => false,
            };
            assert_eq!(oracle_strongly_opaque(&h), expected, "disagreement on seed {seed}: {h:?}");
            compared += 1;
            opaque += usize::from(expected);
            fenced += usize::from(has_fence(&h));
        }
        assert!(opaque >= 30 && compared - opaque >= 30, "corpus not mixed: {opaque} of {compared} opaque");
        assert!(fenced >= 30, "only {fenced} fenced histories");
        assert!(check_strong_opacity(&h0()).unwrap().is_strongly_opaque());
        assert!(matches!(
            check_strong_opacity(&h_bad()).unwrap(),
            OpacityVerdict::NotOpaque(NotOpaque::NoAcyclicGraph { .. })
        ));
        format!("{compared} histories agree ({opaque} opaque, {fenced} fenced), {racy} racy skipped; h0 opaque, h_bad not")
    });
}

#[test]
fn invariants_executed() {
    criterion(7, "TL2 invariants", || {
        let mut litmus_steps = 0;
        for r in tl2_corpus() {
            assert!(r.invariant_violations.is_empty(), "{}: {:?}", r.program, r.invariant_violations[0]);
            litmus_steps += r.schedules_explored;
        }
        let registers: Vec<RegisterId> = ["a", "b", "c", "d"].into_iter().map(reg).collect();
        let mut clients = 0;
        for seed in 0..200u64 {
            let plan = ClientPlan {
                blocks_per_thread: 3,
                registers: registers[..1 + (seed % 4) as usize].to_vec(),
                max_steps: Some(60),
                ..ClientPlan::default()
            };
            let m = random_run(Tl2Config::new(1 + (seed % 3) as u32).with_ghost(), &plan, seed);
            assert!(m.steps() <= 60);
            assert!(m.violations().is_empty(), "seed {seed}: {:?}", m.violations()[0]);
            assert!(well_formed(&m.trace()).is_ok());
            clients += 1;
        }
        let faults = [
            ("INV.7(b)", Faults { skip_clock_increment: true, ..Faults::default() }),
            ("INV.8(e)", Faults { skip_unlock: true, ..Faults::default() }),
            ("WF", Faults { reorder_handler: true, ..Faults::default() }),
        ];
        for (clause, fault) in faults {
            let plan = ClientPlan { txn_percent: 70, ..ClientPlan::default() };
            let caught = (0..200u64).any(|seed| {
                let m = random_run(Tl2Config { faults: fault, ..Tl2Config::new(3).with_ghost() }, &plan, seed);
                m.violations().first().is_some_and(|v| v.clause == clause)
            });
            assert!(caught, "fault {fault:?} never reported {clause}");
        }
        format!("{litmus_steps} ghost litmus schedules and {clients} random clients clean; 3 faults caught")
    });
}

#[test]
fn well_formedness_gate() {
    criterion(8, "well-formedness gate", || {
        let spurious = ScheduleConfig { spurious_aborts: true, loop_bound: 3, ..ScheduleConfig::default() };
        let mut reports: Vec<&ExplorationReport> = tl2_corpus().iter().collect();
        let atomic: Vec<ExplorationReport> =
            BUILTIN_NAMES.iter().map(|n| explore_builtin(n, TmKind::Atomic, &spurious)).collect();
        reports.extend(&atomic);
        let (mut leaves, mut fenced) = (0, 0);
        for r in reports {
            assert!(r.ill_formed.is_empty(), "{}: {:?}", r.program, r.ill_formed[0]);
            leaves += r.schedules_explored;
            fenced += r.histories.iter().filter(|h| has_fence(h)).count();
        }
        assert!(fenced > 0);
        format!("{leaves} traces well-formed, {fenced} distinct fenced histories")
    });
}

#[test]
fn decomposed_check_agreement() {
    criterion(9, "decomposed acyclicity check", || {
        let mut histories: Vec<History> = drf_corpus().into_iter().cloned().collect();
        histories.extend((1..=2000).filter_map(|s| random_history(s, 10)).filter(|h| is_drf(h).unwrap()));
        let (mut graphs, mut passing, mut cyclic) = (0, 0, 0);
        for h in &histories {
            for g in all_graphs(h, 500) {
                let d = decomposed_check(h, &g).unwrap();
                let acyclic = is_acyclic(&g);
                if d.passes() {
                    assert!(acyclic, "decomposed check passes on a cyclic graph of {h:?}");
                    passing += 1;
                }
                cyclic += usize::from(!acyclic);
                graphs += 1;
            }
        }
        assert!(passing > 0 && cyclic > 0);
        format!("{graphs} graphs of {} DRF histories: {passing} pass the split check, all acyclic; {cyclic} cyclic", histories.len())
    });
}
