//! Transactional-memory correctness workbench.
//!
//! * [`history`]: actions, traces, histories, well-formedness, completions.
//! * [`relations`]: program/client/fence orders, happens-before, races.
//! * [`atomic`]: membership in the strongly atomic TM and its executable model.
//! * [`opacity`]: consistency, opacity graphs, graph search, serial witnesses.
//! * [`tl2`]: a small-step TL2 machine with fences, ghost state and invariants.
//! * [`harness`]: litmus programs, schedule exploration, built-in programs.

pub mod atomic;
pub mod harness;
pub mod history;
pub mod opacity;
pub mod relations;
pub mod tl2;
