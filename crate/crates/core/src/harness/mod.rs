//! Litmus programs, their execution over TL2 or the atomic TM, and
//! schedule exploration.

mod builtin;
mod exec;
mod explore;
mod expr;
mod program;

pub use builtin::{builtin, BUILTIN_NAMES};
pub use exec::{run, Choice, DivergenceKind, ExecConfig, ExecError, Execution, FinalState, RunResult, TmKind};
pub use explore::{explore, Dedup, Divergence, ExplorationReport, ExploreMode, Outcome, RacyHistory, ScheduleConfig};
pub use expr::{parse_expr, BinOp, EvalError, Expr, ParseError, Status, Val};
pub use program::{parse_litmus, LitmusProgram, ProgramError, Stmt};

#[cfg(test)]
mod tests;
