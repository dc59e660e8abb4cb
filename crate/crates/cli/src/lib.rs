//! Command-line front end: history checks, litmus exploration and witness
//! extraction. Reports go to stdout as JSON, a one-line summary to stderr.
//!
//! Exit codes: 0 when every check passes, 1 when a violation, race,
//! non-opaque verdict, ill-formed trace or invariant failure is found, 2 for
//! usage errors, unreadable input and exceeded exploration bounds.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};

use stmcheck::atomic::{atomic_member, atomic_witness};
use stmcheck::harness::{builtin, explore, Dedup, parse_litmus, ExploreMode, LitmusProgram, ScheduleConfig, TmKind, BUILTIN_NAMES};
use stmcheck::history::{decode, decode_lenient, encode, well_formed, DecodeError, History};
use stmcheck::opacity::check_strong_opacity;
use stmcheck::relations::races;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FOUND: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "stmcheck", version, about = "Transactional-memory history checker and litmus explorer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a JSONL history; with no flags every check runs.
    Check {
        #[arg(long)]
        drf: bool,
        #[arg(long)]
        opacity: bool,
        #[arg(long)]
        atomic: bool,
        history: PathBuf,
    },
    /// Explore a built-in or JSON litmus program.
    Litmus {
        /// Built-in name or path to a program file.
        program: String,
        #[arg(long, value_enum)]
        tm: Tm,
        #[arg(long, value_enum, default_value = "exhaustive")]
        explore: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Schedules sampled in random mode.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        loop_bound: Option<u32>,
        /// Schedules explored before giving up.
        #[arg(long)]
        max_schedules: Option<u64>,
        /// Track ghost state and check the TL2 invariants after every step.
        #[arg(long)]
        ghost: bool,
        /// Let atomic-TM transactions abort at any request.
        #[arg(long)]
        spurious_aborts: bool,
        /// Which revisited configurations exhaustive mode skips.
        #[arg(long, value_enum, default_value = "histories")]
        dedup: DedupArg,
    },
    /// Write a serial witness of a strongly opaque history, with the index
    /// map in `<out>.theta.json`.
    Witness {
        history: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Tm {
    Tl2,
    Atomic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DedupArg {
    Off,
    Histories,
    States,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Exhaustive,
    Random,
}

struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl ToString) -> Failure {
    Failure { code: EXIT_USAGE, message: message.to_string() }
}

/// Parses `argv` (program name first) and runs the command.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
        }
    };
    let result = match cli.command {
        Command::Check { drf, opacity, atomic, history } => {
            let all = !(drf || opacity || atomic);
            check(&history, drf || all, opacity || all, atomic || all)
        }
        Command::Litmus { program, tm, explore, seed, trials, max_steps, loop_bound, max_schedules, ghost, spurious_aborts, dedup } => {
            let mut config = match explore {
                Mode::Exhaustive => ScheduleConfig::default(),
                Mode::Random => ScheduleConfig::random(seed, trials),
            };
            config.max_steps = max_steps.unwrap_or(config.max_steps);
            config.loop_bound = loop_bound.unwrap_or(config.loop_bound);
            config.max_schedules = max_schedules.unwrap_or(config.max_schedules);
            config.ghost = ghost;
            config.spurious_aborts = spurious_aborts;
            config.dedup = match dedup {
                DedupArg::Off => Dedup::Off,
                DedupArg::Histories => Dedup::Histories,
                DedupArg::States => Dedup::States,
            };
            let tm = match tm {
                Tm::Tl2 => TmKind::Tl2,
                Tm::Atomic => TmKind::Atomic,
            };
            litmus(&program, tm, &config)
        }
        Command::Witness { history, out } => witness(&history, &out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn emit(report: &Json) {
    println!("{}", serde_json::to_string_pretty(report).expect("reports serialize"));
}

/// Reads a history; a trace that parses but is not well-formed is reported
/// as a finding rather than a usage error.
fn load_history(path: &Path) -> Result<Result<History, Json>, Failure> {
    let bytes = fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    match decode(&bytes) {
        Ok(trace) => Ok(Ok(trace.history())),
        Err(DecodeError::IllFormed(_)) => {
            let trace = decode_lenient(&bytes).map_err(usage)?;
            let report = well_formed(&trace);
            let violations: Vec<Json> = report
                .violations
                .iter()
                .map(|v| json!({"rule": v.rule, "index": v.index, "message": v.message}))
                .collect();
            Ok(Err(json!({"file": path.display().to_string(), "well_formed": false, "violations": violations})))
        }
        Err(e) => Err(usage(format!("{}: {e}", path.display()))),
    }
}

fn check(path: &Path, drf: bool, opacity: bool, atomic: bool) -> Result<i32, Failure> {
    let history = match load_history(path)? {
        Ok(h) => h,
        Err(report) => {
            emit(&report);
            eprintln!("{}: not well-formed", path.display());
            return Ok(EXIT_FOUND);
        }
    };
    let mut report = json!({"file": path.display().to_string(), "well_formed": true, "actions": history.len()});
    let mut failed = Vec::new();
    if drf {
        let found = races(&history).map_err(usage)?;
        if !found.is_empty() {
            failed.push(format!("{} race(s)", found.len()));
        }
        report["drf"] = json!({"drf": found.is_empty(), "races": found});
    }
    if atomic {
        let member = atomic_member(&history);
        if !member {
            failed.push("not atomic".to_string());
        }
        let completion = atomic_witness(&history).map_err(usage)?;
        report["atomic"] = json!({"member": member, "completion": completion});
    }
    if opacity {
        let verdict = check_strong_opacity(&history).map_err(usage)?;
        if !verdict.is_strongly_opaque() {
            failed.push(verdict.label().replace('_', " "));
        }
        report["opacity"] = verdict.to_json();
    }
    report["pass"] = json!(failed.is_empty());
    emit(&report);
    if failed.is_empty() {
        eprintln!("{}: all checks pass", path.display());
        Ok(EXIT_PASS)
    } else {
        eprintln!("{}: {}", path.display(), failed.join(", "));
        Ok(EXIT_FOUND)
    }
}

fn load_program(source: &str) -> Result<LitmusProgram, Failure> {
    if BUILTIN_NAMES.contains(&source) {
        return builtin(source).map_err(usage);
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(usage(format!("{source}: neither a built-in program ({}) nor a file", BUILTIN_NAMES.join(", "))));
    }
    let bytes = fs::read(path).map_err(|e| usage(format!("{source}: {e}")))?;
    let mut program = parse_litmus(&bytes).map_err(|e| usage(format!("{source}: {e}")))?;
    if program.name.is_empty() {
        program.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(program)
}

fn litmus(source: &str, tm: TmKind, config: &ScheduleConfig) -> Result<i32, Failure> {
    let program = load_program(source)?;
    let report = explore(&program, tm, config).map_err(usage)?;
    let mut json = report.to_json();
    json["explore"] = json!(config.mode);
    emit(&json);
    let mode = match config.mode {
        ExploreMode::Exhaustive => "exhaustive".to_string(),
        ExploreMode::Random { seed, trials } => format!("random seed {seed}, {trials} trials"),
    };
    eprintln!(
        "{} on {:?} ({mode}): {} schedules, {} violations, {} divergences, {} racy histories, {} ill-formed, {} invariant failures{}",
        program.name,
        tm,
        report.schedules_explored,
        report.violations.len(),
        report.divergences.len(),
        report.racy.len(),
        report.ill_formed.len(),
        report.invariant_violations.len(),
        if report.bound_exceeded { ", bound exceeded" } else { "" },
    );
    if report.bound_exceeded {
        return Ok(EXIT_USAGE);
    }
    let clean = report.violations.is_empty()
        && report.racy.is_empty()
        && report.ill_formed.is_empty()
        && report.invariant_violations.is_empty();
    Ok(if clean { EXIT_PASS } else { EXIT_FOUND })
}

fn theta_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".theta.json");
    PathBuf::from(name)
}

fn witness(path: &Path, out: &Path) -> Result<i32, Failure> {
    let history = match load_history(path)? {
        Ok(h) => h,
        Err(report) => {
            emit(&report);
            eprintln!("{}: not well-formed", path.display());
            return Ok(EXIT_FOUND);
        }
    };
    let verdict = check_strong_opacity(&history).map_err(usage)?;
    let Some(w) = verdict.witness() else {
        emit(&verdict.to_json());
        eprintln!("{}: {}, no witness", path.display(), verdict.label().replace('_', " "));
        return Ok(EXIT_FOUND);
    };
    let theta = theta_path(out);
    fs::write(out, encode(&w.serial.to_trace())).map_err(|e| usage(format!("{}: {e}", out.display())))?;
    let pairs = serde_json::to_string(&w.theta_pairs()).expect("index pairs serialize");
    fs::write(&theta, pairs + "\n").map_err(|e| usage(format!("{}: {e}", theta.display())))?;
    emit(&json!({
        "file": path.display().to_string(),
        "witness": out.display().to_string(),
        "theta": theta.display().to_string(),
        "actions": w.serial.len(),
    }));
    eprintln!("{}: witness written to {}", path.display(), out.display());
    Ok(EXIT_PASS)
}
