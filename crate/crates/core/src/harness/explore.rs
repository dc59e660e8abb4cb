//! Exhaustive and random schedule exploration.
//!
//! Exhaustive mode is a depth-first search over every enabled choice. With
//! deduplication on, a configuration whose fingerprint was already visited
//! is not expanded again: [`Dedup::States`] merges configurations that agree
//! on machine and thread state, which preserves every reachable final state
//! and divergence; [`Dedup::Histories`] also requires equal histories, which
//! additionally preserves every reachable history.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value as Json};

use super::exec::{Choice, DivergenceKind, ExecConfig, ExecError, Execution, FinalState, TmKind};
use super::program::LitmusProgram;
use crate::history::{encode, well_formed, History};
use crate::relations::{races, Race};
use crate::tl2::{Faults, InvariantViolation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ExploreMode {
    Exhaustive,
    Random { seed: u64, trials: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Dedup {
    Off,
    Histories,
    States,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleConfig {
    pub mode: ExploreMode,
    pub max_steps: usize,
    pub loop_bound: u32,
    pub spurious_aborts: bool,
    /// Leaves visited before giving up with `bound_exceeded`.
    pub max_schedules: u64,
    /// Ignored in random mode.
    pub dedup: Dedup,
    pub ghost: bool,
    pub faults: Faults,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            mode: ExploreMode::Exhaustive,
            max_steps: 400,
            loop_bound: 16,
            spurious_aborts: false,
            max_schedules: 5_000_000,
            dedup: Dedup::Histories,
            ghost: false,
            faults: Faults::default(),
        }
    }
}

impl ScheduleConfig {
    pub fn random(seed: u64, trials: usize) -> Self {
        ScheduleConfig { mode: ExploreMode::Random { seed, trials }, ..Self::default() }
    }

    fn exec(&self, tm: TmKind) -> ExecConfig {
        ExecConfig {
            tm,
            loop_bound: self.loop_bound,
            max_steps: self.max_steps,
            spurious_aborts: self.spurious_aborts,
            ghost: self.ghost,
            faults: self.faults,
        }
    }

    fn effective_dedup(&self) -> Dedup {
        match self.mode {
            ExploreMode::Random { .. } => Dedup::Off,
            ExploreMode::Exhaustive => self.dedup,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Outcome {
    pub id: u64,
    pub schedule: Vec<Choice>,
    pub state: FinalState,
    pub post: bool,
    /// Index into [`ExplorationReport::histories`].
    pub history: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub id: u64,
    pub schedule: Vec<Choice>,
    pub kind: DivergenceKind,
    pub history: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RacyHistory {
    pub history: usize,
    pub races: Vec<Race>,
}

#[derive(Debug, Clone, Default)]
pub struct ExplorationReport {
    pub program: String,
    pub tm: Option<TmKind>,
    pub schedules_explored: u64,
    /// Configurations skipped because an equal one was already expanded.
    pub pruned: u64,
    pub outcomes: Vec<Outcome>,
    /// Ids of outcomes whose postcondition is false.
    pub violations: Vec<u64>,
    pub divergences: Vec<Divergence>,
    /// Distinct histories of all leaves, outcomes and divergences alike.
    pub histories: Vec<History>,
    pub racy: Vec<RacyHistory>,
    /// Leaves whose trace is not well-formed, with the first complaint.
    pub ill_formed: Vec<(u64, String)>,
    pub invariant_violations: Vec<(u64, InvariantViolation)>,
    pub bound_exceeded: bool,
}

impl ExplorationReport {
    /// No races in any recorded history.
    pub fn drf(&self) -> bool {
        self.racy.is_empty()
    }

    pub fn violating(&self) -> impl Iterator<Item = &Outcome> {
        self.outcomes.iter().filter(|o| !o.post)
    }

    /// Histories that are free of races.
    pub fn drf_histories(&self) -> Vec<&History> {
        let racy: HashSet<usize> = self.racy.iter().map(|r| r.history).collect();
        (0..self.histories.len()).filter(|i| !racy.contains(i)).map(|i| &self.histories[i]).collect()
    }

    fn history_json(&self, i: usize) -> Json {
        let text = String::from_utf8(encode(&self.histories[i].to_trace())).expect("codec emits UTF-8");
        Json::Array(text.lines().map(|l| serde_json::from_str(l).expect("codec emits JSON")).collect())
    }

    /// Summary plus dumps of the first few violating, diverging and racy
    /// runs, each with its schedule and history.
    pub fn to_json(&self) -> Json {
        let violations: Vec<Json> = self
            .violating()
            .take(DUMP_LIMIT)
            .map(|o| json!({"id": o.id, "schedule": o.schedule, "state": o.state, "history": self.history_json(o.history)}))
            .collect();
        let divergences: Vec<Json> = self
            .divergences
            .iter()
            .take(DUMP_LIMIT)
            .map(|d| json!({"id": d.id, "schedule": d.schedule, "kind": d.kind, "history": self.history_json(d.history)}))
            .collect();
        let racy: Vec<Json> = self
            .racy
            .iter()
            .take(DUMP_LIMIT)
            .map(|r| json!({"races": r.races, "history": self.history_json(r.history)}))
            .collect();
        let mut states: Vec<&FinalState> = self.outcomes.iter().map(|o| &o.state).collect();
        states.sort_by_key(|s| serde_json::to_string(s).unwrap_or_default());
        states.dedup();
        json!({
            "program": self.program,
            "tm": self.tm,
            "schedules_explored": self.schedules_explored,
            "pruned": self.pruned,
            "outcomes": self.outcomes.len(),
            "final_states": states,
            "violation_count": self.violations.len(),
            "violations": violations,
            "divergence_count": self.divergences.len(),
            "divergences": divergences,
            "histories": self.histories.len(),
            "drf": self.drf(),
            "racy_count": self.racy.len(),
            "racy": racy,
            "ill_formed": self.ill_formed,
            "invariant_violations": self.invariant_violations,
            "bound_exceeded": self.bound_exceeded,
        })
    }
}

/// Runs of each kind dumped in full by [`ExplorationReport::to_json`].
pub const DUMP_LIMIT: usize = 16;

struct Explorer {
    config: ScheduleConfig,
    dedup: Dedup,
    seen: HashSet<u128>,
    history_index: HashMap<u128, usize>,
    report: ExplorationReport,
}

impl Explorer {
    fn history_of(&mut self, e: &Execution) -> usize {
        let fp = e.history_fingerprint();
        if let Some(&i) = self.history_index.get(&fp) {
            return i;
        }
        let h = e.history();
        let i = self.report.histories.len();
        let found = races(&h).unwrap_or_default();
        if !found.is_empty() {
            self.report.racy.push(RacyHistory { history: i, races: found });
        }
        self.report.histories.push(h);
        self.history_index.insert(fp, i);
        i
    }

    fn leaf(&mut self, e: &Execution, schedule: &[Choice]) -> Result<(), ExecError> {
        let id = self.report.schedules_explored;
        self.report.schedules_explored += 1;
        if self.report.schedules_explored > self.config.max_schedules {
            self.report.bound_exceeded = true;
            return Ok(());
        }
        let wf = well_formed(&e.trace());
        if let Some(v) = wf.violations.first() {
            self.report.ill_formed.push((id, format!("rule {} at {}: {}", v.rule, v.index, v.message)));
        }
        if let Some(v) = e.machine().and_then(|m| m.violations().first()) {
            self.report.invariant_violations.push((id, v.clone()));
        }
        let history = self.history_of(e);
        let schedule = schedule.to_vec();
        match e.divergence() {
            Some(kind) => self.report.divergences.push(Divergence { id, schedule, kind, history }),
            None => {
                let post = e.post_holds()?;
                if !post {
                    self.report.violations.push(id);
                }
                self.report.outcomes.push(Outcome { id, schedule, state: e.final_state(), post, history });
            }
        }
        Ok(())
    }

    fn dfs(&mut self, e: Execution, path: &mut Vec<Choice>) -> Result<(), ExecError> {
        if self.report.bound_exceeded {
            return Ok(());
        }
        if self.dedup != Dedup::Off && !self.seen.insert(e.fingerprint(self.dedup == Dedup::Histories)) {
            self.report.pruned += 1;
            return Ok(());
        }
        let options = e.options();
        let Some((&last, rest)) = options.split_last() else {
            return self.leaf(&e, path);
        };
        for &c in rest {
            let mut next = e.clone();
            next.step(c)?;
            path.push(c);
            self.dfs(next, path)?;
            path.pop();
        }
        let mut e = e;
        e.step(last)?;
        path.push(last);
        self.dfs(e, path)?;
        path.pop();
        Ok(())
    }
}

/// Explores `program` on `tm` as configured.
pub fn explore(program: &LitmusProgram, tm: TmKind, config: &ScheduleConfig) -> Result<ExplorationReport, ExecError> {
    let start = Execution::new(Arc::new(program.clone()), config.exec(tm))?;
    let mut x = Explorer {
        config: config.clone(),
        dedup: config.effective_dedup(),
        seen: HashSet::new(),
        history_index: HashMap::new(),
        report: ExplorationReport { program: program.name.clone(), tm: Some(tm), ..Default::default() },
    };
    match config.mode {
        ExploreMode::Exhaustive => x.dfs(start, &mut Vec::new())?,
        ExploreMode::Random { seed, trials } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..trials {
                let mut e = start.clone();
                let mut path = Vec::new();
                while let Some(&c) = e.options().choose(&mut rng) {
                    e.step(c)?;
                    path.push(c);
                }
                x.leaf(&e, &path)?;
                if x.report.bound_exceeded {
                    break;
                }
            }
        }
    }
    Ok(x.report)
}
