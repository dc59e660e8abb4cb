//! A randomized most-general client: every thread runs random blocks of
//! transactions, non-transactional accesses and fences under a random
//! schedule.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{OpResult, StepOutcome, Tl2Config, Tl2Machine, TmOp};
use crate::history::{RegisterId, ThreadId, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientPlan {
    pub blocks_per_thread: usize,
    pub max_txn_ops: usize,
    pub registers: Vec<RegisterId>,
    /// Percent chance that a block is a transaction; the rest is split
    /// evenly between non-transactional read, write and fence.
    pub txn_percent: u32,
    /// Machine steps after which the run is cut short.
    pub max_steps: Option<u64>,
}

impl Default for ClientPlan {
    fn default() -> Self {
        ClientPlan {
            blocks_per_thread: 3,
            max_txn_ops: 3,
            registers: vec![RegisterId::new("x"), RegisterId::new("y")],
            txn_percent: 60,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone)]
enum Block {
    Txn(Vec<TmOp>),
    Single(TmOp),
}

fn plan_thread(rng: &mut ChaCha8Rng, plan: &ClientPlan, next_val: &mut Value) -> Vec<Block> {
    let mut fresh = || {
        *next_val += 1;
        *next_val
    };
    (0..plan.blocks_per_thread)
        .map(|_| {
            let x = plan.registers.choose(rng).expect("at least one register").clone();
            if rng.gen_range(0..100) < plan.txn_percent {
                let n = rng.gen_range(1..=plan.max_txn_ops);
                let ops = (0..n)
                    .map(|_| {
                        let y = plan.registers.choose(rng).expect("at least one register").clone();
                        if rng.gen_bool(0.5) {
                            TmOp::Read(y)
                        } else {
                            TmOp::Write(y, fresh())
                        }
                    })
                    .collect();
                Block::Txn(ops)
            } else {
                match rng.gen_range(0..3) {
                    0 => Block::Single(TmOp::NtRead(x)),
                    1 => Block::Single(TmOp::NtWrite(x, fresh())),
                    _ => Block::Single(TmOp::Fence),
                }
            }
        })
        .collect()
}

/// Runs one random client to completion, or until the step limit, and
/// returns the machine.
pub fn random_run(config: Tl2Config, plan: &ClientPlan, seed: u64) -> Tl2Machine {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_val = 0;
    let threads = config.threads;
    let mut queues: Vec<Vec<TmOp>> = (0..threads)
        .map(|_| {
            let mut q = Vec::new();
            for b in plan_thread(&mut rng, plan, &mut next_val) {
                match b {
                    Block::Txn(ops) => {
                        q.push(TmOp::TxBegin);
                        q.extend(ops);
                        q.push(TmOp::Commit);
                    }
                    Block::Single(op) => q.push(op),
                }
            }
            q.reverse();
            q
        })
        .collect();
    let mut m = Tl2Machine::new(config);
    while plan.max_steps.is_none_or(|n| m.steps() < n) {
        let runnable: Vec<u32> = (1..=threads)
            .filter(|&t| {
                let tid = ThreadId(t);
                m.is_enabled(tid) || (!m.is_busy(tid) && !queues[t as usize - 1].is_empty())
            })
            .collect();
        let Some(&t) = runnable.choose(&mut rng) else { break };
        let tid = ThreadId(t);
        let q = &mut queues[t as usize - 1];
        if !m.is_busy(tid) {
            let op = q.pop().expect("runnable thread has work");
            m.invoke(tid, op).expect("client respects the interface");
        }
        if let StepOutcome::Done(OpResult::Aborted) = m.step(tid).expect("enabled thread steps") {
            // drop the rest of the aborted transaction
            while let Some(op) = q.pop() {
                if op == TmOp::Commit {
                    break;
                }
            }
        }
    }
    m
}
