//! Online monitor: track the remaining fragment index set per disjunction
//! branch and test membership in the precomputed feasible table each step.
//!
//! Verdicts latch. A branch dies when the state leaves its feasible set; the
//! run is violated once every branch is dead, and satisfied once some branch
//! has discharged all of its obligations.

use crate::error::Result;
use crate::feasible::{self, FeasibleTable, IndexMask};
use crate::formula::FlatFragment;
use crate::sets::Region;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Feasible,
    Violated,
    Satisfied,
}

/// One disjunction branch: its fragments, its table, its remaining set.
#[derive(Clone, Debug)]
pub struct BranchState {
    pub fragments: Vec<FlatFragment>,
    pub table: FeasibleTable,
    pub remaining: IndexMask,
    pub alive: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub verdict: Verdict,
    /// Remaining index set of the best alive branch (0 when none).
    pub remaining: IndexMask,
    pub branch_alive: Vec<bool>,
    pub branch_remaining: Vec<IndexMask>,
    /// Signed sup-norm distance to the feasible-set boundary of the best
    /// alive branch, when its regions are box unions.
    pub margin: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct MonitorState {
    pub step: usize,
    pub branches: Vec<BranchState>,
    pub verdict: Verdict,
    /// First step at which the verdict turned violated.
    pub alarm_step: Option<usize>,
    pub records: Vec<StepRecord>,
}

impl MonitorState {
    pub fn new(branches: Vec<(Vec<FlatFragment>, FeasibleTable)>) -> Self {
        let branches = branches
            .into_iter()
            .map(|(fragments, table)| {
                let remaining = fragments.iter().fold(0, |m, f| m | 1 << f.index);
                BranchState { fragments, table, remaining, alive: true }
            })
            .collect();
        MonitorState { step: 0, branches, verdict: Verdict::Feasible, alarm_step: None, records: Vec::new() }
    }

    /// Advance one formula step with the measured state. The verdict is
    /// issued against the remaining sets carried in (hits up to the previous
    /// step); hits at this step are latched afterwards for the next one.
    pub fn step(&mut self, x: &[f64]) -> Result<StepRecord> {
        let t = self.step;
        let mut margin = None;
        for b in &mut self.branches {
            if !b.alive {
                continue;
            }
            let inside = match b.table.get(t, b.remaining)? {
                None => false,
                Some(region) => {
                    let m = region.member(x).unwrap_or(false);
                    if m {
                        if let Region::Boxes(bu) = region {
                            let d = bu
                                .boxes
                                .iter()
                                .map(|bx| bx.signed_distance_inf(x))
                                .fold(f64::NEG_INFINITY, f64::max);
                            margin = Some(margin.map_or(d, |m: f64| m.max(d)));
                        }
                    }
                    m
                }
            };
            if !inside {
                b.alive = false;
            }
        }
        // latch hits at t and drop G fragments whose window closed at t
        for b in &mut self.branches {
            if !b.alive {
                continue;
            }
            for f in &b.fragments {
                if !feasible::mask_contains(b.remaining, f.index) {
                    continue;
                }
                let done = match f.op {
                    crate::formula::FragmentOp::Always => f.window.b <= t,
                    _ => f.hit(x, t),
                };
                if done {
                    b.remaining &= !(1 << f.index);
                }
            }
        }

        if self.verdict != Verdict::Violated {
            if self.branches.iter().all(|b| !b.alive) {
                self.verdict = Verdict::Violated;
                self.alarm_step.get_or_insert(t);
            } else if self.verdict == Verdict::Feasible
                && self.branches.iter().any(|b| b.alive && b.remaining == 0)
            {
                self.verdict = Verdict::Satisfied;
            }
        }

        let best = self.branches.iter().find(|b| b.alive);
        let record = StepRecord {
            step: t,
            verdict: self.verdict,
            remaining: best.map(|b| b.remaining).unwrap_or(0),
            branch_alive: self.branches.iter().map(|b| b.alive).collect(),
            branch_remaining: self.branches.iter().map(|b| b.remaining).collect(),
            margin,
        };
        self.records.push(record.clone());
        self.step += 1;
        Ok(record)
    }

    pub fn alarm(&self) -> bool {
        self.verdict == Verdict::Violated
    }
}

/// Verdict log as CSV rows `t,verdict,remaining_mask`.
pub fn records_csv(records: &[StepRecord]) -> String {
    let mut s = String::from("t,verdict,remaining\n");
    for r in records {
        let v = match r.verdict {
            Verdict::Feasible => "feasible",
            Verdict::Violated => "violated",
            Verdict::Satisfied => "satisfied",
        };
        s.push_str(&format!("{},{},{:#x}\n", r.step, v, r.remaining));
    }
    s
}
