//! 1F1B pipeline schedule and its timing simulation.
//!
//! Each stage executes its operation list in order. An operation starts once
//! the previous operation on the same stage has finished and the operation it
//! depends on has finished: forward `j` on stage `s` waits for forward `j` on
//! `s-1`, backward `j` waits for backward `j` on `s+1`, and the last stage's
//! backward `j` waits for its own forward `j`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{LayerRange, Profile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PipelineOp {
    pub kind: OpKind,
    pub microbatch: usize,
}

impl PipelineOp {
    pub fn forward(microbatch: usize) -> Self {
        Self {
            kind: OpKind::Forward,
            microbatch,
        }
    }

    pub fn backward(microbatch: usize) -> Self {
        Self {
            kind: OpKind::Backward,
            microbatch,
        }
    }
}

impl fmt::Display for PipelineOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            OpKind::Forward => 'F',
            OpKind::Backward => 'B',
        };
        write!(f, "{k}{}", self.microbatch)
    }
}

/// Forwards issued by `stage` before its first backward.
pub fn warmup_forwards(n_stages: usize, n_micro: usize, stage: usize) -> usize {
    (n_stages - stage).min(n_micro)
}

/// Per-stage operation order: warm-up forwards, then alternate one backward
/// and one forward until forwards run out, then drain the backwards.
pub fn build_1f1b_schedule(n_stages: usize, n_micro: usize) -> Vec<Vec<PipelineOp>> {
    (0..n_stages)
        .map(|stage| {
            let warmup = warmup_forwards(n_stages, n_micro, stage);
            let mut ops = Vec::with_capacity(2 * n_micro);
            ops.extend((0..warmup).map(PipelineOp::forward));
            let mut next_fwd = warmup;
            for b in 0..n_micro {
                ops.push(PipelineOp::backward(b));
                if next_fwd < n_micro {
                    ops.push(PipelineOp::forward(next_fwd));
                    next_fwd += 1;
                }
            }
            ops
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub forward: f64,
    pub backward: f64,
}

/// Per-micro-batch forward/backward time of every stage of one pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub stages: Vec<StageTime>,
}

impl StageTimes {
    pub fn uniform(n_stages: usize, forward: f64, backward: f64) -> Self {
        Self {
            stages: vec![StageTime { forward, backward }; n_stages],
        }
    }

    /// Stage time is linear in the number of layers it holds.
    pub fn from_layers(ranges: &[LayerRange], profile: &Profile) -> Self {
        Self {
            stages: ranges
                .iter()
                .map(|r| StageTime {
                    forward: r.len() as f64 * profile.t_forward_per_layer,
                    backward: r.len() as f64 * profile.t_backward_per_layer,
                })
                .collect(),
        }
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self {
            stages: pairs
                .iter()
                .map(|&(forward, backward)| StageTime { forward, backward })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Largest per-stage `forward + backward`.
    pub fn max_round_trip(&self) -> f64 {
        self.stages
            .iter()
            .map(|s| s.forward + s.backward)
            .fold(0.0, f64::max)
    }

    fn duration(&self, stage: usize, kind: OpKind) -> f64 {
        match kind {
            OpKind::Forward => self.stages[stage].forward,
            OpKind::Backward => self.stages[stage].backward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub kind: OpKind,
    pub microbatch: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTrace {
    pub stages: Vec<Vec<OpRecord>>,
    pub makespan: f64,
}

/// Replays the 1F1B order with the start-time recurrence
/// `start = max(end of previous op on this stage, end of dependency)`.
/// Zero micro-batches yield an empty trace with makespan 0.
pub fn simulate_pipeline_1f1b(times: &StageTimes, n_micro: usize) -> ScheduleTrace {
    let n = times.len();
    if n == 0 || n_micro == 0 {
        return ScheduleTrace {
            stages: vec![Vec::new(); n],
            makespan: 0.0,
        };
    }
    let schedule = build_1f1b_schedule(n, n_micro);
    let mut fwd_end = vec![vec![f64::NAN; n_micro]; n];
    let mut bwd_end = vec![vec![f64::NAN; n_micro]; n];
    let mut records: Vec<Vec<OpRecord>> = schedule
        .iter()
        .map(|ops| Vec::with_capacity(ops.len()))
        .collect();
    let mut cursor = vec![0usize; n];
    let mut remaining = 2 * n * n_micro;

    while remaining > 0 {
        let mut progressed = false;
        for s in 0..n {
            while let Some(&op) = schedule[s].get(cursor[s]) {
                let j = op.microbatch;
                let dep = match op.kind {
                    OpKind::Forward if s == 0 => 0.0,
                    OpKind::Forward => fwd_end[s - 1][j],
                    OpKind::Backward if s + 1 == n => fwd_end[s][j],
                    OpKind::Backward => bwd_end[s + 1][j],
                };
                if dep.is_nan() {
                    break;
                }
                let prev = records[s].last().map_or(0.0, |r| r.end);
                let start = prev.max(dep);
                let end = start + times.duration(s, op.kind);
                match op.kind {
                    OpKind::Forward => fwd_end[s][j] = end,
                    OpKind::Backward => bwd_end[s][j] = end,
                }
                records[s].push(OpRecord {
                    kind: op.kind,
                    microbatch: j,
                    start,
                    end,
                });
                cursor[s] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        assert!(progressed, "1F1B schedule deadlocked");
    }

    let makespan = records[0].last().map_or(0.0, |r| r.end);
    ScheduleTrace {
        stages: records,
        makespan,
    }
}
