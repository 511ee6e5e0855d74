use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{ExecutionPlan, NodeId, Policy, StageCoord};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Fault {
        node: NodeId,
        /// `None` when the node was idle.
        coord: Option<StageCoord>,
    },
    PlanSwitch {
        policy: Policy,
        plan: ExecutionPlan,
        step_seconds: f64,
        transition_seconds: f64,
        throughput: f64,
    },
    IntervalSummary {
        start: f64,
        end: f64,
        throughput: f64,
        samples: f64,
    },
    /// No usable plan remains; throughput is zero from here on.
    Halt { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Constant-throughput stretch of simulated time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    /// Samples per second.
    pub throughput: f64,
    pub active_nodes: usize,
    /// What started this stretch (`start`, `fault`, `reroute`, ...).
    pub event: String,
}

impl Interval {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn samples(&self) -> f64 {
        self.throughput * self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub seed: u64,
    pub events: Vec<Event>,
    pub intervals: Vec<Interval>,
    pub total_samples: f64,
    pub total_time: f64,
    pub average_throughput: f64,
}

impl SimTrace {
    /// Every plan that was ever active, in activation order.
    pub fn active_plans(&self) -> Vec<&ExecutionPlan> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::PlanSwitch { plan, .. } => Some(plan),
                _ => None,
            })
            .collect()
    }

    pub fn fault_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Fault { .. }))
            .count()
    }

    /// Rows `time_seconds, active_nodes, throughput, policy_event`: one per
    /// interval start plus a closing row at the end of the run.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time_seconds", "active_nodes", "throughput", "policy_event"])?;
        for iv in &self.intervals {
            out.write_record([
                iv.start.to_string(),
                iv.active_nodes.to_string(),
                iv.throughput.to_string(),
                iv.event.clone(),
            ])?;
        }
        if let Some(last) = self.intervals.last() {
            out.write_record([
                last.end.to_string(),
                last.active_nodes.to_string(),
                last.throughput.to_string(),
                "end".to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
