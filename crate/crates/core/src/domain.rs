//! Shared domain types: the hardware/model profile, execution plans and the
//! cluster state they run on, plus plan validation.
//!
//! Nodes are dense integers `0..N`. A plan addresses its devices as *slots*
//! numbered in row-major order over `(pipeline, stage)`; the cluster state's
//! `placement` maps each slot to the physical node currently serving it.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Profiled per-layer costs of the model on the target hardware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub t_forward_per_layer: f64,
    pub t_backward_per_layer: f64,
    pub mem_params_per_layer: u64,
    pub mem_optimizer_per_layer: u64,
    pub mem_grads_per_layer: u64,
    pub mem_activation_per_layer_per_microbatch: u64,
    pub weight_bytes_per_layer: u64,
    /// Point-to-point bandwidth in bytes/second.
    pub link_bandwidth: f64,
    pub allreduce_time_per_layer: f64,
    pub restart_overhead: f64,
    pub device_memory_limit: u64,
    pub num_layers: usize,
}

impl Profile {
    pub fn from_json(text: &str) -> Result<Self> {
        let profile: Profile = parse_json(text)?;
        let problems = profile.check();
        if problems.is_empty() {
            Ok(profile)
        } else {
            Err(Error::InvalidInput(format!(
                "profile: {}",
                problems.join("; ")
            )))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Invariant violations, empty when the profile is well formed.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        let times = [
            ("t_forward_per_layer", self.t_forward_per_layer),
            ("t_backward_per_layer", self.t_backward_per_layer),
            ("link_bandwidth", self.link_bandwidth),
            ("allreduce_time_per_layer", self.allreduce_time_per_layer),
            ("restart_overhead", self.restart_overhead),
        ];
        for (name, value) in times {
            if !(value.is_finite() && value > 0.0) {
                out.push(format!("{name} must be finite and > 0 (got {value})"));
            }
        }
        let bytes = [
            ("mem_params_per_layer", self.mem_params_per_layer),
            ("mem_optimizer_per_layer", self.mem_optimizer_per_layer),
            ("mem_grads_per_layer", self.mem_grads_per_layer),
            (
                "mem_activation_per_layer_per_microbatch",
                self.mem_activation_per_layer_per_microbatch,
            ),
            ("weight_bytes_per_layer", self.weight_bytes_per_layer),
            ("device_memory_limit", self.device_memory_limit),
        ];
        for (name, value) in bytes {
            if value == 0 {
                out.push(format!("{name} must be > 0"));
            }
        }
        if self.num_layers == 0 {
            out.push("num_layers must be >= 1".to_string());
        }
        if self.mem_grads_per_layer != self.mem_params_per_layer {
            out.push(format!(
                "mem_grads_per_layer ({}) must equal mem_params_per_layer ({})",
                self.mem_grads_per_layer, self.mem_params_per_layer
            ));
        }
        out
    }

    /// Parameters + optimizer state + gradients for one layer.
    pub fn static_bytes_per_layer(&self) -> u64 {
        self.mem_params_per_layer
            .saturating_add(self.mem_optimizer_per_layer)
            .saturating_add(self.mem_grads_per_layer)
    }
}

/// Half-open interval of layer indices `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRange {
    pub start: usize,
    pub end: usize,
}

impl LayerRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, layer: usize) -> bool {
        self.start <= layer && layer < self.end
    }

    pub fn layers(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

/// Lays consecutive intervals of the given sizes starting at layer 0.
pub fn ranges_from_sizes(sizes: &[usize]) -> Vec<LayerRange> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&n| {
            let r = LayerRange::new(start, start + n);
            start += n;
            r
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    DataRerouting,
    DynamicParallelism,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::DataRerouting => f.write_str("data-rerouting"),
            Policy::DynamicParallelism => f.write_str("dynamic-parallelism"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelConfig {
    pub dp_degree: usize,
    /// Pipeline-parallel depth of each pipeline.
    pub stage_counts: Vec<usize>,
}

impl ParallelConfig {
    pub fn new(stage_counts: Vec<usize>) -> Self {
        Self {
            dp_degree: stage_counts.len(),
            stage_counts,
        }
    }

    pub fn symmetric(dp: usize, pp: usize) -> Self {
        Self::new(vec![pp; dp])
    }

    pub fn node_count(&self) -> usize {
        self.stage_counts
            .iter()
            .fold(0usize, |acc, &s| acc.saturating_add(s))
    }

    pub fn is_symmetric(&self) -> bool {
        self.stage_counts.windows(2).all(|w| w[0] == w[1])
    }
}

impl fmt::Display for ParallelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dp={} stages={:?}", self.dp_degree, self.stage_counts)
    }
}

/// Position of a device inside a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageCoord {
    pub pipeline: usize,
    pub stage: usize,
}

/// The unit the planner searches over.
///
/// Field order doubles as the canonical ordering used for tie-breaks.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionPlan {
    pub policy: Policy,
    pub parallel: ParallelConfig,
    pub layer_assignment: Vec<Vec<LayerRange>>,
    pub batch_assignment: Vec<usize>,
    /// Failed nodes per stage index; empty unless rerouting.
    #[serde(default)]
    pub failure_distribution: Vec<usize>,
}

impl ExecutionPlan {
    /// Fault-free plan where every pipeline uses the same layer split.
    pub fn symmetric(dp: usize, stage_sizes: &[usize], batches: Vec<usize>) -> Self {
        let ranges = ranges_from_sizes(stage_sizes);
        Self {
            policy: Policy::DynamicParallelism,
            parallel: ParallelConfig::symmetric(dp, stage_sizes.len()),
            layer_assignment: vec![ranges; dp],
            batch_assignment: batches,
            failure_distribution: Vec::new(),
        }
    }

    pub fn n_micro(&self) -> usize {
        self.batch_assignment
            .iter()
            .fold(0usize, |acc, &b| acc.saturating_add(b))
    }

    pub fn node_count(&self) -> usize {
        self.parallel.node_count()
    }

    pub fn failed_in_plan(&self) -> usize {
        self.failure_distribution
            .iter()
            .fold(0usize, |acc, &f| acc.saturating_add(f))
    }

    /// Row-major slot index of a coordinate.
    pub fn slot_of(&self, coord: StageCoord) -> Option<usize> {
        let counts = &self.parallel.stage_counts;
        if coord.pipeline >= counts.len() || coord.stage >= counts[coord.pipeline] {
            return None;
        }
        Some(counts[..coord.pipeline].iter().sum::<usize>() + coord.stage)
    }

    pub fn coord_of(&self, slot: usize) -> Option<StageCoord> {
        let mut base = 0;
        for (pipeline, &count) in self.parallel.stage_counts.iter().enumerate() {
            if slot < base + count {
                return Some(StageCoord {
                    pipeline,
                    stage: slot - base,
                });
            }
            base += count;
        }
        None
    }

    /// Layer interval held by each slot, in slot order.
    pub fn slot_layers(&self) -> Vec<LayerRange> {
        self.layer_assignment.iter().flatten().copied().collect()
    }

    /// True when every pipeline carries exactly the same stage intervals, which
    /// is what rerouting to data-parallel peers requires.
    pub fn has_identical_pipelines(&self) -> bool {
        self.layer_assignment.windows(2).all(|w| w[0] == w[1])
    }

    /// Compact one-line description.
    pub fn summary(&self) -> String {
        let splits: Vec<Vec<usize>> = self
            .layer_assignment
            .iter()
            .map(|p| p.iter().map(LayerRange::len).collect())
            .collect();
        let mut s = format!(
            "{} {} layers={:?} batches={:?}",
            self.policy, self.parallel, splits, self.batch_assignment
        );
        if self.policy == Policy::DataRerouting {
            s.push_str(&format!(" failures={:?}", self.failure_distribution));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailedNode {
    pub node: NodeId,
    /// Slot coordinate in the current plan; `None` when the node was idle or
    /// belonged to an earlier plan.
    #[serde(default)]
    pub coord: Option<StageCoord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterState {
    pub total_nodes: usize,
    pub failed_nodes: Vec<FailedNode>,
    pub current_plan: ExecutionPlan,
    pub global_batch_size: usize,
    pub micro_batch_size: usize,
    /// Node serving each slot of `current_plan`; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<Vec<NodeId>>,
}

impl ClusterState {
    pub fn from_json(text: &str) -> Result<Self> {
        parse_json(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Global micro-batch count `N_m`.
    pub fn n_micro(&self) -> Result<usize> {
        if self.micro_batch_size == 0
            || self.global_batch_size == 0
            || !self.global_batch_size.is_multiple_of(self.micro_batch_size)
        {
            return Err(Error::InvalidInput(format!(
                "global batch {} is not a positive multiple of micro-batch {}",
                self.global_batch_size, self.micro_batch_size
            )));
        }
        Ok(self.global_batch_size / self.micro_batch_size)
    }

    pub fn surviving_count(&self) -> usize {
        self.total_nodes.saturating_sub(self.failed_nodes.len())
    }

    pub fn placement(&self) -> Vec<NodeId> {
        match &self.placement {
            Some(p) => p.clone(),
            None => (0..self.current_plan.node_count()).collect(),
        }
    }

    pub fn is_failed(&self, node: NodeId) -> bool {
        self.failed_nodes.iter().any(|f| f.node == node)
    }

    pub fn surviving_nodes(&self) -> Vec<NodeId> {
        let failed: BTreeSet<NodeId> = self.failed_nodes.iter().map(|f| f.node).collect();
        (0..self.total_nodes)
            .filter(|n| !failed.contains(n))
            .collect()
    }

    /// Failed-node count per stage index of the current plan, counting only
    /// failures that hold a coordinate in it. Sized to the deepest pipeline.
    pub fn failure_vector(&self) -> Vec<usize> {
        let depth = self
            .current_plan
            .parallel
            .stage_counts
            .iter()
            .copied()
            .max()
            .unwrap_or(0);
        let mut f = vec![0; depth];
        for c in self.failed_nodes.iter().filter_map(|n| n.coord) {
            if c.stage < depth {
                f[c.stage] += 1;
            }
        }
        f
    }

    pub fn faults_in_plan(&self) -> usize {
        self.failed_nodes
            .iter()
            .filter(|n| n.coord.is_some())
            .count()
    }
}

/// One broken invariant, reported as data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoPipelines,
    DpMismatch {
        dp_degree: usize,
        pipelines: usize,
    },
    ZeroStageCount {
        pipeline: usize,
    },
    LayerShape {
        pipeline: usize,
        stages: usize,
        intervals: usize,
    },
    LayerCoverage {
        pipeline: usize,
        detail: String,
    },
    BatchShape {
        pipelines: usize,
        entries: usize,
    },
    BatchSum {
        expected: usize,
        found: usize,
    },
    IdlePipeline {
        pipeline: usize,
    },
    FailureShape {
        stages: usize,
        entries: usize,
    },
    FailuresOutsideRerouting,
    ReroutingNeedsIdenticalPipelines,
    NoStageSurvivor {
        stage: usize,
        failed: usize,
        dp_degree: usize,
    },
    FailuresExceedRecorded {
        in_plan: usize,
        recorded: usize,
    },
    TooManyFailures {
        failed: usize,
        total: usize,
    },
    BatchNotDivisible {
        global: usize,
        micro: usize,
    },
    TooManyNodes {
        required: usize,
        available: usize,
    },
    Placement {
        detail: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NoPipelines => write!(f, "plan has no pipelines"),
            DpMismatch {
                dp_degree,
                pipelines,
            } => write!(
                f,
                "dp_degree {dp_degree} does not match {pipelines} stage counts"
            ),
            ZeroStageCount { pipeline } => write!(f, "pipeline {pipeline} has zero stages"),
            LayerShape {
                pipeline,
                stages,
                intervals,
            } => write!(
                f,
                "pipeline {pipeline}: {intervals} layer intervals for {stages} stages"
            ),
            LayerCoverage { pipeline, detail } => {
                write!(f, "pipeline {pipeline}: layer intervals {detail}")
            }
            BatchShape { pipelines, entries } => write!(
                f,
                "batch_assignment has {entries} entries for {pipelines} pipelines"
            ),
            BatchSum { expected, found } => write!(
                f,
                "batch sum {found} does not equal micro-batch count {expected}"
            ),
            IdlePipeline { pipeline } => write!(
                f,
                "pipeline {pipeline} receives no micro-batches although N_m >= dp"
            ),
            FailureShape { stages, entries } => write!(
                f,
                "failure_distribution has {entries} entries for {stages} stages"
            ),
            FailuresOutsideRerouting => {
                write!(f, "failure_distribution is non-zero outside data rerouting")
            }
            ReroutingNeedsIdenticalPipelines => write!(
                f,
                "data rerouting requires every pipeline to hold identical stage intervals"
            ),
            NoStageSurvivor {
                stage,
                failed,
                dp_degree,
            } => write!(
                f,
                "stage {stage} survivors: {failed} of {dp_degree} replicas failed, none left"
            ),
            FailuresExceedRecorded { in_plan, recorded } => write!(
                f,
                "plan records {in_plan} failed slots but state lists {recorded} failed nodes"
            ),
            TooManyFailures { failed, total } => {
                write!(f, "{failed} failed nodes out of {total}: no survivors")
            }
            BatchNotDivisible { global, micro } => write!(
                f,
                "global batch {global} is not a positive multiple of micro-batch {micro}"
            ),
            TooManyNodes {
                required,
                available,
            } => write!(
                f,
                "plan needs {required} live nodes but only {available} survive"
            ),
            Placement { detail } => write!(f, "placement: {detail}"),
        }
    }
}

/// Checks plan and state invariants. Never panics: malformed counts surface
/// as violations.
pub fn validate_plan(
    plan: &ExecutionPlan,
    state: &ClusterState,
    profile: &Profile,
) -> Vec<Violation> {
    let mut out = validate_plan_shape(plan, profile.num_layers);

    if state.failed_nodes.len() >= state.total_nodes {
        out.push(Violation::TooManyFailures {
            failed: state.failed_nodes.len(),
            total: state.total_nodes,
        });
    }
    match state.n_micro() {
        Ok(n_micro) => {
            let found = plan.n_micro();
            if found != n_micro {
                out.push(Violation::BatchSum {
                    expected: n_micro,
                    found,
                });
            } else if n_micro >= plan.parallel.dp_degree {
                for (pipeline, &b) in plan.batch_assignment.iter().enumerate() {
                    if b == 0 {
                        out.push(Violation::IdlePipeline { pipeline });
                    }
                }
            }
        }
        Err(_) => out.push(Violation::BatchNotDivisible {
            global: state.global_batch_size,
            micro: state.micro_batch_size,
        }),
    }

    let in_plan_failures = match plan.policy {
        Policy::DataRerouting => plan.failed_in_plan(),
        Policy::DynamicParallelism => 0,
    };
    if in_plan_failures > state.failed_nodes.len() {
        out.push(Violation::FailuresExceedRecorded {
            in_plan: in_plan_failures,
            recorded: state.failed_nodes.len(),
        });
    }
    let required = plan.node_count().saturating_sub(in_plan_failures);
    let available = state.surviving_count();
    if required > available {
        out.push(Violation::TooManyNodes {
            required,
            available,
        });
    }
    out
}

/// Plan-only invariants (no cluster state).
pub fn validate_plan_shape(plan: &ExecutionPlan, num_layers: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let counts = &plan.parallel.stage_counts;
    if counts.is_empty() {
        out.push(Violation::NoPipelines);
    }
    if plan.parallel.dp_degree != counts.len() {
        out.push(Violation::DpMismatch {
            dp_degree: plan.parallel.dp_degree,
            pipelines: counts.len(),
        });
    }
    for (pipeline, &c) in counts.iter().enumerate() {
        if c == 0 {
            out.push(Violation::ZeroStageCount { pipeline });
        }
    }

    if plan.layer_assignment.len() != counts.len() {
        out.push(Violation::LayerShape {
            pipeline: plan.layer_assignment.len().min(counts.len()),
            stages: counts.len(),
            intervals: plan.layer_assignment.len(),
        });
    }
    for (pipeline, (ranges, &c)) in plan.layer_assignment.iter().zip(counts).enumerate() {
        if ranges.len() != c {
            out.push(Violation::LayerShape {
                pipeline,
                stages: c,
                intervals: ranges.len(),
            });
        }
        if let Some(detail) = coverage_problem(ranges, num_layers) {
            out.push(Violation::LayerCoverage { pipeline, detail });
        }
    }

    if plan.batch_assignment.len() != counts.len() {
        out.push(Violation::BatchShape {
            pipelines: counts.len(),
            entries: plan.batch_assignment.len(),
        });
    }

    match plan.policy {
        Policy::DynamicParallelism => {
            if plan.failure_distribution.iter().any(|&f| f > 0) {
                out.push(Violation::FailuresOutsideRerouting);
            }
        }
        Policy::DataRerouting => {
            if !plan.parallel.is_symmetric() || !plan.has_identical_pipelines() {
                out.push(Violation::ReroutingNeedsIdenticalPipelines);
            }
            let depth = counts.first().copied().unwrap_or(0);
            if plan.failure_distribution.len() != depth {
                out.push(Violation::FailureShape {
                    stages: depth,
                    entries: plan.failure_distribution.len(),
                });
            }
            let dp = counts.len();
            for (stage, &failed) in plan.failure_distribution.iter().enumerate() {
                if failed >= dp {
                    out.push(Violation::NoStageSurvivor {
                        stage,
                        failed,
                        dp_degree: dp,
                    });
                }
            }
        }
    }
    out
}

fn coverage_problem(ranges: &[LayerRange], num_layers: usize) -> Option<String> {
    let mut expected_start = 0usize;
    for (stage, r) in ranges.iter().enumerate() {
        if r.is_empty() {
            return Some(format!("stage {stage} holds an empty interval {r}"));
        }
        if r.start != expected_start {
            return Some(format!(
                "stage {stage} starts at {} but should start at {expected_start}",
                r.start
            ));
        }
        expected_start = r.end;
    }
    if expected_start != num_layers {
        return Some(format!(
            "cover [0,{expected_start}) instead of [0,{num_layers})"
        ));
    }
    None
}

/// State-level checks beyond what `validate_plan` needs: placement shape and
/// coordinate consistency.
pub fn validate_state(state: &ClusterState, profile: &Profile) -> Vec<Violation> {
    // The current plan still counts the slots of nodes that failed in it.
    let mut out: Vec<Violation> = validate_plan(&state.current_plan, state, profile)
        .into_iter()
        .filter(|v| !matches!(v, Violation::TooManyNodes { .. }))
        .collect();
    let required = state
        .current_plan
        .node_count()
        .saturating_sub(state.faults_in_plan());
    if required > state.surviving_count() {
        out.push(Violation::TooManyNodes {
            required,
            available: state.surviving_count(),
        });
    }
    let placement = state.placement();
    let slots = state.current_plan.node_count();
    if placement.len() != slots {
        out.push(Violation::Placement {
            detail: format!("{} entries for {slots} slots", placement.len()),
        });
        return out;
    }
    let distinct: BTreeSet<NodeId> = placement.iter().copied().collect();
    if distinct.len() != placement.len() {
        out.push(Violation::Placement {
            detail: "a node occupies two slots".into(),
        });
    }
    if let Some(&n) = placement.iter().find(|&&n| n >= state.total_nodes) {
        out.push(Violation::Placement {
            detail: format!("node {n} is outside 0..{}", state.total_nodes),
        });
    }
    for f in &state.failed_nodes {
        if let Some(c) = f.coord {
            match state.current_plan.slot_of(c) {
                Some(slot) if placement[slot] == f.node => {}
                _ => out.push(Violation::Placement {
                    detail: format!(
                        "failed node {} is not at pipeline {} stage {}",
                        f.node, c.pipeline, c.stage
                    ),
                }),
            }
        }
    }
    out
}

pub(crate) fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))
}
