//! Event-driven replay of a long training run under random node failures.
//!
//! Every node draws one exponential failure time from the scenario seed up
//! front, so all policies replayed with the same seed see the same faults at
//! the same times. Failed nodes never come back.

mod compare;
mod trace;

pub use compare::{compare_policies, run_all, Comparison, PolicySummary, RatioSummary, RunRecord};
pub use trace::{Event, EventKind, Interval, SimTrace};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::domain::{ClusterState, ExecutionPlan, FailedNode, NodeId, Policy, Profile};
use crate::error::{Error, Result};
use crate::estimator::estimate_step;
use crate::planner::{
    distribute_batch, dynamic_option, rerouting_option, select_policy, split_layers, PolicyOption,
    SearchConfig, ShapeSpace,
};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum SimPolicy {
    /// Picks rerouting or reconfiguration per fault by expected throughput.
    #[default]
    Adaptive,
    /// Reroutes while every stage keeps a replica, then rebuilds a symmetric
    /// plan.
    AlwaysReroute,
    /// Rebuilds a symmetric plan from fixed stage-count templates on every
    /// fault.
    AlwaysReconfigure,
}

impl SimPolicy {
    pub const ALL: [SimPolicy; 3] = [
        SimPolicy::Adaptive,
        SimPolicy::AlwaysReroute,
        SimPolicy::AlwaysReconfigure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimPolicy::Adaptive => "adaptive",
            SimPolicy::AlwaysReroute => "always_reroute",
            SimPolicy::AlwaysReconfigure => "always_reconfigure",
        }
    }
}

impl std::str::FromStr for SimPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "adaptive" => Ok(SimPolicy::Adaptive),
            "always_reroute" | "reroute" => Ok(SimPolicy::AlwaysReroute),
            "always_reconfigure" | "reconfigure" => Ok(SimPolicy::AlwaysReconfigure),
            other => Err(format!("unknown policy {other:?}")),
        }
    }
}

fn default_templates() -> Vec<usize> {
    vec![2, 3, 4]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub duration_seconds: f64,
    pub n_nodes_initial: usize,
    /// Failures per node per hour.
    pub per_node_failure_rate: f64,
    pub seed: u64,
    pub global_batch_size: usize,
    pub micro_batch_size: usize,
    #[serde(default)]
    pub policy: SimPolicy,
    pub initial_dp: usize,
    pub initial_pp: usize,
    #[serde(default)]
    pub search: SearchConfig,
    /// Stage counts the reconfigure-only baseline may use.
    #[serde(default = "default_templates")]
    pub reconfigure_templates: Vec<usize>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = crate::domain::parse_json(text)?;
        let problems = s.check();
        if problems.is_empty() {
            Ok(s)
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn check(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.duration_seconds > 0.0 && self.duration_seconds.is_finite()) {
            p.push("duration_seconds must be positive".into());
        }
        if !(self.per_node_failure_rate >= 0.0 && self.per_node_failure_rate.is_finite()) {
            p.push("per_node_failure_rate must be non-negative".into());
        }
        if self.micro_batch_size == 0
            || !self.global_batch_size.is_multiple_of(self.micro_batch_size)
            || self.global_batch_size == 0
        {
            p.push(format!(
                "global batch {} is not a positive multiple of micro-batch {}",
                self.global_batch_size, self.micro_batch_size
            ));
        }
        if self.initial_dp == 0 || self.initial_pp == 0 {
            p.push("initial_dp and initial_pp must be positive".into());
        }
        if self.initial_dp.saturating_mul(self.initial_pp) > self.n_nodes_initial {
            p.push(format!(
                "initial plan needs {} nodes, cluster has {}",
                self.initial_dp * self.initial_pp,
                self.n_nodes_initial
            ));
        }
        if self.reconfigure_templates.contains(&0) {
            p.push("reconfigure_templates entries must be positive".into());
        }
        p
    }

    pub fn n_micro(&self) -> usize {
        self.global_batch_size / self.micro_batch_size
    }

    pub fn with_policy(&self, policy: SimPolicy) -> Self {
        Self {
            policy,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Fault-free starting plan: `initial_dp` pipelines of `initial_pp` stages
/// sharing one layer split.
pub fn initial_plan(scenario: &Scenario, profile: &Profile) -> Result<ExecutionPlan> {
    let dist = distribute_batch(
        scenario.n_micro(),
        &vec![scenario.initial_pp; scenario.initial_dp],
    );
    let m = dist.counts.iter().copied().max().unwrap_or(0);
    let ranges = split_layers(scenario.initial_pp, profile.num_layers, profile, m)?;
    Ok(ExecutionPlan {
        policy: Policy::DynamicParallelism,
        parallel: crate::domain::ParallelConfig::symmetric(
            scenario.initial_dp,
            scenario.initial_pp,
        ),
        layer_assignment: vec![ranges; scenario.initial_dp],
        batch_assignment: dist.counts,
        failure_distribution: Vec::new(),
    })
}

/// Failure time of every node, in seconds; infinite when the rate is zero.
pub fn draw_failure_times(n_nodes: usize, rate_per_hour: f64, seed: u64) -> Vec<f64> {
    if rate_per_hour <= 0.0 {
        return vec![f64::INFINITY; n_nodes];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(rate_per_hour / 3600.0).expect("positive rate");
    (0..n_nodes).map(|_| exp.sample(&mut rng)).collect()
}

/// Faults inside the horizon as `(time, node)`, earliest first.
pub fn fault_schedule(scenario: &Scenario) -> Vec<(f64, NodeId)> {
    let times = draw_failure_times(
        scenario.n_nodes_initial,
        scenario.per_node_failure_rate,
        scenario.seed,
    );
    let mut faults: Vec<(f64, NodeId)> = times
        .into_iter()
        .enumerate()
        .filter(|(_, t)| *t < scenario.duration_seconds)
        .map(|(n, t)| (t, n))
        .collect();
    faults.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    faults
}

struct Run<'a> {
    scenario: &'a Scenario,
    profile: &'a Profile,
    events: Vec<Event>,
    intervals: Vec<Interval>,
    /// End of the interval already accounted for.
    clock: f64,
    /// Throughput is zero until this time.
    busy_until: f64,
    throughput: f64,
    active: usize,
    next_label: String,
}

impl Run<'_> {
    /// Accounts time up to `to` at the current rate, splitting off the part
    /// still inside a transition.
    fn advance(&mut self, to: f64) {
        if self.clock < self.busy_until && self.clock < to {
            let end = self.busy_until.min(to);
            self.push_interval(end, 0.0);
        }
        if self.clock < to {
            self.push_interval(to, self.throughput);
        }
    }

    fn push_interval(&mut self, end: f64, throughput: f64) {
        let start = self.clock;
        let event = if start > 0.0
            && self.intervals.last().is_some_and(|l| l.throughput == 0.0)
            && throughput > 0.0
        {
            "transition_end".to_string()
        } else {
            std::mem::take(&mut self.next_label)
        };
        let iv = Interval {
            start,
            end,
            throughput,
            active_nodes: self.active,
            event: if event.is_empty() {
                "continue".into()
            } else {
                event
            },
        };
        self.events.push(Event {
            time: end,
            kind: EventKind::IntervalSummary {
                start,
                end,
                throughput,
                samples: iv.samples(),
            },
        });
        self.intervals.push(iv);
        self.clock = end;
    }

    fn switch(&mut self, time: f64, option: &PolicyOption) {
        self.throughput = rate(self.scenario.global_batch_size, option.step.total_seconds);
        self.busy_until = time + option.transition_seconds;
        self.events.push(Event {
            time,
            kind: EventKind::PlanSwitch {
                policy: option.plan.policy,
                plan: option.plan.clone(),
                step_seconds: option.step.total_seconds,
                transition_seconds: option.transition_seconds,
                throughput: self.throughput,
            },
        });
    }
}

fn rate(batch: usize, step_seconds: f64) -> f64 {
    if step_seconds > 0.0 {
        batch as f64 / step_seconds
    } else {
        0.0
    }
}

/// Replays one scenario. Deterministic in `scenario.seed`.
pub fn run_simulation(scenario: &Scenario, profile: &Profile) -> Result<SimTrace> {
    let problems = scenario.check();
    if !problems.is_empty() {
        return Err(Error::InvalidInput(problems.join("; ")));
    }
    let mut plan = initial_plan(scenario, profile)?;
    let mut placement: Vec<NodeId> = (0..plan.node_count()).collect();
    let mut failed: Vec<FailedNode> = Vec::new();
    let step = estimate_step(&plan, profile)?;

    let mut run = Run {
        scenario,
        profile,
        events: Vec::new(),
        intervals: Vec::new(),
        clock: 0.0,
        busy_until: 0.0,
        throughput: 0.0,
        active: scenario.n_nodes_initial,
        next_label: "start".into(),
    };
    run.switch(
        0.0,
        &PolicyOption {
            plan: plan.clone(),
            step,
            transition_seconds: 0.0,
            transfer: None,
            objective: 0.0,
        },
    );

    for (time, node) in fault_schedule(scenario) {
        run.advance(time);
        let slot = placement.iter().position(|&n| n == node);
        let coord = slot.and_then(|s| plan.coord_of(s));
        run.events.push(Event {
            time,
            kind: EventKind::Fault { node, coord },
        });
        failed.push(FailedNode { node, coord });
        run.active -= 1;
        if coord.is_none() {
            run.next_label = "idle_fault".into();
            continue;
        }

        let state = ClusterState {
            total_nodes: scenario.n_nodes_initial,
            failed_nodes: failed.clone(),
            current_plan: plan.clone(),
            global_batch_size: scenario.global_batch_size,
            micro_batch_size: scenario.micro_batch_size,
            placement: Some(placement.clone()),
        };
        match decide(scenario, run.profile, &state) {
            Ok(option) => {
                run.next_label = match option.plan.policy {
                    Policy::DataRerouting => "reroute".into(),
                    Policy::DynamicParallelism => "reconfigure".into(),
                };
                run.switch(time, &option);
                if let Some(t) = &option.transfer {
                    placement = t.placement(option.plan.node_count());
                    for f in &mut failed {
                        f.coord = None;
                    }
                }
                plan = option.plan;
            }
            Err(e) if e.is_infeasible() => {
                log::info!("seed {}: halting at t={time:.1}s: {e}", scenario.seed);
                run.events.push(Event {
                    time,
                    kind: EventKind::Halt {
                        reason: e.to_string(),
                    },
                });
                run.throughput = 0.0;
                run.busy_until = time;
                run.next_label = "halt".into();
                break;
            }
            Err(e) => return Err(e),
        }
    }
    run.advance(scenario.duration_seconds);

    let total_samples: f64 = run.intervals.iter().map(Interval::samples).sum();
    let total_time = scenario.duration_seconds;
    Ok(SimTrace {
        seed: scenario.seed,
        events: run.events,
        intervals: run.intervals,
        total_samples,
        total_time,
        average_throughput: total_samples / total_time,
    })
}

fn decide(scenario: &Scenario, profile: &Profile, state: &ClusterState) -> Result<PolicyOption> {
    let mut cfg = scenario.search.clone();
    match scenario.policy {
        SimPolicy::Adaptive => {
            let active = state.surviving_count().max(1) as f64;
            cfg.expected_residence_seconds = if scenario.per_node_failure_rate > 0.0 {
                3600.0 / (scenario.per_node_failure_rate * active)
            } else {
                f64::INFINITY
            };
            let d = select_policy(state, profile, &cfg)?;
            Ok(PolicyOption {
                plan: d.chosen,
                step: d.step,
                transition_seconds: d.estimated_transition_seconds,
                transfer: d.transfer,
                objective: d.objective_value,
            })
        }
        SimPolicy::AlwaysReroute => match rerouting_option(state, profile, &cfg)? {
            Some(o) => Ok(o),
            None => {
                let pp: Vec<usize> = cfg.resolve(state).pp_range.iter().collect();
                dynamic_option(state, profile, &cfg, &ShapeSpace::Symmetric(pp))
            }
        },
        SimPolicy::AlwaysReconfigure => dynamic_option(
            state,
            profile,
            &cfg,
            &ShapeSpace::Symmetric(scenario.reconfigure_templates.clone()),
        ),
    }
}
