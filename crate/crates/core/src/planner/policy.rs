use serde::{Deserialize, Serialize};

use super::search::{search_widening, ShapeSpace};
use super::SearchConfig;
use crate::domain::{ClusterState, ExecutionPlan, Policy, Profile};
use crate::error::{Error, Result};
use crate::estimator::{estimate_step, fits_in_memory, transition_time, StepBreakdown};
use crate::restorer::{plan_transfers, NodeLayout, TransferAssignment};

/// Expected samples per second over the next residence period:
/// `(batch / t_step) * t_exp / (t_trans + t_exp)`.
pub fn throughput_objective(
    batch: usize,
    step_seconds: f64,
    transition_seconds: f64,
    t_exp: f64,
) -> f64 {
    if step_seconds <= 0.0 {
        return 0.0;
    }
    let rate = batch as f64 / step_seconds;
    if t_exp.is_infinite() {
        return rate;
    }
    rate * t_exp / (transition_seconds + t_exp)
}

/// One way of continuing after a fault.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOption {
    pub plan: ExecutionPlan,
    pub step: StepBreakdown,
    pub transition_seconds: f64,
    /// Weight migration for a reconfiguration.
    pub transfer: Option<TransferAssignment>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedAlternative {
    pub policy: Policy,
    pub summary: Option<String>,
    pub objective_value: Option<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDecision {
    pub chosen: ExecutionPlan,
    pub objective_value: f64,
    pub estimated_step_seconds: f64,
    pub estimated_transition_seconds: f64,
    pub step: StepBreakdown,
    pub transfer: Option<TransferAssignment>,
    pub rejected_alternatives: Vec<RejectedAlternative>,
    /// No fault touched the current plan; it is kept as is.
    pub retained: bool,
}

/// Keep the current layer split and hand the failed devices' micro-batches to
/// their data-parallel peers. `None` when the current pipelines differ, a
/// stage has lost every replica, or the current split does not fit memory.
pub fn rerouting_option(
    state: &ClusterState,
    profile: &Profile,
    cfg: &SearchConfig,
) -> Result<Option<PolicyOption>> {
    let current = &state.current_plan;
    if !current.parallel.is_symmetric() || !current.has_identical_pipelines() {
        return Ok(None);
    }
    let failures = state.failure_vector();
    if failures.iter().any(|&f| f >= current.parallel.dp_degree)
        || !fits_in_memory(current, profile)
    {
        return Ok(None);
    }
    let plan = ExecutionPlan {
        policy: Policy::DataRerouting,
        failure_distribution: failures,
        ..current.clone()
    };
    let step = estimate_step(&plan, profile)?;
    let transition_seconds = transition_time(current, &plan, profile, 0.0);
    let objective = throughput_objective(
        state.global_batch_size,
        step.total_seconds,
        transition_seconds,
        cfg.expected_residence_seconds,
    );
    Ok(Some(PolicyOption {
        plan,
        step,
        transition_seconds,
        transfer: None,
        objective,
    }))
}

/// Best re-planned configuration for the survivors plus its migration cost.
pub fn dynamic_option(
    state: &ClusterState,
    profile: &Profile,
    cfg: &SearchConfig,
    space: &ShapeSpace,
) -> Result<PolicyOption> {
    let found = search_widening(state, profile, cfg, space)?;
    let layout = NodeLayout::from_state(state);
    let transfer = plan_transfers(&layout, &found.plan, profile)?;
    let transition_seconds = transition_time(
        &state.current_plan,
        &found.plan,
        profile,
        transfer.transfer_seconds,
    );
    let objective = throughput_objective(
        state.global_batch_size,
        found.step.total_seconds,
        transition_seconds,
        cfg.expected_residence_seconds,
    );
    Ok(PolicyOption {
        plan: found.plan,
        step: found.step,
        transition_seconds,
        transfer: Some(transfer),
        objective,
    })
}

/// Index of the highest objective; ties prefer the shorter step, then the
/// shorter transition, then the canonically smaller plan.
pub fn pick_best(options: &[PolicyOption]) -> Option<usize> {
    (0..options.len()).min_by(|&a, &b| {
        let (x, y) = (&options[a], &options[b]);
        y.objective
            .total_cmp(&x.objective)
            .then(x.step.total_seconds.total_cmp(&y.step.total_seconds))
            .then(x.transition_seconds.total_cmp(&y.transition_seconds))
            .then_with(|| x.plan.cmp(&y.plan))
    })
}

/// Chooses between rerouting and reconfiguring for the state right after a
/// fault, maximizing [`throughput_objective`].
pub fn select_policy(
    state: &ClusterState,
    profile: &Profile,
    cfg: &SearchConfig,
) -> Result<PlanDecision> {
    if state.faults_in_plan() == 0 {
        let step = estimate_step(&state.current_plan, profile)?;
        return Ok(PlanDecision {
            chosen: state.current_plan.clone(),
            objective_value: throughput_objective(
                state.global_batch_size,
                step.total_seconds,
                0.0,
                cfg.expected_residence_seconds,
            ),
            estimated_step_seconds: step.total_seconds,
            estimated_transition_seconds: 0.0,
            step,
            transfer: None,
            rejected_alternatives: Vec::new(),
            retained: true,
        });
    }

    let mut options = Vec::new();
    let mut rejected = Vec::new();
    match rerouting_option(state, profile, cfg)? {
        Some(o) => options.push(o),
        None => rejected.push(RejectedAlternative {
            policy: Policy::DataRerouting,
            summary: None,
            objective_value: None,
            reason: "a stage lost every replica, pipelines differ, or the split exceeds memory"
                .into(),
        }),
    }
    match dynamic_option(state, profile, cfg, &ShapeSpace::Asymmetric) {
        Ok(o) => options.push(o),
        Err(e) if e.is_infeasible() || matches!(e, Error::DimensionMismatch { .. }) => rejected
            .push(RejectedAlternative {
                policy: Policy::DynamicParallelism,
                summary: None,
                objective_value: None,
                reason: e.to_string(),
            }),
        Err(e) => return Err(e),
    }

    let Some(best) = pick_best(&options) else {
        let reasons: Vec<String> = rejected.iter().map(|r| r.reason.clone()).collect();
        return Err(Error::NoFeasiblePlan(reasons.join("; ")));
    };
    let chosen = options.swap_remove(best);
    for o in options {
        rejected.push(RejectedAlternative {
            policy: o.plan.policy,
            summary: Some(o.plan.summary()),
            objective_value: Some(o.objective),
            reason: "lower objective".into(),
        });
    }
    Ok(PlanDecision {
        objective_value: chosen.objective,
        estimated_step_seconds: chosen.step.total_seconds,
        estimated_transition_seconds: chosen.transition_seconds,
        chosen: chosen.plan,
        step: chosen.step,
        transfer: chosen.transfer,
        rejected_alternatives: rejected,
        retained: false,
    })
}
