//! Step-time and memory estimates for candidate execution plans.

mod memory;
mod pipeline;

pub use memory::{fits_in_memory, peak_memory, plan_memory, StageMemory};
pub use pipeline::{
    build_1f1b_schedule, simulate_pipeline_1f1b, warmup_forwards, OpKind, OpRecord, PipelineOp,
    ScheduleTrace, StageTime, StageTimes,
};

use serde::{Deserialize, Serialize};

use crate::domain::{validate_plan_shape, ExecutionPlan, Policy, Profile};
use crate::error::{Error, Result};
use crate::restorer;

/// Closed-form 1F1B step time of a uniform pipeline:
/// `(n_stages + n_micro - 1) * (t_f + t_b)`.
pub fn step_time_symmetric(n_stages: usize, n_micro: usize, t_f: f64, t_b: f64) -> Result<f64> {
    if n_stages == 0 || n_micro == 0 {
        return Err(Error::Domain(format!(
            "need at least one stage and one micro-batch (got {n_stages} stages, {n_micro} micro-batches)"
        )));
    }
    if !(t_f >= 0.0 && t_b >= 0.0) {
        return Err(Error::Domain("stage times must be non-negative".into()));
    }
    Ok((n_stages + n_micro - 1) as f64 * (t_f + t_b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepBreakdown {
    /// Compute time of each pipeline (the rerouting estimate repeats the
    /// shared value for every pipeline).
    pub pipeline_makespans: Vec<f64>,
    pub compute_seconds: f64,
    pub sync_rounds: usize,
    pub sync_seconds: f64,
    pub total_seconds: f64,
}

/// Simulated makespan of one pipeline given its stage intervals.
pub fn pipeline_makespan(
    ranges: &[crate::domain::LayerRange],
    n_micro: usize,
    profile: &Profile,
) -> f64 {
    simulate_pipeline_1f1b(&StageTimes::from_layers(ranges, profile), n_micro).makespan
}

fn check_shape(plan: &ExecutionPlan, profile: &Profile) -> Result<()> {
    let v = validate_plan_shape(plan, profile.num_layers);
    if v.is_empty() {
        Ok(())
    } else {
        let msgs: Vec<String> = v.iter().map(ToString::to_string).collect();
        Err(Error::InvalidInput(msgs.join("; ")))
    }
}

/// Step time of a dynamic-parallelism plan: slowest simulated pipeline plus the
/// colored gradient-synchronization rounds.
pub fn estimate_dynamic(plan: &ExecutionPlan, profile: &Profile) -> Result<StepBreakdown> {
    if plan.policy != Policy::DynamicParallelism {
        return Err(Error::Domain(
            "asymmetric estimate expects a dynamic-parallelism plan".into(),
        ));
    }
    check_shape(plan, profile)?;
    let pipeline_makespans: Vec<f64> = plan
        .layer_assignment
        .iter()
        .zip(&plan.batch_assignment)
        .map(|(ranges, &m)| pipeline_makespan(ranges, m, profile))
        .collect();
    Ok(with_sync(plan, profile, pipeline_makespans))
}

fn with_sync(
    plan: &ExecutionPlan,
    profile: &Profile,
    pipeline_makespans: Vec<f64>,
) -> StepBreakdown {
    let compute_seconds = pipeline_makespans.iter().copied().fold(0.0, f64::max);
    // A lone pipeline has no data-parallel peers to synchronize with.
    let (sync_rounds, sync_seconds) = if plan.parallel.dp_degree > 1 {
        let (schedule, t) = restorer::sync_time(plan, profile);
        (schedule.num_rounds(), t)
    } else {
        (0, 0.0)
    };
    StepBreakdown {
        pipeline_makespans,
        compute_seconds,
        sync_rounds,
        sync_seconds,
        total_seconds: compute_seconds + sync_seconds,
    }
}

pub fn step_time_asymmetric(plan: &ExecutionPlan, profile: &Profile) -> Result<f64> {
    estimate_dynamic(plan, profile).map(|b| b.total_seconds)
}

/// Rerouting step time for failures spread over stages:
/// `(N_pp + N_m - 1 + sum_i [F_i > 0] * N_m * F_i / (N_dp - F_i)) * (T_f + T_b)`.
///
/// `N_m` is the largest per-pipeline micro-batch count and `T_f + T_b` the
/// slowest stage of the (shared) base layer split.
pub fn step_time_rerouting(plan: &ExecutionPlan, profile: &Profile) -> Result<f64> {
    if plan.policy != Policy::DataRerouting {
        return Err(Error::Domain(
            "rerouting estimate expects a data-rerouting plan".into(),
        ));
    }
    let dp = plan.parallel.dp_degree;
    if let Some((stage, &failed)) = plan
        .failure_distribution
        .iter()
        .enumerate()
        .find(|(_, &f)| f >= dp)
    {
        return Err(Error::ReroutingInfeasible {
            stage,
            failed,
            dp_degree: dp,
        });
    }
    check_shape(plan, profile)?;
    let ranges = &plan.layer_assignment[0];
    let n_pp = ranges.len();
    let n_m = plan.batch_assignment.iter().copied().max().unwrap_or(0);
    let round_trip = StageTimes::from_layers(ranges, profile).max_round_trip();
    Ok(rerouting_formula(
        n_pp,
        n_m,
        dp,
        &plan.failure_distribution,
        round_trip,
    ))
}

pub(crate) fn rerouting_formula(
    n_pp: usize,
    n_m: usize,
    dp: usize,
    failures: &[usize],
    round_trip: f64,
) -> f64 {
    let penalty: f64 = failures
        .iter()
        .filter(|&&f| f > 0)
        .map(|&f| (n_m * f) as f64 / (dp - f) as f64)
        .sum();
    ((n_pp + n_m) as f64 - 1.0 + penalty) * round_trip
}

/// Step estimate for any plan. Rerouting plans still synchronize gradients
/// across surviving peers, so the base plan's sync rounds are added.
pub fn estimate_step(plan: &ExecutionPlan, profile: &Profile) -> Result<StepBreakdown> {
    match plan.policy {
        Policy::DynamicParallelism => estimate_dynamic(plan, profile),
        Policy::DataRerouting => {
            let t = step_time_rerouting(plan, profile)?;
            Ok(with_sync(plan, profile, vec![t; plan.parallel.dp_degree]))
        }
    }
}

/// Wall-clock cost of switching to `new`. Rerouting is free; dynamic
/// parallelism pays weight transfer plus a training restart. Plan search runs
/// ahead of time and is not charged.
pub fn transition_time(
    _old: &ExecutionPlan,
    new: &ExecutionPlan,
    profile: &Profile,
    transfer_seconds: f64,
) -> f64 {
    match new.policy {
        Policy::DataRerouting => 0.0,
        Policy::DynamicParallelism => transfer_seconds.max(0.0) + profile.restart_overhead,
    }
}
