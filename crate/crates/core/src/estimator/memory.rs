use serde::{Deserialize, Serialize};

use crate::domain::{ExecutionPlan, Profile};
use crate::error::{Error, Result};

/// Steady-state peak bytes on stage `stage_index` of an `n_stages` pipeline:
/// static weights, gradients and optimizer state for its layers, plus one
/// activation set per micro-batch still in flight (`n_stages - stage_index`).
pub fn peak_memory(
    stage_index: usize,
    n_layers_in_stage: usize,
    n_stages: usize,
    profile: &Profile,
) -> Result<u64> {
    if stage_index >= n_stages {
        return Err(Error::Domain(format!(
            "stage index {stage_index} outside 0..{n_stages}"
        )));
    }
    if n_layers_in_stage == 0 {
        return Err(Error::Domain("stage holds no layers".into()));
    }
    let layers = n_layers_in_stage as u64;
    let in_flight = (n_stages - stage_index) as u64;
    let static_bytes = layers.saturating_mul(profile.static_bytes_per_layer());
    let dynamic_bytes = in_flight
        .saturating_mul(layers)
        .saturating_mul(profile.mem_activation_per_layer_per_microbatch);
    Ok(static_bytes.saturating_add(dynamic_bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageMemory {
    pub pipeline: usize,
    pub stage: usize,
    pub layers: usize,
    pub peak_bytes: u64,
    pub limit_bytes: u64,
}

impl StageMemory {
    pub fn fits(&self) -> bool {
        self.peak_bytes <= self.limit_bytes
    }
}

/// Peak estimate for every stage of every pipeline. Empty stages report 0.
pub fn plan_memory(plan: &ExecutionPlan, profile: &Profile) -> Vec<StageMemory> {
    let mut out = Vec::new();
    for (pipeline, ranges) in plan.layer_assignment.iter().enumerate() {
        for (stage, r) in ranges.iter().enumerate() {
            let peak_bytes = peak_memory(stage, r.len(), ranges.len(), profile).unwrap_or(0);
            out.push(StageMemory {
                pipeline,
                stage,
                layers: r.len(),
                peak_bytes,
                limit_bytes: profile.device_memory_limit,
            });
        }
    }
    out
}

pub fn fits_in_memory(plan: &ExecutionPlan, profile: &Profile) -> bool {
    plan_memory(plan, profile).iter().all(StageMemory::fits)
}
