//! Re-planning after faults: plan search and the rerouting-vs-reconfiguring
//! decision.

mod policy;
mod search;

pub use policy::{
    dynamic_option, pick_best, rerouting_option, select_policy, throughput_objective, PlanDecision,
    PolicyOption,
};
pub use search::{
    best_plan_among, candidate_shapes, distribute_batch, evaluate_candidates, get_execution_plan,
    get_parallel_strategy, integer_partition, search, search_widening, split_layers,
    split_layers_scored, symmetric_candidates, BatchDistribution, EstimatedPlan, ShapeSpace,
};

use serde::{Deserialize, Serialize};

use crate::domain::ClusterState;

/// Inclusive integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub min: usize,
    pub max: usize,
}

impl Interval {
    pub fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: usize) -> bool {
        self.min <= v && v <= self.max
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<usize> {
        self.min..=self.max
    }
}

impl std::str::FromStr for Interval {
    type Err = String;

    /// `"a:b"` or a single value.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad interval bound {t:?}: {e}"))
        };
        let iv = match s.split_once(':') {
            Some((a, b)) => Interval::new(parse(a)?, parse(b)?),
            None => {
                let v = parse(s)?;
                Interval::new(v, v)
            }
        };
        if iv.min == 0 || iv.min > iv.max {
            return Err(format!("interval {s:?} must satisfy 1 <= min <= max"));
        }
        Ok(iv)
    }
}

/// Search knobs. Absent ranges are centred on the current plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default)]
    pub dp_range: Option<Interval>,
    #[serde(default)]
    pub pp_range: Option<Interval>,
    /// Number of node counts tried, starting from all survivors and going
    /// down one at a time (leaving nodes idle). Defaults to 1.
    #[serde(default)]
    pub max_faults_lookahead: Option<usize>,
    /// Expected time until the next fault, in seconds.
    #[serde(default = "default_residence")]
    pub expected_residence_seconds: f64,
}

fn default_residence() -> f64 {
    3600.0
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            dp_range: None,
            pp_range: None,
            max_faults_lookahead: None,
            expected_residence_seconds: default_residence(),
        }
    }
}

/// Ranges with defaults filled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedRanges {
    pub dp_range: Interval,
    pub pp_range: Interval,
}

impl SearchConfig {
    /// DP defaults to `dp ± 2`; PP to two below the shallowest through two
    /// above the deepest current pipeline.
    pub fn resolve(&self, state: &ClusterState) -> ResolvedRanges {
        let parallel = &state.current_plan.parallel;
        let dp = parallel.dp_degree.max(1);
        let lo = parallel.stage_counts.iter().copied().min().unwrap_or(1);
        let hi = parallel.stage_counts.iter().copied().max().unwrap_or(1);
        ResolvedRanges {
            dp_range: self
                .dp_range
                .unwrap_or(Interval::new(dp.saturating_sub(2).max(1), dp + 2)),
            pp_range: self
                .pp_range
                .unwrap_or(Interval::new(lo.saturating_sub(2).max(1), hi + 2)),
        }
    }
}
