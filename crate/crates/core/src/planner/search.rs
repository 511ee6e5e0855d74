//! Execution-plan search: candidate parallel shapes, batch and layer
//! distribution, and selection of the fastest estimated plan.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Interval, SearchConfig};
use crate::domain::{
    ranges_from_sizes, ClusterState, ExecutionPlan, LayerRange, ParallelConfig, Policy, Profile,
};
use crate::error::{Error, Result};
use crate::estimator::{peak_memory, pipeline_makespan, StepBreakdown};
use crate::restorer;

/// Non-decreasing vectors of length `dp` with entries in `pp_range` summing
/// to `n_nodes`.
pub fn integer_partition(n_nodes: usize, dp: usize, pp_range: Interval) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(dp);
    partition_into(
        n_nodes,
        dp,
        pp_range.min.max(1),
        pp_range.max,
        &mut current,
        &mut out,
    );
    out
}

fn partition_into(
    remaining: usize,
    parts: usize,
    lo: usize,
    hi: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if parts == 0 {
        if remaining == 0 {
            out.push(current.clone());
        }
        return;
    }
    for part in lo..=hi {
        // every later part is at least `part` and at most `hi`
        if part * parts > remaining {
            break;
        }
        if hi * parts < remaining {
            continue;
        }
        current.push(part);
        partition_into(remaining - part, parts - 1, part, hi, current, out);
        current.pop();
    }
}

/// Candidate shapes for `n_nodes - i` nodes, `i = 1..=max_faults`, every DP
/// degree in `dp_range`. Deduplicated, in generation order.
pub fn get_parallel_strategy(
    n_nodes: usize,
    max_faults: usize,
    dp_range: Interval,
    pp_range: Interval,
) -> Vec<ParallelConfig> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for i in 1..=max_faults.min(n_nodes) {
        let nodes = n_nodes - i;
        for dp in dp_range.iter().filter(|&dp| dp >= 1) {
            for counts in integer_partition(nodes, dp, pp_range) {
                if seen.insert(counts.clone()) {
                    out.push(ParallelConfig::new(counts));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchDistribution {
    pub counts: Vec<usize>,
    /// Fewer micro-batches than pipelines: some pipelines idle.
    pub degraded: bool,
}

/// Proportional pre-allocation by node count, then remainder micro-batches
/// one at a time to the pipeline with the most nodes per assigned
/// micro-batch, then refill empty pipelines from the largest allocation.
pub fn distribute_batch(n_micro: usize, stage_counts: &[usize]) -> BatchDistribution {
    let total: usize = stage_counts.iter().sum();
    let k = stage_counts.len();
    if k == 0 || total == 0 {
        return BatchDistribution {
            counts: vec![0; k],
            degraded: n_micro > 0,
        };
    }
    let mut counts: Vec<usize> = stage_counts
        .iter()
        .map(|&nodes| n_micro * nodes / total)
        .collect();
    let mut left = n_micro - counts.iter().sum::<usize>();
    while left > 0 {
        // ratio nodes/assigned, zero assigned counts as infinite; lowest index wins ties
        let mut best = 0;
        for p in 1..k {
            let (a, b) = (stage_counts[p], counts[p]);
            let (c, d) = (stage_counts[best], counts[best]);
            let better = match (b, d) {
                (0, 0) => false,
                (0, _) => true,
                (_, 0) => false,
                _ => a * d > c * b,
            };
            if better {
                best = p;
            }
        }
        counts[best] += 1;
        left -= 1;
    }
    let degraded = n_micro < k;
    if !degraded {
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let largest = (0..k)
                .max_by_key(|&p| (counts[p], std::cmp::Reverse(p)))
                .unwrap();
            counts[largest] -= 1;
            counts[empty] += 1;
        }
    }
    BatchDistribution { counts, degraded }
}

/// Even split with every placement of the leftover layers, memory-filtered,
/// fastest simulated placement wins; ties go to the lexicographically
/// smallest interval list.
pub fn split_layers(
    stage_count: usize,
    num_layers: usize,
    profile: &Profile,
    n_micro: usize,
) -> Result<Vec<LayerRange>> {
    split_layers_scored(stage_count, num_layers, profile, n_micro).map(|(r, _)| r)
}

/// Same as [`split_layers`], also returning the winning makespan.
pub fn split_layers_scored(
    stage_count: usize,
    num_layers: usize,
    profile: &Profile,
    n_micro: usize,
) -> Result<(Vec<LayerRange>, f64)> {
    if stage_count == 0 || num_layers < stage_count {
        return Err(Error::Domain(format!(
            "cannot split {num_layers} layers into {stage_count} stages"
        )));
    }
    let base = num_layers / stage_count;
    let extra = num_layers % stage_count;
    let mut best: Option<(f64, Vec<LayerRange>)> = None;
    let mut min_peak = u64::MAX;

    for chosen in (0..stage_count).combinations(extra) {
        let mut sizes = vec![base; stage_count];
        for &s in &chosen {
            sizes[s] += 1;
        }
        let worst = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| peak_memory(i, n, stage_count, profile).unwrap_or(u64::MAX))
            .max()
            .unwrap_or(0);
        min_peak = min_peak.min(worst);
        if worst > profile.device_memory_limit {
            continue;
        }
        let ranges = ranges_from_sizes(&sizes);
        let t = pipeline_makespan(&ranges, n_micro, profile);
        let better = match &best {
            None => true,
            Some((bt, br)) => t.total_cmp(bt).then_with(|| ranges.cmp(br)).is_lt(),
        };
        if better {
            best = Some((t, ranges));
        }
    }
    best.map(|(t, r)| (r, t)).ok_or(Error::MemoryInfeasible {
        stages: stage_count,
        layers: num_layers,
        min_peak_bytes: min_peak,
        limit_bytes: profile.device_memory_limit,
    })
}

/// Which parallel shapes a search may produce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeSpace {
    /// Per-pipeline stage counts from the configured ranges, asymmetric
    /// pipelines allowed.
    Asymmetric,
    /// Every pipeline has the same stage count, drawn from this list; the DP
    /// degree is any value that fits, surplus nodes idle.
    Symmetric(Vec<usize>),
}

/// A fully built plan with its estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedPlan {
    pub plan: ExecutionPlan,
    pub step: StepBreakdown,
}

type SplitCache = BTreeMap<(usize, usize), Result<(Vec<LayerRange>, f64), String>>;

/// Builds and estimates every candidate shape, returning the fastest.
pub fn best_plan_among(
    candidates: &[ParallelConfig],
    n_micro: usize,
    profile: &Profile,
    identical_splits: bool,
) -> Result<EstimatedPlan> {
    let mut best: Option<EstimatedPlan> = None;
    let mut last_err: Option<Error> = None;
    for r in evaluate_candidates(candidates, n_micro, profile, identical_splits) {
        match r {
            Ok(c) => {
                let better = match &best {
                    None => true,
                    Some(b) => c
                        .step
                        .total_seconds
                        .total_cmp(&b.step.total_seconds)
                        .then_with(|| c.plan.cmp(&b.plan))
                        .is_lt(),
                };
                if better {
                    best = Some(c);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| match last_err {
        Some(e @ Error::MemoryInfeasible { .. }) => e,
        Some(e) => Error::NoFeasiblePlan(e.to_string()),
        None => Error::NoFeasiblePlan("no candidate parallel shape in the search ranges".into()),
    })
}

/// Estimates each candidate (in input order). Failed candidates carry the
/// reason they were discarded.
pub fn evaluate_candidates(
    candidates: &[ParallelConfig],
    n_micro: usize,
    profile: &Profile,
    identical_splits: bool,
) -> Vec<Result<EstimatedPlan>> {
    let batches: Vec<BatchDistribution> = candidates
        .iter()
        .map(|c| distribute_batch(n_micro, &c.stage_counts))
        .collect();

    let split_key = |c: &ParallelConfig, b: &BatchDistribution, p: usize| {
        let m = if identical_splits {
            b.counts.iter().copied().max().unwrap_or(0)
        } else {
            b.counts[p]
        };
        (c.stage_counts[p], m)
    };
    let keys: BTreeSet<(usize, usize)> = candidates
        .iter()
        .zip(&batches)
        .flat_map(|(c, b)| (0..c.dp_degree).map(move |p| split_key(c, b, p)))
        .collect();
    let cache: SplitCache = keys
        .into_par_iter()
        .map(|(s, m)| {
            let r =
                split_layers_scored(s, profile.num_layers, profile, m).map_err(|e| e.to_string());
            ((s, m), r)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();

    candidates
        .par_iter()
        .zip(batches.par_iter())
        .map(|(c, b)| {
            let mut layers = Vec::with_capacity(c.dp_degree);
            let mut makespans = Vec::with_capacity(c.dp_degree);
            for p in 0..c.dp_degree {
                let key = split_key(c, b, p);
                match &cache[&key] {
                    Ok((ranges, t)) => {
                        layers.push(ranges.clone());
                        makespans.push(if identical_splits {
                            pipeline_makespan(ranges, b.counts[p], profile)
                        } else {
                            *t
                        });
                    }
                    Err(_) => {
                        return Err(split_layers(key.0, profile.num_layers, profile, key.1)
                            .expect_err("cached failure"))
                    }
                }
            }
            let plan = ExecutionPlan {
                policy: Policy::DynamicParallelism,
                parallel: c.clone(),
                layer_assignment: layers,
                batch_assignment: b.counts.clone(),
                failure_distribution: Vec::new(),
            };
            let step = breakdown(&plan, profile, makespans);
            Ok(EstimatedPlan { plan, step })
        })
        .collect()
}

fn breakdown(plan: &ExecutionPlan, profile: &Profile, makespans: Vec<f64>) -> StepBreakdown {
    let compute_seconds = makespans.iter().copied().fold(0.0, f64::max);
    let (sync_rounds, sync_seconds) = if plan.parallel.dp_degree > 1 {
        let (s, t) = restorer::sync_time(plan, profile);
        (s.num_rounds(), t)
    } else {
        (0, 0.0)
    };
    StepBreakdown {
        pipeline_makespans: makespans,
        compute_seconds,
        sync_rounds,
        sync_seconds,
        total_seconds: compute_seconds + sync_seconds,
    }
}

/// Shapes for a symmetric search over `survivors` nodes.
pub fn symmetric_candidates(survivors: usize, stage_counts: &[usize]) -> Vec<ParallelConfig> {
    let mut out = Vec::new();
    for &s in stage_counts.iter().filter(|&&s| s >= 1) {
        for dp in 1..=survivors / s {
            out.push(ParallelConfig::symmetric(dp, s));
        }
    }
    out
}

/// Candidate shapes for re-planning `state` within `space`.
pub fn candidate_shapes(
    state: &ClusterState,
    cfg: &SearchConfig,
    space: &ShapeSpace,
) -> Vec<ParallelConfig> {
    let survivors = state.surviving_count();
    match space {
        ShapeSpace::Asymmetric => {
            let ranges = cfg.resolve(state);
            // Shapes are enumerated for `base - i` nodes; `i < k` would need
            // nodes that are gone, so the lookahead starts at `i = k`.
            let k = state.faults_in_plan().max(1);
            let base = survivors + k;
            let lookahead = cfg.max_faults_lookahead.unwrap_or(1).max(1);
            let max_faults = (k - 1 + lookahead).min(base - 1);
            get_parallel_strategy(base, max_faults, ranges.dp_range, ranges.pp_range)
                .into_iter()
                .filter(|c| c.node_count() <= survivors)
                .collect()
        }
        ShapeSpace::Symmetric(stage_counts) => symmetric_candidates(survivors, stage_counts),
    }
}

/// Best plan for the survivors of `state` (minimum estimated step time).
pub fn get_execution_plan(
    state: &ClusterState,
    profile: &Profile,
    cfg: &SearchConfig,
) -> Result<ExecutionPlan> {
    search(state, profile, cfg, &ShapeSpace::Asymmetric).map(|e| e.plan)
}

pub fn search(
    state: &ClusterState,
    profile: &Profile,
    cfg: &SearchConfig,
    space: &ShapeSpace,
) -> Result<EstimatedPlan> {
    if state.surviving_count() == 0 {
        return Err(Error::NoFeasiblePlan("no surviving nodes".into()));
    }
    let n_micro = state.n_micro()?;
    let candidates = candidate_shapes(state, cfg, space);
    let identical = matches!(space, ShapeSpace::Symmetric(_));
    best_plan_among(&candidates, n_micro, profile, identical)
}

/// [`search`], retried over every DP degree and stage count when the
/// configured neighborhood has no feasible plan.
pub fn search_widening(
    state: &ClusterState,
    profile: &Profile,
    cfg: &SearchConfig,
    space: &ShapeSpace,
) -> Result<EstimatedPlan> {
    match search(state, profile, cfg, space) {
        Ok(p) => Ok(p),
        Err(first) if first.is_infeasible() && *space == ShapeSpace::Asymmetric => {
            let survivors = state.surviving_count();
            let wide = SearchConfig {
                dp_range: Some(Interval::new(1, survivors)),
                pp_range: Some(Interval::new(1, survivors.min(profile.num_layers))),
                ..cfg.clone()
            };
            log::debug!("widening search after: {first}");
            search(state, profile, &wide, space).map_err(|_| first)
        }
        Err(e) => Err(e),
    }
}
