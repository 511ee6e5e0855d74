use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_simulation, Scenario, SimPolicy, SimTrace};
use crate::domain::Profile;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub policy: SimPolicy,
    pub trace: SimTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: SimPolicy,
    pub mean_throughput: f64,
    /// Average throughput per seed, in seed order.
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub numerator: SimPolicy,
    pub denominator: SimPolicy,
    pub per_seed: Vec<f64>,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicySummary>,
    pub ratios: Vec<RatioSummary>,
}

/// Every policy on every seed, ordered by seed then policy. Runs are
/// independent and execute in parallel.
pub fn run_all(scenario: &Scenario, profile: &Profile, seeds: &[u64]) -> Result<Vec<RunRecord>> {
    let jobs: Vec<(u64, SimPolicy)> = seeds
        .iter()
        .flat_map(|&s| SimPolicy::ALL.into_iter().map(move |p| (s, p)))
        .collect();
    jobs.into_par_iter()
        .map(|(seed, policy)| {
            let sc = scenario.with_seed(seed).with_policy(policy);
            run_simulation(&sc, profile).map(|trace| RunRecord {
                seed,
                policy,
                trace,
            })
        })
        .collect()
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else {
        a / b
    }
}

/// Per-policy mean throughput and adaptive-vs-baseline ratios across seeds.
pub fn compare_policies(
    scenario: &Scenario,
    profile: &Profile,
    seeds: &[u64],
) -> Result<(Comparison, Vec<RunRecord>)> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("at least one seed is required".into()));
    }
    let runs = run_all(scenario, profile, seeds)?;
    let throughput = |policy: SimPolicy| -> Vec<f64> {
        seeds
            .iter()
            .map(|&s| {
                runs.iter()
                    .find(|r| r.seed == s && r.policy == policy)
                    .map_or(0.0, |r| r.trace.average_throughput)
            })
            .collect()
    };
    let policies: Vec<PolicySummary> = SimPolicy::ALL
        .into_iter()
        .map(|policy| {
            let per_seed = throughput(policy);
            PolicySummary {
                policy,
                mean_throughput: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                per_seed,
            }
        })
        .collect();
    let ratios = [SimPolicy::AlwaysReroute, SimPolicy::AlwaysReconfigure]
        .into_iter()
        .map(|denominator| {
            let num = throughput(SimPolicy::Adaptive);
            let den = throughput(denominator);
            let per_seed: Vec<f64> = num.iter().zip(&den).map(|(&a, &b)| ratio(a, b)).collect();
            RatioSummary {
                numerator: SimPolicy::Adaptive,
                denominator,
                min: per_seed.iter().copied().fold(f64::INFINITY, f64::min),
                max: per_seed.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                per_seed,
            }
        })
        .collect();
    Ok((
        Comparison {
            seeds: seeds.to_vec(),
            policies,
            ratios,
        },
        runs,
    ))
}
