//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use ftplan::domain::{
    ranges_from_sizes, ClusterState, ExecutionPlan, FailedNode, LayerRange, ParallelConfig, Policy,
    Profile, StageCoord,
};
use ftplan::estimator::{estimate_dynamic, peak_memory};
use ftplan::planner::{distribute_batch, Interval, SearchConfig};
use ftplan::restorer::NodeLayout;
use itertools::Itertools;

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn load_profile(name: &str) -> Profile {
    Profile::load(configs_dir().join(name)).expect("fixture profile")
}

/// Small SplitMix64 generator so oracle inputs do not depend on the crate's
/// own RNG plumbing.
pub struct Rng(pub u64);

impl Rng {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `lo..=hi`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as usize
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}

pub fn profile(layers: usize, tf: f64, tb: f64) -> Profile {
    Profile {
        t_forward_per_layer: tf,
        t_backward_per_layer: tb,
        mem_params_per_layer: 2,
        mem_optimizer_per_layer: 6,
        mem_grads_per_layer: 2,
        mem_activation_per_layer_per_microbatch: 1,
        weight_bytes_per_layer: 1,
        link_bandwidth: 1.0,
        allreduce_time_per_layer: 0.5,
        restart_overhead: 10.0,
        device_memory_limit: 1 << 40,
        num_layers: layers,
    }
}

// ---------------------------------------------------------------------------
// 1F1B dependency DAG
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Op {
    F(usize),
    B(usize),
}

/// Longest path through the explicit 1F1B dependency DAG. Nodes are
/// `(stage, op)`; edges join consecutive ops of a stage, forward `j` across
/// stages downward, backward `j` upward, and the last stage's forward `j` to
/// its backward `j`. Node weight is the op duration.
pub fn dag_makespan(times: &[(f64, f64)], n_micro: usize) -> f64 {
    let n = times.len();
    if n == 0 || n_micro == 0 {
        return 0.0;
    }
    let orders: Vec<Vec<Op>> = (0..n)
        .map(|s| {
            let warm = (n - s).min(n_micro);
            let mut v: Vec<Op> = (0..warm).map(Op::F).collect();
            let mut f = warm;
            for b in 0..n_micro {
                v.push(Op::B(b));
                if f < n_micro {
                    v.push(Op::F(f));
                    f += 1;
                }
            }
            v
        })
        .collect();

    let mut index = HashMap::new();
    let mut weight = Vec::new();
    for (s, ops) in orders.iter().enumerate() {
        for &op in ops {
            index.insert((s, op), weight.len());
            weight.push(match op {
                Op::F(_) => times[s].0,
                Op::B(_) => times[s].1,
            });
        }
    }
    let v = weight.len();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); v];
    for (s, ops) in orders.iter().enumerate() {
        for (k, &op) in ops.iter().enumerate() {
            let me = index[&(s, op)];
            if k > 0 {
                preds[me].push(index[&(s, ops[k - 1])]);
            }
            let dep = match op {
                Op::F(j) if s > 0 => Some((s - 1, Op::F(j))),
                Op::F(_) => None,
                Op::B(j) if s + 1 < n => Some((s + 1, Op::B(j))),
                Op::B(j) => Some((s, Op::F(j))),
            };
            if let Some(d) = dep {
                preds[me].push(index[&d]);
            }
        }
    }
    // Kahn's algorithm
    let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); v];
    for (me, ps) in preds.iter().enumerate() {
        for &p in ps {
            succs[p].push(me);
        }
    }
    let mut ready: Vec<usize> = (0..v).filter(|&i| indeg[i] == 0).collect();
    let mut finish = vec![0.0f64; v];
    let mut seen = 0;
    while let Some(u) = ready.pop() {
        seen += 1;
        let start = preds[u].iter().map(|&p| finish[p]).fold(0.0, f64::max);
        finish[u] = start + weight[u];
        for &w in &succs[u] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                ready.push(w);
            }
        }
    }
    assert_eq!(seen, v, "dependency graph has a cycle");
    finish.into_iter().fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Assignment and coloring
// ---------------------------------------------------------------------------

pub fn brute_force_assignment(cost: &[Vec<u64>]) -> u64 {
    let n = cost.len();
    (0..n)
        .permutations(n)
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum())
        .min()
        .unwrap_or(0)
}

/// Exact chromatic number by backtracking over color counts.
pub fn chromatic_number(n: usize, edges: &[(usize, usize)]) -> usize {
    if n == 0 {
        return 0;
    }
    let mut adj = vec![BTreeSet::new(); n];
    for &(a, b) in edges {
        if a != b {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }
    fn colorable(v: usize, k: usize, adj: &[BTreeSet<usize>], col: &mut Vec<usize>) -> bool {
        if v == adj.len() {
            return true;
        }
        // symmetry break: vertex v uses at most one new color
        let used = col[..v].iter().copied().max().map_or(0, |m| m + 1);
        for c in 0..k.min(used + 1) {
            if adj[v].iter().all(|&u| u >= v || col[u] != c) {
                col[v] = c;
                if colorable(v + 1, k, adj, col) {
                    return true;
                }
            }
        }
        false
    }
    (1..=n)
        .find(|&k| colorable(0, k, &adj, &mut vec![usize::MAX; n]))
        .unwrap()
}

// ---------------------------------------------------------------------------
// Plan search
// ---------------------------------------------------------------------------

/// Every placement of the leftover layers, memory filtered, fastest first;
/// ties by interval vector. Enumerated by bitmask.
pub fn oracle_split(
    stages: usize,
    layers: usize,
    profile: &Profile,
    n_micro: usize,
) -> Option<Vec<LayerRange>> {
    if stages == 0 || layers < stages {
        return None;
    }
    let base = layers / stages;
    let extra = layers % stages;
    let mut best: Option<(f64, Vec<LayerRange>)> = None;
    for mask in 0u32..(1 << stages) {
        if mask.count_ones() as usize != extra {
            continue;
        }
        let sizes: Vec<usize> = (0..stages)
            .map(|s| base + ((mask >> s) & 1) as usize)
            .collect();
        let fits = sizes.iter().enumerate().all(|(i, &n)| {
            peak_memory(i, n, stages, profile).unwrap() <= profile.device_memory_limit
        });
        if !fits {
            continue;
        }
        let ranges = ranges_from_sizes(&sizes);
        let times: Vec<(f64, f64)> = sizes
            .iter()
            .map(|&n| {
                (
                    n as f64 * profile.t_forward_per_layer,
                    n as f64 * profile.t_backward_per_layer,
                )
            })
            .collect();
        let t = dag_makespan(&times, n_micro);
        let better = match &best {
            None => true,
            Some((bt, br)) => t < *bt || (t == *bt && ranges < *br),
        };
        if better {
            best = Some((t, ranges));
        }
    }
    best.map(|(_, r)| r)
}

/// All non-decreasing stage-count vectors with `dp` in `dp_range`, entries in
/// `pp_range`, summing to `nodes`: multisets of stage counts, filtered by sum.
pub fn oracle_shapes(
    nodes: usize,
    dp_range: (usize, usize),
    pp_range: (usize, usize),
) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for dp in dp_range.0.max(1)..=dp_range.1.min(nodes) {
        for v in (pp_range.0..=pp_range.1).combinations_with_replacement(dp) {
            if v.iter().sum::<usize>() == nodes {
                out.push(v);
            }
        }
    }
    out
}

/// Exhaustive best plan over shapes for each node count in `node_counts`:
/// every shape, the oracle split per pipeline, minimum estimated step then
/// canonical plan order.
pub fn oracle_best_plan(
    node_counts: &[usize],
    n_micro: usize,
    dp_range: (usize, usize),
    pp_range: (usize, usize),
    profile: &Profile,
) -> Option<(ExecutionPlan, f64)> {
    let mut splits: HashMap<(usize, usize), Option<Vec<LayerRange>>> = HashMap::new();
    let mut best: Option<(ExecutionPlan, f64)> = None;
    for &nodes in node_counts {
        for shape in oracle_shapes(nodes, dp_range, pp_range) {
            let batches = distribute_batch(n_micro, &shape).counts;
            let layers: Option<Vec<Vec<LayerRange>>> = shape
                .iter()
                .zip(&batches)
                .map(|(&s, &m)| {
                    splits
                        .entry((s, m))
                        .or_insert_with(|| oracle_split(s, profile.num_layers, profile, m))
                        .clone()
                })
                .collect();
            let Some(layers) = layers else { continue };
            let plan = ExecutionPlan {
                policy: Policy::DynamicParallelism,
                parallel: ParallelConfig::new(shape),
                layer_assignment: layers,
                batch_assignment: batches,
                failure_distribution: vec![],
            };
            let t = estimate_dynamic(&plan, profile).unwrap().total_seconds;
            let better = match &best {
                None => true,
                Some((bp, bt)) => t < *bt || (t == *bt && plan < *bp),
            };
            if better {
                best = Some((plan, t));
            }
        }
    }
    best
}

/// A cluster of `total` nodes, one single-stage pipeline per node, whose
/// first `failed` nodes have just failed.
pub fn flat_state(total: usize, failed: usize, global_batch: usize, layers: usize) -> ClusterState {
    let stages = vec![vec![LayerRange::new(0, layers)]; total];
    ClusterState {
        total_nodes: total,
        failed_nodes: (0..failed)
            .map(|n| FailedNode {
                node: n,
                coord: Some(StageCoord {
                    pipeline: n,
                    stage: 0,
                }),
            })
            .collect(),
        current_plan: ExecutionPlan {
            policy: Policy::DynamicParallelism,
            parallel: ParallelConfig::new(vec![1; total]),
            layer_assignment: stages,
            batch_assignment: distribute_batch(global_batch, &vec![1; total]).counts,
            failure_distribution: vec![],
        },
        global_batch_size: global_batch,
        micro_batch_size: 1,
        placement: None,
    }
}

/// Search instance: state, explicit ranges, lookahead.
pub struct PlannerCase {
    pub state: ClusterState,
    pub dp_range: (usize, usize),
    pub pp_range: (usize, usize),
    pub lookahead: usize,
}

impl PlannerCase {
    pub fn config(&self) -> SearchConfig {
        SearchConfig {
            dp_range: Some(Interval::new(self.dp_range.0, self.dp_range.1)),
            pp_range: Some(Interval::new(self.pp_range.0, self.pp_range.1)),
            max_faults_lookahead: Some(self.lookahead),
            ..SearchConfig::default()
        }
    }

    /// Node counts the search may use: all survivors, then fewer.
    pub fn node_counts(&self) -> Vec<usize> {
        let survivors = self.state.surviving_count();
        (0..self.lookahead)
            .filter(|&d| d < survivors)
            .map(|d| survivors - d)
            .collect()
    }
}

/// Every cluster of 2 to 12 nodes with 1 or 2 faults, under every dp and pp
/// range of width at most 3 starting at 1, 2 or 3, with lookahead 1 and 2.
pub fn planner_cases(layers: usize) -> Vec<PlannerCase> {
    let mut out = Vec::new();
    for total in 2..=12 {
        for failed in 1..=2.min(total - 1) {
            let global = total + total / 2 + 1;
            for (dlo, dw, plo, pw) in itertools::iproduct!(1..=3, 0..=3, 1..=3, 0..=3) {
                for lookahead in 1..=2 {
                    out.push(PlannerCase {
                        state: flat_state(total, failed, global, layers),
                        dp_range: (dlo, dlo + dw),
                        pp_range: (plo, plo + pw),
                        lookahead,
                    });
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Random instances
// ---------------------------------------------------------------------------

pub fn random_sizes(rng: &mut Rng, stages: usize, layers: usize) -> Vec<usize> {
    // random composition of `layers` into `stages` positive parts
    let mut cuts: Vec<usize> = (1..layers).collect();
    for i in (1..cuts.len()).rev() {
        let j = rng.range(0, i);
        cuts.swap(i, j);
    }
    let mut chosen: Vec<usize> = cuts.into_iter().take(stages - 1).collect();
    chosen.sort();
    let mut sizes = Vec::with_capacity(stages);
    let mut prev = 0;
    for c in chosen.into_iter().chain(std::iter::once(layers)) {
        sizes.push(c - prev);
        prev = c;
    }
    sizes
}

pub fn random_plan(rng: &mut Rng, nodes: usize, layers: usize) -> ExecutionPlan {
    let dp = rng.range(1, nodes.min(4));
    let mut counts = vec![1; dp];
    for _ in dp..nodes {
        let p = rng.range(0, dp - 1);
        counts[p] += 1;
    }
    counts.iter_mut().for_each(|c| *c = (*c).min(layers));
    counts.sort();
    let layer_assignment = counts
        .iter()
        .map(|&s| ranges_from_sizes(&random_sizes(rng, s, layers)))
        .collect();
    ExecutionPlan {
        policy: Policy::DynamicParallelism,
        parallel: ParallelConfig::new(counts),
        layer_assignment,
        batch_assignment: vec![1; dp],
        failure_distribution: vec![],
    }
}

pub fn random_graph(rng: &mut Rng, n: usize) -> Vec<(usize, usize)> {
    let p = rng.unit();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.chance(p * 0.6) {
                edges.push((a, b));
            }
        }
    }
    edges
}

/// Random migration instance: an old plan on `total` nodes with some
/// failures, and a new plan that fits on the survivors.
pub fn random_migration(rng: &mut Rng) -> (NodeLayout, ExecutionPlan) {
    let layers = rng.range(2, 16);
    let total = rng.range(2, layers.min(10));
    let old = random_plan(rng, total, layers);
    let used = old.node_count();
    let n_failed = rng.range(1, used - 1);
    let mut failed = Vec::new();
    while failed.len() < n_failed {
        let node = rng.range(0, used - 1);
        if !failed.iter().any(|f: &FailedNode| f.node == node) {
            failed.push(FailedNode {
                node,
                coord: old.coord_of(node),
            });
        }
    }
    let state = ClusterState {
        total_nodes: used,
        failed_nodes: failed,
        current_plan: old,
        global_batch_size: 1,
        micro_batch_size: 1,
        placement: None,
    };
    let layout = NodeLayout::from_state(&state);
    let new_nodes = rng.range(1, layout.len());
    (layout, random_plan(rng, new_nodes, layers))
}

/// Proptest settings for integration tests (no regression files next to
/// the test sources).
pub fn proptest_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: None,
        ..proptest::test_runner::Config::default()
    }
}
