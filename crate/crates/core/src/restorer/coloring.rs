//! Scheduling of per-layer data-parallel gradient synchronization.
//!
//! Layers are vertices; two layers conflict when some device holds both, since
//! that device takes part in both collectives. A proper coloring is a schedule
//! of communication rounds: same-colored layers synchronize concurrently.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{ExecutionPlan, Profile};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictGraph {
    adjacency: Vec<BTreeSet<usize>>,
}

impl ConflictGraph {
    pub fn new(n_vertices: usize) -> Self {
        Self {
            adjacency: vec![BTreeSet::new(); n_vertices],
        }
    }

    pub fn from_edges(n_vertices: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut g = Self::new(n_vertices);
        for (a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    /// Self-loops are ignored; duplicate edges collapse.
    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        self.adjacency[a].insert(b);
        self.adjacency[b].insert(a);
    }

    pub fn num_vertices(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[v].iter().copied()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].contains(&b)
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).max().unwrap_or(0)
    }

    /// Edges as `(low, high)` pairs in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.range(a + 1..).map(move |&b| (a, b)))
            .collect()
    }
}

/// Edge between every pair of layers co-located on some device.
pub fn build_conflict_graph(plan: &ExecutionPlan, num_layers: usize) -> ConflictGraph {
    let mut g = ConflictGraph::new(num_layers);
    let mut seen = BTreeSet::new();
    for range in plan.layer_assignment.iter().flatten() {
        // Identical intervals on other pipelines add nothing new.
        if !seen.insert(*range) {
            continue;
        }
        let end = range.end.min(num_layers);
        for a in range.start..end {
            for b in a + 1..end {
                g.add_edge(a, b);
            }
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommSchedule {
    /// Round index of each layer.
    pub round_of: Vec<usize>,
    /// Layers synchronized in each round, ascending.
    pub rounds: Vec<Vec<usize>>,
}

impl CommSchedule {
    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_valid_for(&self, g: &ConflictGraph) -> bool {
        self.round_of.len() == g.num_vertices()
            && g.edges()
                .iter()
                .all(|&(a, b)| self.round_of[a] != self.round_of[b])
    }
}

/// Greedy sequential coloring in ascending layer order: each layer takes the
/// lowest round unused by its already-colored neighbors. O(L^2).
pub fn color_comm_rounds(g: &ConflictGraph) -> CommSchedule {
    let n = g.num_vertices();
    let mut round_of = vec![usize::MAX; n];
    let mut taken = Vec::new();
    for v in 0..n {
        taken.clear();
        taken.resize(g.degree(v) + 1, false);
        for u in g.neighbors(v) {
            let r = round_of[u];
            if r < taken.len() {
                taken[r] = true;
            }
        }
        round_of[v] = taken.iter().position(|&t| !t).unwrap_or(taken.len());
    }
    let num_rounds = round_of.iter().map(|&r| r + 1).max().unwrap_or(0);
    let mut rounds = vec![Vec::new(); num_rounds];
    for (v, &r) in round_of.iter().enumerate() {
        rounds[r].push(v);
    }
    CommSchedule { round_of, rounds }
}

/// Rounds run back to back; layers inside a round overlap, so each round
/// costs its slowest layer.
pub fn comm_time(schedule: &CommSchedule, profile: &Profile) -> f64 {
    schedule
        .rounds
        .iter()
        .filter(|r| !r.is_empty())
        .map(|_| profile.allreduce_time_per_layer)
        .sum()
}

/// Synchronization time of a plan under the greedy round schedule.
pub fn sync_time(plan: &ExecutionPlan, profile: &Profile) -> (CommSchedule, f64) {
    let g = build_conflict_graph(plan, profile.num_layers);
    let schedule = color_comm_rounds(&g);
    let t = comm_time(&schedule, profile);
    (schedule, t)
}
