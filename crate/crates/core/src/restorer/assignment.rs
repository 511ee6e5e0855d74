//! Minimum-cost perfect assignment (Kuhn-Munkres with potentials, O(n^3)).
//!
//! Among all minimum-cost permutations the lexicographically smallest one is
//! returned. Optimal duals make every optimal permutation a perfect matching
//! of the zero-reduced-cost ("tight") edges, so the lexicographic pass only
//! has to repair a matching inside that subgraph.

use serde::{Deserialize, Serialize};

/// Square matrix of non-negative integer costs; `cost[i][j]` is the cost of
/// giving row `i` column `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub cost: Vec<Vec<u64>>,
}

impl CostMatrix {
    pub fn new(cost: Vec<Vec<u64>>) -> Self {
        debug_assert!(cost.iter().all(|row| row.len() == cost.len()));
        Self { cost }
    }

    pub fn n(&self) -> usize {
        self.cost.len()
    }

    pub fn total(&self, slot_of: &[usize]) -> u64 {
        slot_of
            .iter()
            .enumerate()
            .map(|(i, &j)| self.cost[i][j])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    /// Column chosen for each row.
    pub slot_of: Vec<usize>,
    pub total_cost: u64,
}

impl Assignment {
    pub fn identity(m: &CostMatrix) -> Self {
        let slot_of: Vec<usize> = (0..m.n()).collect();
        let total_cost = m.total(&slot_of);
        Self {
            slot_of,
            total_cost,
        }
    }
}

pub fn min_cost_assignment(m: &CostMatrix) -> Assignment {
    let n = m.n();
    if n == 0 {
        return Assignment {
            slot_of: Vec::new(),
            total_cost: 0,
        };
    }
    let cost: Vec<Vec<i64>> = m
        .cost
        .iter()
        .map(|row| row.iter().map(|&c| c as i64).collect())
        .collect();
    let (mut slot_of, u, v) = hungarian(&cost);

    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| cost[i][j] - u[i] - v[j] == 0).collect())
        .collect();
    lexicographic_repair(&tight, &mut slot_of);

    let total_cost = m.total(&slot_of);
    Assignment {
        slot_of,
        total_cost,
    }
}

/// Returns (row -> column, row potentials, column potentials).
fn hungarian(cost: &[Vec<i64>]) -> (Vec<usize>, Vec<i64>, Vec<i64>) {
    let n = cost.len();
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    // p[j]: row matched to column j (1-based, 0 = none)
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut slot_of = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            slot_of[p[j] - 1] = j - 1;
        }
    }
    (slot_of, u[1..].to_vec(), v[1..].to_vec())
}

/// Rewrites `slot_of` (a perfect matching in `tight`) into the
/// lexicographically smallest perfect matching of `tight`.
fn lexicographic_repair(tight: &[Vec<bool>], slot_of: &mut [usize]) {
    let n = slot_of.len();
    let mut row_of = vec![0usize; n];
    for (i, &j) in slot_of.iter().enumerate() {
        row_of[j] = i;
    }
    let mut col_fixed = vec![false; n];

    for i in 0..n {
        for j in 0..n {
            if !tight[i][j] || col_fixed[j] {
                continue;
            }
            if slot_of[i] == j {
                break;
            }
            // Move row i onto column j; the displaced row must reach the
            // column row i is giving up through an alternating path.
            let displaced = row_of[j];
            let freed = slot_of[i];
            let mut trial_slot = slot_of.to_vec();
            let mut trial_row = row_of.clone();
            trial_slot[i] = j;
            trial_row[j] = i;
            let mut seen = vec![false; n];
            seen[j] = true;
            if augment(
                displaced,
                freed,
                i,
                tight,
                &col_fixed,
                &mut seen,
                &mut trial_slot,
                &mut trial_row,
            ) {
                slot_of.copy_from_slice(&trial_slot);
                row_of = trial_row;
                break;
            }
        }
        col_fixed[slot_of[i]] = true;
    }
}

/// Finds an alternating path from `row` to the free column `target`, using only
/// rows after `pinned` and unfixed columns.
#[allow(clippy::too_many_arguments)]
fn augment(
    row: usize,
    target: usize,
    pinned: usize,
    tight: &[Vec<bool>],
    col_fixed: &[bool],
    seen: &mut [bool],
    slot_of: &mut [usize],
    row_of: &mut [usize],
) -> bool {
    for c in 0..tight.len() {
        if !tight[row][c] || col_fixed[c] || seen[c] {
            continue;
        }
        seen[c] = true;
        if c == target {
            slot_of[row] = c;
            row_of[c] = row;
            return true;
        }
        let owner = row_of[c];
        if owner <= pinned {
            continue;
        }
        if augment(
            owner, target, pinned, tight, col_fixed, seen, slot_of, row_of,
        ) {
            slot_of[row] = c;
            row_of[c] = row;
            return true;
        }
    }
    false
}
