//! Weight migration between an old and a new execution plan.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::assignment::{min_cost_assignment, Assignment, CostMatrix};
use crate::domain::{ClusterState, ExecutionPlan, NodeId, Profile};
use crate::error::{Error, Result};

/// Layers currently resident on each surviving node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLayout {
    pub nodes: Vec<NodeId>,
    pub layers: Vec<BTreeSet<usize>>,
}

impl NodeLayout {
    /// Survivors in ascending id; idle survivors hold nothing.
    pub fn from_state(state: &ClusterState) -> Self {
        let plan = &state.current_plan;
        let placement = state.placement();
        let slot_layers = plan.slot_layers();
        let nodes = state.surviving_nodes();
        let layers = nodes
            .iter()
            .map(|node| {
                placement
                    .iter()
                    .position(|n| n == node)
                    .and_then(|slot| slot_layers.get(slot))
                    .map(|r| r.layers().collect())
                    .unwrap_or_default()
            })
            .collect();
        Self { nodes, layers }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// `cost[i][j]` = layers slot `j` of the new plan needs that node `i` lacks.
/// Dropping layers is free. Slots beyond the new plan's size are zero-cost
/// dummies (the node idles).
pub fn build_cost_matrix(layout: &NodeLayout, new_plan: &ExecutionPlan) -> Result<CostMatrix> {
    let slots = new_plan.slot_layers();
    let n = layout.len();
    if slots.len() > n {
        return Err(Error::DimensionMismatch {
            rows: n,
            slots: slots.len(),
        });
    }
    let cost = layout
        .layers
        .iter()
        .map(|held| {
            (0..n)
                .map(|j| match slots.get(j) {
                    Some(r) => r.layers().filter(|l| !held.contains(l)).count() as u64,
                    None => 0,
                })
                .collect()
        })
        .collect();
    Ok(CostMatrix::new(cost))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTransfer {
    pub layer: usize,
    /// `None` when no survivor still holds the layer.
    pub from: Option<NodeId>,
    pub to: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferAssignment {
    pub nodes: Vec<NodeId>,
    /// New-plan slot of each node, `None` for nodes left idle.
    pub slot_of: Vec<Option<usize>>,
    pub total_cost_layers: u64,
    /// Layers each node downloads, ascending.
    pub received: Vec<Vec<usize>>,
    pub transfers: Vec<LayerTransfer>,
    pub transfer_seconds: f64,
}

impl TransferAssignment {
    /// Node serving each slot of the new plan.
    pub fn placement(&self, slots: usize) -> Vec<NodeId> {
        let mut out = vec![0; slots];
        for (node, slot) in self.nodes.iter().zip(&self.slot_of) {
            if let Some(s) = *slot {
                out[s] = *node;
            }
        }
        out
    }

    pub fn layers_moved(&self) -> usize {
        self.received.iter().map(Vec::len).sum()
    }
}

/// Minimum-volume migration from `layout` onto `new_plan`.
pub fn plan_transfers(
    layout: &NodeLayout,
    new_plan: &ExecutionPlan,
    profile: &Profile,
) -> Result<TransferAssignment> {
    let m = build_cost_matrix(layout, new_plan)?;
    let a = min_cost_assignment(&m);
    Ok(realize(layout, new_plan, &m, &a, profile))
}

/// Materializes an arbitrary assignment (e.g. the identity baseline).
pub fn realize(
    layout: &NodeLayout,
    new_plan: &ExecutionPlan,
    m: &CostMatrix,
    a: &Assignment,
    profile: &Profile,
) -> TransferAssignment {
    let slots = new_plan.slot_layers();
    let n = layout.len();
    let slot_of: Vec<Option<usize>> = a
        .slot_of
        .iter()
        .map(|&j| (j < slots.len()).then_some(j))
        .collect();

    let mut received = vec![Vec::new(); n];
    for (i, slot) in slot_of.iter().enumerate() {
        if let Some(j) = *slot {
            received[i] = slots[j]
                .layers()
                .filter(|l| !layout.layers[i].contains(l))
                .collect();
        }
    }

    // Sender: the holder with the fewest uploads so far, lowest id on ties.
    let mut outbound = vec![0usize; n];
    let mut transfers = Vec::new();
    for (i, layers) in received.iter().enumerate() {
        for &layer in layers {
            let src = (0..n)
                .filter(|&k| k != i && layout.layers[k].contains(&layer))
                .min_by_key(|&k| (outbound[k], layout.nodes[k]));
            if let Some(k) = src {
                outbound[k] += 1;
            }
            transfers.push(LayerTransfer {
                layer,
                from: src.map(|k| layout.nodes[k]),
                to: layout.nodes[i],
            });
        }
    }

    let mut out = TransferAssignment {
        nodes: layout.nodes.clone(),
        slot_of,
        total_cost_layers: m.total(&a.slot_of),
        received,
        transfers,
        transfer_seconds: 0.0,
    };
    out.transfer_seconds = transfer_time(&out, profile);
    out
}

/// Receivers download concurrently, each at full link bandwidth; a single
/// receiver's downloads serialize.
pub fn transfer_time(a: &TransferAssignment, profile: &Profile) -> f64 {
    let worst = a.received.iter().map(Vec::len).max().unwrap_or(0);
    worst as f64 * profile.weight_bytes_per_layer as f64 / profile.link_bandwidth
}
