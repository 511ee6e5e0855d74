//! Reconfiguration support: weight-migration assignment and scheduling of
//! asymmetric gradient synchronization.

mod assignment;
mod coloring;
mod transfer;

pub use assignment::{min_cost_assignment, Assignment, CostMatrix};
pub use coloring::{
    build_conflict_graph, color_comm_rounds, comm_time, sync_time, CommSchedule, ConflictGraph,
};
pub use transfer::{
    build_cost_matrix, plan_transfers, realize, transfer_time, LayerTransfer, NodeLayout,
    TransferAssignment,
};
