//! Task-graph mapping onto geographically dispersed compute nodes.
//!
//! Centralized mapping uses HEFT (optionally with a per-node container cap),
//! decentralized mapping uses WAVE task controllers (random or greedy).
//! Placements are replayed in a discrete-event simulation of queue-based
//! dispatch to measure per-file makespan.

pub mod cluster;
pub mod dag;
pub mod dispatch;
mod error;
pub mod experiment;
pub mod heft;
pub mod latency;
pub mod wave;

pub use cluster::{
    profile_execution, synth_cluster, ClusterModel, ClusterRecipe, ExecutionProfile, NcpId, Node, NodeClass,
    ResourceSnapshot, SynthCluster, UNLIMITED,
};
pub use dag::{dnad_base_costs, dnad_fixture, parse_dag, topological_order, DagError, TaskDag, TaskId};
pub use dispatch::{brute_force_optimal, simulate, validate_trace, InputSchedule, MakespanReport, Violation};
pub use error::{ProfileError, ScheduleError, SimError};
pub use heft::{heft_map, mapping_cost_heft, upward_rank, Placement, RankTable};
pub use latency::{fit_latency_model, fit_quadratic, transfer_time, LatencyCoeffs, LatencyModel};
pub use wave::{
    feasible_set, neighbor_rank, place_inputs, select_controllers, wave_greedy, wave_random, Controller,
    ControllerMap, GreedyParams, MappingTrace, ProtocolParams,
};
