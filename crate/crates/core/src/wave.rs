//! Decentralized mapping with task controllers.
//!
//! The home node picks a controller for every task, places the input tasks
//! next to their data sources, and then each controller's node chooses
//! nodes for the tasks it controls, either uniformly at random or greedily
//! from nearby, lightly loaded neighbours. The message exchange is replayed
//! with virtual timestamps to estimate how long mapping takes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::{ClusterModel, NcpId, ResourceSnapshot};
use crate::dag::{TaskDag, TaskIndex};
use crate::heft::Placement;
use crate::latency::LatencyModel;
use crate::ScheduleError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Controller {
    Home,
    Task(TaskIndex),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerMap {
    controller: Vec<Controller>,
}

impl ControllerMap {
    pub fn get(&self, t: TaskIndex) -> Controller {
        self.controller[t]
    }

    pub fn as_slice(&self) -> &[Controller] {
        &self.controller
    }

    /// Tasks controlled by `c`, in topological order.
    pub fn controlled_by(&self, dag: &TaskDag, c: Controller) -> Vec<TaskIndex> {
        dag.topo()
            .iter()
            .copied()
            .filter(|&t| self.controller[t] == c)
            .collect()
    }

    /// `(task, controller)` name pairs, `"Home"` for the home node.
    pub fn named<'a>(&self, dag: &'a TaskDag) -> Vec<(&'a str, &'a str)> {
        (0..dag.len())
            .map(|t| {
                let c = match self.controller[t] {
                    Controller::Home => "Home",
                    Controller::Task(p) => dag.name(p),
                };
                (dag.name(t), c)
            })
            .collect()
    }
}

/// Sweeps tasks in topological order. Inputs are controlled by Home. A
/// non-input task takes its single parent that already controls something;
/// with zero or several such parents it takes the parent with the smallest
/// topological index.
pub fn select_controllers(dag: &TaskDag) -> ControllerMap {
    let mut controller = vec![Controller::Home; dag.len()];
    let mut is_controller = vec![false; dag.len()];
    for &t in dag.topo() {
        if dag.is_input(t) {
            continue;
        }
        let active: Vec<TaskIndex> = dag.parents(t).filter(|&p| is_controller[p]).collect();
        let chosen = match active.as_slice() {
            [only] => *only,
            _ => dag
                .parents(t)
                .min_by_key(|&p| dag.topo_index(p))
                .expect("non-input tasks have parents"),
        };
        controller[t] = Controller::Task(chosen);
        is_controller[chosen] = true;
    }
    ControllerMap { controller }
}

/// Places every input task on the lowest-id node at its source location.
/// Entries for non-input tasks are `None`.
pub fn place_inputs(dag: &TaskDag, cluster: &ClusterModel) -> Result<Vec<Option<NcpId>>, ScheduleError> {
    let mut out = vec![None; dag.len()];
    for t in dag.input_tasks() {
        let location = dag.task(t).input_location.as_deref().unwrap_or_default();
        let node = cluster
            .ids()
            .find(|&n| cluster.node(n).location == location)
            .ok_or_else(|| ScheduleError::NoNodeAtLocation {
                task: dag.name(t).to_string(),
                location: location.to_string(),
            })?;
        out[t] = Some(node);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GreedyParams {
    /// Threshold multiplier: neighbours closer than `k · d_min` are feasible.
    pub k: f64,
    pub w_delay: f64,
    pub w_cpu: f64,
    pub w_mem: f64,
    /// Probe size (bytes) at which neighbour delays are evaluated.
    pub probe_size: f64,
    /// Let a controller keep tasks on its own node. Off by default: only
    /// neighbours are ranked unless the controller has none.
    #[serde(default)]
    pub include_own_node: bool,
}

impl Default for GreedyParams {
    fn default() -> Self {
        Self {
            k: 15.0,
            w_delay: 1.0 / 3.0,
            w_cpu: 1.0 / 3.0,
            w_mem: 1.0 / 3.0,
            probe_size: 10.0 * 1024.0,
            include_own_node: false,
        }
    }
}

impl GreedyParams {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let bad = |m: &str| Err(ScheduleError::InvalidParams(m.to_string()));
        if !(self.k > 1.0) {
            return bad("k must exceed 1");
        }
        let w = [self.w_delay, self.w_cpu, self.w_mem];
        if w.iter().any(|x| !(*x >= 0.0)) {
            return bad("weights must be non-negative");
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return bad("weights must sum to 1");
        }
        if !(self.probe_size >= 1.0) {
            return bad("probe_size must be at least 1 byte");
        }
        Ok(())
    }
}

/// Neighbours of a controller node eligible under the delay threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSet {
    /// `k · d_min`.
    pub threshold: f64,
    /// `(node, delay)`; the controller's own node is included with delay 0.
    pub members: Vec<(NcpId, f64)>,
}

impl FeasibleSet {
    pub fn contains(&self, n: NcpId) -> bool {
        self.members.iter().any(|(m, _)| *m == n)
    }
}

/// Nodes `j ≠ node` with `d(node, j) < k · d_min`, plus `node` itself.
/// An argmin neighbour is always kept even when `d_min` is zero.
pub fn feasible_set(
    node: NcpId,
    latency: &LatencyModel,
    probe_size: f64,
    k: f64,
) -> Result<FeasibleSet, ScheduleError> {
    let mut delays = Vec::with_capacity(latency.node_count());
    for j in (0..latency.node_count()).map(NcpId).filter(|&j| j != node) {
        delays.push((j, latency.transfer_time(node, j, probe_size)?));
    }
    let Some(&(argmin, d_min)) = delays
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    else {
        return Ok(FeasibleSet {
            threshold: 0.0,
            members: vec![(node, 0.0)],
        });
    };
    let threshold = k * d_min;
    let mut members = vec![(node, 0.0)];
    members.extend(delays.into_iter().filter(|&(j, d)| d < threshold || j == argmin));
    members.sort_by_key(|m| m.0);
    Ok(FeasibleSet { threshold, members })
}

/// Weighted neighbour score; lower is better. All inputs must lie in `[0, 1]`.
pub fn neighbor_rank(d_norm: f64, cpu: f64, mem: f64, params: &GreedyParams) -> Result<f64, ScheduleError> {
    for (name, v) in [("delay", d_norm), ("cpu", cpu), ("mem", mem)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(ScheduleError::InvalidParams(format!(
                "{name} input {v} outside [0, 1]"
            )));
        }
    }
    Ok(params.w_delay * d_norm + params.w_cpu * cpu + params.w_mem * mem)
}

/// Constants of the mapping-protocol replay.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProtocolParams {
    /// Control message size, bytes.
    pub control_payload: f64,
    /// Processing time per message hop, seconds.
    pub hop_delay: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            control_payload: 1024.0,
            hop_delay: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MessageKind {
    /// Tells a node it hosts `task` (and, if `task` controls others, starts
    /// its mapping round).
    Assign,
    /// Reports a finished mapping back to the home node.
    Notify,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Assign => "assign",
            MessageKind::Notify => "notify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappingEvent {
    pub sent: f64,
    /// Receive timestamp.
    pub time: f64,
    pub sender: NcpId,
    pub receiver: NcpId,
    pub kind: MessageKind,
    pub task: TaskIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingTrace {
    /// Ordered by `(time, sender, receiver, kind, task)`.
    pub events: Vec<MappingEvent>,
    pub completion_time: f64,
}

impl MappingTrace {
    pub fn write_csv<W: std::io::Write>(&self, dag: &TaskDag, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["timestamp", "sender", "receiver", "kind", "task"])?;
        for e in &self.events {
            w.write_record([
                e.time.to_string(),
                e.sender.to_string(),
                e.receiver.to_string(),
                e.kind.as_str().to_string(),
                dag.name(e.task).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Replays the mapping protocol for a finished placement.
///
/// Home sends an assignment to each input task's node. Once a controller
/// task's node learns its own assignment it sends an assignment to the node
/// of every task it controls and a notification to home. Every message
/// costs the control-payload transfer time plus one hop delay; completion is
/// the last receive time.
pub fn simulate_mapping_runtime(
    dag: &TaskDag,
    controllers: &ControllerMap,
    placement: &Placement,
    cluster: &ClusterModel,
    params: &ProtocolParams,
) -> Result<MappingTrace, ScheduleError> {
    let home = cluster.home();
    let mut known = vec![0.0_f64; dag.len()];
    let mut events = Vec::new();
    let mut send = |from: NcpId, to: NcpId, at: f64, kind, task| -> Result<f64, ScheduleError> {
        let time = at + cluster.transfer_time(from, to, params.control_payload)? + params.hop_delay;
        events.push(MappingEvent {
            sent: at,
            time,
            sender: from,
            receiver: to,
            kind,
            task,
        });
        Ok(time)
    };
    for &t in dag.topo() {
        let node = placement.node_of(t);
        match controllers.get(t) {
            Controller::Home => {
                known[t] = send(home, node, 0.0, MessageKind::Assign, t)?;
            }
            Controller::Task(c) => {
                let from = placement.node_of(c);
                let at = known[c];
                known[t] = send(from, node, at, MessageKind::Assign, t)?;
                send(from, home, at, MessageKind::Notify, t)?;
            }
        }
    }
    events.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.sender.cmp(&b.sender))
            .then(a.receiver.cmp(&b.receiver))
            .then(a.kind.cmp(&b.kind))
            .then(a.task.cmp(&b.task))
    });
    let completion_time = events.iter().map(|e| e.time).fold(0.0, f64::max);
    Ok(MappingTrace {
        events,
        completion_time,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveOutcome {
    pub placement: Placement,
    pub controllers: ControllerMap,
    pub trace: MappingTrace,
}

/// Controllers pick a uniformly random node for each controlled task.
/// Draws happen in topological task order.
pub fn wave_random(
    dag: &TaskDag,
    cluster: &ClusterModel,
    seed: u64,
    protocol: &ProtocolParams,
) -> Result<WaveOutcome, ScheduleError> {
    let controllers = select_controllers(dag);
    let mut assignment = place_inputs(dag, cluster)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &t in dag.topo() {
        if assignment[t].is_none() {
            assignment[t] = Some(NcpId(rng.gen_range(0..cluster.len())));
        }
    }
    finish(dag, cluster, controllers, assignment, protocol)
}

/// Ranks a controller node's feasible neighbours, best first. Delays are
/// normalized by the threshold so every score term lies in `[0, 1]`. The
/// controller's own node is ranked only if `include_own_node` is set or it
/// has no neighbours.
pub fn ranked_candidates(
    node: NcpId,
    cluster: &ClusterModel,
    snapshot: &ResourceSnapshot,
    params: &GreedyParams,
) -> Result<Vec<(NcpId, f64)>, ScheduleError> {
    let set = feasible_set(node, cluster.latency(), params.probe_size, params.k)?;
    let own_only = set.members.len() == 1;
    let mut scored = Vec::with_capacity(set.members.len());
    for (j, d) in set.members {
        if j == node && !params.include_own_node && !own_only {
            continue;
        }
        let d_norm = if set.threshold > 0.0 {
            (d / set.threshold).min(1.0)
        } else {
            0.0
        };
        scored.push((
            j,
            neighbor_rank(d_norm, snapshot.cpu(j), snapshot.mem(j), params)?,
        ));
    }
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}

/// Each controller maps its tasks (in topological order) one-to-one onto
/// its best-ranked feasible neighbours, wrapping around to the top of the
/// list when tasks outnumber candidates.
pub fn wave_greedy(
    dag: &TaskDag,
    cluster: &ClusterModel,
    snapshot: &ResourceSnapshot,
    params: &GreedyParams,
    protocol: &ProtocolParams,
) -> Result<WaveOutcome, ScheduleError> {
    params.validate()?;
    if snapshot.len() != cluster.len() {
        return Err(ScheduleError::InvalidParams(format!(
            "snapshot covers {} nodes, cluster has {}",
            snapshot.len(),
            cluster.len()
        )));
    }
    let controllers = select_controllers(dag);
    let mut assignment = place_inputs(dag, cluster)?;
    for &c in dag.topo() {
        let tasks = controllers.controlled_by(dag, Controller::Task(c));
        if tasks.is_empty() {
            continue;
        }
        let node = assignment[c].expect("controllers are mapped before their tasks");
        let ranked = ranked_candidates(node, cluster, snapshot, params)?;
        for (i, &t) in tasks.iter().enumerate() {
            assignment[t] = Some(ranked[i % ranked.len()].0);
        }
    }
    finish(dag, cluster, controllers, assignment, protocol)
}

fn finish(
    dag: &TaskDag,
    cluster: &ClusterModel,
    controllers: ControllerMap,
    assignment: Vec<Option<NcpId>>,
    protocol: &ProtocolParams,
) -> Result<WaveOutcome, ScheduleError> {
    let placement = Placement::new(
        assignment
            .into_iter()
            .map(|a| a.expect("every task mapped"))
            .collect(),
    );
    let trace = simulate_mapping_runtime(dag, &controllers, &placement, cluster, protocol)?;
    Ok(WaveOutcome {
        placement,
        controllers,
        trace,
    })
}
