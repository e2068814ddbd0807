//! Centralized mapping with HEFT: upward ranks, then insertion-based
//! earliest-finish-time processor selection, with an optional cap on the
//! number of tasks (containers) per node.
//!
//! A node is planned as `container_capacity` identical execution slots, the
//! same resource the dispatch simulator runs at full speed. With capacity 1
//! this is textbook single-processor HEFT.

use crate::cluster::{ClusterModel, ExecutionProfile, NcpId};
use crate::dag::{TaskDag, TaskIndex};
use crate::latency::LatencyModel;
use crate::{ProfileError, ScheduleError};

#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    ranks: Vec<f64>,
}

impl RankTable {
    pub fn get(&self, t: TaskIndex) -> f64 {
        self.ranks[t]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.ranks
    }
}

/// Planned execution interval of one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slot {
    pub start: f64,
    pub finish: f64,
}

/// Total task → node assignment, with a planned timeline when the mapper
/// produces one.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    assignment: Vec<NcpId>,
    timeline: Option<Vec<Slot>>,
}

impl Placement {
    pub fn new(assignment: Vec<NcpId>) -> Self {
        Self {
            assignment,
            timeline: None,
        }
    }

    pub fn with_timeline(assignment: Vec<NcpId>, timeline: Vec<Slot>) -> Self {
        Self {
            assignment,
            timeline: Some(timeline),
        }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn node_of(&self, t: TaskIndex) -> NcpId {
        self.assignment[t]
    }

    pub fn assignment(&self) -> &[NcpId] {
        &self.assignment
    }

    pub fn timeline(&self) -> Option<&[Slot]> {
        self.timeline.as_deref()
    }

    /// Latest planned finish over all tasks.
    pub fn planned_makespan(&self) -> Option<f64> {
        self.timeline
            .as_ref()
            .map(|tl| tl.iter().map(|s| s.finish).fold(0.0, f64::max))
    }

    /// Number of tasks placed on each of `nodes` nodes.
    pub fn load(&self, nodes: usize) -> Vec<usize> {
        let mut counts = vec![0; nodes];
        for n in &self.assignment {
            counts[n.0] += 1;
        }
        counts
    }

    /// Rows of `(task, node, start, finish)`; times are empty without a
    /// timeline.
    pub fn write_csv<W: std::io::Write>(&self, dag: &TaskDag, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["task", "node", "start", "finish"])?;
        for t in 0..self.assignment.len() {
            let (start, finish) = match &self.timeline {
                Some(tl) => (tl[t].start.to_string(), tl[t].finish.to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([
                dag.name(t).to_string(),
                self.assignment[t].to_string(),
                start,
                finish,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean transfer time of `data_size` bytes over all ordered pairs of
/// distinct nodes; zero on a single-node cluster.
pub fn mean_transfer_time(latency: &LatencyModel, data_size: f64) -> Result<f64, ProfileError> {
    let n = latency.node_count();
    if n < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for src in 0..n {
        for dst in (0..n).filter(|&d| d != src) {
            total += latency.transfer_time(NcpId(src), NcpId(dst), data_size)?;
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

fn check_profile(dag: &TaskDag, nodes: usize, exec: &ExecutionProfile) -> Result<(), ScheduleError> {
    if exec.task_count() != dag.len() || exec.node_count() != nodes {
        return Err(ScheduleError::ProfileMismatch {
            tasks: dag.len(),
            nodes,
            profile_tasks: exec.task_count(),
            profile_nodes: exec.node_count(),
        });
    }
    Ok(())
}

/// Upward rank: mean execution time plus the costliest
/// `(mean transfer + successor rank)` over direct successors.
pub fn upward_rank(
    dag: &TaskDag,
    exec: &ExecutionProfile,
    latency: &LatencyModel,
) -> Result<RankTable, ScheduleError> {
    check_profile(dag, latency.node_count(), exec)?;
    let mut ranks = vec![0.0; dag.len()];
    for &t in dag.topo().iter().rev() {
        let mut tail = 0.0_f64;
        for e in dag.out_edges(t) {
            let comm = mean_transfer_time(latency, e.data_size as f64)?;
            tail = tail.max(comm + ranks[e.child]);
        }
        ranks[t] = exec.mean(t) + tail;
    }
    Ok(RankTable { ranks })
}

/// Earliest start ≥ `ready` on a node whose busy intervals are `busy`
/// (sorted by start) that leaves room for `duration`.
fn insertion_start(busy: &[Slot], ready: f64, duration: f64) -> f64 {
    let mut free_from = 0.0_f64;
    for slot in busy {
        let candidate = ready.max(free_from);
        if candidate + duration <= slot.start {
            return candidate;
        }
        free_from = free_from.max(slot.finish);
    }
    ready.max(free_from)
}

/// Maps every task with HEFT. With `cap = Some(c)`, nodes already holding
/// `c` tasks are skipped.
///
/// The timeline never runs more than `container_capacity` tasks of one node
/// at once.
pub fn heft_map(
    dag: &TaskDag,
    cluster: &ClusterModel,
    exec: &ExecutionProfile,
    cap: Option<usize>,
) -> Result<Placement, ScheduleError> {
    let n = cluster.len();
    check_profile(dag, n, exec)?;
    if let Some(c) = cap {
        if c.saturating_mul(n) < dag.len() {
            return Err(ScheduleError::CapInfeasible {
                cap: c,
                nodes: n,
                tasks: dag.len(),
            });
        }
    }
    let ranks = upward_rank(dag, exec, cluster.latency())?;

    let mut assignment: Vec<Option<NcpId>> = vec![None; dag.len()];
    let mut timeline = vec![
        Slot {
            start: 0.0,
            finish: 0.0
        };
        dag.len()
    ];
    // busy[node][lane]: planned intervals, sorted by start
    let mut busy: Vec<Vec<Vec<Slot>>> = cluster
        .nodes()
        .iter()
        .map(|n| vec![Vec::new(); n.container_capacity.min(dag.len())])
        .collect();
    let mut load = vec![0usize; n];

    for _ in 0..dag.len() {
        // Highest rank among unmapped tasks whose parents are all mapped;
        // ties go to the smaller topological index.
        let task = (0..dag.len())
            .filter(|&t| assignment[t].is_none())
            .filter(|&t| dag.parents(t).all(|p| assignment[p].is_some()))
            .max_by(|&a, &b| {
                ranks
                    .get(a)
                    .total_cmp(&ranks.get(b))
                    .then(dag.topo_index(b).cmp(&dag.topo_index(a)))
            })
            .expect("an acyclic graph always has an eligible task");

        let mut best: Option<(f64, f64, NcpId, usize)> = None;
        for node in cluster.ids() {
            if cap.is_some_and(|c| load[node.0] >= c) {
                continue;
            }
            let mut ready = 0.0_f64;
            for e in dag.in_edges(task) {
                let src = assignment[e.parent].expect("parents mapped first");
                let arrive =
                    timeline[e.parent].finish + cluster.transfer_time(src, node, e.data_size as f64)?;
                ready = ready.max(arrive);
            }
            let duration = exec.get(task, node);
            let (lane, start) = busy[node.0]
                .iter()
                .enumerate()
                .map(|(lane, slots)| (lane, insertion_start(slots, ready, duration)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .expect("every node has at least one lane");
            let finish = start + duration;
            if best.is_none_or(|(f, _, _, _)| finish < f) {
                best = Some((finish, start, node, lane));
            }
        }
        let (finish, start, node, lane) = best.expect("cap feasibility leaves a candidate");
        assignment[task] = Some(node);
        timeline[task] = Slot { start, finish };
        let slots = &mut busy[node.0][lane];
        let at = slots.partition_point(|s| s.start <= start);
        slots.insert(at, Slot { start, finish });
        load[node.0] += 1;
    }

    Ok(Placement::with_timeline(
        assignment.into_iter().map(|a| a.expect("all mapped")).collect(),
        timeline,
    ))
}

/// Constants of the centralized mapping-runtime model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HeftCostParams {
    /// Profile payload each node ships to the home node, bytes.
    pub payload_bytes: f64,
    /// Compute seconds per (task, node) pair.
    pub epsilon: f64,
}

impl Default for HeftCostParams {
    fn default() -> Self {
        Self {
            payload_bytes: 10.0 * 1024.0,
            epsilon: 1e-3,
        }
    }
}

/// Simulated runtime of centralized mapping: every non-home node's profile
/// upload, serialized through the home node, plus `ε·T·N` of computation.
pub fn mapping_cost_heft(
    cluster: &ClusterModel,
    task_count: usize,
    params: &HeftCostParams,
) -> Result<f64, ProfileError> {
    let home = cluster.home();
    let mut gather = 0.0;
    for node in cluster.ids().filter(|&n| n != home) {
        gather += cluster.transfer_time(node, home, params.payload_bytes)?;
    }
    Ok(gather + params.epsilon * task_count as f64 * cluster.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Node;
    use crate::dag::parse_dag;
    use crate::latency::LatencyCoeffs;

    /// Single-slot nodes: classic HEFT.
    fn cluster(speeds: &[f64], p: f64) -> ClusterModel {
        let nodes = speeds
            .iter()
            .map(|&s| Node {
                container_capacity: 1,
                ..Node::new("x", s)
            })
            .collect();
        let lat = LatencyModel::uniform(speeds.len(), LatencyCoeffs::new(p, 0.0, 0.0)).unwrap();
        ClusterModel::new(nodes, lat, NcpId(0)).unwrap()
    }

    fn uniform_exec(dag: &TaskDag, nodes: usize, cost: f64) -> ExecutionProfile {
        ExecutionProfile::from_table(dag.len(), nodes, vec![cost; dag.len() * nodes]).unwrap()
    }

    #[test]
    fn sink_rank_is_mean_cost() {
        let dag = parse_dag("task F input @x\n").unwrap();
        let exec = ExecutionProfile::from_table(1, 2, vec![2.0, 4.0]).unwrap();
        let c = cluster(&[1.0, 1.0], 1.0);
        assert_eq!(upward_rank(&dag, &exec, c.latency()).unwrap().get(0), 3.0);
    }

    #[test]
    fn chain_rank() {
        let dag = parse_dag("task A input @x\ntask B\nedge A B 10\n").unwrap();
        // mean(A) = 2, mean(B) = 3, mean transfer = 1
        let exec = ExecutionProfile::from_table(2, 2, vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let c = cluster(&[1.0, 1.0], 1.0);
        let r = upward_rank(&dag, &exec, c.latency()).unwrap();
        assert_eq!(r.get(1), 3.0);
        assert_eq!(r.get(0), 6.0);
    }

    #[test]
    fn fig4_ranks_unit_costs() {
        let dag = parse_dag(
            "task A input @1\ntask B input @2\ntask C\ntask D\ntask E\ntask F\n\
             edge A C 1\nedge B C 1\nedge C D 1\nedge C E 1\nedge D F 1\nedge E F 1\n",
        )
        .unwrap();
        let c = cluster(&[1.0, 1.0, 1.0], 1.0);
        let r = upward_rank(&dag, &uniform_exec(&dag, 3, 1.0), c.latency()).unwrap();
        let by = |n: &str| r.get(dag.index_of(n).unwrap());
        assert_eq!(by("F"), 1.0);
        assert_eq!(by("D"), 3.0);
        assert_eq!(by("E"), 3.0);
        assert_eq!(by("C"), 5.0);
        assert_eq!(by("A"), 7.0);
        assert_eq!(by("B"), 7.0);
    }

    #[test]
    fn single_node_serializes_everything() {
        let dag = parse_dag("task A input @x\ntask B\ntask C\nedge A B 5\nedge A C 5\n").unwrap();
        let c = cluster(&[1.0], 1.0);
        let exec = ExecutionProfile::from_table(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let p = heft_map(&dag, &c, &exec, None).unwrap();
        assert!(p.assignment().iter().all(|&n| n == NcpId(0)));
        assert_eq!(p.planned_makespan(), Some(6.0));
    }

    #[test]
    fn slots_run_siblings_concurrently() {
        let dag = parse_dag("task A input @x\ntask B\ntask C\nedge A B 5\nedge A C 5\n").unwrap();
        let exec = ExecutionProfile::from_table(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let one = cluster(&[1.0], 1.0);
        let two = one.with_capacity(2);
        let p = heft_map(&dag, &two, &exec, None).unwrap();
        assert_eq!(p.planned_makespan(), Some(4.0));
        let tl = p.timeline().unwrap();
        assert_eq!((tl[1].start, tl[2].start), (1.0, 1.0));
        let unlimited = one.with_capacity(crate::cluster::UNLIMITED);
        assert_eq!(heft_map(&dag, &unlimited, &exec, None).unwrap(), p);
    }

    #[test]
    fn chain_ties_pick_lowest_node() {
        let dag = parse_dag("task A input @x\ntask B\nedge A B 5\n").unwrap();
        let c = cluster(&[1.0, 1.0], 0.0);
        let p = heft_map(&dag, &c, &uniform_exec(&dag, 2, 1.0), None).unwrap();
        assert_eq!(p.assignment(), &[NcpId(0), NcpId(0)]);
        assert_eq!(p.planned_makespan(), Some(2.0));
    }

    #[test]
    fn cap_pigeonhole() {
        let dag = parse_dag("task A input @x\ntask B\ntask C\nedge A B 5\nedge A C 5\n").unwrap();
        let c = cluster(&[1.0, 1.0], 0.0);
        assert_eq!(
            heft_map(&dag, &c, &uniform_exec(&dag, 2, 1.0), Some(1)).unwrap_err(),
            ScheduleError::CapInfeasible {
                cap: 1,
                nodes: 2,
                tasks: 3
            }
        );
    }

    #[test]
    fn cap_spreads_tasks() {
        let dag = parse_dag("task A input @x\ntask B\ntask C\nedge A B 5\nedge A C 5\n").unwrap();
        let c = cluster(&[3.0, 1.0, 1.0], 10.0);
        let exec = crate::cluster::profile_execution(
            &dag,
            &c,
            &[("A", 1.0), ("B", 1.0), ("C", 1.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        )
        .unwrap();
        let free = heft_map(&dag, &c, &exec, None).unwrap();
        assert_eq!(free.load(3), vec![3, 0, 0]);
        let capped = heft_map(&dag, &c, &exec, Some(1)).unwrap();
        assert_eq!(capped.load(3), vec![1, 1, 1]);
        assert_eq!(heft_map(&dag, &c, &exec, Some(usize::MAX)).unwrap(), free);
    }

    #[test]
    fn insertion_fills_gaps() {
        let busy = [
            Slot {
                start: 0.0,
                finish: 1.0,
            },
            Slot {
                start: 5.0,
                finish: 6.0,
            },
        ];
        assert_eq!(insertion_start(&busy, 0.5, 2.0), 1.0);
        assert_eq!(insertion_start(&busy, 0.5, 4.5), 6.0);
        assert_eq!(insertion_start(&busy, 7.0, 1.0), 7.0);
        assert_eq!(insertion_start(&[], 2.0, 1.0), 2.0);
    }

    #[test]
    fn profile_shape_checked() {
        let dag = parse_dag("task A input @x\n").unwrap();
        let c = cluster(&[1.0, 1.0], 0.0);
        let exec = ExecutionProfile::from_table(1, 3, vec![1.0; 3]).unwrap();
        assert!(matches!(
            heft_map(&dag, &c, &exec, None),
            Err(ScheduleError::ProfileMismatch { .. })
        ));
    }

    #[test]
    fn mapping_cost_model() {
        let c = cluster(&[1.0, 1.0], 2.0);
        let params = HeftCostParams {
            payload_bytes: 10240.0,
            epsilon: 0.0,
        };
        assert_eq!(mapping_cost_heft(&c, 5, &params).unwrap(), 2.0);
        let c4 = cluster(&[1.0; 4], 2.0);
        let c8 = cluster(&[1.0; 8], 2.0);
        let g4 = mapping_cost_heft(&c4, 5, &params).unwrap();
        let g8 = mapping_cost_heft(&c8, 5, &params).unwrap();
        assert_eq!(g4, 6.0);
        assert_eq!(g8, 14.0);
        let with_eps = mapping_cost_heft(&c, 5, &HeftCostParams::default()).unwrap();
        assert!((with_eps - (2.0 + 1e-3 * 10.0)).abs() < 1e-12);
    }
}
