//! Discrete-event replay of queue-based dispatch over a placement.
//!
//! Every task owns one container that handles sequence numbers strictly in
//! order. An activation starts once every parent output for its sequence
//! number has reached the task's node. Finished outputs are copied to each
//! child's node. A node running more activations than its container
//! capacity serves all of them at `1 / overload_slowdown` speed.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::{ClusterModel, ExecutionProfile, NcpId};
use crate::dag::{TaskDag, TaskIndex};
use crate::heft::Placement;
use crate::SimError;

/// Input size at which execution times and edge payloads are nominal.
pub const REFERENCE_SIZE: f64 = 100.0 * 1024.0;

/// Default cap on exhaustive search size.
pub const BRUTE_FORCE_LIMIT: u128 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputFile {
    pub seq: usize,
    pub size: f64,
    pub arrival: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputSchedule {
    files: Vec<InputFile>,
}

impl InputSchedule {
    pub fn new(files: Vec<InputFile>) -> Result<Self, SimError> {
        if files.is_empty() {
            return Err(SimError::InvalidSchedule("no input files".into()));
        }
        for (i, f) in files.iter().enumerate() {
            if f.seq != i {
                return Err(SimError::InvalidSchedule(format!(
                    "sequence numbers must run 0..n, found {} at position {i}",
                    f.seq
                )));
            }
            if !(f.size > 0.0) || !(f.arrival >= 0.0) {
                return Err(SimError::InvalidSchedule(format!(
                    "file {i}: bad size or arrival"
                )));
            }
            if i > 0 && f.arrival < files[i - 1].arrival {
                return Err(SimError::InvalidSchedule(
                    "arrival times must be non-decreasing".into(),
                ));
            }
        }
        Ok(Self { files })
    }

    /// `count` files of `size` bytes, one every `interval` seconds from 0.
    pub fn periodic(count: usize, interval: f64, size: f64) -> Result<Self, SimError> {
        Self::new(
            (0..count)
                .map(|seq| InputFile {
                    seq,
                    size,
                    arrival: seq as f64 * interval,
                })
                .collect(),
        )
    }

    /// Like [`periodic`](Self::periodic) with sizes drawn uniformly from
    /// `[min_size, max_size]`.
    pub fn periodic_random(
        count: usize,
        interval: f64,
        min_size: f64,
        max_size: f64,
        seed: u64,
    ) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(
            (0..count)
                .map(|seq| InputFile {
                    seq,
                    size: if max_size > min_size {
                        rng.gen_range(min_size..=max_size).round()
                    } else {
                        min_size
                    },
                    arrival: seq as f64 * interval,
                })
                .collect(),
        )
    }

    /// One reference-size file at time zero.
    pub fn single() -> Self {
        Self {
            files: vec![InputFile {
                seq: 0,
                size: REFERENCE_SIZE,
                arrival: 0.0,
            }],
        }
    }

    pub fn files(&self) -> &[InputFile] {
        &self.files
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    fn factor(&self, seq: usize) -> f64 {
        self.files[seq].size / REFERENCE_SIZE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    FileArrival,
    TransferArrival,
    Start,
    Finish,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::FileArrival => "file_arrival",
            EventKind::TransferArrival => "transfer_arrival",
            EventKind::Start => "start",
            EventKind::Finish => "finish",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub kind: EventKind,
    pub task: TaskIndex,
    pub node: NcpId,
    pub seq: usize,
}

/// One execution of a task on one sequence number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activation {
    pub task: TaskIndex,
    pub node: NcpId,
    pub seq: usize,
    pub start: f64,
    pub end: f64,
    /// Nominal service requirement, seconds at full speed.
    pub work: f64,
    pub start_event: usize,
    pub end_event: usize,
}

/// Copy of one output to one child.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferRecord {
    pub parent: TaskIndex,
    pub child: TaskIndex,
    pub seq: usize,
    pub src: NcpId,
    pub dst: NcpId,
    pub size: f64,
    pub sent: f64,
    pub arrived: f64,
    pub event: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MakespanReport {
    pub arrivals: Vec<f64>,
    /// Per sequence number: last sink finish minus file arrival.
    pub makespans: Vec<f64>,
    pub activations: Vec<Activation>,
    pub transfers: Vec<TransferRecord>,
    pub events: Vec<SimEvent>,
}

impl MakespanReport {
    pub fn mean_makespan(&self) -> f64 {
        self.makespans.iter().sum::<f64>() / self.makespans.len() as f64
    }

    pub fn write_events_csv<W: std::io::Write>(&self, dag: &TaskDag, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "kind", "task", "node", "seq"])?;
        for e in &self.events {
            w.write_record([
                e.time.to_string(),
                e.kind.as_str().to_string(),
                dag.name(e.task).to_string(),
                e.node.to_string(),
                e.seq.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["seq", "makespan_seconds"])?;
        for (seq, m) in self.makespans.iter().enumerate() {
            w.write_record([seq.to_string(), m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pending data delivery, ordered by `(time, task, seq, kind)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Delivery {
    time: f64,
    task: TaskIndex,
    seq: usize,
    kind: EventKind,
    transfer: Option<usize>,
}

impl Eq for Delivery {}

impl Ord for Delivery {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap.
        other
            .time
            .total_cmp(&self.time)
            .then(other.task.cmp(&self.task))
            .then(other.seq.cmp(&self.seq))
            .then(other.kind.cmp(&self.kind))
            .then(other.transfer.cmp(&self.transfer))
    }
}

impl PartialOrd for Delivery {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy)]
struct Running {
    task: TaskIndex,
    seq: usize,
    remaining: f64,
    activation: usize,
}

struct Engine<'a> {
    dag: &'a TaskDag,
    placement: &'a Placement,
    cluster: &'a ClusterModel,
    exec: &'a ExecutionProfile,
    schedule: &'a InputSchedule,
    now: f64,
    /// Missing inputs per `(task, seq)`.
    pending: Vec<Vec<usize>>,
    next_seq: Vec<usize>,
    busy: Vec<bool>,
    running: Vec<Vec<Running>>,
    queue: BinaryHeap<Delivery>,
    report: MakespanReport,
    completed: usize,
}

impl<'a> Engine<'a> {
    fn rate(&self, node: usize) -> f64 {
        let n = &self.cluster.nodes()[node];
        if self.running[node].len() > n.container_capacity {
            1.0 / n.overload_slowdown
        } else {
            1.0
        }
    }

    fn log(&mut self, kind: EventKind, task: TaskIndex, seq: usize) -> usize {
        self.report.events.push(SimEvent {
            time: self.now,
            kind,
            task,
            node: self.placement.node_of(task),
            seq,
        });
        self.report.events.len() - 1
    }

    fn try_start(&mut self, task: TaskIndex) {
        let seq = self.next_seq[task];
        if self.busy[task] || seq >= self.schedule.len() || self.pending[task][seq] > 0 {
            return;
        }
        let node = self.placement.node_of(task);
        let work = self.exec.get(task, node) * self.schedule.factor(seq);
        let start_event = self.log(EventKind::Start, task, seq);
        self.report.activations.push(Activation {
            task,
            node,
            seq,
            start: self.now,
            end: f64::NAN,
            work,
            start_event,
            end_event: usize::MAX,
        });
        self.running[node.0].push(Running {
            task,
            seq,
            remaining: work,
            activation: self.report.activations.len() - 1,
        });
        self.busy[task] = true;
    }

    fn deliver(&mut self, d: Delivery) {
        let ev = self.log(d.kind, d.task, d.seq);
        if let Some(k) = d.transfer {
            self.report.transfers[k].event = ev;
        }
        self.pending[d.task][d.seq] -= 1;
    }

    fn finish(&mut self, r: Running) -> Result<(), SimError> {
        let node = self.placement.node_of(r.task);
        let end_event = self.log(EventKind::Finish, r.task, r.seq);
        let act = &mut self.report.activations[r.activation];
        act.end = self.now;
        act.end_event = end_event;
        self.busy[r.task] = false;
        self.next_seq[r.task] += 1;
        self.completed += 1;
        let factor = self.schedule.factor(r.seq);
        let edges: Vec<_> = self.dag.out_edges(r.task).copied().collect();
        for e in edges {
            let dst = self.placement.node_of(e.child);
            let size = e.data_size as f64 * factor;
            let arrived = self.now + self.cluster.transfer_time(node, dst, size)?;
            self.report.transfers.push(TransferRecord {
                parent: r.task,
                child: e.child,
                seq: r.seq,
                src: node,
                dst,
                size,
                sent: self.now,
                arrived,
                event: usize::MAX,
            });
            self.queue.push(Delivery {
                time: arrived,
                task: e.child,
                seq: r.seq,
                kind: EventKind::TransferArrival,
                transfer: Some(self.report.transfers.len() - 1),
            });
        }
        if self.dag.out_edges(r.task).next().is_none() {
            let made = self.now - self.report.arrivals[r.seq];
            let slot = &mut self.report.makespans[r.seq];
            *slot = slot.max(made);
        }
        Ok(())
    }

    fn run(mut self) -> Result<MakespanReport, SimError> {
        let total = self.dag.len() * self.schedule.len();
        while self.completed < total {
            // Earliest completion per node under the current rates.
            let mut next_done = f64::INFINITY;
            let mut node_done = vec![f64::INFINITY; self.running.len()];
            for node in 0..self.running.len() {
                if let Some(min) = self.running[node]
                    .iter()
                    .map(|r| r.remaining)
                    .min_by(f64::total_cmp)
                {
                    node_done[node] = self.now + min / self.rate(node);
                    next_done = next_done.min(node_done[node]);
                }
            }
            let next_delivery = self.queue.peek().map_or(f64::INFINITY, |d| d.time);
            let t = next_done.min(next_delivery);
            assert!(t.is_finite(), "simulation stalled with work outstanding");

            // Completions at `t`, identified before advancing.
            let mut done: Vec<Running> = Vec::new();
            for (node, &at) in node_done.iter().enumerate() {
                if at == t {
                    let min = self.running[node]
                        .iter()
                        .map(|r| r.remaining)
                        .min_by(f64::total_cmp)
                        .expect("node has running work");
                    let (fin, keep): (Vec<_>, Vec<_>) =
                        self.running[node].iter().partition(|r| r.remaining == min);
                    done.extend(fin);
                    self.running[node] = keep;
                }
            }
            let dt = t - self.now;
            for node in 0..self.running.len() {
                let rate = self.rate_with(node, &done);
                for r in &mut self.running[node] {
                    r.remaining = (r.remaining - dt * rate).max(0.0);
                }
            }
            self.now = t;

            let mut deliveries = Vec::new();
            while self.queue.peek().is_some_and(|d| d.time == t) {
                deliveries.push(self.queue.pop().expect("peeked"));
            }
            // Process everything at `t` by (task, seq), then start whatever
            // became eligible.
            enum Happening {
                Done(Running),
                Arrive(Delivery),
            }
            let mut happenings: Vec<(TaskIndex, usize, u8, Happening)> = done
                .into_iter()
                .map(|r| (r.task, r.seq, 0, Happening::Done(r)))
                .chain(
                    deliveries
                        .into_iter()
                        .map(|d| (d.task, d.seq, 1, Happening::Arrive(d))),
                )
                .collect();
            happenings.sort_by_key(|a| (a.0, a.1, a.2));
            let mut touched = BTreeSet::new();
            for (task, _, _, h) in happenings {
                match h {
                    Happening::Done(r) => {
                        self.finish(r)?;
                        touched.insert(task);
                        touched.extend(self.dag.children(task));
                    }
                    Happening::Arrive(d) => {
                        self.deliver(d);
                        touched.insert(task);
                    }
                }
            }
            for task in touched {
                self.try_start(task);
            }
        }
        Ok(self.report)
    }

    /// Rate of `node` over the interval that ends with `done` completing;
    /// the finishing activations were still running during it.
    fn rate_with(&self, node: usize, done: &[Running]) -> f64 {
        let n = &self.cluster.nodes()[node];
        let finishing = done
            .iter()
            .filter(|r| self.placement.node_of(r.task).0 == node)
            .count();
        if self.running[node].len() + finishing > n.container_capacity {
            1.0 / n.overload_slowdown
        } else {
            1.0
        }
    }
}

/// Replays `schedule` through the placed graph and measures the makespan of
/// every input file.
pub fn simulate(
    dag: &TaskDag,
    placement: &Placement,
    cluster: &ClusterModel,
    exec: &ExecutionProfile,
    schedule: &InputSchedule,
) -> Result<MakespanReport, SimError> {
    if placement.len() != dag.len() {
        return Err(SimError::UnassignedTask {
            placed: placement.len(),
            tasks: dag.len(),
        });
    }
    if placement.assignment().iter().any(|n| n.0 >= cluster.len()) {
        return Err(SimError::InvalidSchedule(
            "placement names a node outside the cluster".into(),
        ));
    }
    if exec.task_count() != dag.len() || exec.node_count() != cluster.len() {
        return Err(crate::ScheduleError::ProfileMismatch {
            tasks: dag.len(),
            nodes: cluster.len(),
            profile_tasks: exec.task_count(),
            profile_nodes: exec.node_count(),
        }
        .into());
    }
    let files = schedule.len();
    let pending = (0..dag.len())
        .map(|t| vec![dag.parents(t).count().max(1); files])
        .collect();
    let mut queue = BinaryHeap::new();
    for t in dag.input_tasks() {
        for f in schedule.files() {
            queue.push(Delivery {
                time: f.arrival,
                task: t,
                seq: f.seq,
                kind: EventKind::FileArrival,
                transfer: None,
            });
        }
    }
    let engine = Engine {
        dag,
        placement,
        cluster,
        exec,
        schedule,
        now: 0.0,
        pending,
        next_seq: vec![0; dag.len()],
        busy: vec![false; dag.len()],
        running: vec![Vec::new(); cluster.len()],
        queue,
        report: MakespanReport {
            arrivals: schedule.files().iter().map(|f| f.arrival).collect(),
            makespans: vec![f64::NEG_INFINITY; files],
            activations: Vec::new(),
            transfers: Vec::new(),
            events: Vec::new(),
        },
        completed: 0,
    };
    engine.run()
}

/// Exhaustively simulates every placement of a single-file instance and
/// returns the lexicographically smallest placement with minimum makespan.
pub fn brute_force_optimal(
    dag: &TaskDag,
    cluster: &ClusterModel,
    exec: &ExecutionProfile,
    schedule: &InputSchedule,
    limit: u128,
) -> Result<(Placement, f64), SimError> {
    if schedule.len() != 1 {
        return Err(SimError::InvalidSchedule(
            "exhaustive search takes a single file".into(),
        ));
    }
    let (n, t) = (cluster.len() as u128, dag.len() as u32);
    let space = n.checked_pow(t).unwrap_or(u128::MAX);
    if space > limit {
        return Err(SimError::SearchSpaceTooLarge(space, limit));
    }
    let mut digits = vec![0usize; dag.len()];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let placement = Placement::new(digits.iter().map(|&d| NcpId(d)).collect());
        let makespan = simulate(dag, &placement, cluster, exec, schedule)?.makespans[0];
        if best.as_ref().is_none_or(|(_, m)| makespan < *m) {
            best = Some((digits.clone(), makespan));
        }
        // Odometer increment, last task fastest.
        let mut i = digits.len();
        loop {
            if i == 0 {
                let (d, m) = best.expect("at least one placement");
                return Ok((Placement::new(d.into_iter().map(NcpId).collect()), m));
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < cluster.len() {
                break;
            }
            digits[i] = 0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Placement,
    Precedence,
    Barrier,
    Container,
    Transfer,
    OverloadAccounting,
    Makespan,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::Placement => "placement",
            ViolationKind::Precedence => "precedence",
            ViolationKind::Barrier => "barrier",
            ViolationKind::Container => "container",
            ViolationKind::Transfer => "transfer",
            ViolationKind::OverloadAccounting => "overload accounting",
            ViolationKind::Makespan => "makespan",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
    /// Indices into [`MakespanReport::events`].
    pub events: Vec<usize>,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} (events {:?})",
            self.kind.as_str(),
            self.message,
            self.events
        )
    }
}

const TOL: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * a.abs().max(b.abs()).max(1.0)
}

/// Re-derives the consistency of a report from its activation and transfer
/// records alone: placement, precedence through transfers, input barriers,
/// in-order container use, transfer durations, processor-sharing service
/// accounting and the makespan figures. Violations are returned in the
/// order found; the first is the earliest check that failed.
pub fn validate_trace(
    report: &MakespanReport,
    dag: &TaskDag,
    placement: &Placement,
    cluster: &ClusterModel,
) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut flag = |kind, message: String, events: Vec<usize>| {
        out.push(Violation {
            kind,
            message,
            events,
        })
    };
    let files = report.arrivals.len();

    let mut act_of = vec![vec![None; files]; dag.len()];
    for (k, a) in report.activations.iter().enumerate() {
        if a.task >= dag.len() || a.seq >= files {
            flag(
                ViolationKind::Barrier,
                format!("activation {k} outside the instance"),
                vec![a.start_event],
            );
            continue;
        }
        if act_of[a.task][a.seq].replace(k).is_some() {
            flag(
                ViolationKind::Barrier,
                format!("{} ran twice for seq {}", dag.name(a.task), a.seq),
                vec![a.start_event],
            );
        }
        if a.node != placement.node_of(a.task) {
            flag(
                ViolationKind::Placement,
                format!(
                    "{} ran on {} instead of {}",
                    dag.name(a.task),
                    a.node,
                    placement.node_of(a.task)
                ),
                vec![a.start_event],
            );
        }
        if !(a.end >= a.start) {
            flag(
                ViolationKind::Precedence,
                format!("activation {k} ends before it starts"),
                vec![a.start_event, a.end_event],
            );
        }
    }
    for t in 0..dag.len() {
        for s in 0..files {
            if act_of[t][s].is_none() {
                flag(
                    ViolationKind::Barrier,
                    format!("{} never ran seq {s}", dag.name(t)),
                    vec![],
                );
            }
        }
    }

    // Input barrier and in-order container use.
    for t in 0..dag.len() {
        for s in 0..files {
            let Some(k) = act_of[t][s] else { continue };
            let a = &report.activations[k];
            if dag.is_input(t) && a.start < report.arrivals[s] - TOL {
                flag(
                    ViolationKind::Barrier,
                    format!("{} started seq {s} before the file arrived", dag.name(t)),
                    vec![a.start_event],
                );
            }
            if s > 0 {
                if let Some(p) = act_of[t][s - 1] {
                    let prev = &report.activations[p];
                    if a.start < prev.end - TOL {
                        flag(
                            ViolationKind::Container,
                            format!("{} started seq {s} before finishing seq {}", dag.name(t), s - 1),
                            vec![prev.end_event, a.start_event],
                        );
                    }
                }
            }
        }
    }

    // Transfers: one per (edge, seq), correct endpoints and duration, sent
    // at the parent's finish, received before the child starts.
    let mut seen = vec![vec![false; files]; dag.edges().len()];
    for tr in &report.transfers {
        let Some(ei) = dag
            .edges()
            .iter()
            .position(|e| e.parent == tr.parent && e.child == tr.child)
        else {
            flag(
                ViolationKind::Transfer,
                "transfer along a non-edge".into(),
                vec![tr.event],
            );
            continue;
        };
        if tr.seq >= files || std::mem::replace(&mut seen[ei][tr.seq], true) {
            flag(
                ViolationKind::Transfer,
                "duplicate or out-of-range transfer".into(),
                vec![tr.event],
            );
            continue;
        }
        let (src, dst) = (placement.node_of(tr.parent), placement.node_of(tr.child));
        if tr.src != src || tr.dst != dst {
            flag(
                ViolationKind::Transfer,
                format!("transfer endpoints {}→{} differ from placement", tr.src, tr.dst),
                vec![tr.event],
            );
        }
        match cluster.transfer_time(tr.src, tr.dst, tr.size) {
            Ok(d) if close(tr.arrived - tr.sent, d) => {}
            Ok(d) => flag(
                ViolationKind::Transfer,
                format!("transfer took {} s, model says {d} s", tr.arrived - tr.sent),
                vec![tr.event],
            ),
            Err(e) => flag(ViolationKind::Transfer, e.to_string(), vec![tr.event]),
        }
        if let Some(p) = act_of[tr.parent][tr.seq] {
            let pa = &report.activations[p];
            if !close(tr.sent, pa.end) {
                flag(
                    ViolationKind::Precedence,
                    format!(
                        "{}→{} sent seq {} at {} but parent finished at {}",
                        dag.name(tr.parent),
                        dag.name(tr.child),
                        tr.seq,
                        tr.sent,
                        pa.end
                    ),
                    vec![pa.end_event, tr.event],
                );
            }
        }
        if let Some(c) = act_of[tr.child][tr.seq] {
            let ca = &report.activations[c];
            if ca.start < tr.arrived - TOL * tr.arrived.abs().max(1.0) {
                flag(
                    ViolationKind::Precedence,
                    format!(
                        "{} started seq {} at {} before input from {} arrived at {}",
                        dag.name(tr.child),
                        tr.seq,
                        ca.start,
                        dag.name(tr.parent),
                        tr.arrived
                    ),
                    vec![tr.event, ca.start_event],
                );
            }
        }
    }
    for (ei, e) in dag.edges().iter().enumerate() {
        for (s, ok) in seen[ei].iter().enumerate() {
            if !ok {
                flag(
                    ViolationKind::Precedence,
                    format!(
                        "no transfer {}→{} for seq {s}",
                        dag.name(e.parent),
                        dag.name(e.child)
                    ),
                    vec![],
                );
            }
        }
    }

    // Service accounting: integrate each node's speed over every activation.
    for node in cluster.ids() {
        let acts: Vec<&Activation> = report.activations.iter().filter(|a| a.node == node).collect();
        if acts.is_empty() {
            continue;
        }
        let spec = cluster.node(node);
        let mut cuts: Vec<f64> = acts.iter().flat_map(|a| [a.start, a.end]).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let speed: Vec<f64> = cuts
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let active = acts.iter().filter(|a| a.start <= mid && mid < a.end).count();
                if active > spec.container_capacity {
                    1.0 / spec.overload_slowdown
                } else {
                    1.0
                }
            })
            .collect();
        for a in &acts {
            let served: f64 = cuts
                .windows(2)
                .zip(&speed)
                .filter(|(w, _)| w[0] >= a.start && w[1] <= a.end)
                .map(|(w, v)| (w[1] - w[0]) * v)
                .sum();
            if (served - a.work).abs() > 1e-7 * a.work.max(1.0) {
                flag(
                    ViolationKind::OverloadAccounting,
                    format!(
                        "{} seq {} on node {node} received {served} s of service for {} s of work",
                        dag.name(a.task),
                        a.seq,
                        a.work
                    ),
                    vec![a.start_event, a.end_event],
                );
            }
        }
    }

    for s in 0..files {
        let last = dag
            .sinks()
            .filter_map(|t| act_of[t][s].map(|k| report.activations[k].end))
            .fold(f64::NEG_INFINITY, f64::max);
        let expected = last - report.arrivals[s];
        if report.makespans.get(s).is_none_or(|&m| !close(m, expected)) {
            flag(
                ViolationKind::Makespan,
                format!("seq {s} makespan should be {expected}"),
                vec![],
            );
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Node;
    use crate::dag::parse_dag;
    use crate::latency::{LatencyCoeffs, LatencyModel};

    fn cluster(n: usize, p: f64) -> ClusterModel {
        let nodes = (0..n).map(|_| Node::new("x", 1.0)).collect();
        let lat = LatencyModel::uniform(n, LatencyCoeffs::new(p, 0.0, 0.0)).unwrap();
        ClusterModel::new(nodes, lat, NcpId(0)).unwrap()
    }

    fn table(dag: &TaskDag, nodes: usize, per_task: &[f64]) -> ExecutionProfile {
        let times = per_task
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, nodes))
            .collect();
        ExecutionProfile::from_table(dag.len(), nodes, times).unwrap()
    }

    #[test]
    fn single_task() {
        let dag = parse_dag("task A input @x\n").unwrap();
        let c = cluster(1, 0.0);
        let exec = table(&dag, 1, &[5.0]);
        let r = simulate(
            &dag,
            &Placement::new(vec![NcpId(0)]),
            &c,
            &exec,
            &InputSchedule::single(),
        )
        .unwrap();
        assert_eq!(r.makespans, vec![5.0]);
        assert!(validate_trace(&r, &dag, &Placement::new(vec![NcpId(0)]), &c).is_ok());
    }

    #[test]
    fn chain_across_nodes() {
        let dag = parse_dag("task A input @x\ntask B\nedge A B 100\n").unwrap();
        let c = cluster(2, 1.0);
        let exec = table(&dag, 2, &[2.0, 3.0]);
        let p = Placement::new(vec![NcpId(0), NcpId(1)]);
        let r = simulate(&dag, &p, &c, &exec, &InputSchedule::single()).unwrap();
        assert_eq!(r.makespans, vec![6.0]);
        assert!(validate_trace(&r, &dag, &p, &c).is_ok());
    }

    #[test]
    fn fan_in_waits_for_last_parent() {
        // P1 finishes at 3 and its output lands at 4; P2 finishes at 6 and
        // lands at 7; the child (1 s) therefore ends at 8.
        let dag = parse_dag(
            "task S input @x\ntask P1\ntask P2\ntask C\n\
             edge S P1 10\nedge S P2 10\nedge P1 C 10\nedge P2 C 10\n",
        )
        .unwrap();
        let c = cluster(3, 1.0);
        // name order: C, P1, P2, S
        let times = vec![
            1.0, 1.0, 1.0, // C
            2.0, 2.0, 2.0, // P1
            4.0, 4.0, 4.0, // P2
            1.0, 1.0, 1.0, // S
        ];
        let exec = ExecutionProfile::from_table(4, 3, times).unwrap();
        let p = Placement::new(vec![NcpId(2), NcpId(0), NcpId(1), NcpId(0)]);
        let r = simulate(&dag, &p, &c, &exec, &InputSchedule::single()).unwrap();
        let child = r.activations.iter().find(|a| a.task == 0).unwrap();
        assert_eq!(child.start, 7.0);
        assert_eq!(child.end, 8.0);
        assert_eq!(r.makespans, vec![8.0]);
        assert!(validate_trace(&r, &dag, &p, &c).is_ok());
    }

    #[test]
    fn file_size_scales_work_and_payload() {
        let dag = parse_dag("task A input @x\ntask B\nedge A B 1000\n").unwrap();
        let nodes = vec![Node::new("x", 1.0), Node::new("x", 1.0)];
        let lat = LatencyModel::uniform(2, LatencyCoeffs::new(0.0, 0.001, 0.0)).unwrap();
        let c = ClusterModel::new(nodes, lat, NcpId(0)).unwrap();
        let exec = table(&dag, 2, &[1.0, 1.0]);
        let p = Placement::new(vec![NcpId(0), NcpId(1)]);
        let sched = InputSchedule::periodic(1, 1.0, 2.0 * REFERENCE_SIZE).unwrap();
        let r = simulate(&dag, &p, &c, &exec, &sched).unwrap();
        // 2 s + 2000 B · 1 ms/B + 2 s
        assert!((r.makespans[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn sequences_pipeline_in_order() {
        let dag = parse_dag("task A input @x\n").unwrap();
        let c = cluster(1, 0.0);
        let exec = table(&dag, 1, &[3.0]);
        let p = Placement::new(vec![NcpId(0)]);
        let sched = InputSchedule::periodic(3, 1.0, REFERENCE_SIZE).unwrap();
        let r = simulate(&dag, &p, &c, &exec, &sched).unwrap();
        // one container: ends at 3, 6, 9
        assert_eq!(r.makespans, vec![3.0, 5.0, 7.0]);
        assert!(validate_trace(&r, &dag, &p, &c).is_ok());
    }

    #[test]
    fn overload_slows_every_active_service() {
        // Three 1 s tasks start together on a capacity-2 node with slowdown 2.
        let dag = parse_dag("task A input @x\ntask B input @x\ntask C input @x\n").unwrap();
        let mut nodes = vec![Node::new("x", 1.0)];
        nodes[0].container_capacity = 2;
        nodes[0].overload_slowdown = 2.0;
        let lat = LatencyModel::uniform(1, LatencyCoeffs::default()).unwrap();
        let c = ClusterModel::new(nodes, lat, NcpId(0)).unwrap();
        let exec = table(&dag, 1, &[1.0, 1.0, 1.0]);
        let p = Placement::new(vec![NcpId(0); 3]);
        let r = simulate(&dag, &p, &c, &exec, &InputSchedule::single()).unwrap();
        assert_eq!(r.makespans, vec![2.0]);
        assert!(validate_trace(&r, &dag, &p, &c).is_ok());
    }

    #[test]
    fn overload_clears_when_one_finishes() {
        // Works 1, 2, 2 on capacity 2, slowdown 2: all at half speed until
        // the short one ends at t = 2, then full speed for the remaining 1 s.
        let dag = parse_dag("task A input @x\ntask B input @x\ntask C input @x\n").unwrap();
        let mut nodes = vec![Node::new("x", 1.0)];
        nodes[0].container_capacity = 2;
        nodes[0].overload_slowdown = 2.0;
        let lat = LatencyModel::uniform(1, LatencyCoeffs::default()).unwrap();
        let c = ClusterModel::new(nodes, lat, NcpId(0)).unwrap();
        let exec = table(&dag, 1, &[1.0, 2.0, 2.0]);
        let p = Placement::new(vec![NcpId(0); 3]);
        let r = simulate(&dag, &p, &c, &exec, &InputSchedule::single()).unwrap();
        let ends: Vec<f64> = r.activations.iter().map(|a| a.end).collect();
        assert_eq!(ends, vec![2.0, 3.0, 3.0]);
        assert!(validate_trace(&r, &dag, &p, &c).is_ok());
    }

    #[test]
    fn validator_flags_precedence_fault() {
        let dag = parse_dag("task A input @x\ntask B\nedge A B 100\n").unwrap();
        let c = cluster(2, 1.0);
        let exec = table(&dag, 2, &[2.0, 3.0]);
        let p = Placement::new(vec![NcpId(0), NcpId(1)]);
        let mut r = simulate(&dag, &p, &c, &exec, &InputSchedule::single()).unwrap();
        let b = r.activations.iter_mut().find(|a| a.task == 1).unwrap();
        b.start -= 0.5;
        b.end -= 0.5;
        let errs = validate_trace(&r, &dag, &p, &c).unwrap_err();
        assert!(errs.iter().any(|v| v.kind == ViolationKind::Precedence));
    }

    #[test]
    fn validator_flags_unscaled_overload() {
        // Five concurrent 1 s activations on a capacity-2 node, recorded as if
        // they ran at full speed.
        let dag = parse_dag(
            "task A input @x\ntask B input @x\ntask C input @x\ntask D input @x\ntask E input @x\n",
        )
        .unwrap();
        let mut nodes = vec![Node::new("x", 1.0)];
        nodes[0].container_capacity = 2;
        nodes[0].overload_slowdown = 4.0;
        let lat = LatencyModel::uniform(1, LatencyCoeffs::default()).unwrap();
        let c = ClusterModel::new(nodes, lat, NcpId(0)).unwrap();
        let exec = table(&dag, 1, &[1.0; 5]);
        let p = Placement::new(vec![NcpId(0); 5]);
        let mut r = simulate(&dag, &p, &c, &exec, &InputSchedule::single()).unwrap();
        assert!(validate_trace(&r, &dag, &p, &c).is_ok());
        for a in &mut r.activations {
            a.end = a.start + a.work;
        }
        r.makespans = vec![1.0];
        let errs = validate_trace(&r, &dag, &p, &c).unwrap_err();
        assert_eq!(errs[0].kind, ViolationKind::OverloadAccounting);
    }

    #[test]
    fn unassigned_task_rejected() {
        let dag = parse_dag("task A input @x\ntask B\nedge A B 1\n").unwrap();
        let c = cluster(1, 0.0);
        let exec = table(&dag, 1, &[1.0, 1.0]);
        assert!(matches!(
            simulate(
                &dag,
                &Placement::new(vec![NcpId(0)]),
                &c,
                &exec,
                &InputSchedule::single()
            ),
            Err(SimError::UnassignedTask { placed: 1, tasks: 2 })
        ));
    }

    #[test]
    fn schedule_validation() {
        assert!(InputSchedule::new(vec![]).is_err());
        let bad = vec![InputFile {
            seq: 1,
            size: 1.0,
            arrival: 0.0,
        }];
        assert!(InputSchedule::new(bad).is_err());
        let unordered = vec![
            InputFile {
                seq: 0,
                size: 1.0,
                arrival: 2.0,
            },
            InputFile {
                seq: 1,
                size: 1.0,
                arrival: 1.0,
            },
        ];
        assert!(InputSchedule::new(unordered).is_err());
        let s = InputSchedule::periodic_random(10, 1.0, 10240.0, 307200.0, 4).unwrap();
        assert!(s.files().iter().all(|f| (10240.0..=307200.0).contains(&f.size)));
    }

    #[test]
    fn brute_force_one_node() {
        let dag = parse_dag("task A input @x\ntask B\nedge A B 1\n").unwrap();
        let c = cluster(1, 0.0);
        let exec = table(&dag, 1, &[1.0, 2.0]);
        let (p, m) =
            brute_force_optimal(&dag, &c, &exec, &InputSchedule::single(), BRUTE_FORCE_LIMIT).unwrap();
        let direct = simulate(&dag, &p, &c, &exec, &InputSchedule::single()).unwrap();
        assert_eq!(m, direct.makespans[0]);
        assert_eq!(m, 3.0);
    }

    #[test]
    fn brute_force_keeps_chain_together() {
        // node 0 fast for A, node 1 fast for B, but crossing costs 100 s.
        let dag = parse_dag("task A input @x\ntask B\nedge A B 1\n").unwrap();
        let c = cluster(2, 100.0);
        let exec = ExecutionProfile::from_table(2, 2, vec![1.0, 5.0, 5.0, 1.0]).unwrap();
        let (p, m) =
            brute_force_optimal(&dag, &c, &exec, &InputSchedule::single(), BRUTE_FORCE_LIMIT).unwrap();
        assert_eq!(p.assignment(), &[NcpId(0), NcpId(0)]);
        assert_eq!(m, 6.0);
    }

    #[test]
    fn brute_force_limits() {
        let dag = parse_dag("task A input @x\ntask B\nedge A B 1\n").unwrap();
        let c = cluster(3, 1.0);
        let exec = table(&dag, 3, &[1.0, 1.0]);
        assert!(matches!(
            brute_force_optimal(&dag, &c, &exec, &InputSchedule::single(), 8),
            Err(SimError::SearchSpaceTooLarge(9, 8))
        ));
        let two = InputSchedule::periodic(2, 1.0, REFERENCE_SIZE).unwrap();
        assert!(brute_force_optimal(&dag, &c, &exec, &two, BRUTE_FORCE_LIMIT).is_err());
    }
}
