//! Directed acyclic task graphs: construction, validation, text format and
//! deterministic topological ordering.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;

use thiserror::Error;

/// Dense index of a task inside a [`TaskDag`]. Indices follow lexicographic
/// task-name order.
pub type TaskIndex = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("task name must be non-empty and free of whitespace and '#'")]
    InvalidName,
    #[error("duplicate task {0}")]
    DuplicateTask(String),
    #[error("edge {parent} -> {child} refers to unknown task {unknown}")]
    UnknownTask {
        parent: String,
        child: String,
        unknown: String,
    },
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("edge {0} -> {1} must carry a positive data size")]
    ZeroDataSize(String, String),
    #[error("cycle detected among tasks [{}]", .0.join(", "))]
    Cycle(Vec<String>),
    #[error("input task {task} has incoming edge from {parent}")]
    InputHasParent { task: String, parent: String },
    #[error("task {0} has no parents but is not declared as an input")]
    UndeclaredSource(String),
    #[error("graph has no tasks")]
    Empty,
}

/// Unique task identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(String);

impl TaskId {
    pub fn new(name: impl Into<String>) -> Result<Self, DagError> {
        let name = name.into();
        if name.is_empty() || name.contains(char::is_whitespace) || name.contains('#') {
            return Err(DagError::InvalidName);
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: TaskId,
    /// Data-source location label; `Some` exactly for input tasks.
    pub input_location: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub parent: TaskIndex,
    pub child: TaskIndex,
    /// Payload size in bytes at the reference input size.
    pub data_size: u64,
}

/// A validated task graph. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDag {
    tasks: Vec<Task>,
    index: HashMap<String, TaskIndex>,
    edges: Vec<Edge>,
    in_edges: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
    topo: Vec<TaskIndex>,
    topo_pos: Vec<usize>,
}

/// Tasks in a precedence-respecting order; ties are broken by task name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologicalOrder(pub Vec<TaskId>);

impl TopologicalOrder {
    pub fn names(&self) -> Vec<&str> {
        self.0.iter().map(TaskId::as_str).collect()
    }
}

impl TaskDag {
    /// Builds and validates a graph from `(name, input_location)` task
    /// declarations and `(parent, child, data_size)` edges.
    pub fn new<S: AsRef<str>>(
        tasks: impl IntoIterator<Item = (S, Option<String>)>,
        edges: impl IntoIterator<Item = (S, S, u64)>,
    ) -> Result<Self, DagError> {
        let mut declared: BTreeMap<String, Option<String>> = BTreeMap::new();
        for (name, location) in tasks {
            let id = TaskId::new(name.as_ref())?;
            if declared.insert(id.0, location).is_some() {
                return Err(DagError::DuplicateTask(name.as_ref().to_string()));
            }
        }
        if declared.is_empty() {
            return Err(DagError::Empty);
        }
        let tasks: Vec<Task> = declared
            .into_iter()
            .map(|(name, input_location)| Task {
                id: TaskId(name),
                input_location,
            })
            .collect();
        let index: HashMap<String, TaskIndex> = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id.0.clone(), i))
            .collect();

        let mut edge_list = Vec::new();
        let mut seen = HashMap::new();
        for (parent, child, data_size) in edges {
            let (p, c) = (parent.as_ref(), child.as_ref());
            let lookup = |name: &str| {
                index.get(name).copied().ok_or_else(|| DagError::UnknownTask {
                    parent: p.to_string(),
                    child: c.to_string(),
                    unknown: name.to_string(),
                })
            };
            let (pi, ci) = (lookup(p)?, lookup(c)?);
            if data_size == 0 {
                return Err(DagError::ZeroDataSize(p.to_string(), c.to_string()));
            }
            if seen.insert((pi, ci), ()).is_some() {
                return Err(DagError::DuplicateEdge(p.to_string(), c.to_string()));
            }
            edge_list.push(Edge {
                parent: pi,
                child: ci,
                data_size,
            });
        }
        edge_list.sort_by_key(|e| (e.parent, e.child));

        let n = tasks.len();
        let mut in_edges = vec![Vec::new(); n];
        let mut out_edges = vec![Vec::new(); n];
        for (k, e) in edge_list.iter().enumerate() {
            out_edges[e.parent].push(k);
            in_edges[e.child].push(k);
        }

        for (i, task) in tasks.iter().enumerate() {
            match (&task.input_location, in_edges[i].first()) {
                (Some(_), Some(&k)) => {
                    return Err(DagError::InputHasParent {
                        task: task.id.0.clone(),
                        parent: tasks[edge_list[k].parent].id.0.clone(),
                    })
                }
                (None, None) => return Err(DagError::UndeclaredSource(task.id.0.clone())),
                _ => {}
            }
        }

        // Kahn's algorithm with a min-heap over indices (= lexicographic names).
        let mut indegree: Vec<usize> = in_edges.iter().map(Vec::len).collect();
        let mut ready: BinaryHeap<Reverse<TaskIndex>> =
            (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(Reverse(u)) = ready.pop() {
            topo.push(u);
            for &k in &out_edges[u] {
                let v = edge_list[k].child;
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    ready.push(Reverse(v));
                }
            }
        }
        if topo.len() != n {
            let stuck = (0..n)
                .filter(|&i| indegree[i] > 0)
                .map(|i| tasks[i].id.0.clone())
                .collect();
            return Err(DagError::Cycle(stuck));
        }
        let mut topo_pos = vec![0; n];
        for (pos, &t) in topo.iter().enumerate() {
            topo_pos[t] = pos;
        }

        Ok(Self {
            tasks,
            index,
            edges: edge_list,
            in_edges,
            out_edges,
            topo,
            topo_pos,
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, t: TaskIndex) -> &Task {
        &self.tasks[t]
    }

    pub fn name(&self, t: TaskIndex) -> &str {
        &self.tasks[t].id.0
    }

    pub fn index_of(&self, name: &str) -> Option<TaskIndex> {
        self.index.get(name).copied()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_between(&self, parent: TaskIndex, child: TaskIndex) -> Option<&Edge> {
        self.out_edges[parent]
            .iter()
            .map(|&k| &self.edges[k])
            .find(|e| e.child == child)
    }

    /// Edges entering `t`, ordered by parent index.
    pub fn in_edges(&self, t: TaskIndex) -> impl Iterator<Item = &Edge> + '_ {
        self.in_edges[t].iter().map(move |&k| &self.edges[k])
    }

    /// Edges leaving `t`, ordered by child index.
    pub fn out_edges(&self, t: TaskIndex) -> impl Iterator<Item = &Edge> + '_ {
        self.out_edges[t].iter().map(move |&k| &self.edges[k])
    }

    pub fn parents(&self, t: TaskIndex) -> impl Iterator<Item = TaskIndex> + '_ {
        self.in_edges(t).map(|e| e.parent)
    }

    pub fn children(&self, t: TaskIndex) -> impl Iterator<Item = TaskIndex> + '_ {
        self.out_edges(t).map(|e| e.child)
    }

    pub fn is_input(&self, t: TaskIndex) -> bool {
        self.tasks[t].input_location.is_some()
    }

    pub fn input_tasks(&self) -> impl Iterator<Item = TaskIndex> + '_ {
        (0..self.len()).filter(|&t| self.is_input(t))
    }

    pub fn sinks(&self) -> impl Iterator<Item = TaskIndex> + '_ {
        (0..self.len()).filter(|&t| self.out_edges[t].is_empty())
    }

    /// Task indices in topological order.
    pub fn topo(&self) -> &[TaskIndex] {
        &self.topo
    }

    /// Position of `t` in the topological order.
    pub fn topo_index(&self, t: TaskIndex) -> usize {
        self.topo_pos[t]
    }

    pub fn topological_order(&self) -> TopologicalOrder {
        TopologicalOrder(self.topo.iter().map(|&t| self.tasks[t].id.clone()).collect())
    }

    /// Serializes to the line format accepted by [`parse_dag`]: tasks sorted
    /// by name, then edges sorted by `(parent, child)`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for task in &self.tasks {
            match &task.input_location {
                Some(loc) => out.push_str(&format!("task {} input @{}\n", task.id, loc)),
                None => out.push_str(&format!("task {}\n", task.id)),
            }
        }
        for e in &self.edges {
            out.push_str(&format!(
                "edge {} {} {}\n",
                self.name(e.parent),
                self.name(e.child),
                e.data_size
            ));
        }
        out
    }
}

pub fn topological_order(dag: &TaskDag) -> TopologicalOrder {
    dag.topological_order()
}

/// Parses the line-oriented graph format:
///
/// ```text
/// # comment
/// task <name> [input @<location>]
/// edge <parent> <child> <data_size_bytes>
/// ```
pub fn parse_dag(text: &str) -> Result<TaskDag, DagError> {
    let mut tasks: Vec<(String, Option<String>)> = Vec::new();
    let mut edges: Vec<(String, String, u64)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: &str| DagError::Parse {
            line: lineno + 1,
            message: message.to_string(),
        };
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["task", name] => tasks.push((name.to_string(), None)),
            ["task", name, "input", loc] => {
                let loc = loc
                    .strip_prefix('@')
                    .filter(|l| !l.is_empty())
                    .ok_or_else(|| err("input location must be written as @<location>"))?;
                tasks.push((name.to_string(), Some(loc.to_string())));
            }
            ["edge", parent, child, size] => {
                let size: u64 = size
                    .parse()
                    .map_err(|_| err(&format!("invalid data size {size:?}")))?;
                edges.push((parent.to_string(), child.to_string(), size));
            }
            _ => return Err(err(&format!("unrecognized directive {line:?}"))),
        }
    }
    TaskDag::new(tasks, edges)
}

pub const DNAD_STREAMS: usize = 3;
pub const DNAD_DEFAULT_EDGE_SIZE: u64 = 100 * 1024;
pub const DNAD_DEFAULT_LOCATION: &str = "loc0";

/// The anomaly-detector pipeline: one observation point feeding three
/// aggregation streams, each analysed by a simple and an astute detector,
/// merged per stream and then globally.
pub fn dnad_fixture() -> TaskDag {
    dnad_fixture_with(DNAD_DEFAULT_EDGE_SIZE, DNAD_DEFAULT_LOCATION)
}

pub fn dnad_fixture_with(edge_size: u64, location: &str) -> TaskDag {
    let mut tasks = vec![("local_processing".to_string(), Some(location.to_string()))];
    let mut edges = Vec::new();
    for s in 1..=DNAD_STREAMS {
        let agg = format!("aggregate_{s}");
        let simple = format!("simple_detector_{s}");
        let astute = format!("astute_detector_{s}");
        let fusion = format!("fusion_{s}");
        edges.push(("local_processing".to_string(), agg.clone(), edge_size));
        edges.push((agg.clone(), simple.clone(), edge_size));
        edges.push((agg.clone(), astute.clone(), edge_size));
        edges.push((simple.clone(), fusion.clone(), edge_size));
        edges.push((astute.clone(), fusion.clone(), edge_size));
        edges.push((fusion.clone(), "global_fusion".to_string(), edge_size));
        for name in [agg, simple, astute, fusion] {
            tasks.push((name, None));
        }
    }
    tasks.push(("global_fusion".to_string(), None));
    TaskDag::new(tasks, edges).expect("anomaly-detector fixture is a valid DAG")
}

/// Synthetic per-task base costs (seconds on a unit-speed node at the
/// reference input size) for [`dnad_fixture`].
pub fn dnad_base_costs() -> BTreeMap<String, f64> {
    let mut costs = BTreeMap::new();
    costs.insert("local_processing".to_string(), 0.075);
    costs.insert("global_fusion".to_string(), 0.0625);
    for s in 1..=DNAD_STREAMS {
        costs.insert(format!("aggregate_{s}"), 0.10);
        costs.insert(format!("simple_detector_{s}"), 0.05);
        costs.insert(format!("astute_detector_{s}"), 0.15);
        costs.insert(format!("fusion_{s}"), 0.05);
    }
    costs
}
