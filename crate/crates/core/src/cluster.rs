//! Cluster description plus the modelled outputs of the network, resource
//! and execution profilers, and a seeded generator for synthetic clusters.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dag::{TaskDag, TaskIndex};
use crate::latency::{fit_latency_model, LatencyCoeffs, LatencyModel, PairSamples};
use crate::ProfileError;

/// Container capacity meaning "never overloaded".
pub const UNLIMITED: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NcpId(pub usize);

impl fmt::Display for NcpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub location: String,
    /// Relative compute speed; execution time is `base_cost / speed_factor`.
    pub speed_factor: f64,
    /// Concurrent activations the node sustains at full speed.
    pub container_capacity: usize,
    /// Service-time multiplier applied while capacity is exceeded.
    pub overload_slowdown: f64,
}

impl Node {
    pub fn new(location: impl Into<String>, speed_factor: f64) -> Self {
        Self {
            location: location.into(),
            speed_factor,
            container_capacity: UNLIMITED,
            overload_slowdown: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    nodes: Vec<Node>,
    latency: LatencyModel,
    home: NcpId,
}

impl ClusterModel {
    pub fn new(nodes: Vec<Node>, latency: LatencyModel, home: NcpId) -> Result<Self, ProfileError> {
        if nodes.is_empty() {
            return Err(ProfileError::InvalidCluster("cluster has no nodes".into()));
        }
        if latency.node_count() != nodes.len() {
            return Err(ProfileError::IncompleteLatency { nodes: nodes.len() });
        }
        if home.0 >= nodes.len() {
            return Err(ProfileError::InvalidCluster(format!(
                "home node {home} out of range"
            )));
        }
        for (i, n) in nodes.iter().enumerate() {
            if !(n.speed_factor > 0.0) || n.container_capacity == 0 || !(n.overload_slowdown >= 1.0) {
                return Err(ProfileError::InvalidCluster(format!(
                    "node {i}: speed and capacity must be positive, slowdown >= 1"
                )));
            }
        }
        Ok(Self { nodes, latency, home })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = NcpId> {
        (0..self.nodes.len()).map(NcpId)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NcpId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn home(&self) -> NcpId {
        self.home
    }

    pub fn latency(&self) -> &LatencyModel {
        &self.latency
    }

    pub fn transfer_time(&self, src: NcpId, dst: NcpId, file_size: f64) -> Result<f64, ProfileError> {
        self.latency.transfer_time(src, dst, file_size)
    }

    /// Copy of the cluster with every node's capacity set to `capacity`.
    pub fn with_capacity(&self, capacity: usize) -> Self {
        let mut out = self.clone();
        for n in &mut out.nodes {
            n.container_capacity = capacity;
        }
        out
    }

    /// Copy of the cluster with a different latency model.
    pub fn with_latency(&self, latency: LatencyModel) -> Result<Self, ProfileError> {
        Self::new(self.nodes.clone(), latency, self.home)
    }
}

/// CPU and memory usage fractions per node, captured once before mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceSnapshot {
    cpu: Vec<f64>,
    mem: Vec<f64>,
}

impl ResourceSnapshot {
    pub fn new(cpu: Vec<f64>, mem: Vec<f64>) -> Result<Self, ProfileError> {
        if cpu.len() != mem.len() {
            return Err(ProfileError::InvalidSnapshot("cpu/mem length mismatch".into()));
        }
        if cpu.iter().chain(&mem).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ProfileError::InvalidSnapshot("usage outside [0, 1]".into()));
        }
        Ok(Self { cpu, mem })
    }

    pub fn idle(n: usize) -> Self {
        Self {
            cpu: vec![0.0; n],
            mem: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.cpu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cpu.is_empty()
    }

    pub fn cpu(&self, id: NcpId) -> f64 {
        self.cpu[id.0]
    }

    pub fn mem(&self, id: NcpId) -> f64 {
        self.mem[id.0]
    }
}

/// Seconds per `(task, node)` at the reference input size.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionProfile {
    tasks: usize,
    nodes: usize,
    times: Vec<f64>,
}

impl ExecutionProfile {
    /// `times` is row-major over tasks (rows) × nodes (columns).
    pub fn from_table(tasks: usize, nodes: usize, times: Vec<f64>) -> Result<Self, ProfileError> {
        if times.len() != tasks * nodes {
            return Err(ProfileError::InvalidCluster(
                "execution table is not tasks × nodes".into(),
            ));
        }
        if times.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(ProfileError::InvalidCluster(
                "execution times must be positive".into(),
            ));
        }
        Ok(Self { tasks, nodes, times })
    }

    pub fn task_count(&self) -> usize {
        self.tasks
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn get(&self, task: TaskIndex, node: NcpId) -> f64 {
        self.times[task * self.nodes + node.0]
    }

    /// Mean execution time of `task` over all nodes.
    pub fn mean(&self, task: TaskIndex) -> f64 {
        let row = &self.times[task * self.nodes..(task + 1) * self.nodes];
        row.iter().sum::<f64>() / self.nodes as f64
    }

    pub fn write_csv<W: std::io::Write>(&self, dag: &TaskDag, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["task", "node", "seconds"])?;
        for t in 0..self.tasks {
            for n in 0..self.nodes {
                w.write_record([
                    dag.name(t).to_string(),
                    n.to_string(),
                    format!("{}", self.get(t, NcpId(n))),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Execution table `base_cost(task) / speed_factor(node)`.
pub fn profile_execution(
    dag: &TaskDag,
    cluster: &ClusterModel,
    base_cost: &BTreeMap<String, f64>,
) -> Result<ExecutionProfile, ProfileError> {
    let mut times = Vec::with_capacity(dag.len() * cluster.len());
    for task in dag.tasks() {
        let cost = *base_cost
            .get(task.id.as_str())
            .ok_or_else(|| ProfileError::MissingCost(task.id.to_string()))?;
        if !(cost > 0.0) {
            return Err(ProfileError::NonPositiveCost(task.id.to_string()));
        }
        times.extend(cluster.nodes().iter().map(|n| cost / n.speed_factor));
    }
    ExecutionProfile::from_table(dag.len(), cluster.len(), times)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeClass {
    #[serde(rename = "rpi-like")]
    RpiLike,
    #[serde(rename = "cloud-like")]
    CloudLike,
}

impl NodeClass {
    fn capacity_range(self) -> [usize; 2] {
        match self {
            NodeClass::RpiLike => [2, 3],
            NodeClass::CloudLike => [6, 8],
        }
    }

    fn slowdown_range(self) -> [f64; 2] {
        match self {
            NodeClass::RpiLike => [4.0, 10.0],
            NodeClass::CloudLike => [1.0, 2.0],
        }
    }

    /// Background CPU and memory usage at snapshot time.
    fn usage_range(self) -> [f64; 2] {
        match self {
            NodeClass::RpiLike => [0.2, 0.3],
            NodeClass::CloudLike => [0.1, 0.5],
        }
    }

    fn speed_range(self) -> [f64; 2] {
        match self {
            NodeClass::RpiLike => [0.6, 1.0],
            NodeClass::CloudLike => [1.8, 2.2],
        }
    }

    /// Default modified-HEFT container cap for this class.
    pub fn default_cap(self) -> usize {
        match self {
            NodeClass::RpiLike => 2,
            NodeClass::CloudLike => 4,
        }
    }
}

/// Parameters for [`synth_cluster`]. Serialized as a TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterRecipe {
    pub node_count: usize,
    pub locations: Vec<String>,
    pub class: NodeClass,
    /// Fixed transfer cost range (seconds) between nodes at one location.
    pub intra_latency: [f64; 2],
    /// Fixed transfer cost range (seconds) between locations.
    pub inter_latency: [f64; 2],
    /// Bandwidth range (bytes/second) within a location.
    pub intra_bandwidth: [f64; 2],
    /// Bandwidth range (bytes/second) between locations.
    pub inter_bandwidth: [f64; 2],
    /// Seed for standalone generation. Experiments draw each repetition's
    /// cluster from the repetition seed instead.
    #[serde(default)]
    pub seed: u64,
    /// Relative multiplicative noise on probe measurements.
    #[serde(default = "default_probe_noise")]
    pub probe_noise: f64,
    #[serde(default)]
    pub capacity: Option<[usize; 2]>,
    #[serde(default)]
    pub slowdown: Option<[f64; 2]>,
    #[serde(default)]
    pub speed: Option<[f64; 2]>,
    #[serde(default)]
    pub cpu_usage: Option<[f64; 2]>,
    #[serde(default)]
    pub mem_usage: Option<[f64; 2]>,
}

fn default_probe_noise() -> f64 {
    0.01
}

/// Probe file sizes (bytes) sent between every ordered pair.
pub const PROBE_SIZES: [f64; 5] = [1024.0, 10240.0, 102400.0, 1048576.0, 10485760.0];

/// Transfer time at 10 MB exceeds the linear term by this fraction.
const CONGESTION_AT_MAX: f64 = 0.2;

impl ClusterRecipe {
    /// Single-site cluster of small boards behind one switch.
    pub fn rpi_like(node_count: usize) -> Self {
        Self {
            node_count,
            locations: vec!["loc0".into()],
            class: NodeClass::RpiLike,
            intra_latency: [0.02, 1.0],
            inter_latency: [1.5, 2.0],
            intra_bandwidth: [5.0e6, 1.2e7],
            inter_bandwidth: [1.0e6, 5.0e6],
            seed: 0,
            probe_noise: default_probe_noise(),
            capacity: None,
            slowdown: None,
            speed: None,
            cpu_usage: None,
            mem_usage: None,
        }
    }

    /// VMs spread over eight geographic sites.
    pub fn cloud_like(node_count: usize) -> Self {
        Self {
            node_count,
            locations: (0..8).map(|i| format!("loc{i}")).collect(),
            class: NodeClass::CloudLike,
            intra_latency: [0.005, 0.02],
            inter_latency: [0.15, 0.6],
            intra_bandwidth: [5.0e7, 1.0e8],
            inter_bandwidth: [5.0e6, 2.0e7],
            seed: 0,
            probe_noise: default_probe_noise(),
            capacity: None,
            slowdown: None,
            speed: None,
            cpu_usage: None,
            mem_usage: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ProfileError> {
        let recipe: Self = toml::from_str(text).map_err(|e| ProfileError::InvalidRecipe(e.to_string()))?;
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("recipe serializes")
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let bad = |m: &str| Err(ProfileError::InvalidRecipe(m.to_string()));
        if self.node_count < 2 {
            return bad("node_count must be at least 2");
        }
        if self.locations.is_empty() {
            return bad("location list is empty");
        }
        let ordered = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite();
        if ![
            self.intra_latency,
            self.inter_latency,
            self.intra_bandwidth,
            self.inter_bandwidth,
        ]
        .into_iter()
        .all(ordered)
        {
            return bad("ranges must be positive and ordered [lo, hi]");
        }
        if self.intra_latency[1] >= self.inter_latency[0] {
            return bad("intra-location latency must be below inter-location latency");
        }
        if !(0.0..0.5).contains(&self.probe_noise) {
            return bad("probe_noise must be in [0, 0.5)");
        }
        if let Some([lo, hi]) = self.capacity {
            if lo == 0 || lo > hi {
                return bad("capacity range must be positive and ordered");
            }
        }
        if let Some([lo, hi]) = self.slowdown {
            if !(lo >= 1.0 && lo <= hi) {
                return bad("slowdown range must be >= 1 and ordered");
            }
        }
        if let Some(r) = self.speed {
            if !ordered(r) {
                return bad("speed range must be positive and ordered");
            }
        }
        for [lo, hi] in [self.cpu_usage, self.mem_usage].into_iter().flatten() {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad("usage ranges must be ordered within [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCluster {
    pub cluster: ClusterModel,
    pub snapshot: ResourceSnapshot,
    pub probes: Vec<PairSamples>,
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Generates a cluster, its resource snapshot and raw probe measurements.
/// The cluster's latency model is the quadratic fit of those probes.
///
/// Node `i` sits at `locations[i % L]`. A busy node runs slower:
/// `speed = base_speed · (1 − cpu_usage / 2)`.
pub fn synth_cluster(recipe: &ClusterRecipe, seed: u64) -> Result<SynthCluster, ProfileError> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = recipe.node_count;
    let class = recipe.class;
    let cap_range = recipe.capacity.unwrap_or(class.capacity_range());
    let slow_range = recipe.slowdown.unwrap_or(class.slowdown_range());
    let speed_range = recipe.speed.unwrap_or(class.speed_range());
    let cpu_range = recipe.cpu_usage.unwrap_or(class.usage_range());
    let mem_range = recipe.mem_usage.unwrap_or(class.usage_range());

    let mut nodes = Vec::with_capacity(n);
    let mut cpu = Vec::with_capacity(n);
    let mut mem = Vec::with_capacity(n);
    for i in 0..n {
        let cpu_usage = uniform(&mut rng, cpu_range);
        let mem_usage = uniform(&mut rng, mem_range);
        let base_speed = uniform(&mut rng, speed_range);
        nodes.push(Node {
            location: recipe.locations[i % recipe.locations.len()].clone(),
            speed_factor: base_speed * (1.0 - 0.5 * cpu_usage),
            container_capacity: rng.gen_range(cap_range[0]..=cap_range[1]),
            overload_slowdown: uniform(&mut rng, slow_range),
        });
        cpu.push(cpu_usage);
        mem.push(mem_usage);
    }

    let locs = recipe.locations.len();
    let mut site_base = vec![0.0; locs * locs];
    for a in 0..locs {
        for b in a + 1..locs {
            let base = uniform(&mut rng, recipe.inter_latency);
            site_base[a * locs + b] = base;
            site_base[b * locs + a] = base;
        }
    }

    let mut probes = Vec::with_capacity(n * (n - 1));
    for src in 0..n {
        for dst in (0..n).filter(|&d| d != src) {
            let (la, lb) = (src % locs, dst % locs);
            let (p, bandwidth) = if la == lb {
                (
                    uniform(&mut rng, recipe.intra_latency),
                    uniform(&mut rng, recipe.intra_bandwidth),
                )
            } else {
                let jitter = rng.gen_range(0.9..1.1);
                let [lo, hi] = recipe.inter_latency;
                (
                    (site_base[la * locs + lb] * jitter).clamp(lo, hi),
                    uniform(&mut rng, recipe.inter_bandwidth),
                )
            };
            let q = 1.0 / bandwidth;
            let r = CONGESTION_AT_MAX * q / PROBE_SIZES[PROBE_SIZES.len() - 1];
            let truth = LatencyCoeffs::new(p, q, r);
            let samples = PROBE_SIZES
                .iter()
                .map(|&f| {
                    let noise = if recipe.probe_noise > 0.0 {
                        1.0 + rng.gen_range(-recipe.probe_noise..recipe.probe_noise)
                    } else {
                        1.0
                    };
                    (f, truth.eval(f) * noise)
                })
                .collect();
            probes.push(PairSamples {
                src: NcpId(src),
                dst: NcpId(dst),
                samples,
            });
        }
    }

    let home = NcpId(rng.gen_range(0..n));
    let latency = fit_latency_model(n, &probes)?;
    Ok(SynthCluster {
        cluster: ClusterModel::new(nodes, latency, home)?,
        snapshot: ResourceSnapshot::new(cpu, mem)?,
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::{dnad_base_costs, dnad_fixture, parse_dag};

    fn three_nodes(speeds: [f64; 3]) -> ClusterModel {
        let nodes = speeds.iter().map(|&s| Node::new("x", s)).collect();
        let lat = LatencyModel::uniform(3, LatencyCoeffs::new(1.0, 0.0, 0.0)).unwrap();
        ClusterModel::new(nodes, lat, NcpId(0)).unwrap()
    }

    #[test]
    fn synth_is_deterministic() {
        let mut recipe = ClusterRecipe::rpi_like(30);
        recipe.seed = 7;
        let a = synth_cluster(&recipe, 7).unwrap();
        let b = synth_cluster(&recipe, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_cluster(&recipe, 8).unwrap();
        assert_ne!(a.cluster, c.cluster);
    }

    #[test]
    fn cloud_nodes_cover_eight_locations() {
        let s = synth_cluster(&ClusterRecipe::cloud_like(90), 3).unwrap();
        let labels: std::collections::BTreeSet<_> =
            s.cluster.nodes().iter().map(|n| n.location.as_str()).collect();
        assert_eq!(labels.len(), 8);
        for n in s.cluster.nodes() {
            assert!(n.container_capacity >= 6);
            assert!((1.0..=2.0).contains(&n.overload_slowdown));
        }
    }

    #[test]
    fn synthetic_transfers_positive_and_sited() {
        let s = synth_cluster(&ClusterRecipe::cloud_like(24), 11).unwrap();
        let c = &s.cluster;
        let mut intra = Vec::new();
        let mut inter = Vec::new();
        for a in c.ids() {
            for b in c.ids().filter(|&b| b != a) {
                let t = c.transfer_time(a, b, 10240.0).unwrap();
                assert!(t > 0.0);
                let p = c.latency().coeffs(a, b).p;
                if c.node(a).location == c.node(b).location {
                    intra.push(p);
                } else {
                    inter.push(p);
                }
            }
        }
        let max_intra = intra.iter().cloned().fold(f64::MIN, f64::max);
        let min_inter = inter.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max_intra < min_inter, "{max_intra} vs {min_inter}");
    }

    #[test]
    fn rpi_class_parameters() {
        let s = synth_cluster(&ClusterRecipe::rpi_like(30), 1).unwrap();
        for n in s.cluster.nodes() {
            assert!((2..=3).contains(&n.container_capacity));
            assert!(n.overload_slowdown >= 4.0 && n.overload_slowdown <= 10.0);
        }
        assert!((0..30).all(|i| (0.0..1.0).contains(&s.snapshot.cpu(NcpId(i)))));
        assert_eq!(s.probes.len(), 30 * 29);
    }

    #[test]
    fn recipe_errors() {
        let mut r = ClusterRecipe::rpi_like(1);
        assert!(matches!(
            synth_cluster(&r, 0),
            Err(ProfileError::InvalidRecipe(_))
        ));
        r.node_count = 4;
        r.locations.clear();
        assert!(matches!(
            synth_cluster(&r, 0),
            Err(ProfileError::InvalidRecipe(_))
        ));
    }

    #[test]
    fn recipe_toml_round_trip() {
        let mut r = ClusterRecipe::cloud_like(60);
        r.capacity = Some([6, 6]);
        let back = ClusterRecipe::from_toml(&r.to_toml()).unwrap();
        assert_eq!(back, r);
        assert!(ClusterRecipe::from_toml("node_count = 3\nbogus = 1\n").is_err());
    }

    #[test]
    fn execution_profile_basic() {
        let dag = parse_dag("task A input @x\n").unwrap();
        let cluster = three_nodes([2.0, 1.0, 4.0]);
        let costs = BTreeMap::from([("A".to_string(), 4.0)]);
        let prof = profile_execution(&dag, &cluster, &costs).unwrap();
        assert_eq!(prof.get(0, NcpId(0)), 2.0);
        assert_eq!(prof.get(0, NcpId(2)), 1.0);
        assert!((prof.mean(0) - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_cluster_gives_constant_rows() {
        let dag = dnad_fixture();
        let cluster = three_nodes([1.5, 1.5, 1.5]);
        let prof = profile_execution(&dag, &cluster, &dnad_base_costs()).unwrap();
        assert_eq!(prof.task_count(), 14);
        assert_eq!(prof.node_count(), 3);
        for t in 0..dag.len() {
            assert!(prof.get(t, NcpId(0)) > 0.0);
            assert_eq!(prof.get(t, NcpId(0)), prof.get(t, NcpId(1)));
            assert_eq!(prof.get(t, NcpId(1)), prof.get(t, NcpId(2)));
        }
    }

    #[test]
    fn missing_cost_reported() {
        let dag = parse_dag("task A input @x\ntask B\nedge A B 1\n").unwrap();
        let costs = BTreeMap::from([("A".to_string(), 1.0)]);
        assert_eq!(
            profile_execution(&dag, &three_nodes([1.0; 3]), &costs).unwrap_err(),
            ProfileError::MissingCost("B".into())
        );
    }

    #[test]
    fn snapshot_range_checked() {
        assert!(ResourceSnapshot::new(vec![0.5], vec![1.2]).is_err());
        assert!(ResourceSnapshot::new(vec![0.5], vec![1.0]).is_ok());
    }
}
