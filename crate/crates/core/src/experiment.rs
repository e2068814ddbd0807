//! Experiment driver: one TOML file selects the graph, cluster recipe,
//! mappers, repetitions, seeds and input stream; results land in a bundle
//! directory of CSV tables.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::{profile_execution, synth_cluster, ClusterRecipe, NodeClass};
use crate::dag::{dnad_base_costs, dnad_fixture, parse_dag, TaskDag};
use crate::dispatch::{simulate, validate_trace, InputSchedule, MakespanReport, Violation};
use crate::error::{ProfileError, ScheduleError, SimError};
use crate::heft::{heft_map, mapping_cost_heft, HeftCostParams, Placement};
use crate::wave::{wave_greedy, wave_random, GreedyParams, MappingTrace, ProtocolParams};

/// Name under which the built-in anomaly-detector graph is selected.
pub const BUILTIN_DNAD: &str = "dnad";

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MAKESPANS_FILE: &str = "makespans.csv";
pub const MAPPING_FILE: &str = "mapping_runtime.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PLACEMENTS_FILE: &str = "placements.csv";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{mapper}: {source}")]
    Infeasible {
        mapper: String,
        #[source]
        source: ScheduleError,
    },
    #[error("{mapper} repetition {rep}: {source}")]
    Mapping {
        mapper: String,
        rep: usize,
        #[source]
        source: ScheduleError,
    },
    #[error("{mapper} repetition {rep}: simulation failed: {source}")]
    Simulation {
        mapper: String,
        rep: usize,
        #[source]
        source: SimError,
    },
    #[error("{mapper} repetition {rep}: trace failed validation with {} violation(s)", violations.len())]
    Invariant {
        mapper: String,
        rep: usize,
        violations: Vec<Violation>,
    },
    #[error("bundles cover different instances: {0}")]
    InstanceMismatch(String),
    #[error("malformed bundle {path}: {message}")]
    Bundle { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            ExperimentError::Config(_)
            | ExperimentError::InstanceMismatch(_)
            | ExperimentError::Bundle { .. }
            | ExperimentError::Mapping { .. } => 2,
            ExperimentError::Infeasible { .. } => 3,
            ExperimentError::Simulation { .. } | ExperimentError::Invariant { .. } => 4,
            ExperimentError::Io { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn config_err(e: impl fmt::Display) -> ExperimentError {
    ExperimentError::Config(e.to_string())
}

/// A mapping strategy under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MapperSpec {
    Heft,
    HeftCapped(usize),
    WaveRandom,
    WaveGreedy,
}

impl MapperSpec {
    /// Filesystem-safe form of the label.
    pub fn file_stem(&self) -> String {
        match self {
            MapperSpec::HeftCapped(c) => format!("heft_capped_{c}"),
            other => other.to_string(),
        }
    }
}

impl fmt::Display for MapperSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapperSpec::Heft => f.write_str("heft"),
            MapperSpec::HeftCapped(c) => write!(f, "heft_capped({c})"),
            MapperSpec::WaveRandom => f.write_str("wave_random"),
            MapperSpec::WaveGreedy => f.write_str("wave_greedy"),
        }
    }
}

impl FromStr for MapperSpec {
    type Err = String;

    /// Accepts `heft`, `wave_random`, `wave_greedy`, and `heft_capped(N)`
    /// or `heft_capped:N`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "heft" => Ok(MapperSpec::Heft),
            "wave_random" => Ok(MapperSpec::WaveRandom),
            "wave_greedy" => Ok(MapperSpec::WaveGreedy),
            other => {
                let cap = other
                    .strip_prefix("heft_capped")
                    .and_then(|rest| {
                        rest.strip_prefix(':')
                            .or_else(|| rest.strip_prefix('(').and_then(|r| r.strip_suffix(')')))
                    })
                    .ok_or_else(|| format!("unknown mapper `{other}`"))?;
                let cap: usize = cap
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad container cap in `{other}`"))?;
                if cap == 0 {
                    return Err("heft_capped needs a cap of at least 1".into());
                }
                Ok(MapperSpec::HeftCapped(cap))
            }
        }
    }
}

impl Serialize for MapperSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MapperSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where the cluster recipe comes from: a named preset or a recipe file,
/// optionally with node count and node-class overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub preset: Option<NodeClass>,
    pub recipe: Option<PathBuf>,
    pub nodes: Option<usize>,
    pub capacity: Option<[usize; 2]>,
    pub slowdown: Option<[f64; 2]>,
    pub speed: Option<[f64; 2]>,
}

/// Stream of input files fed to every input task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputSpec {
    pub count: usize,
    /// Seconds between consecutive arrivals.
    pub interval: f64,
    /// File sizes are drawn uniformly from `[min_size, max_size]` bytes.
    pub min_size: f64,
    pub max_size: f64,
}

impl Default for InputSpec {
    fn default() -> Self {
        Self {
            count: 10,
            interval: 1.0,
            min_size: 10.0 * 1024.0,
            max_size: 300.0 * 1024.0,
        }
    }
}

fn default_repetitions() -> usize {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `"dnad"` or a path to a graph in the text DAG format.
    pub dag: String,
    pub cluster: ClusterSpec,
    pub mappers: Vec<MapperSpec>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Repetition `r` uses seed `seed + r`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub inputs: InputSpec,
    #[serde(default)]
    pub greedy: GreedyParams,
    #[serde(default)]
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub heft_cost: HeftCostParams,
    /// Per-task base execution seconds on a unit-speed node.
    #[serde(default)]
    pub costs: BTreeMap<String, f64>,
    /// Base cost for tasks absent from `costs`.
    #[serde(default)]
    pub default_cost: Option<f64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub verbose_events: bool,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let config: Self = toml::from_str(text).map_err(config_err)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.repetitions == 0 {
            return Err(config_err("repetitions must be at least 1"));
        }
        if self.mappers.is_empty() {
            return Err(config_err("no mappers selected"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.mappers {
            if !seen.insert(*m) {
                return Err(config_err(format!("mapper {m} listed twice")));
            }
        }
        match (&self.cluster.preset, &self.cluster.recipe) {
            (Some(_), Some(_)) => return Err(config_err("cluster: give either preset or recipe, not both")),
            (None, None) => return Err(config_err("cluster: preset or recipe required")),
            _ => {}
        }
        let i = &self.inputs;
        if i.count == 0 {
            return Err(config_err("inputs.count must be at least 1"));
        }
        if !(i.interval >= 0.0 && i.interval.is_finite()) {
            return Err(config_err("inputs.interval must be a non-negative number"));
        }
        if !(i.min_size >= 1.0 && i.min_size <= i.max_size && i.max_size.is_finite()) {
            return Err(config_err("inputs sizes must satisfy 1 <= min_size <= max_size"));
        }
        self.greedy.validate().map_err(config_err)?;
        let p = &self.protocol;
        if !(p.control_payload >= 1.0 && p.hop_delay >= 0.0) {
            return Err(config_err(
                "protocol: control_payload >= 1 and hop_delay >= 0 required",
            ));
        }
        let h = &self.heft_cost;
        if !(h.payload_bytes >= 1.0 && h.epsilon >= 0.0) {
            return Err(config_err(
                "heft_cost: payload_bytes >= 1 and epsilon >= 0 required",
            ));
        }
        if let Some(c) = self.default_cost {
            if !(c > 0.0) {
                return Err(config_err("default_cost must be positive"));
            }
        }
        Ok(())
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Output directory, resolved against the config location.
    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }
}

/// Everything a repetition needs besides the per-repetition cluster.
#[derive(Debug, Clone)]
pub struct Instance {
    pub dag: TaskDag,
    pub recipe: ClusterRecipe,
    pub costs: BTreeMap<String, f64>,
}

impl Instance {
    pub fn load(config: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let dag = if config.dag == BUILTIN_DNAD {
            dnad_fixture()
        } else {
            let path = config.resolve(Path::new(&config.dag));
            let text =
                fs::read_to_string(&path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            parse_dag(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?
        };

        let spec = &config.cluster;
        let mut recipe = match (&spec.preset, &spec.recipe) {
            (Some(NodeClass::RpiLike), _) => ClusterRecipe::rpi_like(spec.nodes.unwrap_or(30)),
            (Some(NodeClass::CloudLike), _) => ClusterRecipe::cloud_like(spec.nodes.unwrap_or(90)),
            (None, Some(path)) => {
                let path = config.resolve(path);
                let text =
                    fs::read_to_string(&path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                ClusterRecipe::from_toml(&text).map_err(config_err)?
            }
            (None, None) => return Err(config_err("cluster: preset or recipe required")),
        };
        if let Some(n) = spec.nodes {
            recipe.node_count = n;
        }
        recipe.capacity = spec.capacity.or(recipe.capacity);
        recipe.slowdown = spec.slowdown.or(recipe.slowdown);
        recipe.speed = spec.speed.or(recipe.speed);
        recipe.validate().map_err(config_err)?;

        let mut costs = if config.dag == BUILTIN_DNAD {
            dnad_base_costs()
        } else {
            BTreeMap::new()
        };
        costs.extend(config.costs.iter().map(|(k, v)| (k.clone(), *v)));
        for t in 0..dag.len() {
            let name = dag.name(t);
            if !costs.contains_key(name) {
                match config.default_cost {
                    Some(c) => {
                        costs.insert(name.to_string(), c);
                    }
                    None => return Err(config_err(ProfileError::MissingCost(name.to_string()))),
                }
            }
        }
        costs.retain(|k, _| dag.index_of(k).is_some());
        Ok(Self { dag, recipe, costs })
    }

    /// SHA-256 over the graph, recipe, base costs, input stream, seeds and
    /// repetition count. Bundles are comparable only when these match.
    pub fn fingerprint(&self, config: &ExperimentConfig) -> String {
        let mut h = Sha256::new();
        h.update(self.dag.to_text());
        h.update(self.recipe.to_toml());
        for (k, v) in &self.costs {
            h.update(format!("{k}={v}\n"));
        }
        let i = &config.inputs;
        h.update(format!(
            "inputs {} {} {} {}\nseed {}\nrepetitions {}\n",
            i.count, i.interval, i.min_size, i.max_size, config.seed, config.repetitions
        ));
        hex::encode(h.finalize())
    }
}

/// Independent sub-seed for one purpose within a repetition.
fn sub_seed(rep_seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const INPUT_STREAM: u64 = 1;
const MAPPER_STREAM: u64 = 2;

/// Outcome of one mapper on one repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub mapper: MapperSpec,
    pub rep: usize,
    pub seed: u64,
    pub placement: Placement,
    pub mapping_runtime: f64,
    pub mapping_trace: Option<MappingTrace>,
    pub report: MakespanReport,
}

/// Maps one repetition's instance with `mapper` and returns the placement,
/// simulated mapping runtime and (for WAVE) the protocol trace.
fn map_with(
    mapper: MapperSpec,
    instance: &Instance,
    synth: &crate::cluster::SynthCluster,
    exec: &crate::cluster::ExecutionProfile,
    config: &ExperimentConfig,
    rep_seed: u64,
) -> Result<(Placement, f64, Option<MappingTrace>), ScheduleError> {
    let dag = &instance.dag;
    let cluster = &synth.cluster;
    match mapper {
        MapperSpec::Heft | MapperSpec::HeftCapped(_) => {
            let cap = match mapper {
                MapperSpec::HeftCapped(c) => Some(c),
                _ => None,
            };
            let placement = heft_map(dag, cluster, exec, cap)?;
            let cost = mapping_cost_heft(cluster, dag.len(), &config.heft_cost)?;
            Ok((placement, cost, None))
        }
        MapperSpec::WaveRandom => {
            let out = wave_random(dag, cluster, sub_seed(rep_seed, MAPPER_STREAM), &config.protocol)?;
            Ok((out.placement, out.trace.completion_time, Some(out.trace)))
        }
        MapperSpec::WaveGreedy => {
            let out = wave_greedy(dag, cluster, &synth.snapshot, &config.greedy, &config.protocol)?;
            Ok((out.placement, out.trace.completion_time, Some(out.trace)))
        }
    }
}

/// Runs every mapper on repetition `rep`.
fn run_repetition(
    config: &ExperimentConfig,
    instance: &Instance,
    rep: usize,
    simulate_dispatch: bool,
) -> Result<Vec<RunRecord>, ExperimentError> {
    let rep_seed = config.seed.wrapping_add(rep as u64);
    let synth = synth_cluster(&instance.recipe, rep_seed).map_err(config_err)?;
    let exec = profile_execution(&instance.dag, &synth.cluster, &instance.costs).map_err(config_err)?;
    let i = &config.inputs;
    let schedule = InputSchedule::periodic_random(
        i.count,
        i.interval,
        i.min_size,
        i.max_size,
        sub_seed(rep_seed, INPUT_STREAM),
    )
    .map_err(config_err)?;

    let mut out = Vec::with_capacity(config.mappers.len());
    for &mapper in &config.mappers {
        let (placement, mapping_runtime, mapping_trace) =
            map_with(mapper, instance, &synth, &exec, config, rep_seed).map_err(|source| match source {
                ScheduleError::CapInfeasible { .. } => ExperimentError::Infeasible {
                    mapper: mapper.to_string(),
                    source,
                },
                source => ExperimentError::Mapping {
                    mapper: mapper.to_string(),
                    rep,
                    source,
                },
            })?;
        let report = if simulate_dispatch {
            let report =
                simulate(&instance.dag, &placement, &synth.cluster, &exec, &schedule).map_err(|source| {
                    ExperimentError::Simulation {
                        mapper: mapper.to_string(),
                        rep,
                        source,
                    }
                })?;
            validate_trace(&report, &instance.dag, &placement, &synth.cluster).map_err(|violations| {
                ExperimentError::Invariant {
                    mapper: mapper.to_string(),
                    rep,
                    violations,
                }
            })?;
            report
        } else {
            MakespanReport::default()
        };
        out.push(RunRecord {
            mapper,
            rep,
            seed: rep_seed,
            placement,
            mapping_runtime,
            mapping_trace,
            report,
        });
    }
    Ok(out)
}

/// Runs repetitions on worker threads and returns records ordered by
/// (repetition, mapper position in the config). The first error by
/// repetition order wins.
fn run_all(
    config: &ExperimentConfig,
    instance: &Instance,
    simulate_dispatch: bool,
) -> Result<Vec<RunRecord>, ExperimentError> {
    let reps = config.repetitions;
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(reps);
    let mut slots: Vec<Option<Result<Vec<RunRecord>, ExperimentError>>> = (0..reps).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..reps)
                        .step_by(workers)
                        .map(|rep| (rep, run_repetition(config, instance, rep, simulate_dispatch)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (rep, result) in h.join().expect("repetition worker panicked") {
                slots[rep] = Some(result);
            }
        }
    });
    let mut records = Vec::new();
    for slot in slots {
        records.extend(slot.expect("every repetition ran")?);
    }
    Ok(records)
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mapper: String,
    pub samples: usize,
    pub mean_makespan_seconds: f64,
    pub std_makespan_seconds: f64,
    pub mean_mapping_seconds: f64,
    pub std_mapping_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fingerprint: String,
    pub dag: String,
    pub seed: u64,
    pub repetitions: usize,
    pub mappers: Vec<MapperSpec>,
}

/// In-memory result of [`run_experiment`]; the same data is on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub manifest: Manifest,
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentResult {
    pub fn summary_for(&self, mapper: MapperSpec) -> Option<&SummaryRow> {
        let label = mapper.to_string();
        self.summary.iter().find(|r| r.mapper == label)
    }

    /// Every per-file makespan of `mapper` across repetitions.
    pub fn makespans(&self, mapper: MapperSpec) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.mapper == mapper)
            .flat_map(|r| r.report.makespans.iter().copied())
            .collect()
    }
}

fn summarize(mappers: &[MapperSpec], records: &[RunRecord]) -> Vec<SummaryRow> {
    mappers
        .iter()
        .map(|&m| {
            let mine: Vec<_> = records.iter().filter(|r| r.mapper == m).collect();
            let spans: Vec<f64> = mine
                .iter()
                .flat_map(|r| r.report.makespans.iter().copied())
                .collect();
            let maps: Vec<f64> = mine.iter().map(|r| r.mapping_runtime).collect();
            let (ms, ss) = mean_std(&spans);
            let (mm, sm) = mean_std(&maps);
            SummaryRow {
                mapper: m.to_string(),
                samples: spans.len(),
                mean_makespan_seconds: ms,
                std_makespan_seconds: ss,
                mean_mapping_seconds: mm,
                std_mapping_seconds: sm,
            }
        })
        .collect()
}

/// Writes via a temporary sibling and a rename so readers never see a
/// partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn csv_bytes(fill: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    fill(&mut buf).expect("writing CSV to memory");
    buf
}

fn write_bundle(
    dir: &Path,
    config: &ExperimentConfig,
    instance: &Instance,
    result: &ExperimentResult,
) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let dag = &instance.dag;

    write_atomic(
        &dir.join(MANIFEST_FILE),
        toml::to_string(&result.manifest)
            .expect("manifest serializes")
            .as_bytes(),
    )?;

    let makespans = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["mapper", "rep", "seed", "seq", "makespan_seconds"])?;
        for r in &result.records {
            for (seq, m) in r.report.makespans.iter().enumerate() {
                w.write_record([
                    r.mapper.to_string(),
                    r.rep.to_string(),
                    r.seed.to_string(),
                    seq.to_string(),
                    m.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    });
    write_atomic(&dir.join(MAKESPANS_FILE), &makespans)?;

    let mapping = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["mapper", "rep", "seed", "mapping_seconds"])?;
        for r in &result.records {
            w.write_record([
                r.mapper.to_string(),
                r.rep.to_string(),
                r.seed.to_string(),
                r.mapping_runtime.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    });
    write_atomic(&dir.join(MAPPING_FILE), &mapping)?;

    let placements = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["mapper", "rep", "task", "node"])?;
        for r in &result.records {
            for t in 0..dag.len() {
                w.write_record([
                    r.mapper.to_string(),
                    r.rep.to_string(),
                    dag.name(t).to_string(),
                    r.placement.node_of(t).0.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    });
    write_atomic(&dir.join(PLACEMENTS_FILE), &placements)?;

    if config.verbose_events {
        let events = dir.join("events");
        fs::create_dir_all(&events).map_err(io_err(&events))?;
        for r in &result.records {
            let stem = format!("{}_rep{}", r.mapper.file_stem(), r.rep);
            let bytes = csv_bytes(|buf| r.report.write_events_csv(dag, buf));
            write_atomic(&events.join(format!("{stem}_dispatch.csv")), &bytes)?;
            if let Some(trace) = &r.mapping_trace {
                let bytes = csv_bytes(|buf| trace.write_csv(dag, buf));
                write_atomic(&events.join(format!("{stem}_mapping.csv")), &bytes)?;
            }
        }
    }

    let summary = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        for row in &result.summary {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    });
    write_atomic(&dir.join(SUMMARY_FILE), &summary)
}

/// Runs every configured mapper on every repetition, validates each
/// simulated trace and, if `write` is set, writes the result bundle to the
/// configured output directory.
///
/// Repetition `r` draws its cluster, input stream and random-mapper
/// choices from seed `seed + r`; all mappers in a repetition share the
/// cluster and input stream.
pub fn run_experiment(config: &ExperimentConfig, write: bool) -> Result<ExperimentResult, ExperimentError> {
    config.validate()?;
    let instance = Instance::load(config)?;
    let records = run_all(config, &instance, true)?;
    let result = ExperimentResult {
        manifest: Manifest {
            fingerprint: instance.fingerprint(config),
            dag: config.dag.clone(),
            seed: config.seed,
            repetitions: config.repetitions,
            mappers: config.mappers.clone(),
        },
        summary: summarize(&config.mappers, &records),
        records,
    };
    if write {
        write_bundle(&config.output_dir(), config, &instance, &result)?;
    }
    Ok(result)
}

/// One mapper's makespan statistics within one bundle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub rank: usize,
    pub mapper: String,
    pub bundle: String,
    pub samples: usize,
    pub mean_seconds: f64,
    pub median_seconds: f64,
    pub std_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingTable {
    pub fingerprint: String,
    pub rows: Vec<RankRow>,
}

impl RankingTable {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Column-aligned text rendering.
    pub fn to_text(&self) -> String {
        let header = [
            "rank", "mapper", "bundle", "samples", "mean_s", "median_s", "std_s",
        ];
        let cells: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.rank.to_string(),
                    r.mapper.clone(),
                    r.bundle.clone(),
                    r.samples.to_string(),
                    format!("{:.4}", r.mean_seconds),
                    format!("{:.4}", r.median_seconds),
                    format!("{:.4}", r.std_seconds),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |row: &[String]| {
            row.iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i == 1 || i == 2 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&header.map(String::from));
        out.push('\n');
        for row in &cells {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Deserialize)]
struct MakespanRow {
    mapper: String,
    #[allow(dead_code)]
    rep: usize,
    #[allow(dead_code)]
    seed: u64,
    #[allow(dead_code)]
    seq: usize,
    makespan_seconds: f64,
}

/// Ranks every mapper of every bundle by mean makespan, recomputed from
/// the raw per-file CSV. Equal means share a rank and are listed by mapper
/// name, then bundle order.
pub fn compare_report(bundles: &[PathBuf]) -> Result<RankingTable, ExperimentError> {
    if bundles.len() < 2 {
        return Err(config_err("compare needs at least two bundles"));
    }
    let mut fingerprint: Option<(String, &PathBuf)> = None;
    let mut entries = Vec::new();
    for (b, dir) in bundles.iter().enumerate() {
        let bad = |message: String| ExperimentError::Bundle {
            path: dir.clone(),
            message,
        };
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| bad(format!("{MANIFEST_FILE}: {e}")))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
        match &fingerprint {
            None => fingerprint = Some((manifest.fingerprint.clone(), dir)),
            Some((fp, first)) if *fp != manifest.fingerprint => {
                return Err(ExperimentError::InstanceMismatch(format!(
                    "{} and {} were produced from different graphs, clusters, inputs or seeds",
                    first.display(),
                    dir.display()
                )));
            }
            Some(_) => {}
        }
        let mut by_mapper: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let path = dir.join(MAKESPANS_FILE);
        let mut rd = csv::Reader::from_path(&path).map_err(|e| bad(format!("{MAKESPANS_FILE}: {e}")))?;
        for row in rd.deserialize::<MakespanRow>() {
            let row = row.map_err(|e| bad(format!("{MAKESPANS_FILE}: {e}")))?;
            by_mapper
                .entry(row.mapper)
                .or_default()
                .push(row.makespan_seconds);
        }
        for (mapper, values) in by_mapper {
            let (mean, std) = mean_std(&values);
            entries.push((
                b,
                RankRow {
                    rank: 0,
                    mapper,
                    bundle: dir.display().to_string(),
                    samples: values.len(),
                    mean_seconds: mean,
                    median_seconds: median(&values),
                    std_seconds: std,
                },
            ));
        }
    }
    entries.sort_by(|(ba, a), (bb, b)| {
        a.mean_seconds
            .total_cmp(&b.mean_seconds)
            .then_with(|| a.mapper.cmp(&b.mapper))
            .then(ba.cmp(bb))
    });
    let mut rows: Vec<RankRow> = entries.into_iter().map(|(_, r)| r).collect();
    for i in 0..rows.len() {
        rows[i].rank = if i > 0 && rows[i].mean_seconds == rows[i - 1].mean_seconds {
            rows[i - 1].rank
        } else {
            i + 1
        };
    }
    Ok(RankingTable {
        fingerprint: fingerprint.map(|(f, _)| f).unwrap_or_default(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub mapper: String,
    pub nodes: usize,
    pub repetitions: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn mean(&self, mapper: MapperSpec, nodes: usize) -> Option<f64> {
        let label = mapper.to_string();
        self.rows
            .iter()
            .find(|r| r.mapper == label && r.nodes == nodes)
            .map(|r| r.mean_seconds)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const SWEEP_FILE: &str = "mapping_sweep.csv";

/// Simulated mapping runtime of every configured mapper as the cluster
/// grows. Rows are grouped by mapper (config order), then node count.
pub fn scaling_sweep(
    config: &ExperimentConfig,
    node_counts: &[usize],
) -> Result<SweepTable, ExperimentError> {
    config.validate()?;
    if node_counts.is_empty() {
        return Err(config_err("sweep needs at least one node count"));
    }
    if node_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config_err("sweep node counts must be strictly ascending"));
    }
    let mut per_n = Vec::with_capacity(node_counts.len());
    for &n in node_counts {
        let mut cfg = config.clone();
        cfg.cluster.nodes = Some(n);
        let instance = Instance::load(&cfg)?;
        per_n.push((n, run_all(&cfg, &instance, false)?));
    }
    let mut rows = Vec::new();
    for &m in &config.mappers {
        for (n, records) in &per_n {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| r.mapper == m)
                .map(|r| r.mapping_runtime)
                .collect();
            let (mean, std) = mean_std(&values);
            rows.push(SweepRow {
                mapper: m.to_string(),
                nodes: *n,
                repetitions: values.len(),
                mean_seconds: mean,
                std_seconds: std,
            });
        }
    }
    Ok(SweepTable { rows })
}

/// Writes the sweep table into the config's output directory.
pub fn write_sweep(config: &ExperimentConfig, table: &SweepTable) -> Result<PathBuf, ExperimentError> {
    let dir = config.output_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join(SWEEP_FILE);
    write_atomic(&path, &csv_bytes(|buf| table.write_csv(buf)))?;
    Ok(path)
}
