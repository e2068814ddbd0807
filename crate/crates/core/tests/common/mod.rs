#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use taskmap_core::latency::{LatencyCoeffs, LatencyModel};
use taskmap_core::{profile_execution, ClusterModel, ExecutionProfile, NcpId, Node, TaskDag, UNLIMITED};

/// A random small mapping instance with unlimited node capacity.
pub struct Instance {
    pub dag: TaskDag,
    pub cluster: ClusterModel,
    pub exec: ExecutionProfile,
    pub costs: BTreeMap<String, f64>,
}

/// Random DAG over `t0..t{n-1}`: each later task draws parents among the
/// earlier ones; tasks left without parents become inputs.
pub fn random_dag(rng: &mut ChaCha8Rng, tasks: usize) -> TaskDag {
    let names: Vec<String> = (0..tasks).map(|i| format!("t{i}")).collect();
    let mut edges = Vec::new();
    for child in 1..tasks {
        for parent in 0..child {
            if rng.gen_bool(0.45) {
                edges.push((
                    names[parent].clone(),
                    names[child].clone(),
                    rng.gen_range(1024..200 * 1024),
                ));
            }
        }
    }
    let has_parent: Vec<bool> = (0..tasks)
        .map(|i| edges.iter().any(|e| e.1 == names[i]))
        .collect();
    let decl = names
        .iter()
        .zip(has_parent)
        .map(|(n, p)| (n.clone(), if p { None } else { Some("loc0".to_string()) }))
        .collect::<Vec<_>>();
    TaskDag::new(decl, edges).expect("random DAG is valid")
}

pub fn random_cluster(rng: &mut ChaCha8Rng, nodes: usize) -> ClusterModel {
    let list = (0..nodes)
        .map(|_| {
            let mut n = Node::new("loc0", rng.gen_range(0.5..2.0));
            n.container_capacity = UNLIMITED;
            n
        })
        .collect();
    let mut lat = LatencyModel::uniform(nodes, LatencyCoeffs::default()).unwrap();
    for s in 0..nodes {
        for d in (0..nodes).filter(|&d| d != s) {
            let c = LatencyCoeffs::new(rng.gen_range(0.05..2.0), rng.gen_range(0.0..1e-5), 0.0);
            lat.set_coeffs(NcpId(s), NcpId(d), c);
        }
    }
    ClusterModel::new(list, lat, NcpId(0)).unwrap()
}

pub fn random_instance(seed: u64, max_tasks: usize, max_nodes: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks = rng.gen_range(2..=max_tasks);
    let nodes = rng.gen_range(1..=max_nodes);
    let dag = random_dag(&mut rng, tasks);
    let cluster = random_cluster(&mut rng, nodes);
    with_costs(rng, dag, cluster)
}

/// Like [`random_instance`] but every node gets a finite container
/// capacity in `1..=3` and an overload slowdown in `[2, 6]`.
pub fn random_constrained_instance(seed: u64, max_tasks: usize, max_nodes: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks = rng.gen_range(2..=max_tasks);
    let nodes = rng.gen_range(1..=max_nodes);
    let dag = random_dag(&mut rng, tasks);
    let base = random_cluster(&mut rng, nodes);
    let list = base
        .nodes()
        .iter()
        .map(|n| Node {
            container_capacity: rng.gen_range(1..=3),
            overload_slowdown: rng.gen_range(2.0..6.0),
            ..n.clone()
        })
        .collect();
    let cluster = ClusterModel::new(list, base.latency().clone(), NcpId(0)).unwrap();
    with_costs(rng, dag, cluster)
}

fn with_costs(mut rng: ChaCha8Rng, dag: TaskDag, cluster: ClusterModel) -> Instance {
    let costs: BTreeMap<String, f64> = dag
        .tasks()
        .iter()
        .map(|t| (t.id.to_string(), rng.gen_range(0.5..5.0)))
        .collect();
    let exec = profile_execution(&dag, &cluster, &costs).unwrap();
    Instance {
        dag,
        cluster,
        exec,
        costs,
    }
}
