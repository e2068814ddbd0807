mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use taskmap_core::latency::{LatencyCoeffs, LatencyModel};
use taskmap_core::{
    feasible_set, fit_quadratic, heft_map, parse_dag, synth_cluster, upward_rank, ClusterRecipe, NcpId,
    NodeClass, TaskDag,
};

/// Kahn's algorithm over names with a sorted ready set.
fn lexicographic_kahn(dag: &TaskDag) -> Vec<String> {
    let mut indegree: BTreeMap<String, usize> = dag.tasks().iter().map(|t| (t.id.to_string(), 0)).collect();
    let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for e in dag.edges() {
        let (p, c) = (dag.name(e.parent).to_string(), dag.name(e.child).to_string());
        *indegree.get_mut(&c).unwrap() += 1;
        children.entry(p).or_default().push(c);
    }
    let mut ready: BTreeSet<String> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| n.clone())
        .collect();
    let mut out = Vec::new();
    while let Some(n) = ready.pop_first() {
        for c in children.get(&n).cloned().unwrap_or_default() {
            let d = indegree.get_mut(&c).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.insert(c);
            }
        }
        out.push(n);
    }
    out
}

fn dag_strategy() -> impl Strategy<Value = TaskDag> {
    (2usize..14, any::<u64>()).prop_map(|(n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        common::random_dag(&mut rng, n)
    })
}

proptest! {
    #[test]
    fn text_round_trip(dag in dag_strategy()) {
        let text = dag.to_text();
        let again = parse_dag(&text).unwrap();
        prop_assert_eq!(again.to_text(), text);
        prop_assert_eq!(again.len(), dag.len());
        prop_assert_eq!(again.edges().len(), dag.edges().len());
    }

    #[test]
    fn topo_order_matches_sorted_kahn(dag in dag_strategy()) {
        let order = dag.topological_order();
        let names: Vec<String> = order.names().into_iter().map(str::to_string).collect();
        prop_assert_eq!(&names, &lexicographic_kahn(&dag));
        let pos: BTreeMap<&str, usize> = order.names().into_iter().enumerate().map(|(i, n)| (n, i)).collect();
        for e in dag.edges() {
            prop_assert!(pos[dag.name(e.parent)] < pos[dag.name(e.child)]);
        }
    }

    #[test]
    fn fit_recovers_exact_coefficients(
        p in 0.0f64..5.0,
        q in 0.0f64..1e-4,
        r in 0.0f64..1e-10,
        sizes in prop::collection::btree_set(1u32..10_000_000, 3..12),
    ) {
        let samples: Vec<(f64, f64)> = sizes
            .iter()
            .map(|&f| { let f = f as f64; (f, p + q * f + r * f * f) })
            .collect();
        let fit = fit_quadratic(&samples).unwrap().coeffs;
        let spread = sizes.iter().last().unwrap() - sizes.iter().next().unwrap();
        prop_assume!(spread > 1000);
        let rel = |a: f64, b: f64, scale: f64| (a - b).abs() <= 1e-9 * scale;
        let fmax = *sizes.iter().last().unwrap() as f64;
        let magnitude = p + q * fmax + r * fmax * fmax;
        prop_assert!(rel(fit.p, p, magnitude.max(1e-9)), "p {} vs {}", fit.p, p);
        prop_assert!(rel(fit.q * fmax, q * fmax, magnitude.max(1e-9)), "q {} vs {}", fit.q, q);
        prop_assert!(rel(fit.r * fmax * fmax, r * fmax * fmax, magnitude.max(1e-9)), "r {} vs {}", fit.r, r);
    }

    #[test]
    fn transfer_time_is_monotone(
        p in 0.0f64..5.0,
        q in 0.0f64..1e-4,
        r in 0.0f64..1e-10,
        a in 1.0f64..1e7,
        b in 1.0f64..1e7,
    ) {
        let model = LatencyModel::uniform(2, LatencyCoeffs::new(p, q, r)).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let tl = model.transfer_time(NcpId(0), NcpId(1), lo).unwrap();
        let th = model.transfer_time(NcpId(0), NcpId(1), hi).unwrap();
        prop_assert!(tl <= th);
    }

    #[test]
    fn feasible_set_respects_threshold(
        delays in prop::collection::vec(0.0f64..10.0, 1..12),
        k in 1.01f64..20.0,
    ) {
        let n = delays.len() + 1;
        let mut lat = LatencyModel::uniform(n, LatencyCoeffs::new(1.0, 0.0, 0.0)).unwrap();
        for (j, &d) in delays.iter().enumerate() {
            lat.set_coeffs(NcpId(0), NcpId(j + 1), LatencyCoeffs::new(d, 0.0, 0.0));
        }
        let set = feasible_set(NcpId(0), &lat, 1024.0, k).unwrap();
        let d_min = delays.iter().cloned().fold(f64::INFINITY, f64::min);
        let argmin = delays.iter().position(|&d| d == d_min).unwrap() + 1;
        prop_assert!(set.contains(NcpId(0)));
        prop_assert!(set.contains(NcpId(argmin)));
        for (j, &d) in delays.iter().enumerate() {
            let id = NcpId(j + 1);
            prop_assert_eq!(set.contains(id), d < k * d_min || id.0 == argmin, "node {} delay {}", id.0, d);
        }
    }

    #[test]
    fn ranks_scale_with_costs(seed in any::<u64>(), factor in 0.1f64..10.0) {
        let inst = common::random_instance(seed, 10, 5);
        let ranks = upward_rank(&inst.dag, &inst.exec, inst.cluster.latency()).unwrap();
        let scaled_lat = {
            let n = inst.cluster.len();
            let mut lat = inst.cluster.latency().clone();
            for s in 0..n {
                for d in 0..n {
                    let c = lat.coeffs(NcpId(s), NcpId(d));
                    lat.set_coeffs(NcpId(s), NcpId(d), LatencyCoeffs::new(c.p * factor, c.q * factor, c.r * factor));
                }
            }
            lat
        };
        let times: Vec<f64> = (0..inst.dag.len())
            .flat_map(|t| inst.cluster.ids().map(move |n| (t, n)))
            .map(|(t, n)| inst.exec.get(t, n) * factor)
            .collect();
        let exec = taskmap_core::ExecutionProfile::from_table(inst.dag.len(), inst.cluster.len(), times).unwrap();
        let scaled = upward_rank(&inst.dag, &exec, &scaled_lat).unwrap();
        for t in 0..inst.dag.len() {
            let (a, b) = (ranks.get(t) * factor, scaled.get(t));
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn ranks_decrease_along_edges(seed in any::<u64>()) {
        let inst = common::random_instance(seed, 12, 5);
        let ranks = upward_rank(&inst.dag, &inst.exec, inst.cluster.latency()).unwrap();
        for e in inst.dag.edges() {
            prop_assert!(ranks.get(e.parent) > ranks.get(e.child));
        }
    }

    #[test]
    fn cap_bounds_node_load(seed in any::<u64>(), slack in 0usize..3) {
        let inst = common::random_instance(seed, 12, 5);
        let n = inst.cluster.len();
        let cap = inst.dag.len().div_ceil(n) + slack;
        let placement = heft_map(&inst.dag, &inst.cluster, &inst.exec, Some(cap)).unwrap();
        prop_assert!(placement.load(n).iter().all(|&l| l <= cap));
    }

    #[test]
    fn huge_cap_equals_no_cap(seed in any::<u64>()) {
        let inst = common::random_instance(seed, 12, 5);
        let free = heft_map(&inst.dag, &inst.cluster, &inst.exec, None).unwrap();
        let capped = heft_map(&inst.dag, &inst.cluster, &inst.exec, Some(usize::MAX)).unwrap();
        prop_assert_eq!(free, capped);
    }

    #[test]
    fn synth_cluster_is_pure(seed in any::<u64>(), nodes in 2usize..12, cloud in any::<bool>()) {
        let recipe = if cloud { ClusterRecipe::cloud_like(nodes) } else { ClusterRecipe::rpi_like(nodes) };
        prop_assert_eq!(recipe.class, if cloud { NodeClass::CloudLike } else { NodeClass::RpiLike });
        let a = synth_cluster(&recipe, seed).unwrap();
        let b = synth_cluster(&recipe, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
