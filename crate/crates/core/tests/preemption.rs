//! SimKube eviction choices against an exhaustive search.

use std::collections::BTreeMap;

use itertools::Itertools;
use proptest::prelude::*;

use podprov::backends::{Backend, NodeSpec, PodState, SimBackend, SimKube};
use podprov::expr::AttrBag;
use podprov::model::{ClusterKey, PodSpec, Resources};

fn spec(cpus: u64, class: &str) -> PodSpec {
    PodSpec {
        cluster_key: ClusterKey(Vec::new()),
        resources: Resources::new(cpus, 1024, 0),
        image_ref: "img".into(),
        priority_class: (class != "default").then(|| class.to_string()),
        affinity_terms: Vec::new(),
        labels: BTreeMap::from([("provisioner_id".to_string(), class.to_string())]),
        injected_attrs: AttrBag::new(),
        secret_ref: "tok".into(),
        max_lifetime_s: 1000,
        max_idle_s: 100,
    }
}

fn node(i: usize, cpus: u64) -> NodeSpec {
    NodeSpec {
        node_id: format!("n{i}"),
        capacity: Resources::new(cpus, 1 << 20, 0),
        labels: BTreeMap::new(),
    }
}

/// Fewest victims on any node; `Some(0)` if the pod fits without
/// eviction, `None` if it cannot be placed at all.
fn oracle(capacity: &[u64], running: &[(usize, u64)], need: u64) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for (n, &cap) in capacity.iter().enumerate() {
        if need > cap {
            continue;
        }
        let on_node: Vec<u64> = running
            .iter()
            .filter(|(m, _)| *m == n)
            .map(|(_, c)| *c)
            .collect();
        let free = cap - on_node.iter().sum::<u64>();
        let k = (0..=on_node.len()).find(|&k| {
            on_node
                .iter()
                .combinations(k)
                .any(|set| free + set.into_iter().sum::<u64>() >= need)
        });
        if let Some(k) = k {
            if best.is_none_or(|(bk, _)| k < bk) {
                best = Some((k, n));
            }
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn eviction_set_is_minimal(
        capacity in prop::collection::vec(2u64..=6, 1..=3),
        backfill in prop::collection::vec(1u64..=3, 0..=12),
        need in 1u64..=6,
    ) {
        let nodes: Vec<NodeSpec> = capacity.iter().enumerate().map(|(i, &c)| node(i, c)).collect();
        let mut kube = SimKube::new(nodes, 5);
        for &c in &backfill {
            kube.submit_pods(&spec(c, "opportunistic2"), 1).unwrap();
        }
        kube.step(0);
        kube.step(5);
        // Whatever did not fit stays queued and is not a victim candidate.
        let running: Vec<(usize, u64)> = kube
            .all_pods()
            .iter()
            .filter(|p| p.state == PodState::Running)
            .map(|p| {
                let n: usize = p.node_id.as_ref().unwrap()[1..].parse().unwrap();
                (n, p.spec.resources.cpus)
            })
            .collect();
        let expected = oracle(&capacity, &running, need);

        let ids = kube.submit_pods(&spec(need, "default"), 1).unwrap();
        kube.step(10);
        let pods = kube.all_pods();
        let victims: Vec<_> = pods.iter().filter(|p| p.state == PodState::Preempted).collect();
        let placed = kube.pod(&ids[0]).unwrap();
        match expected {
            None => {
                prop_assert!(victims.is_empty());
                prop_assert_eq!(placed.state, PodState::Queued);
            }
            Some((k, n)) => {
                prop_assert_eq!(victims.len(), k);
                prop_assert_eq!(placed.node_id.clone(), Some(format!("n{n}")));
                for v in &victims {
                    prop_assert_eq!(&v.node_id, &placed.node_id);
                    prop_assert_eq!(v.spec.priority_class.as_deref(), Some("opportunistic2"));
                }
            }
        }
        prop_assert!(kube.capacity_violations().is_empty());
    }
}

#[test]
fn equal_priority_never_preempts() {
    let mut kube = SimKube::new(vec![node(0, 2)], 0);
    kube.submit_pods(&spec(2, "default"), 1).unwrap();
    kube.step(0);
    kube.step(1);
    kube.submit_pods(&spec(2, "default"), 1).unwrap();
    kube.step(2);
    assert!(kube
        .all_pods()
        .iter()
        .all(|p| p.state != PodState::Preempted));
}
