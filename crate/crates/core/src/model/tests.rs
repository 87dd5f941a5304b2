use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;
use crate::expr::{BinaryOp, ExprKind};

pub(crate) const SITE_CONFIG: &str = r#"
[HTCondor]
additional_requirements= \
  ((DESIRED_Sites is undefined)|| \
    stringListMember("SDSC-PRP",DESIRED_Sites,""))&& \
  ((UNDESIRED_Sites is undefined)|| \
    !stringListMember("SDSC-PRP",UNDESIRED_Sites,""))&& \
  (!isUndefined(ProjectName))&& \
  (!isUndefined(SingularityImage))

[k8s]
node_affinity_dict=^nautilus.io/low-power:true
"#;

fn keys() -> Vec<String> {
    DEFAULT_CLUSTER_KEY_ATTRS.map(String::from).to_vec()
}

fn job(id: &str, cpus: i64, mem: i64) -> JobAd {
    JobAd::new(
        id,
        AttrBag::new()
            .with(ATTR_REQUEST_CPUS, cpus)
            .with(ATTR_REQUEST_MEMORY, mem),
        0,
    )
    .unwrap()
}

#[test]
fn cluster_key_projects_with_undefined() {
    let k = cluster_key(&job("a", 1, 2048), &keys());
    assert_eq!(
        k.0,
        vec![
            ("RequestCpus".to_string(), Value::Integer(1)),
            ("RequestMemory".to_string(), Value::Integer(2048)),
            ("RequestGpus".to_string(), Value::Undefined),
        ]
    );
    assert_eq!(k, cluster_key(&job("b", 1, 2048), &keys()));
    assert_ne!(k, cluster_key(&job("c", 2, 2048), &keys()));
    assert_eq!(
        k.render(),
        "[RequestCpus=1,RequestMemory=2048,RequestGpus=undefined]"
    );
}

#[test]
fn cluster_jobs_examples() {
    assert!(cluster_jobs(&[], &keys()).is_empty());

    let jobs = [job("a", 1, 2048), job("b", 2, 4096), job("c", 1, 2048)];
    let clusters = cluster_jobs(&jobs, &keys());
    assert_eq!(
        clusters.iter().map(|c| c.idle_count).collect::<Vec<_>>(),
        vec![2, 1]
    );
    assert_eq!(clusters[0].job_ids, vec!["a", "c"]);

    let same: Vec<JobAd> = (0..5).map(|i| job(&format!("j{i}"), 1, 1024)).collect();
    let clusters = cluster_jobs(&same, &keys());
    assert_eq!(clusters.len(), 1);
    assert_eq!(clusters[0].idle_count, 5);
}

#[test]
fn cluster_jobs_skips_non_idle() {
    let mut running = job("r", 1, 1);
    running.transition(JobState::Running).unwrap();
    assert!(cluster_jobs(&[running], &keys()).is_empty());
}

#[test]
fn ties_ordered_by_rendered_key() {
    let jobs = [job("a", 3, 1), job("b", 1, 1), job("c", 2, 1)];
    let clusters = cluster_jobs(&jobs, &keys());
    let firsts: Vec<&str> = clusters.iter().map(|c| c.job_ids[0].as_str()).collect();
    assert_eq!(firsts, vec!["b", "c", "a"]);
}

#[test]
fn job_validation() {
    let bag = AttrBag::new()
        .with(ATTR_REQUEST_CPUS, 0)
        .with(ATTR_REQUEST_MEMORY, 1);
    assert!(JobAd::new("x", bag, 0).is_err());
    let bag = AttrBag::new().with(ATTR_REQUEST_CPUS, 1);
    assert!(JobAd::new("x", bag, 0).is_err());
    let bag = AttrBag::new()
        .with(ATTR_REQUEST_CPUS, 1)
        .with(ATTR_REQUEST_MEMORY, 1)
        .with(ATTR_REQUEST_GPUS, "lots");
    assert!(JobAd::new("x", bag, 0).is_err());
}

#[test]
fn job_state_machine() {
    let mut j = job("a", 1, 1);
    assert!(j.transition(JobState::Completed).is_err());
    j.transition(JobState::Running).unwrap();
    j.transition(JobState::Idle).unwrap();
    j.transition(JobState::Running).unwrap();
    j.transition(JobState::Completed).unwrap();
    assert!(j.transition(JobState::Idle).is_err());
    assert_eq!(j.state.status_code(), 4);
}

#[test]
fn cluster_hash_is_frozen() {
    let k = cluster_key(&job("a", 1, 2048), &keys());
    assert_eq!(k.hash_label(), "ca1cf9559f27ad79");
}

#[test]
fn site_config_verbatim() {
    let cfg = parse_config(SITE_CONFIG).unwrap();
    let req = cfg.additional_requirements.as_ref().unwrap();
    assert_eq!(req.conjuncts().len(), 4);
    assert!(matches!(req.kind, ExprKind::Binary(BinaryOp::And, ..)));
    assert_eq!(cfg.node_affinity_dict, vec!["^nautilus.io/low-power:true"]);
    assert_eq!(cfg.poll_interval_s, 60);
}

#[test]
fn empty_config_is_defaults() {
    let cfg = parse_config("").unwrap();
    assert_eq!(cfg, ProvisionerConfig::default());
    assert!(cfg.additional_requirements.is_none());
    assert_eq!(cfg.max_lifetime_s, 86_400);
    assert_eq!(cfg.max_idle_s, 1_200);
    assert_eq!(cfg.cluster_key_attrs, keys());
}

#[test]
fn config_errors() {
    let e = parse_config("[k8s]\nmax_submit_pods_per_cluster=0\n").unwrap_err();
    assert!(
        matches!(e, ConfigError::InvalidValue { line: 2, .. }),
        "{e}"
    );

    let e = parse_config("[k8s]\nbogus=1\n").unwrap_err();
    assert!(matches!(e, ConfigError::UnknownKey { line: 2, .. }));

    let e = parse_config("[nope]\n").unwrap_err();
    assert!(matches!(e, ConfigError::UnknownSection { line: 1, .. }));

    let e = parse_config("[provisioner]\npoll_interval_s=soon\n").unwrap_err();
    assert!(matches!(e, ConfigError::InvalidValue { line: 2, .. }));

    let e = parse_config("\n[HTCondor]\nadditional_requirements = a && (b\n").unwrap_err();
    match &e {
        ConfigError::Requirements { line, source, .. } => {
            assert_eq!(*line, 3);
            assert_eq!(source.offset(), 7);
        }
        other => panic!("{other:?}"),
    }

    let e = parse_config("[provisioner]\nmax_idle_s=100\nmax_lifetime_s=100\n").unwrap_err();
    assert!(matches!(e, ConfigError::Validation(_)));

    let e = parse_config("[k8s]\nnode_affinity_dict=novalue\n").unwrap_err();
    assert!(matches!(e, ConfigError::InvalidValue { .. }));

    let e = parse_config("[k8s]\nimage_ref=a\nimage_ref=b\n").unwrap_err();
    assert!(matches!(e, ConfigError::DuplicateKey { line: 3, .. }));

    assert!(parse_config("key=1\n").is_err());
}

#[test]
fn pod_spec_from_site_config() {
    let cfg = parse_config(SITE_CONFIG).unwrap();
    let clusters = cluster_jobs(&[job("a", 1, 2048)], &keys());
    let spec = pod_spec_for(&clusters[0], &cfg).unwrap();
    assert_eq!(spec.resources, Resources::new(1, 2048, 0));
    assert_eq!(
        spec.affinity_terms,
        vec![AffinityTerm {
            key: "nautilus.io/low-power".into(),
            value: "true".into(),
            negated: true
        }]
    );
    assert_eq!(spec.priority_class, None);
    assert_eq!(spec.provisioner_id(), Some(cfg.provisioner_id.as_str()));
    assert_eq!(
        spec.cluster_hash(),
        Some(clusters[0].key.hash_label().as_str())
    );
    for (name, _) in &clusters[0].key.0 {
        assert!(spec.injected_attrs.contains(name));
    }
    assert!(spec.injected_attrs.contains(ATTR_PROVISIONER_ID));
    assert!(spec.max_lifetime_s > spec.max_idle_s);

    let json = serde_json::to_value(&spec).unwrap();
    assert!(json.get("priority_class").is_none());
}

#[test]
fn pod_spec_priority_class() {
    let cfg = parse_config("[k8s]\npriority_class=opportunistic2\n").unwrap();
    let clusters = cluster_jobs(&[job("a", 1, 2048)], &keys());
    let spec = pod_spec_for(&clusters[0], &cfg).unwrap();
    assert_eq!(spec.priority_class.as_deref(), Some("opportunistic2"));
    let json = serde_json::to_value(&spec).unwrap();
    assert_eq!(json["priority_class"], "opportunistic2");
}

#[test]
fn pod_spec_needs_cpus_and_memory() {
    let cfg = parse_config("[provisioner]\ncluster_key_attrs=RequestMemory\n").unwrap();
    let clusters = cluster_jobs(&[job("a", 1, 2048)], &cfg.cluster_key_attrs);
    assert!(matches!(
        pod_spec_for(&clusters[0], &cfg),
        Err(ModelError::Unsizable { .. })
    ));
}

#[test]
fn affinity_admission() {
    let neg = AffinityTerm::parse("^nautilus.io/low-power:true").unwrap();
    let pos = AffinityTerm::parse("zone:a").unwrap();
    let mut labels = BTreeMap::new();
    assert!(neg.admits(&labels));
    assert!(!pos.admits(&labels));
    labels.insert("nautilus.io/low-power".to_string(), "true".to_string());
    labels.insert("zone".to_string(), "a".to_string());
    assert!(!neg.admits(&labels));
    assert!(pos.admits(&labels));
    assert!(AffinityTerm::parse("^:x").is_err());
}

// Independent grouping: compare every attribute of every job pairwise,
// no hashing, no key type.
fn brute_partition(jobs: &[JobAd], attrs: &[String]) -> BTreeSet<BTreeSet<String>> {
    let mut groups: Vec<Vec<&JobAd>> = Vec::new();
    for j in jobs {
        let same = |other: &JobAd| {
            attrs.iter().all(|a| {
                let x = j.attrs.get(a).cloned().unwrap_or(Value::Undefined);
                let y = other.attrs.get(a).cloned().unwrap_or(Value::Undefined);
                x == y
            })
        };
        match groups.iter_mut().find(|g| same(g[0])) {
            Some(g) => g.push(j),
            None => groups.push(vec![j]),
        }
    }
    groups
        .into_iter()
        .map(|g| g.into_iter().map(|j| j.job_id.clone()).collect())
        .collect()
}

pub(crate) fn arb_jobs(max_jobs: usize, shapes: usize) -> impl Strategy<Value = Vec<JobAd>> {
    let shape = (
        1i64..=4,
        prop_oneof![Just(1024i64), Just(2048), Just(4096)],
        prop::option::of(0i64..=1),
    );
    proptest::collection::vec(shape, 1..=shapes).prop_flat_map(move |shapes| {
        let n = shapes.len();
        proptest::collection::vec(0..n, 0..=max_jobs).prop_map(move |picks| {
            picks
                .into_iter()
                .enumerate()
                .map(|(i, s)| {
                    let (c, m, g) = shapes[s];
                    let mut bag = AttrBag::new()
                        .with(ATTR_REQUEST_CPUS, c)
                        .with(ATTR_REQUEST_MEMORY, m);
                    if let Some(g) = g {
                        bag.insert(ATTR_REQUEST_GPUS, g);
                    }
                    JobAd::new(format!("job-{i:03}"), bag, i as u64).unwrap()
                })
                .collect()
        })
    })
}

proptest! {
    #[test]
    fn clusters_partition_the_jobs(jobs in arb_jobs(50, 5)) {
        let clusters = cluster_jobs(&jobs, &keys());
        let got: BTreeSet<BTreeSet<String>> = clusters
            .iter()
            .map(|c| c.job_ids.iter().cloned().collect())
            .collect();
        prop_assert_eq!(got, brute_partition(&jobs, &keys()));
        let total: usize = clusters.iter().map(|c| c.idle_count).sum();
        prop_assert_eq!(total, jobs.len());
        for c in &clusters {
            prop_assert_eq!(c.idle_count, c.job_ids.len());
        }
        for w in clusters.windows(2) {
            prop_assert!(
                w[0].idle_count > w[1].idle_count
                    || (w[0].idle_count == w[1].idle_count && w[0].key.render() < w[1].key.render())
            );
        }
    }

    #[test]
    fn pod_spec_is_deterministic(jobs in arb_jobs(10, 3)) {
        let cfg = ProvisionerConfig::default();
        for c in cluster_jobs(&jobs, &keys()) {
            let a = pod_spec_for(&c, &cfg).unwrap();
            let b = pod_spec_for(&c.clone(), &cfg.clone()).unwrap();
            prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn config_render_round_trip(
        poll in 1u64..1000,
        quota in 1u32..500,
        idle in 1u64..5000,
        extra in 1u64..100_000,
        prio in prop::option::of("[a-z][a-z0-9]{0,8}"),
        site in prop::option::of("[A-Z][A-Z-]{0,8}"),
        neg: bool,
        req in prop::option::of(prop_oneof![
            Just("RequestCpus > 1 && ProjectName isnt undefined"),
            Just("stringListMember(\"X\", Sites, \"\") || !isUndefined(Y)"),
            Just("a == \"q\\\"uote\""),
        ]),
    ) {
        let mut text = String::from("[k8s]\n");
        text += &format!("max_submit_pods_per_cluster={quota}\n");
        if let Some(p) = &prio { text += &format!("priority_class={p}\n"); }
        text += &format!("node_affinity_dict={}zone:a, gpu:yes\n", if neg { "^" } else { "" });
        text += &format!("[provisioner]\npoll_interval_s={poll}\nmax_idle_s={idle}\nmax_lifetime_s={}\n", idle + extra);
        if let Some(s) = &site { text += &format!("site_name={s}\n"); }
        if let Some(r) = req { text += &format!("[HTCondor]\nadditional_requirements={r}\n"); }
        let cfg = parse_config(&text).unwrap();
        let again = parse_config(&cfg.render()).unwrap();
        prop_assert_eq!(again, cfg);
    }
}
