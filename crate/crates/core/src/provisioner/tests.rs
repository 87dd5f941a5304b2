use std::cell::RefCell;
use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::backends::{NodeSpec, SimBackend, SimKube};
use crate::expr::{matches, AttrBag, Overlay, Value};
use crate::model::{parse_config, Resources, ATTR_REQUEST_CPUS, ATTR_REQUEST_MEMORY};

const SITE_CONFIG: &str = r#"
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

#[derive(Default)]
struct TestQueue {
    jobs: Vec<JobAd>,
    down: bool,
}

impl JobQueue for TestQueue {
    fn query_jobs(&self, constraint: &Expr) -> Result<Vec<JobAd>, QueueError> {
        if self.down {
            return Err(QueueError::Unreachable);
        }
        Ok(self
            .jobs
            .iter()
            .filter(|j| {
                let extra = [(ATTR_JOB_STATUS, Value::Integer(j.state.status_code()))];
                matches(
                    constraint,
                    &Overlay {
                        base: &j.attrs,
                        extra: &extra,
                    },
                )
            })
            .cloned()
            .collect())
    }
}

fn job(id: usize, cpus: i64, extra: &[(&str, &str)]) -> JobAd {
    let mut bag = AttrBag::new()
        .with(ATTR_REQUEST_CPUS, cpus)
        .with(ATTR_REQUEST_MEMORY, 2048);
    for (k, v) in extra {
        bag.insert(*k, *v);
    }
    JobAd::new(format!("job-{id:03}"), bag, id as u64).unwrap()
}

fn kube() -> SimKube {
    SimKube::new(
        vec![NodeSpec {
            node_id: "n1".into(),
            capacity: Resources::new(64, 1 << 20, 0),
            labels: BTreeMap::new(),
        }],
        30,
    )
}

fn demand(idle: usize, queued: usize, running: usize) -> DemandSnapshot {
    let jobs: Vec<JobAd> = (0..idle).map(|i| job(i, 1, &[])).collect();
    let cfg = ProvisionerConfig::default();
    let mut snap = build_snapshot(&jobs, &[], &cfg, 0);
    if snap.clusters.is_empty() {
        snap = build_snapshot(&[job(0, 1, &[])], &[], &cfg, 0);
        snap.clusters[0].cluster.job_ids.clear();
        snap.clusters[0].cluster.idle_count = 0;
    }
    snap.clusters[0].queued_pods = queued;
    snap.clusters[0].running_pods = running;
    snap
}

fn with_quota(q: u32) -> ProvisionerConfig {
    ProvisionerConfig {
        max_submit_pods_per_cluster: q,
        ..ProvisionerConfig::default()
    }
}

#[test]
fn no_demand_no_decisions() {
    assert!(compute_submissions(&demand(0, 0, 0), &with_quota(10)).is_empty());
    let empty = DemandSnapshot {
        time: 0,
        clusters: vec![],
    };
    assert!(compute_submissions(&empty, &with_quota(10)).is_empty());
}

#[test]
fn shortfall_examples() {
    let d = compute_submissions(&demand(5, 2, 0), &with_quota(10));
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].count, 3);
    assert!(compute_submissions(&demand(5, 2, 3), &with_quota(4)).is_empty());
}

// Walk every small state: the best submission count is the largest c that
// keeps pending pods within idle jobs and all pods within quota.
#[test]
fn shortfall_matches_state_space_walk() {
    for idle in 0..=8 {
        for queued in 0..=8 {
            for running in 0..=8 {
                for quota in 1..=10 {
                    let oracle = (0..=20)
                        .filter(|c| {
                            *c == 0 || (queued + c <= idle && queued + running + c <= quota)
                        })
                        .max()
                        .unwrap();
                    assert_eq!(
                        shortfall(idle, queued, running, quota),
                        oracle,
                        "idle={idle} queued={queued} running={running} quota={quota}"
                    );
                }
            }
        }
    }
}

#[test]
fn filter_excludes_job_without_project() {
    let cfg = parse_config(SITE_CONFIG).unwrap();
    let queue = TestQueue {
        jobs: vec![job(1, 1, &[("SingularityImage", "img")])],
        down: false,
    };
    let mut k = kube();
    let out = poll_once(&queue, &mut k, &cfg, 0);
    assert!(out.decisions.is_empty());
    assert!(out.error.is_none());
    assert!(out.snapshot.unwrap().clusters.is_empty());
}

#[test]
fn submits_once_then_idempotent() {
    let cfg = with_quota(10);
    let queue = TestQueue {
        jobs: (0..5).map(|i| job(i, 1, &[])).collect(),
        down: false,
    };
    let mut k = kube();
    let first = poll_once(&queue, &mut k, &cfg, 0);
    assert_eq!(first.decisions.len(), 1);
    assert_eq!(first.decisions[0].count, 5);
    assert_eq!(first.decisions[0].pod_ids.len(), 5);
    assert_eq!(first.submitted(), 5);
    let second = poll_once(&queue, &mut k, &cfg, 0);
    assert!(second.decisions.is_empty());
    assert_eq!(second.snapshot.unwrap().clusters[0].queued_pods, 5);
}

#[test]
fn running_jobs_are_not_demand() {
    let mut j = job(0, 1, &[]);
    j.transition(crate::model::JobState::Running).unwrap();
    let queue = TestQueue {
        jobs: vec![j],
        down: false,
    };
    let mut k = kube();
    assert!(poll_once(&queue, &mut k, &with_quota(10), 0)
        .decisions
        .is_empty());
}

#[test]
fn unreachable_services_make_a_noop_tick() {
    let cfg = with_quota(10);
    let mut queue = TestQueue {
        jobs: vec![job(0, 1, &[])],
        down: true,
    };
    let mut k = kube();
    let out = poll_once(&queue, &mut k, &cfg, 0);
    assert!(out.decisions.is_empty());
    assert!(matches!(out.error, Some(PollError::Queue(_))));
    assert!(out.error.as_ref().unwrap().is_retryable());

    queue.down = false;
    k.set_reachable(false);
    let out = poll_once(&queue, &mut k, &cfg, 60);
    assert!(matches!(out.error, Some(PollError::Backend(_))));
    assert_eq!(out.tick_record().errors.len(), 1);

    k.set_reachable(true);
    assert_eq!(poll_once(&queue, &mut k, &cfg, 120).submitted(), 1);
}

/// Rejects submissions of a given cpu size.
struct PickyBackend {
    inner: SimKube,
    reject_cpus: u64,
}

impl Backend for PickyBackend {
    fn name(&self) -> &str {
        "picky"
    }
    fn list_pods(&self, s: &LabelSelector) -> Result<Vec<PodRecord>, BackendError> {
        self.inner.list_pods(s)
    }
    fn submit_pods(&mut self, spec: &PodSpec, count: usize) -> Result<Vec<PodId>, BackendError> {
        if spec.resources.cpus == self.reject_cpus {
            return Err(BackendError::InvalidSpec {
                backend: "picky".into(),
                msg: "no".into(),
            });
        }
        self.inner.submit_pods(spec, count)
    }
}

#[test]
fn partial_submit_failure_keeps_going() {
    let queue = TestQueue {
        jobs: vec![job(0, 2, &[]), job(1, 2, &[]), job(2, 1, &[])],
        down: false,
    };
    let mut b = PickyBackend {
        inner: kube(),
        reject_cpus: 2,
    };
    let out = poll_once(&queue, &mut b, &with_quota(10), 0);
    assert_eq!(out.decisions.len(), 2);
    assert!(out.decisions[0].failure.is_some());
    assert!(out.decisions[0].pod_ids.is_empty());
    assert_eq!(out.decisions[1].pod_ids.len(), 1);
    let rec = out.tick_record();
    assert_eq!(rec.submitted(), 1);
}

#[test]
fn foreign_pods_are_invisible() {
    let cfg = with_quota(10);
    let queue = TestQueue {
        jobs: vec![job(0, 1, &[])],
        down: false,
    };
    let mut k = kube();
    let other = ProvisionerConfig {
        provisioner_id: "someone-else".into(),
        ..cfg.clone()
    };
    assert_eq!(poll_once(&queue, &mut k, &other, 0).submitted(), 1);
    let out = poll_once(&queue, &mut k, &cfg, 0);
    assert_eq!(out.submitted(), 1);
    assert_eq!(out.snapshot.unwrap().clusters[0].queued_pods, 0);
}

#[test]
fn quota_counts_running_pods() {
    let cfg = with_quota(3);
    let queue = TestQueue {
        jobs: (0..5).map(|i| job(i, 1, &[])).collect(),
        down: false,
    };
    let mut k = kube();
    assert_eq!(poll_once(&queue, &mut k, &cfg, 0).submitted(), 3);
    k.step(0);
    k.step(30);
    let out = poll_once(&queue, &mut k, &cfg, 60);
    let snap = out.snapshot.unwrap();
    assert_eq!(snap.clusters[0].running_pods, 3);
    assert!(out.decisions.is_empty());
}

#[test]
fn pod_only_clusters_are_reported() {
    let cfg = with_quota(10);
    let mut queue = TestQueue {
        jobs: vec![job(0, 1, &[])],
        down: false,
    };
    let mut k = kube();
    poll_once(&queue, &mut k, &cfg, 0);
    queue.jobs.clear();
    let out = poll_once(&queue, &mut k, &cfg, 60);
    let snap = out.snapshot.unwrap();
    assert_eq!(snap.clusters.len(), 1);
    assert_eq!(snap.clusters[0].idle_jobs(), 0);
    assert_eq!(snap.clusters[0].queued_pods, 1);
}

#[test]
fn run_loop_zero_ticks() {
    let queue = TestQueue::default();
    let mut k = kube();
    let mut clock = ManualClock(0);
    let log = run_loop(&queue, &mut k, &with_quota(10), &mut clock, |_, _| true);
    assert!(log.is_empty());
}

#[test]
fn run_loop_static_queue() {
    let queue = TestQueue::default();
    let mut k = kube();
    let mut clock = ManualClock(0);
    let log = run_loop(&queue, &mut k, &with_quota(10), &mut clock, |_, log| {
        log.len() == 3
    });
    assert_eq!(log.len(), 3);
    assert_eq!(log.total_submitted(), 0);
    let times: Vec<_> = log.records.iter().map(|r| r.time).collect();
    assert_eq!(times, vec![0, 60, 120]);
    assert_eq!(clock.now(), 180);
    let line = log.to_jsonl().lines().next().unwrap().to_string();
    assert_eq!(line, r#"{"time":0,"clusters":[],"errors":[]}"#);
}

#[test]
fn audit_record_shape() {
    let queue = TestQueue {
        jobs: vec![job(0, 1, &[])],
        down: false,
    };
    let mut k = kube();
    let rec = poll_once(&queue, &mut k, &with_quota(10), 0).tick_record();
    let v: serde_json::Value = serde_json::to_value(&rec).unwrap();
    let c = &v["clusters"][0];
    assert_eq!(c["idle"], 1);
    assert_eq!(c["queued"], 0);
    assert_eq!(c["running"], 0);
    assert_eq!(c["submitted"], 1);
    assert_eq!(
        c["cluster"],
        "[RequestCpus=1,RequestMemory=2048,RequestGpus=undefined]"
    );
}

#[test]
fn control_loop_source_has_no_removal_calls() {
    let src = include_str!("mod.rs");
    for needle in [
        "pod_exited",
        "SimBackend",
        "set_reachable",
        "delete",
        "kill",
        "evict",
    ] {
        assert!(
            !src.contains(needle),
            "provisioner source mentions `{needle}`"
        );
    }
}

/// Records which backend methods were invoked.
struct Recording<B> {
    inner: B,
    calls: RefCell<Vec<&'static str>>,
}

impl<B: Backend> Backend for Recording<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn list_pods(&self, s: &LabelSelector) -> Result<Vec<PodRecord>, BackendError> {
        self.calls.borrow_mut().push("list_pods");
        self.inner.list_pods(s)
    }
    fn submit_pods(&mut self, spec: &PodSpec, count: usize) -> Result<Vec<PodId>, BackendError> {
        self.calls.borrow_mut().push("submit_pods");
        self.inner.submit_pods(spec, count)
    }
}

#[test]
fn call_trace_is_list_and_submit_only() {
    let queue = TestQueue {
        jobs: (0..4).map(|i| job(i, 1 + (i as i64 % 2), &[])).collect(),
        down: false,
    };
    let mut b = Recording {
        inner: kube(),
        calls: RefCell::new(Vec::new()),
    };
    let mut clock = ManualClock(0);
    run_loop(&queue, &mut b, &with_quota(10), &mut clock, |t, _| t > 300);
    let calls = b.calls.into_inner();
    assert!(calls.contains(&"submit_pods"));
    assert!(calls
        .iter()
        .all(|c| *c == "list_pods" || *c == "submit_pods"));
}

proptest! {
    #[test]
    fn filtered_jobs_never_count(flags in proptest::collection::vec((any::<bool>(), 1i64..3), 0..30)) {
        let cfg = parse_config("[HTCondor]\nadditional_requirements = !isUndefined(ProjectName)\n").unwrap();
        let jobs: Vec<JobAd> = flags
            .iter()
            .enumerate()
            .map(|(i, (has, cpus))| {
                if *has { job(i, *cpus, &[("ProjectName", "P")]) } else { job(i, *cpus, &[]) }
            })
            .collect();
        let queue = TestQueue { jobs: jobs.clone(), down: false };
        let mut k = kube();
        let out = poll_once(&queue, &mut k, &cfg, 0);
        let snap = out.snapshot.clone().unwrap();
        let counted: usize = snap.clusters.iter().map(|c| c.idle_jobs()).sum();
        prop_assert_eq!(counted, flags.iter().filter(|(h, _)| *h).count());
        for c in &snap.clusters {
            for id in &c.cluster.job_ids {
                let j = jobs.iter().find(|j| &j.job_id == id).unwrap();
                prop_assert!(j.attrs.contains("ProjectName"));
            }
        }
        prop_assert_eq!(out.submitted(), counted);
    }
}
