//! The demand-driven control loop.
//!
//! Each tick reads the idle jobs that pass the configured filter and this
//! provisioner's pods, then submits enough pods to cover idle jobs not
//! already covered by pending pods, capped by the per-cluster quota. Nothing
//! is carried between ticks except the audit log: every decision is
//! re-derived from observed state.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::backends::{Backend, BackendError, LabelSelector, PodId, PodRecord, PodState};
use crate::expr::{BinaryOp, Expr};
use crate::model::{
    cluster_jobs, pod_spec_for, ClusterKey, JobAd, JobCluster, ModelError, PodSpec,
    ProvisionerConfig, SimTime, ATTR_JOB_STATUS, LABEL_CLUSTER_HASH, LABEL_PROVISIONER_ID,
};

/// The job-queue side of a tick.
pub trait JobQueue {
    /// Jobs for which `constraint` is definitely true, ordered by job id.
    /// `JobStatus` is visible to the constraint.
    fn query_jobs(&self, constraint: &Expr) -> Result<Vec<JobAd>, QueueError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueueError {
    #[error("scheduler is unreachable")]
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PollError {
    #[error("job query failed: {0}")]
    Queue(#[from] QueueError),
    #[error("pod query failed: {0}")]
    Backend(#[from] BackendError),
}

impl PollError {
    /// Every poll failure is transient; the next tick starts from scratch.
    pub fn is_retryable(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterDemand {
    pub cluster: JobCluster,
    pub cluster_hash: String,
    pub queued_pods: usize,
    pub running_pods: usize,
}

impl ClusterDemand {
    pub fn idle_jobs(&self) -> usize {
        self.cluster.idle_count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemandSnapshot {
    pub time: SimTime,
    pub clusters: Vec<ClusterDemand>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubmitDecision {
    pub cluster_key: ClusterKey,
    #[serde(skip)]
    pub pod_spec: PodSpec,
    pub count: usize,
    pub reason: String,
    pub pod_ids: Vec<PodId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// `JobStatus == 1 && (<additional_requirements>)`.
pub fn idle_job_constraint(config: &ProvisionerConfig) -> Expr {
    let idle = Expr::binary(
        BinaryOp::Eq,
        Expr::attr(ATTR_JOB_STATUS),
        Expr::literal(crate::model::JobState::Idle.status_code()),
    );
    match &config.additional_requirements {
        Some(req) => Expr::and(idle, req.clone()),
        None => idle,
    }
}

/// Pairs clustered idle jobs with this provisioner's pods.
///
/// Pods are attributed by `cluster_hash` label; only pods labeled with the
/// configured provisioner id count. Clusters that have pods but no idle
/// jobs are listed after the job clusters, ordered by key.
pub fn build_snapshot(
    jobs: &[JobAd],
    pods: &[PodRecord],
    config: &ProvisionerConfig,
    now: SimTime,
) -> DemandSnapshot {
    let mut per_hash: BTreeMap<&str, (usize, usize, &ClusterKey)> = BTreeMap::new();
    for pod in pods {
        if pod.spec.labels.get(LABEL_PROVISIONER_ID) != Some(&config.provisioner_id) {
            continue;
        }
        let Some(hash) = pod.spec.labels.get(LABEL_CLUSTER_HASH) else {
            continue;
        };
        let slot = per_hash
            .entry(hash.as_str())
            .or_insert((0, 0, &pod.spec.cluster_key));
        if pod.state.is_pending() {
            slot.0 += 1;
        } else if pod.state == PodState::Running {
            slot.1 += 1;
        }
    }

    let mut clusters: Vec<ClusterDemand> = cluster_jobs(jobs, &config.cluster_key_attrs)
        .into_iter()
        .map(|cluster| {
            let cluster_hash = cluster.key.hash_label();
            let (queued, running, _) =
                per_hash
                    .remove(cluster_hash.as_str())
                    .unwrap_or((0, 0, &cluster.key));
            ClusterDemand {
                cluster,
                cluster_hash,
                queued_pods: queued,
                running_pods: running,
            }
        })
        .collect();
    let mut rest: Vec<ClusterDemand> = per_hash
        .into_iter()
        .filter(|(_, (q, r, _))| q + r > 0)
        .map(|(hash, (queued, running, key))| ClusterDemand {
            cluster: JobCluster {
                key: key.clone(),
                job_ids: Vec::new(),
                idle_count: 0,
            },
            cluster_hash: hash.to_string(),
            queued_pods: queued,
            running_pods: running,
        })
        .collect();
    rest.sort_by_cached_key(|c| c.cluster.key.render());
    clusters.extend(rest);
    DemandSnapshot {
        time: now,
        clusters,
    }
}

/// Pods to submit for one cluster.
///
/// Pending pods offset demand; running pods do not (their jobs already
/// left the idle set) but both count against the quota.
pub fn shortfall(idle: usize, queued: usize, running: usize, quota: usize) -> usize {
    let want = idle.saturating_sub(queued);
    let headroom = quota.saturating_sub(queued + running);
    want.min(headroom)
}

/// Decisions plus the clusters that could not be turned into a pod spec.
#[derive(Debug, Clone, Default)]
pub struct Plan {
    pub decisions: Vec<SubmitDecision>,
    pub rejected: Vec<ModelError>,
}

pub fn plan_submissions(snapshot: &DemandSnapshot, config: &ProvisionerConfig) -> Plan {
    let quota = config.max_submit_pods_per_cluster as usize;
    let mut plan = Plan::default();
    for c in &snapshot.clusters {
        let count = shortfall(c.idle_jobs(), c.queued_pods, c.running_pods, quota);
        if count == 0 {
            continue;
        }
        match pod_spec_for(&c.cluster, config) {
            Ok(pod_spec) => plan.decisions.push(SubmitDecision {
                cluster_key: c.cluster.key.clone(),
                pod_spec,
                count,
                reason: format!(
                    "idle={} queued={} running={} quota={} -> submit {}",
                    c.idle_jobs(),
                    c.queued_pods,
                    c.running_pods,
                    quota,
                    count
                ),
                pod_ids: Vec::new(),
                failure: None,
            }),
            Err(e) => plan.rejected.push(e),
        }
    }
    plan
}

/// Pure decision step: what to submit for `snapshot`. Clusters whose key
/// cannot size a pod are skipped.
pub fn compute_submissions(
    snapshot: &DemandSnapshot,
    config: &ProvisionerConfig,
) -> Vec<SubmitDecision> {
    plan_submissions(snapshot, config).decisions
}

/// Result of one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct PollOutcome {
    pub time: SimTime,
    pub snapshot: Option<DemandSnapshot>,
    /// Executed decisions, including ones whose submission failed.
    pub decisions: Vec<SubmitDecision>,
    /// Set when a query failed and the tick did nothing.
    pub error: Option<PollError>,
    pub notes: Vec<String>,
}

impl PollOutcome {
    pub fn submitted(&self) -> usize {
        self.decisions.iter().map(|d| d.pod_ids.len()).sum()
    }

    pub fn tick_record(&self) -> TickRecord {
        let mut clusters: Vec<ClusterTick> = self
            .snapshot
            .iter()
            .flat_map(|s| &s.clusters)
            .map(|c| ClusterTick {
                cluster: c.cluster.key.render(),
                cluster_hash: c.cluster_hash.clone(),
                idle: c.idle_jobs(),
                queued: c.queued_pods,
                running: c.running_pods,
                submitted: 0,
            })
            .collect();
        for d in &self.decisions {
            let hash = d.cluster_key.hash_label();
            if let Some(c) = clusters.iter_mut().find(|c| c.cluster_hash == hash) {
                c.submitted += d.pod_ids.len();
            }
        }
        let mut errors: Vec<String> = self.error.iter().map(ToString::to_string).collect();
        errors.extend(self.notes.iter().cloned());
        TickRecord {
            time: self.time,
            clusters,
            errors,
        }
    }
}

/// One tick of the control loop: query, cluster, decide, submit.
///
/// A failed query makes the whole tick a no-op. A failed submission is
/// noted on its decision and does not stop the remaining clusters.
pub fn poll_once<Q, B>(
    sched: &Q,
    backend: &mut B,
    config: &ProvisionerConfig,
    now: SimTime,
) -> PollOutcome
where
    Q: JobQueue + ?Sized,
    B: Backend + ?Sized,
{
    let mut outcome = PollOutcome {
        time: now,
        snapshot: None,
        decisions: Vec::new(),
        error: None,
        notes: Vec::new(),
    };
    let selector = LabelSelector::new().with(LABEL_PROVISIONER_ID, config.provisioner_id.clone());
    let queried = sched
        .query_jobs(&idle_job_constraint(config))
        .map_err(PollError::from)
        .and_then(|jobs| {
            let pods = backend.list_pods(&selector)?;
            Ok((jobs, pods))
        });
    let (jobs, pods) = match queried {
        Ok(v) => v,
        Err(e) => {
            outcome.error = Some(e);
            return outcome;
        }
    };

    let snapshot = build_snapshot(&jobs, &pods, config, now);
    let plan = plan_submissions(&snapshot, config);
    outcome
        .notes
        .extend(plan.rejected.iter().map(ToString::to_string));
    for mut decision in plan.decisions {
        match backend.submit_pods(&decision.pod_spec, decision.count) {
            Ok(ids) => decision.pod_ids = ids,
            Err(e) => decision.failure = Some(e.to_string()),
        }
        outcome.decisions.push(decision);
    }
    outcome.snapshot = Some(snapshot);
    outcome
}

/// Per-cluster line of an audit record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterTick {
    pub cluster: String,
    pub cluster_hash: String,
    pub idle: usize,
    pub queued: usize,
    pub running: usize,
    pub submitted: usize,
}

/// One audit-log line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TickRecord {
    pub time: SimTime,
    pub clusters: Vec<ClusterTick>,
    pub errors: Vec<String>,
}

impl TickRecord {
    pub fn submitted(&self) -> usize {
        self.clusters.iter().map(|c| c.submitted).sum()
    }
}

/// Append-only list of tick records, written as JSON lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditLog {
    pub records: Vec<TickRecord>,
}

impl AuditLog {
    pub fn push(&mut self, record: TickRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_submitted(&self) -> usize {
        self.records.iter().map(TickRecord::submitted).sum()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("audit record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Virtual time source for the loop.
pub trait Clock {
    fn now(&self) -> SimTime;
    fn advance_to(&mut self, t: SimTime);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ManualClock(pub SimTime);

impl Clock for ManualClock {
    fn now(&self) -> SimTime {
        self.0
    }

    fn advance_to(&mut self, t: SimTime) {
        self.0 = self.0.max(t);
    }
}

/// Polls every `poll_interval_s` until `stop` returns true (checked
/// before each tick).
pub fn run_loop<Q, B, C, F>(
    sched: &Q,
    backend: &mut B,
    config: &ProvisionerConfig,
    clock: &mut C,
    mut stop: F,
) -> AuditLog
where
    Q: JobQueue + ?Sized,
    B: Backend + ?Sized,
    C: Clock + ?Sized,
    F: FnMut(SimTime, &AuditLog) -> bool,
{
    let mut log = AuditLog::default();
    loop {
        let now = clock.now();
        if stop(now, &log) {
            break;
        }
        let outcome = poll_once(sched, backend, config, now);
        log.push(outcome.tick_record());
        clock.advance_to(now + config.poll_interval_s);
    }
    log
}

#[cfg(test)]
mod tests;
