//! Pilot workers: registration, matchmaking and self-termination.

use serde::Serialize;
use thiserror::Error;

use crate::backends::{PodId, PodRecord, PodState};
use crate::expr::{string_list_member, AttrBag, Value, DEFAULT_LIST_DELIMITERS};
use crate::model::{JobAd, Resources, SimTime, ATTR_SITE};

pub const ATTR_DESIRED_SITES: &str = "DESIRED_Sites";
pub const ATTR_UNDESIRED_SITES: &str = "UNDESIRED_Sites";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkerState {
    Starting,
    Idle,
    Claimed,
}

/// A worker as advertised to the pool.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerAd {
    pub worker_id: String,
    pub pod_id: PodId,
    pub attrs: AttrBag,
    pub resources: Resources,
    pub state: WorkerState,
    pub registered_time: SimTime,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idle_since: Option<SimTime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub claimed_job_id: Option<String>,
    pub max_idle_s: u64,
    pub max_lifetime_s: u64,
}

impl WorkerAd {
    pub fn past_lifetime(&self, now: SimTime) -> bool {
        now.saturating_sub(self.registered_time) >= self.max_lifetime_s
    }

    /// Resource fit plus the job's site preferences.
    pub fn can_run(&self, job: &JobAd) -> bool {
        job.request().fits_within(&self.resources) && site_allows(job, &self.attrs)
    }
}

fn site_allows(job: &JobAd, worker: &AttrBag) -> bool {
    let site = worker.get(ATTR_SITE).cloned().unwrap_or(Value::Undefined);
    let delims = Value::from(DEFAULT_LIST_DELIMITERS);
    let member = |attr: &str| {
        job.attrs
            .get(attr)
            .map(|list| string_list_member(&site, list, &delims))
    };
    // A desired-site list the worker's site is not definitely in excludes it.
    if let Some(v) = member(ATTR_DESIRED_SITES) {
        if v != Value::Boolean(true) {
            return false;
        }
    }
    member(ATTR_UNDESIRED_SITES) != Some(Value::Boolean(true))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegisterError {
    #[error("pod {pod_id} is {state:?}, not running")]
    NotRunning { pod_id: PodId, state: PodState },
    #[error("pod {pod_id} presented token `{got}`, pool expects `{expected}`")]
    TokenMismatch {
        pod_id: PodId,
        expected: String,
        got: String,
    },
}

/// Registers the worker inside a Running pod. It comes up idle.
pub fn register_worker(
    worker_id: impl Into<String>,
    pod: &PodRecord,
    pool_token: &str,
    now: SimTime,
) -> Result<WorkerAd, RegisterError> {
    if pod.state != PodState::Running {
        return Err(RegisterError::NotRunning {
            pod_id: pod.pod_id.clone(),
            state: pod.state,
        });
    }
    if pod.spec.secret_ref != pool_token {
        return Err(RegisterError::TokenMismatch {
            pod_id: pod.pod_id.clone(),
            expected: pool_token.to_string(),
            got: pod.spec.secret_ref.clone(),
        });
    }
    let r = pod.spec.resources;
    let mut attrs = pod.spec.injected_attrs.clone();
    attrs.insert("Cpus", r.cpus as i64);
    attrs.insert("Memory", r.memory_mib as i64);
    attrs.insert("Gpus", r.gpus as i64);
    Ok(WorkerAd {
        worker_id: worker_id.into(),
        pod_id: pod.pod_id.clone(),
        attrs,
        resources: r,
        state: WorkerState::Idle,
        registered_time: now,
        idle_since: Some(now),
        claimed_job_id: None,
        max_idle_s: pod.spec.max_idle_s,
        max_lifetime_s: pod.spec.max_lifetime_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    IdleTimeout,
    Lifetime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerAction {
    Continue,
    /// Past its lifetime while running a job: accept no new work and exit
    /// when the job finishes.
    Drain,
    Terminate(ExitReason),
}

/// What a worker does with itself at `now`.
pub fn worker_tick(worker: &WorkerAd, now: SimTime) -> WorkerAction {
    let past_lifetime = worker.past_lifetime(now);
    match worker.state {
        WorkerState::Claimed if past_lifetime => WorkerAction::Drain,
        WorkerState::Claimed | WorkerState::Starting => WorkerAction::Continue,
        WorkerState::Idle if past_lifetime => WorkerAction::Terminate(ExitReason::Lifetime),
        WorkerState::Idle => {
            let since = worker.idle_since.unwrap_or(worker.registered_time);
            if now.saturating_sub(since) >= worker.max_idle_s {
                WorkerAction::Terminate(ExitReason::IdleTimeout)
            } else {
                WorkerAction::Continue
            }
        }
    }
}

/// Greedy matchmaking. Jobs are taken in the given order (oldest first);
/// each goes to the first idle, in-lifetime worker, by worker id, that can
/// run it. Returns `(job_id, worker_id)` pairs.
pub fn match_jobs(jobs: &[&JobAd], workers: &[&WorkerAd], now: SimTime) -> Vec<(String, String)> {
    let mut free: Vec<&WorkerAd> = workers
        .iter()
        .copied()
        .filter(|w| w.state == WorkerState::Idle && !w.past_lifetime(now))
        .collect();
    free.sort_by(|a, b| a.worker_id.cmp(&b.worker_id));
    let mut pairs = Vec::new();
    for job in jobs {
        if free.is_empty() {
            break;
        }
        if let Some(i) = free.iter().position(|w| w.can_run(job)) {
            let w = free.remove(i);
            pairs.push((job.job_id.clone(), w.worker_id.clone()));
        }
    }
    pairs
}
