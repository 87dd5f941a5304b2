//! Container backends the provisioner submits pods to.
//!
//! [`Backend`] is the whole surface the provisioner sees: list pods by
//! label and submit more. There is deliberately no way to delete a pod
//! through it. [`SimBackend`] adds the knobs a simulation needs to drive
//! a backend forward in virtual time.

mod simkube;
mod simlancium;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::model::{PodSpec, Resources, SimTime};

pub use simkube::{NodeSpec, SimKube};
pub use simlancium::{LanciumJobRecord, LanciumPhase, SimLancium};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct PodId(pub String);

impl fmt::Display for PodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Backend-neutral pod lifecycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PodState {
    Queued,
    Starting,
    Running,
    Terminating,
    Succeeded,
    Failed,
    Preempted,
}

impl PodState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            PodState::Succeeded | PodState::Failed | PodState::Preempted
        )
    }

    /// Submitted but not yet serving jobs.
    pub fn is_pending(self) -> bool {
        matches!(self, PodState::Queued | PodState::Starting)
    }
}

/// Whether `from -> to` is a legal pod transition. `None` is "did not
/// exist yet".
pub fn is_allowed_transition(from: Option<PodState>, to: PodState) -> bool {
    use PodState::*;
    match from {
        None => to == Queued,
        Some(from) => matches!(
            (from, to),
            (Queued, Starting)
                | (Queued, Running)
                | (Queued, Failed)
                | (Starting, Running)
                | (Starting, Failed)
                | (Running, Terminating)
                | (Running, Preempted)
                | (Running, Succeeded)
                | (Running, Failed)
                | (Terminating, Succeeded)
                | (Terminating, Failed)
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PodRecord {
    pub pod_id: PodId,
    pub spec: PodSpec,
    pub state: PodState,
    pub node_id: Option<String>,
    pub submit_time: SimTime,
    pub start_time: Option<SimTime>,
    pub end_time: Option<SimTime>,
}

/// Label equality constraints; an empty selector matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSelector(pub BTreeMap<String, String>);

impl LabelSelector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.0.insert(key.into(), value.into());
        self
    }

    pub fn matches(&self, labels: &BTreeMap<String, String>) -> bool {
        self.0.iter().all(|(k, v)| labels.get(k) == Some(v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend {0} is unreachable")]
    Unreachable(String),
    #[error("spec rejected by {backend}: {msg}")]
    InvalidSpec { backend: String, msg: String },
}

/// What the provisioner may do with a backend.
pub trait Backend {
    fn name(&self) -> &str;

    /// Pods whose labels satisfy `selector`, ordered by pod id.
    fn list_pods(&self, selector: &LabelSelector) -> Result<Vec<PodRecord>, BackendError>;

    /// Creates `count` pods from `spec`, all Queued. Either every pod is
    /// created or none is.
    fn submit_pods(&mut self, spec: &PodSpec, count: usize) -> Result<Vec<PodId>, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn list_pods(&self, selector: &LabelSelector) -> Result<Vec<PodRecord>, BackendError> {
        (**self).list_pods(selector)
    }

    fn submit_pods(&mut self, spec: &PodSpec, count: usize) -> Result<Vec<PodId>, BackendError> {
        (**self).submit_pods(spec, count)
    }
}

/// One pod state change as observed at the backend.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendEvent {
    pub time: SimTime,
    pub pod_id: PodId,
    pub from: Option<PodState>,
    pub to: PodState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node_id: Option<String>,
}

/// Simulation controls. Not available to the provisioner.
pub trait SimBackend: Backend {
    /// Sets the clock used to timestamp submissions.
    fn set_clock(&mut self, now: SimTime);

    /// Advances scheduling to `now`; returns every transition recorded
    /// since the last drain.
    fn step(&mut self, now: SimTime) -> Vec<BackendEvent>;

    /// The pod's main process exited by itself (worker self-termination).
    /// Only Running pods are affected.
    fn pod_exited(&mut self, pod_id: &PodId, now: SimTime);

    fn set_reachable(&mut self, reachable: bool);

    /// Transitions recorded since the last drain.
    fn drain_events(&mut self) -> Vec<BackendEvent>;

    /// State as seen from inside the simulation, ignoring outages.
    fn pod(&self, pod_id: &PodId) -> Option<PodRecord>;

    fn all_pods(&self) -> Vec<PodRecord>;

    /// Places where allocation exceeds capacity; recomputed from pods.
    fn capacity_violations(&self) -> Vec<String>;

    /// Notes about spec fields this backend accepted but ignored.
    fn warnings(&self) -> &[String];
}

/// Scheduling priority of a named class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PriorityClass {
    pub value: i32,
    pub preemptable: bool,
}

/// Maps `priority_class` names to priorities. Pods without a class get
/// `default`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityTable {
    pub classes: BTreeMap<String, PriorityClass>,
    pub default: PriorityClass,
}

impl Default for PriorityTable {
    fn default() -> Self {
        let mut classes = BTreeMap::new();
        classes.insert(
            "opportunistic2".to_string(),
            PriorityClass {
                value: 10,
                preemptable: true,
            },
        );
        PriorityTable {
            classes,
            default: PriorityClass {
                value: 1000,
                preemptable: false,
            },
        }
    }
}

impl PriorityTable {
    pub fn resolve(&self, class: Option<&str>) -> Option<PriorityClass> {
        match class {
            None => Some(self.default),
            Some(name) => self.classes.get(name).copied(),
        }
    }
}

/// Replays backend events and flags anything outside the pod state
/// machine, including events whose `from` disagrees with the last
/// observed state.
#[derive(Debug, Default)]
pub struct TransitionAuditor {
    last: HashMap<PodId, PodState>,
    violations: Vec<String>,
    observed: usize,
}

impl TransitionAuditor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, ev: &BackendEvent) {
        self.observed += 1;
        let known = self.last.get(&ev.pod_id).copied();
        if known != ev.from {
            self.violations.push(format!(
                "t={} {}: event says {:?} -> {:?} but last seen {:?}",
                ev.time, ev.pod_id, ev.from, ev.to, known
            ));
        }
        if !is_allowed_transition(ev.from, ev.to) {
            self.violations.push(format!(
                "t={} {}: illegal {:?} -> {:?}",
                ev.time, ev.pod_id, ev.from, ev.to
            ));
        }
        self.last.insert(ev.pod_id.clone(), ev.to);
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn observed(&self) -> usize {
        self.observed
    }
}

pub(crate) fn validate_resources(backend: &str, spec: &PodSpec) -> Result<(), BackendError> {
    let Resources {
        cpus, memory_mib, ..
    } = spec.resources;
    if cpus == 0 || memory_mib == 0 {
        return Err(BackendError::InvalidSpec {
            backend: backend.to_string(),
            msg: format!("pod needs at least 1 cpu and 1 MiB, got {cpus} cpu / {memory_mib} MiB"),
        });
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testutil {
    use crate::expr::AttrBag;
    use crate::model::*;

    pub fn spec(cpus: u64, class: Option<&str>, provisioner: &str) -> PodSpec {
        let cfg = ProvisionerConfig {
            provisioner_id: provisioner.to_string(),
            priority_class: class.map(String::from),
            ..ProvisionerConfig::default()
        };
        let job = JobAd::new(
            "j",
            AttrBag::new()
                .with(ATTR_REQUEST_CPUS, cpus as i64)
                .with(ATTR_REQUEST_MEMORY, 1024),
            0,
        )
        .unwrap();
        let clusters = cluster_jobs(&[job], &cfg.cluster_key_attrs);
        pod_spec_for(&clusters[0], &cfg).unwrap()
    }
}
