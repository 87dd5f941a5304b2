//! A batch-style cloud service with its own job vocabulary: jobs are
//! created, then submitted, then queued against one aggregate capacity
//! pool in FIFO order. No nodes, no priorities, no affinity.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{
    validate_resources, Backend, BackendError, BackendEvent, LabelSelector, PodId, PodRecord,
    PodState, SimBackend,
};
use crate::model::{PodSpec, Resources, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LanciumPhase {
    Created,
    Submitted,
    Queued,
    Running,
    Finished,
    Error,
}

impl LanciumPhase {
    pub fn unified(self) -> PodState {
        match self {
            LanciumPhase::Created | LanciumPhase::Submitted | LanciumPhase::Queued => {
                PodState::Queued
            }
            LanciumPhase::Running => PodState::Running,
            LanciumPhase::Finished => PodState::Succeeded,
            LanciumPhase::Error => PodState::Failed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LanciumJobRecord {
    pub lancium_id: String,
    pub phase: LanciumPhase,
    pub spec: PodSpec,
    pub submit_time: Option<SimTime>,
    /// When capacity was reserved; the job runs `start_latency_s` later.
    pub admitted_at: Option<SimTime>,
    pub start_time: Option<SimTime>,
    pub end_time: Option<SimTime>,
}

impl LanciumJobRecord {
    fn holds_resources(&self) -> bool {
        self.admitted_at.is_some()
            && matches!(self.phase, LanciumPhase::Queued | LanciumPhase::Running)
    }

    fn to_pod(&self) -> PodRecord {
        PodRecord {
            pod_id: PodId(self.lancium_id.clone()),
            spec: self.spec.clone(),
            state: self.phase.unified(),
            node_id: None,
            submit_time: self.submit_time.unwrap_or_default(),
            start_time: self.start_time,
            end_time: self.end_time,
        }
    }
}

#[derive(Debug)]
pub struct SimLancium {
    capacity: Resources,
    allocated: Resources,
    jobs: BTreeMap<String, LanciumJobRecord>,
    start_latency_s: u64,
    now: SimTime,
    reachable: bool,
    next_id: u64,
    events: Vec<BackendEvent>,
    warnings: Vec<String>,
}

impl SimLancium {
    pub fn new(capacity: Resources, start_latency_s: u64) -> Self {
        SimLancium {
            capacity,
            allocated: Resources::default(),
            jobs: BTreeMap::new(),
            start_latency_s,
            now: 0,
            reachable: true,
            next_id: 1,
            events: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn capacity(&self) -> Resources {
        self.capacity
    }

    pub fn job(&self, lancium_id: &str) -> Option<&LanciumJobRecord> {
        self.jobs.get(lancium_id)
    }

    fn set_phase(&mut self, id: &str, phase: LanciumPhase) {
        let now = self.now;
        let job = self.jobs.get_mut(id).expect("known job");
        let from = job.phase.unified();
        job.phase = phase;
        match phase {
            LanciumPhase::Running => job.start_time = Some(now),
            LanciumPhase::Finished | LanciumPhase::Error => job.end_time = Some(now),
            _ => {}
        }
        let to = phase.unified();
        if from != to {
            self.events.push(BackendEvent {
                time: now,
                pod_id: PodId(id.to_string()),
                from: Some(from),
                to,
                node_id: None,
            });
        }
    }

    /// First half of submission: registers the job without queuing it.
    pub fn create_job(&mut self, spec: &PodSpec) -> Result<String, BackendError> {
        if !self.reachable {
            return Err(BackendError::Unreachable(self.name().into()));
        }
        validate_resources(self.name(), spec)?;
        let id = format!("lcm-{:06}", self.next_id);
        self.next_id += 1;
        if !spec.affinity_terms.is_empty() {
            self.warnings.push(format!(
                "{id}: node affinity ignored ({} terms)",
                spec.affinity_terms.len()
            ));
        }
        if let Some(pc) = &spec.priority_class {
            self.warnings
                .push(format!("{id}: priority class `{pc}` ignored"));
        }
        self.jobs.insert(
            id.clone(),
            LanciumJobRecord {
                lancium_id: id.clone(),
                phase: LanciumPhase::Created,
                spec: spec.clone(),
                submit_time: None,
                admitted_at: None,
                start_time: None,
                end_time: None,
            },
        );
        self.events.push(BackendEvent {
            time: self.now,
            pod_id: PodId(id.clone()),
            from: None,
            to: PodState::Queued,
            node_id: None,
        });
        Ok(id)
    }

    /// Second half of submission. Only `created` jobs can be submitted.
    pub fn submit_job(&mut self, id: &str) -> Result<(), BackendError> {
        if !self.reachable {
            return Err(BackendError::Unreachable(self.name().into()));
        }
        let now = self.now;
        match self.jobs.get_mut(id) {
            Some(job) if job.phase == LanciumPhase::Created => {
                job.phase = LanciumPhase::Submitted;
                job.submit_time = Some(now);
                Ok(())
            }
            Some(job) => Err(BackendError::InvalidSpec {
                backend: "simlancium".into(),
                msg: format!("job {id} is {:?}, not created", job.phase),
            }),
            None => Err(BackendError::InvalidSpec {
                backend: "simlancium".into(),
                msg: format!("no such job {id}"),
            }),
        }
    }
}

impl Backend for SimLancium {
    fn name(&self) -> &str {
        "simlancium"
    }

    fn list_pods(&self, selector: &LabelSelector) -> Result<Vec<PodRecord>, BackendError> {
        if !self.reachable {
            return Err(BackendError::Unreachable(self.name().into()));
        }
        Ok(self
            .jobs
            .values()
            .filter(|j| selector.matches(&j.spec.labels))
            .map(LanciumJobRecord::to_pod)
            .collect())
    }

    fn submit_pods(&mut self, spec: &PodSpec, count: usize) -> Result<Vec<PodId>, BackendError> {
        if !self.reachable {
            return Err(BackendError::Unreachable(self.name().into()));
        }
        validate_resources(self.name(), spec)?;
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let id = self.create_job(spec)?;
            self.submit_job(&id)?;
            ids.push(PodId(id));
        }
        Ok(ids)
    }
}

impl SimBackend for SimLancium {
    fn set_clock(&mut self, now: SimTime) {
        self.now = self.now.max(now);
    }

    fn step(&mut self, now: SimTime) -> Vec<BackendEvent> {
        self.set_clock(now);
        let submitted: Vec<String> = self
            .jobs
            .values()
            .filter(|j| j.phase == LanciumPhase::Submitted)
            .map(|j| j.lancium_id.clone())
            .collect();
        for id in &submitted {
            self.set_phase(id, LanciumPhase::Queued);
        }

        let mut queue: Vec<&LanciumJobRecord> = self
            .jobs
            .values()
            .filter(|j| j.phase == LanciumPhase::Queued)
            .collect();
        queue.sort_by_key(|j| (j.submit_time, j.lancium_id.clone()));
        let queue: Vec<(String, Resources, Option<SimTime>)> = queue
            .into_iter()
            .map(|j| (j.lancium_id.clone(), j.spec.resources, j.admitted_at))
            .collect();

        let mut blocked = false;
        for (id, need, admitted) in queue {
            let admitted = match admitted {
                Some(t) => Some(t),
                None if !need.fits_within(&self.capacity) => {
                    self.set_phase(&id, LanciumPhase::Error);
                    None
                }
                // strict FIFO: nothing overtakes a job waiting for capacity
                None if blocked => None,
                None if need.fits_within(&self.capacity.saturating_sub(&self.allocated)) => {
                    self.allocated += need;
                    self.jobs.get_mut(&id).unwrap().admitted_at = Some(self.now);
                    Some(self.now)
                }
                None => {
                    blocked = true;
                    None
                }
            };
            if admitted.is_some_and(|t| t + self.start_latency_s <= self.now) {
                self.set_phase(&id, LanciumPhase::Running);
            }
        }
        self.drain_events()
    }

    fn pod_exited(&mut self, pod_id: &PodId, now: SimTime) {
        self.set_clock(now);
        let Some(job) = self.jobs.get(&pod_id.0) else {
            return;
        };
        if job.phase != LanciumPhase::Running {
            return;
        }
        let res = job.spec.resources;
        self.allocated -= res;
        self.set_phase(&pod_id.0, LanciumPhase::Finished);
    }

    fn set_reachable(&mut self, reachable: bool) {
        self.reachable = reachable;
    }

    fn drain_events(&mut self) -> Vec<BackendEvent> {
        std::mem::take(&mut self.events)
    }

    fn pod(&self, pod_id: &PodId) -> Option<PodRecord> {
        self.jobs.get(&pod_id.0).map(LanciumJobRecord::to_pod)
    }

    fn all_pods(&self) -> Vec<PodRecord> {
        self.jobs.values().map(LanciumJobRecord::to_pod).collect()
    }

    fn capacity_violations(&self) -> Vec<String> {
        let used = self
            .jobs
            .values()
            .filter(|j| j.holds_resources())
            .fold(Resources::default(), |acc, j| acc + j.spec.resources);
        if used.fits_within(&self.capacity) {
            Vec::new()
        } else {
            vec![format!(
                "aggregate use {:?} exceeds {:?}",
                used, self.capacity
            )]
        }
    }

    fn warnings(&self) -> &[String] {
        &self.warnings
    }
}
