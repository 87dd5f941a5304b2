//! Discrete-event simulation of a pool: a job queue, pilot workers, one
//! container backend, and the provisioner polling them.
//!
//! Time is integer seconds. Events at the same instant run in the order
//! they were scheduled. Given the same scenario, config and seed, every
//! output is byte-identical.

pub mod scenario;
pub mod schedd;
pub mod worker;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::backends::{
    BackendEvent, PodId, PodState, SimBackend, SimKube, SimLancium, TransitionAuditor,
};
use crate::expr::{AttrBag, Value};
use crate::model::{
    ClusterKey, ConfigError, JobAd, JobState, ModelError, PodSpec, ProvisionerConfig, SimTime,
    ATTR_PROVISIONER_ID, ATTR_REQUEST_CPUS, ATTR_REQUEST_GPUS, ATTR_REQUEST_MEMORY, ATTR_SITE,
    LABEL_CLUSTER_HASH, LABEL_PROVISIONER_ID,
};
use crate::provisioner::{poll_once, AuditLog};

pub use scenario::{
    parse_scenario, ArrivalGroup, BackendKind, DurationModel, FaultTarget, FaultWindow, PodBatch,
    ScenarioError, ScenarioSpec,
};
pub use schedd::{JobCounts, Schedd, SimJob};
pub use worker::{
    match_jobs, register_worker, worker_tick, ExitReason, RegisterError, WorkerAction, WorkerAd,
    WorkerState,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("arrival at t={time}: {source}")]
    Job { time: SimTime, source: ModelError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Quiescent,
    HorizonReached,
}

pub const METRICS_HEADER: &str = "time,idle_jobs,running_jobs,completed_jobs,queued_pods,\
running_workers_idle,running_workers_claimed,cumulative_pods_submitted,\
cumulative_preemptions,wasted_worker_idle_seconds";

/// One row of the metrics time series.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MetricsSample {
    pub time: SimTime,
    pub idle_jobs: usize,
    pub running_jobs: usize,
    pub completed_jobs: usize,
    /// Pods of any owner not yet running (Queued or Starting).
    pub queued_pods: usize,
    pub running_workers_idle: usize,
    pub running_workers_claimed: usize,
    pub cumulative_pods_submitted: usize,
    pub cumulative_preemptions: usize,
    pub wasted_worker_idle_seconds: u64,
}

impl MetricsSample {
    fn same_state(&self, other: &MetricsSample) -> bool {
        MetricsSample { time: 0, ..*self } == MetricsSample { time: 0, ..*other }
    }
}

pub fn metrics_csv(samples: &[MetricsSample]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.time,
            s.idle_jobs,
            s.running_jobs,
            s.completed_jobs,
            s.queued_pods,
            s.running_workers_idle,
            s.running_workers_claimed,
            s.cumulative_pods_submitted,
            s.cumulative_preemptions,
            s.wasted_worker_idle_seconds
        );
    }
    out
}

/// One line of the event trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub time: SimTime,
    /// Sequence number of the event that produced this record.
    pub seq: u64,
    pub kind: &'static str,
    pub detail: serde_json::Value,
}

pub fn trace_jsonl(trace: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in trace {
        out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub outcome: RunOutcome,
    pub end_time: SimTime,
    pub backend: String,
    pub jobs_total: usize,
    pub jobs_completed: usize,
    pub pods_submitted: usize,
    pub preemptions: usize,
    pub wasted_worker_idle_seconds: u64,
    pub provisioner_ticks: usize,
    /// Most non-terminal pods this provisioner ever had in one cluster.
    pub max_live_pods_per_cluster: usize,
    pub transition_violations: Vec<String>,
    pub capacity_violations: Vec<String>,
    pub backend_warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub metrics: Vec<MetricsSample>,
    pub audit: AuditLog,
    pub trace: Vec<TraceRecord>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum EventKind {
    Outage {
        target: FaultTarget,
        up: bool,
    },
    Arrival(usize),
    PodBatch(usize),
    ProvisionerTick,
    BackendStep,
    JobComplete {
        job_id: String,
        attempt: u32,
    },
    IdleCheck {
        worker_id: String,
        idle_since: SimTime,
    },
    LifetimeCheck {
        worker_id: String,
    },
    /// A pod whose worker was refused by the pool gives up after its idle
    /// limit.
    OrphanExit {
        pod_id: PodId,
    },
}

impl EventKind {
    fn name(&self) -> &'static str {
        match self {
            EventKind::Outage { up: false, .. } => "outage-start",
            EventKind::Outage { up: true, .. } => "outage-end",
            EventKind::Arrival(_) => "job-arrival",
            EventKind::PodBatch(_) => "pod-batch",
            EventKind::ProvisionerTick => "provisioner-tick",
            EventKind::BackendStep => "backend-step",
            EventKind::JobComplete { .. } => "job-complete",
            EventKind::IdleCheck { .. } => "worker-idle-check",
            EventKind::LifetimeCheck { .. } => "worker-lifetime-check",
            EventKind::OrphanExit { .. } => "orphan-exit",
        }
    }
}

#[derive(Debug)]
struct Scheduled {
    time: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Builds the backend a scenario asks for. The backend kind must be set.
pub fn build_backend(spec: &ScenarioSpec) -> Result<Box<dyn SimBackend>, ScenarioError> {
    spec.validate()?;
    let kind = spec
        .backend
        .ok_or_else(|| ScenarioError::Validation("no backend selected".into()))?;
    Ok(match kind {
        BackendKind::SimKube => Box::new(SimKube::new(spec.nodes.clone(), spec.start_latency_s)),
        BackendKind::SimLancium => Box::new(SimLancium::new(
            spec.lancium_capacity.expect("validated"),
            spec.start_latency_s,
        )),
    })
}

/// Pod spec for an externally submitted batch.
pub fn batch_pod_spec(batch: &PodBatch, config: &ProvisionerConfig) -> PodSpec {
    let r = batch.resources;
    let key = ClusterKey(vec![
        (ATTR_REQUEST_CPUS.to_string(), Value::Integer(r.cpus as i64)),
        (
            ATTR_REQUEST_MEMORY.to_string(),
            Value::Integer(r.memory_mib as i64),
        ),
        (ATTR_REQUEST_GPUS.to_string(), Value::Integer(r.gpus as i64)),
    ]);
    let mut injected_attrs: AttrBag = key.0.iter().cloned().collect();
    injected_attrs.insert(ATTR_PROVISIONER_ID, batch.provisioner_id.clone());
    if let Some(site) = &batch.site {
        injected_attrs.insert(ATTR_SITE, site.clone());
    }
    injected_attrs.extend(&batch.attrs);
    let labels = BTreeMap::from([
        (
            LABEL_PROVISIONER_ID.to_string(),
            batch.provisioner_id.clone(),
        ),
        (LABEL_CLUSTER_HASH.to_string(), key.hash_label()),
    ]);
    PodSpec {
        cluster_key: key,
        resources: r,
        image_ref: config.image_ref.clone(),
        priority_class: batch.priority_class.clone(),
        affinity_terms: batch.affinity.clone(),
        labels,
        injected_attrs,
        secret_ref: batch
            .secret_ref
            .clone()
            .unwrap_or_else(|| config.secret_ref.clone()),
        max_lifetime_s: batch.max_lifetime_s.unwrap_or(config.max_lifetime_s),
        max_idle_s: batch.max_idle_s.unwrap_or(config.max_idle_s),
    }
}

/// A running simulation. Drive it with [`Simulation::step`] to inspect
/// state between events, or use [`run_scenario`].
pub struct Simulation {
    spec: ScenarioSpec,
    config: ProvisionerConfig,
    backend: Box<dyn SimBackend>,
    schedd: Schedd,
    workers: BTreeMap<String, WorkerAd>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    rng: ChaCha8Rng,
    now: SimTime,
    next_seq: u64,
    current_seq: u64,
    next_worker: u64,
    pending_inputs: usize,
    arrived: usize,
    pods_submitted: usize,
    preemptions: usize,
    wasted: u64,
    max_live_per_cluster: usize,
    audit: AuditLog,
    trace: Vec<TraceRecord>,
    metrics: Vec<MetricsSample>,
    auditor: TransitionAuditor,
    capacity_violations: Vec<String>,
    outcome: Option<RunOutcome>,
}

impl Simulation {
    pub fn new(mut spec: ScenarioSpec, config: ProvisionerConfig) -> Result<Simulation, SimError> {
        config.validate()?;
        if spec.backend.is_none() {
            let kind = config
                .backend_name
                .parse()
                .map_err(ScenarioError::Validation)?;
            spec.backend = Some(kind);
        }
        let backend = build_backend(&spec)?;
        for group in &spec.arrivals {
            JobAd::new("arrival", group.attrs.clone(), group.time).map_err(|source| {
                SimError::Job {
                    time: group.time,
                    source,
                }
            })?;
        }
        let mut sim = Simulation {
            rng: ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(0)),
            pending_inputs: spec.arrivals.len() + spec.pod_batches.len(),
            spec,
            config,
            backend,
            schedd: Schedd::new(),
            workers: BTreeMap::new(),
            queue: BinaryHeap::new(),
            now: 0,
            next_seq: 0,
            current_seq: 0,
            next_worker: 1,
            arrived: 0,
            pods_submitted: 0,
            preemptions: 0,
            wasted: 0,
            max_live_per_cluster: 0,
            audit: AuditLog::default(),
            trace: Vec::new(),
            metrics: Vec::new(),
            auditor: TransitionAuditor::new(),
            capacity_violations: Vec::new(),
            outcome: None,
        };
        let faults = sim.spec.faults.clone();
        for f in faults {
            sim.schedule(
                f.start,
                EventKind::Outage {
                    target: f.target,
                    up: false,
                },
            );
            sim.schedule(
                f.end,
                EventKind::Outage {
                    target: f.target,
                    up: true,
                },
            );
        }
        // Stable order: arrivals and batches by time, file order on ties.
        let mut inputs: Vec<(SimTime, usize, EventKind)> = Vec::new();
        for (i, a) in sim.spec.arrivals.iter().enumerate() {
            inputs.push((a.time, i, EventKind::Arrival(i)));
        }
        let offset = sim.spec.arrivals.len();
        for (i, b) in sim.spec.pod_batches.iter().enumerate() {
            inputs.push((b.time, offset + i, EventKind::PodBatch(i)));
        }
        inputs.sort_by_key(|(t, i, _)| (*t, *i));
        for (t, _, kind) in inputs {
            sim.schedule(t, kind);
        }
        sim.schedule(0, EventKind::ProvisionerTick);
        sim.schedule(0, EventKind::BackendStep);
        Ok(sim)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn config(&self) -> &ProvisionerConfig {
        &self.config
    }

    pub fn schedd(&self) -> &Schedd {
        &self.schedd
    }

    pub fn backend(&self) -> &dyn SimBackend {
        self.backend.as_ref()
    }

    pub fn workers(&self) -> &BTreeMap<String, WorkerAd> {
        &self.workers
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn metrics(&self) -> &[MetricsSample] {
        &self.metrics
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    /// Jobs that have entered the queue so far.
    pub fn arrived(&self) -> usize {
        self.arrived
    }

    pub fn outcome(&self) -> Option<RunOutcome> {
        self.outcome
    }

    pub fn transition_violations(&self) -> &[String] {
        self.auditor.violations()
    }

    pub fn capacity_violations(&self) -> &[String] {
        &self.capacity_violations
    }

    /// Processes the next event. Returns its time, or `None` once the run
    /// is over.
    pub fn step(&mut self) -> Option<SimTime> {
        if self.outcome.is_some() {
            return None;
        }
        let next = match self.queue.pop() {
            Some(Reverse(ev)) if ev.time <= self.spec.horizon_s => ev,
            _ => {
                self.advance(self.spec.horizon_s.max(self.now));
                self.outcome = Some(RunOutcome::HorizonReached);
                let sample = self.sample();
                if self.metrics.last() != Some(&sample) {
                    self.metrics.push(sample);
                }
                return None;
            }
        };
        self.advance(next.time);
        self.current_seq = next.seq;
        self.backend.set_clock(self.now);
        let is_tick = next.kind == EventKind::ProvisionerTick;
        self.handle(next.kind);
        let events = self.backend.drain_events();
        self.absorb(events);
        self.matchmake();
        self.check_invariants();

        let sample = self.sample();
        let changed = self
            .metrics
            .last()
            .is_none_or(|last| !last.same_state(&sample));
        if is_tick || changed {
            self.metrics.push(sample);
        }
        if is_tick {
            if self.is_quiescent() {
                self.outcome = Some(RunOutcome::Quiescent);
            } else {
                self.schedule(
                    self.now + self.config.poll_interval_s,
                    EventKind::ProvisionerTick,
                );
            }
        }
        Some(self.now)
    }

    /// Runs to the end and returns everything recorded.
    pub fn run(mut self) -> SimOutput {
        while self.step().is_some() {}
        self.finish()
    }

    pub fn finish(self) -> SimOutput {
        let counts = self.schedd.counts();
        let summary = RunSummary {
            outcome: self.outcome.unwrap_or(RunOutcome::HorizonReached),
            end_time: self.now,
            backend: self.backend.name().to_string(),
            jobs_total: self.arrived,
            jobs_completed: counts.completed,
            pods_submitted: self.pods_submitted,
            preemptions: self.preemptions,
            wasted_worker_idle_seconds: self.wasted,
            provisioner_ticks: self.audit.len(),
            max_live_pods_per_cluster: self.max_live_per_cluster,
            transition_violations: self.auditor.violations().to_vec(),
            capacity_violations: self.capacity_violations,
            backend_warnings: self.backend.warnings().to_vec(),
        };
        SimOutput {
            metrics: self.metrics,
            audit: self.audit,
            trace: self.trace,
            summary,
        }
    }

    fn schedule(&mut self, time: SimTime, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Scheduled { time, seq, kind }));
    }

    fn record(&mut self, kind: &'static str, detail: serde_json::Value) {
        self.trace.push(TraceRecord {
            time: self.now,
            seq: self.current_seq,
            kind,
            detail,
        });
    }

    fn advance(&mut self, t: SimTime) {
        let idle = self
            .workers
            .values()
            .filter(|w| w.state == WorkerState::Idle)
            .count() as u64;
        self.wasted += idle * t.saturating_sub(self.now);
        self.now = self.now.max(t);
    }

    fn handle(&mut self, kind: EventKind) {
        let name = kind.name();
        match kind {
            EventKind::Outage { target, up } => {
                match target {
                    FaultTarget::Backend => self.backend.set_reachable(up),
                    FaultTarget::Schedd => self.schedd.set_reachable(up),
                }
                self.record(name, json!({ "target": target.name() }));
            }
            EventKind::Arrival(i) => {
                let group = self.spec.arrivals[i].clone();
                let model = group.duration.unwrap_or(self.spec.job_duration);
                let mut ids = Vec::with_capacity(group.count);
                for _ in 0..group.count {
                    let duration = model.sample(&mut self.rng);
                    let id = self
                        .schedd
                        .submit(group.attrs.clone(), self.now, duration)
                        .expect("arrival attributes checked at construction");
                    ids.push(id);
                }
                self.arrived += group.count;
                self.pending_inputs -= 1;
                self.record(
                    name,
                    json!({ "count": group.count, "first": ids.first(), "last": ids.last() }),
                );
            }
            EventKind::PodBatch(i) => {
                let batch = &self.spec.pod_batches[i];
                let pod_spec = batch_pod_spec(batch, &self.config);
                let count = batch.count;
                let result = self.backend.submit_pods(&pod_spec, count);
                self.pending_inputs -= 1;
                let detail = match result {
                    Ok(ids) => json!({
                        "provisioner_id": pod_spec.provisioner_id(),
                        "count": ids.len(),
                    }),
                    Err(e) => json!({ "count": 0, "error": e.to_string() }),
                };
                self.record(name, detail);
            }
            EventKind::ProvisionerTick => {
                let outcome =
                    poll_once(&self.schedd, self.backend.as_mut(), &self.config, self.now);
                let record = outcome.tick_record();
                self.record(
                    name,
                    json!({ "submitted": record.submitted(), "errors": record.errors }),
                );
                self.audit.push(record);
            }
            EventKind::BackendStep => {
                let events = self.backend.step(self.now);
                self.absorb(events);
                self.schedule(self.now + self.spec.backend_step_s, EventKind::BackendStep);
            }
            EventKind::JobComplete { job_id, attempt } => self.complete_job(&job_id, attempt),
            EventKind::IdleCheck {
                worker_id,
                idle_since,
            } => {
                let Some(w) = self.workers.get(&worker_id) else {
                    return;
                };
                if w.state != WorkerState::Idle || w.idle_since != Some(idle_since) {
                    return;
                }
                if let WorkerAction::Terminate(reason) = worker_tick(w, self.now) {
                    self.terminate_worker(&worker_id, reason);
                }
            }
            EventKind::LifetimeCheck { worker_id } => {
                let Some(w) = self.workers.get(&worker_id) else {
                    return;
                };
                match worker_tick(w, self.now) {
                    WorkerAction::Terminate(reason) => self.terminate_worker(&worker_id, reason),
                    WorkerAction::Drain => {
                        self.record("worker-drain", json!({ "worker_id": worker_id }))
                    }
                    WorkerAction::Continue => {}
                }
            }
            EventKind::OrphanExit { pod_id } => {
                self.backend.pod_exited(&pod_id, self.now);
                self.record(name, json!({ "pod_id": pod_id.0 }));
            }
        }
    }

    fn absorb(&mut self, events: Vec<BackendEvent>) {
        for ev in events {
            self.auditor.observe(&ev);
            if ev.from.is_none() {
                self.pods_submitted += 1;
            }
            self.record(
                "pod-transition",
                serde_json::to_value(&ev).expect("event serializes"),
            );
            match ev.to {
                PodState::Running => self.register(&ev.pod_id),
                PodState::Preempted => {
                    self.preemptions += 1;
                    self.lose_worker(&ev.pod_id);
                }
                PodState::Failed => self.lose_worker(&ev.pod_id),
                _ => {}
            }
        }
    }

    fn register(&mut self, pod_id: &PodId) {
        let pod = self.backend.pod(pod_id).expect("backend reported this pod");
        let worker_id = format!("w-{:06}", self.next_worker);
        match register_worker(&worker_id, &pod, &self.config.pool_token_name, self.now) {
            Ok(w) => {
                self.next_worker += 1;
                self.schedule(
                    self.now + w.max_idle_s,
                    EventKind::IdleCheck {
                        worker_id: worker_id.clone(),
                        idle_since: self.now,
                    },
                );
                self.schedule(
                    w.registered_time + w.max_lifetime_s,
                    EventKind::LifetimeCheck {
                        worker_id: worker_id.clone(),
                    },
                );
                self.record(
                    "worker-register",
                    json!({ "worker_id": worker_id, "pod_id": pod_id.0 }),
                );
                self.workers.insert(worker_id, w);
            }
            Err(e) => {
                self.record(
                    "worker-rejected",
                    json!({ "pod_id": pod_id.0, "reason": e.to_string() }),
                );
                self.schedule(
                    self.now + pod.spec.max_idle_s,
                    EventKind::OrphanExit {
                        pod_id: pod_id.clone(),
                    },
                );
            }
        }
    }

    /// The pod under a worker is gone; its job, if any, goes back to idle.
    fn lose_worker(&mut self, pod_id: &PodId) {
        let Some(worker_id) = self
            .workers
            .iter()
            .find(|(_, w)| &w.pod_id == pod_id)
            .map(|(id, _)| id.clone())
        else {
            return;
        };
        let w = self.workers.remove(&worker_id).expect("found above");
        if let Some(job_id) = w.claimed_job_id {
            self.schedd
                .requeue(&job_id)
                .expect("claimed job is running");
            self.record(
                "job-requeue",
                json!({ "job_id": job_id, "worker_id": worker_id }),
            );
        }
        self.record("worker-lost", json!({ "worker_id": worker_id }));
    }

    fn terminate_worker(&mut self, worker_id: &str, reason: ExitReason) {
        let Some(w) = self.workers.remove(worker_id) else {
            return;
        };
        self.backend.pod_exited(&w.pod_id, self.now);
        self.record(
            "worker-exit",
            json!({ "worker_id": worker_id, "pod_id": w.pod_id.0, "reason": reason }),
        );
    }

    fn complete_job(&mut self, job_id: &str, attempt: u32) {
        let Some(job) = self.schedd.job(job_id) else {
            return;
        };
        if job.ad.state != JobState::Running || job.attempt != attempt {
            return;
        }
        let worker_id = job.worker_id.clone().expect("running job has a worker");
        self.schedd
            .complete(job_id, self.now)
            .expect("running job can complete");
        self.record(
            "job-complete",
            json!({ "job_id": job_id, "worker_id": worker_id }),
        );
        let now = self.now;
        let Some(w) = self.workers.get_mut(&worker_id) else {
            return;
        };
        if w.past_lifetime(now) {
            self.terminate_worker(&worker_id, ExitReason::Lifetime);
            return;
        }
        w.state = WorkerState::Idle;
        w.claimed_job_id = None;
        w.idle_since = Some(now);
        let due = now + w.max_idle_s;
        self.schedule(
            due,
            EventKind::IdleCheck {
                worker_id,
                idle_since: now,
            },
        );
    }

    fn matchmake(&mut self) {
        if !self.workers.values().any(|w| w.state == WorkerState::Idle) {
            return;
        }
        let pairs = {
            let jobs = self.schedd.idle_by_age();
            if jobs.is_empty() {
                return;
            }
            let workers: Vec<&WorkerAd> = self.workers.values().collect();
            match_jobs(&jobs, &workers, self.now)
        };
        for (job_id, worker_id) in pairs {
            let attempt = self
                .schedd
                .dispatch(&job_id, &worker_id, self.now)
                .expect("matched job is idle");
            let duration = self.schedd.job(&job_id).expect("exists").duration_s;
            let w = self.workers.get_mut(&worker_id).expect("matched worker");
            w.state = WorkerState::Claimed;
            w.claimed_job_id = Some(job_id.clone());
            w.idle_since = None;
            self.schedule(
                self.now + duration,
                EventKind::JobComplete {
                    job_id: job_id.clone(),
                    attempt,
                },
            );
            self.record(
                "job-dispatch",
                json!({ "job_id": job_id, "worker_id": worker_id }),
            );
        }
    }

    fn check_invariants(&mut self) {
        for v in self.backend.capacity_violations() {
            self.capacity_violations
                .push(format!("t={}: {v}", self.now));
        }
        let mut live: BTreeMap<String, usize> = BTreeMap::new();
        for pod in self.backend.all_pods() {
            if pod.state.is_terminal()
                || pod.spec.provisioner_id() != Some(self.config.provisioner_id.as_str())
            {
                continue;
            }
            *live
                .entry(pod.spec.cluster_hash().unwrap_or_default().to_string())
                .or_default() += 1;
        }
        let max = live.values().copied().max().unwrap_or(0);
        self.max_live_per_cluster = self.max_live_per_cluster.max(max);
    }

    fn sample(&self) -> MetricsSample {
        let counts = self.schedd.counts();
        let queued_pods = self
            .backend
            .all_pods()
            .iter()
            .filter(|p| p.state.is_pending())
            .count();
        let idle_workers = self
            .workers
            .values()
            .filter(|w| w.state == WorkerState::Idle)
            .count();
        MetricsSample {
            time: self.now,
            idle_jobs: counts.idle,
            running_jobs: counts.running,
            completed_jobs: counts.completed,
            queued_pods,
            running_workers_idle: idle_workers,
            running_workers_claimed: self.workers.len() - idle_workers,
            cumulative_pods_submitted: self.pods_submitted,
            cumulative_preemptions: self.preemptions,
            wasted_worker_idle_seconds: self.wasted,
        }
    }

    fn is_quiescent(&self) -> bool {
        let counts = self.schedd.counts();
        self.pending_inputs == 0
            && counts.idle == 0
            && counts.running == 0
            && self.workers.is_empty()
            && self
                .backend
                .all_pods()
                .iter()
                .all(|p| p.state.is_terminal())
    }
}

/// Runs a scenario to quiescence or its horizon.
pub fn run_scenario(spec: ScenarioSpec, config: ProvisionerConfig) -> Result<SimOutput, SimError> {
    Ok(Simulation::new(spec, config)?.run())
}
