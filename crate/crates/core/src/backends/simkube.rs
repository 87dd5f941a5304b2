//! A Kubernetes-like scheduler: nodes with capacity and labels, priority
//! classes, and preemption of lower-priority running pods.

use std::collections::BTreeMap;

use itertools::Itertools;
use serde::Serialize;

use super::{
    validate_resources, Backend, BackendError, BackendEvent, LabelSelector, PodId, PodRecord,
    PodState, PriorityClass, PriorityTable, SimBackend,
};
use crate::model::{PodSpec, Resources, SimTime};

/// Exact minimal eviction search is used up to this many candidates per
/// node; beyond it the greedy prefix is taken.
const EXACT_EVICTION_LIMIT: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSpec {
    pub node_id: String,
    pub capacity: Resources,
    pub labels: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
struct KubePod {
    record: PodRecord,
    priority: PriorityClass,
    bound_at: Option<SimTime>,
}

impl KubePod {
    fn holds_resources(&self) -> bool {
        matches!(
            self.record.state,
            PodState::Starting | PodState::Running | PodState::Terminating
        )
    }
}

#[derive(Debug)]
pub struct SimKube {
    nodes: Vec<NodeSpec>,
    allocated: Vec<Resources>,
    pods: BTreeMap<PodId, KubePod>,
    priorities: PriorityTable,
    start_latency_s: u64,
    now: SimTime,
    reachable: bool,
    next_id: u64,
    events: Vec<BackendEvent>,
}

impl SimKube {
    pub fn new(mut nodes: Vec<NodeSpec>, start_latency_s: u64) -> Self {
        nodes.sort_by(|a, b| a.node_id.cmp(&b.node_id));
        let allocated = vec![Resources::default(); nodes.len()];
        SimKube {
            nodes,
            allocated,
            pods: BTreeMap::new(),
            priorities: PriorityTable::default(),
            start_latency_s,
            now: 0,
            reachable: true,
            next_id: 1,
            events: Vec::new(),
        }
    }

    pub fn with_priorities(mut self, table: PriorityTable) -> Self {
        self.priorities = table;
        self
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    fn transition(&mut self, id: &PodId, to: PodState) {
        let pod = self.pods.get_mut(id).expect("known pod");
        let from = pod.record.state;
        pod.record.state = to;
        match to {
            PodState::Running => pod.record.start_time = Some(self.now),
            s if s.is_terminal() => pod.record.end_time = Some(self.now),
            _ => {}
        }
        self.events.push(BackendEvent {
            time: self.now,
            pod_id: id.clone(),
            from: Some(from),
            to,
            node_id: pod.record.node_id.clone(),
        });
    }

    fn release(&mut self, id: &PodId) {
        let pod = &self.pods[id];
        if let Some(node) = &pod.record.node_id {
            let idx = self.node_index(node);
            self.allocated[idx] -= pod.record.spec.resources;
        }
    }

    fn node_index(&self, node_id: &str) -> usize {
        self.nodes
            .iter()
            .position(|n| n.node_id == node_id)
            .expect("known node")
    }

    fn bind(&mut self, id: &PodId, node: usize) {
        let res = self.pods[id].record.spec.resources;
        self.allocated[node] += res;
        let node_id = self.nodes[node].node_id.clone();
        let pod = self.pods.get_mut(id).unwrap();
        pod.record.node_id = Some(node_id);
        pod.bound_at = Some(self.now);
        self.transition(id, PodState::Starting);
    }

    fn admits(&self, node: usize, spec: &PodSpec) -> bool {
        let labels = &self.nodes[node].labels;
        spec.affinity_terms.iter().all(|t| t.admits(labels))
    }

    fn free(&self, node: usize) -> Resources {
        self.nodes[node]
            .capacity
            .saturating_sub(&self.allocated[node])
    }

    /// Smallest set of running, preemptable, strictly lower-priority pods
    /// on `node` whose removal lets `need` fit. Among sets of equal size
    /// the one earliest in (priority, start_time, pod_id) order wins.
    fn eviction_set(&self, node: usize, need: &Resources, priority: i32) -> Option<Vec<PodId>> {
        let node_id = &self.nodes[node].node_id;
        let mut candidates: Vec<&KubePod> = self
            .pods
            .values()
            .filter(|p| {
                p.record.state == PodState::Running
                    && p.record.node_id.as_deref() == Some(node_id)
                    && p.priority.preemptable
                    && p.priority.value < priority
            })
            .collect();
        candidates.sort_by_key(|p| {
            (
                p.priority.value,
                p.record.start_time,
                p.record.pod_id.clone(),
            )
        });
        let free = self.free(node);
        let fits = |set: &[&&KubePod]| {
            let released = set
                .iter()
                .fold(Resources::default(), |acc, p| acc + p.record.spec.resources);
            need.fits_within(&(free + released))
        };
        if candidates.len() > EXACT_EVICTION_LIMIT {
            for k in 1..=candidates.len() {
                let prefix: Vec<&&KubePod> = candidates[..k].iter().collect();
                if fits(&prefix) {
                    return Some(prefix.iter().map(|p| p.record.pod_id.clone()).collect());
                }
            }
            return None;
        }
        for k in 1..=candidates.len() {
            if let Some(set) = candidates.iter().combinations(k).find(|set| fits(set)) {
                return Some(set.iter().map(|p| p.record.pod_id.clone()).collect());
            }
        }
        None
    }

    fn schedule_one(&mut self, id: &PodId) {
        let (spec, priority) = {
            let p = &self.pods[id];
            (p.record.spec.clone(), p.priority)
        };
        let need = spec.resources;
        if let Some(node) = (0..self.nodes.len())
            .find(|&n| self.admits(n, &spec) && need.fits_within(&self.free(n)))
        {
            self.bind(id, node);
            return;
        }
        let best = (0..self.nodes.len())
            .filter(|&n| self.admits(n, &spec) && need.fits_within(&self.nodes[n].capacity))
            .filter_map(|n| {
                self.eviction_set(n, &need, priority.value)
                    .map(|set| (n, set))
            })
            .min_by_key(|(n, set)| (set.len(), *n));
        if let Some((node, victims)) = best {
            for victim in &victims {
                self.release(victim);
                self.transition(victim, PodState::Preempted);
            }
            self.bind(id, node);
        }
    }
}

impl Backend for SimKube {
    fn name(&self) -> &str {
        "simkube"
    }

    fn list_pods(&self, selector: &LabelSelector) -> Result<Vec<PodRecord>, BackendError> {
        if !self.reachable {
            return Err(BackendError::Unreachable(self.name().into()));
        }
        Ok(self
            .pods
            .values()
            .filter(|p| selector.matches(&p.record.spec.labels))
            .map(|p| p.record.clone())
            .collect())
    }

    fn submit_pods(&mut self, spec: &PodSpec, count: usize) -> Result<Vec<PodId>, BackendError> {
        if !self.reachable {
            return Err(BackendError::Unreachable(self.name().into()));
        }
        validate_resources(self.name(), spec)?;
        let priority = self
            .priorities
            .resolve(spec.priority_class.as_deref())
            .ok_or_else(|| BackendError::InvalidSpec {
                backend: self.name().into(),
                msg: format!(
                    "unknown priority class `{}`",
                    spec.priority_class.as_deref().unwrap_or_default()
                ),
            })?;
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let id = PodId(format!("pod-{:06}", self.next_id));
            self.next_id += 1;
            let record = PodRecord {
                pod_id: id.clone(),
                spec: spec.clone(),
                state: PodState::Queued,
                node_id: None,
                submit_time: self.now,
                start_time: None,
                end_time: None,
            };
            self.events.push(BackendEvent {
                time: self.now,
                pod_id: id.clone(),
                from: None,
                to: PodState::Queued,
                node_id: None,
            });
            self.pods.insert(
                id.clone(),
                KubePod {
                    record,
                    priority,
                    bound_at: None,
                },
            );
            ids.push(id);
        }
        Ok(ids)
    }
}

impl SimBackend for SimKube {
    fn set_clock(&mut self, now: SimTime) {
        self.now = self.now.max(now);
    }

    fn step(&mut self, now: SimTime) -> Vec<BackendEvent> {
        self.set_clock(now);
        let ready: Vec<PodId> = self
            .pods
            .values()
            .filter(|p| {
                p.record.state == PodState::Starting
                    && p.bound_at
                        .is_some_and(|t| t + self.start_latency_s <= self.now)
            })
            .map(|p| p.record.pod_id.clone())
            .collect();
        for id in ready {
            self.transition(&id, PodState::Running);
        }

        let mut queued: Vec<&KubePod> = self
            .pods
            .values()
            .filter(|p| p.record.state == PodState::Queued)
            .collect();
        queued.sort_by_key(|p| {
            (
                std::cmp::Reverse(p.priority.value),
                p.record.submit_time,
                p.record.pod_id.clone(),
            )
        });
        let order: Vec<PodId> = queued
            .into_iter()
            .map(|p| p.record.pod_id.clone())
            .collect();
        for id in order {
            self.schedule_one(&id);
        }

        if self.start_latency_s == 0 {
            let started: Vec<PodId> = self
                .pods
                .values()
                .filter(|p| p.record.state == PodState::Starting)
                .map(|p| p.record.pod_id.clone())
                .collect();
            for id in started {
                self.transition(&id, PodState::Running);
            }
        }
        self.drain_events()
    }

    fn pod_exited(&mut self, pod_id: &PodId, now: SimTime) {
        self.set_clock(now);
        if self.pods.get(pod_id).map(|p| p.record.state) != Some(PodState::Running) {
            return;
        }
        self.transition(pod_id, PodState::Terminating);
        self.release(pod_id);
        self.transition(pod_id, PodState::Succeeded);
    }

    fn set_reachable(&mut self, reachable: bool) {
        self.reachable = reachable;
    }

    fn drain_events(&mut self) -> Vec<BackendEvent> {
        std::mem::take(&mut self.events)
    }

    fn pod(&self, pod_id: &PodId) -> Option<PodRecord> {
        self.pods.get(pod_id).map(|p| p.record.clone())
    }

    fn all_pods(&self) -> Vec<PodRecord> {
        self.pods.values().map(|p| p.record.clone()).collect()
    }

    fn capacity_violations(&self) -> Vec<String> {
        let mut used = vec![Resources::default(); self.nodes.len()];
        for p in self.pods.values().filter(|p| p.holds_resources()) {
            if let Some(node) = &p.record.node_id {
                used[self.node_index(node)] += p.record.spec.resources;
            }
        }
        self.nodes
            .iter()
            .zip(used)
            .filter(|(n, u)| !u.fits_within(&n.capacity))
            .map(|(n, u)| format!("node {} uses {:?} of {:?}", n.node_id, u, n.capacity))
            .collect()
    }

    fn warnings(&self) -> &[String] {
        &[]
    }
}
