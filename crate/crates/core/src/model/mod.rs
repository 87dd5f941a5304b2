//! Jobs, clusters of jobs, pod specs and the provisioner configuration.

mod config;
pub(crate) mod ini;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::expr::{AttrBag, Value};

pub use config::{
    parse_config, ConfigError, ProvisionerConfig, DEFAULT_CLUSTER_KEY_ATTRS, DEFAULT_MAX_IDLE_S,
    DEFAULT_MAX_LIFETIME_S, DEFAULT_POLL_INTERVAL_S, KNOWN_BACKENDS,
};

/// Virtual seconds.
pub type SimTime = u64;

pub const ATTR_REQUEST_CPUS: &str = "RequestCpus";
pub const ATTR_REQUEST_MEMORY: &str = "RequestMemory";
pub const ATTR_REQUEST_GPUS: &str = "RequestGpus";
pub const ATTR_JOB_STATUS: &str = "JobStatus";
pub const ATTR_SITE: &str = "GLIDEIN_Site";
pub const ATTR_PROVISIONER_ID: &str = "provisioner_id";

pub const LABEL_PROVISIONER_ID: &str = "provisioner_id";
pub const LABEL_CLUSTER_HASH: &str = "cluster_hash";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("job {job_id}: {msg}")]
    InvalidJob { job_id: String, msg: String },
    #[error("illegal job transition {from:?} -> {to:?}")]
    IllegalTransition { from: JobState, to: JobState },
    #[error("cannot size a pod for cluster {key}: {msg}")]
    Unsizable { key: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Idle,
    Running,
    Completed,
}

impl JobState {
    /// HTCondor `JobStatus` code.
    pub fn status_code(self) -> i64 {
        match self {
            JobState::Idle => 1,
            JobState::Running => 2,
            JobState::Completed => 4,
        }
    }

    pub fn can_transition(self, to: JobState) -> bool {
        matches!(
            (self, to),
            (JobState::Idle, JobState::Running)
                | (JobState::Running, JobState::Completed)
                | (JobState::Running, JobState::Idle)
        )
    }
}

/// CPU, memory (MiB) and GPU amounts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct Resources {
    pub cpus: u64,
    pub memory_mib: u64,
    pub gpus: u64,
}

impl Resources {
    pub fn new(cpus: u64, memory_mib: u64, gpus: u64) -> Self {
        Resources {
            cpus,
            memory_mib,
            gpus,
        }
    }

    pub fn fits_within(&self, capacity: &Resources) -> bool {
        self.cpus <= capacity.cpus
            && self.memory_mib <= capacity.memory_mib
            && self.gpus <= capacity.gpus
    }

    pub fn saturating_sub(&self, other: &Resources) -> Resources {
        Resources {
            cpus: self.cpus.saturating_sub(other.cpus),
            memory_mib: self.memory_mib.saturating_sub(other.memory_mib),
            gpus: self.gpus.saturating_sub(other.gpus),
        }
    }
}

impl std::ops::Add for Resources {
    type Output = Resources;
    fn add(self, o: Resources) -> Resources {
        Resources {
            cpus: self.cpus + o.cpus,
            memory_mib: self.memory_mib + o.memory_mib,
            gpus: self.gpus + o.gpus,
        }
    }
}

impl std::ops::AddAssign for Resources {
    fn add_assign(&mut self, o: Resources) {
        *self = *self + o;
    }
}

impl std::ops::SubAssign for Resources {
    fn sub_assign(&mut self, o: Resources) {
        *self = self.saturating_sub(&o);
    }
}

/// Reads a positive whole amount from a numeric value; reals round up.
fn whole_amount(v: &Value) -> Option<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Some(*i as u64),
        Value::Real(r) if r.is_finite() && *r >= 0.0 => Some(r.ceil() as u64),
        _ => None,
    }
}

/// One queued job.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobAd {
    pub job_id: String,
    pub attrs: AttrBag,
    pub state: JobState,
    pub submit_time: SimTime,
}

impl JobAd {
    /// Builds an idle job, checking the resource request attributes.
    pub fn new(
        job_id: impl Into<String>,
        attrs: AttrBag,
        submit_time: SimTime,
    ) -> Result<JobAd, ModelError> {
        let job_id = job_id.into();
        let invalid = |msg: String| ModelError::InvalidJob {
            job_id: job_id.clone(),
            msg,
        };
        for (name, min) in [(ATTR_REQUEST_CPUS, 1), (ATTR_REQUEST_MEMORY, 1)] {
            match attrs.get(name).and_then(whole_amount) {
                Some(v) if v >= min => {}
                _ => return Err(invalid(format!("{name} must be a number >= {min}"))),
            }
        }
        if let Some(g) = attrs.get(ATTR_REQUEST_GPUS) {
            if !g.is_undefined() && whole_amount(g).is_none() {
                return Err(invalid(format!(
                    "{ATTR_REQUEST_GPUS} must be a number >= 0"
                )));
            }
        }
        Ok(JobAd {
            job_id,
            attrs,
            state: JobState::Idle,
            submit_time,
        })
    }

    pub fn request(&self) -> Resources {
        let amount = |name| self.attrs.get(name).and_then(whole_amount).unwrap_or(0);
        Resources {
            cpus: amount(ATTR_REQUEST_CPUS),
            memory_mib: amount(ATTR_REQUEST_MEMORY),
            gpus: amount(ATTR_REQUEST_GPUS),
        }
    }

    pub fn transition(&mut self, to: JobState) -> Result<(), ModelError> {
        if !self.state.can_transition(to) {
            return Err(ModelError::IllegalTransition {
                from: self.state,
                to,
            });
        }
        self.state = to;
        Ok(())
    }
}

/// Projection of a job onto the configured grouping attributes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClusterKey(pub Vec<(String, Value)>);

impl ClusterKey {
    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v)
    }

    /// `[A=1,B="x",C=undefined]`
    pub fn render(&self) -> String {
        self.to_string()
    }

    /// Short stable digest of the rendered key, used as a pod label.
    pub fn hash_label(&self) -> String {
        let digest = Sha256::digest(self.render().as_bytes());
        hex::encode(&digest[..8])
    }
}

impl fmt::Display for ClusterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, (n, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{n}={v}")?;
        }
        f.write_str("]")
    }
}

impl Serialize for ClusterKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

pub fn cluster_key(job: &JobAd, key_attrs: &[String]) -> ClusterKey {
    ClusterKey(
        key_attrs
            .iter()
            .map(|name| {
                let v = job.attrs.get(name).cloned().unwrap_or(Value::Undefined);
                (name.clone(), v)
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JobCluster {
    pub key: ClusterKey,
    pub job_ids: Vec<String>,
    pub idle_count: usize,
}

/// Groups idle jobs by exact cluster key.
///
/// Clusters come out largest first; equal sizes are ordered by rendered
/// key. Member ids keep input order. Jobs that are not idle are skipped.
pub fn cluster_jobs(jobs: &[JobAd], key_attrs: &[String]) -> Vec<JobCluster> {
    let mut index: HashMap<ClusterKey, usize> = HashMap::new();
    let mut clusters: Vec<JobCluster> = Vec::new();
    for job in jobs.iter().filter(|j| j.state == JobState::Idle) {
        let key = cluster_key(job, key_attrs);
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            clusters.push(JobCluster {
                key,
                job_ids: Vec::new(),
                idle_count: 0,
            });
            clusters.len() - 1
        });
        clusters[slot].job_ids.push(job.job_id.clone());
        clusters[slot].idle_count += 1;
    }
    clusters.sort_by_cached_key(|c| (std::cmp::Reverse(c.idle_count), c.key.render()));
    clusters
}

/// Node-affinity constraint. Negated terms forbid `label == value`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AffinityTerm {
    pub key: String,
    pub value: String,
    pub negated: bool,
}

impl AffinityTerm {
    /// Parses `label:value` or `^label:value`.
    pub fn parse(raw: &str) -> Result<AffinityTerm, String> {
        let (negated, body) = match raw.strip_prefix('^') {
            Some(rest) => (true, rest),
            None => (false, raw),
        };
        match body.rsplit_once(':') {
            Some((key, value)) if !key.is_empty() => Ok(AffinityTerm {
                key: key.to_string(),
                value: value.to_string(),
                negated,
            }),
            _ => Err(format!(
                "affinity entry `{raw}` is not of the form [^]label:value"
            )),
        }
    }

    pub fn admits(&self, labels: &BTreeMap<String, String>) -> bool {
        let equal = labels.get(&self.key) == Some(&self.value);
        equal != self.negated
    }
}

/// What the provisioner asks a backend to run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PodSpec {
    pub cluster_key: ClusterKey,
    pub resources: Resources,
    pub image_ref: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub priority_class: Option<String>,
    pub affinity_terms: Vec<AffinityTerm>,
    pub labels: BTreeMap<String, String>,
    pub injected_attrs: AttrBag,
    pub secret_ref: String,
    pub max_lifetime_s: u64,
    pub max_idle_s: u64,
}

impl PodSpec {
    pub fn provisioner_id(&self) -> Option<&str> {
        self.labels.get(LABEL_PROVISIONER_ID).map(String::as_str)
    }

    pub fn cluster_hash(&self) -> Option<&str> {
        self.labels.get(LABEL_CLUSTER_HASH).map(String::as_str)
    }
}

/// Builds the pod spec serving one cluster.
pub fn pod_spec_for(
    cluster: &JobCluster,
    config: &ProvisionerConfig,
) -> Result<PodSpec, ModelError> {
    let key = &cluster.key;
    let unsizable = |msg: String| ModelError::Unsizable {
        key: key.render(),
        msg,
    };
    let required = |name: &str| -> Result<u64, ModelError> {
        match key.get(name) {
            None => Err(unsizable(format!("{name} is not a cluster key attribute"))),
            Some(v) => match whole_amount(v) {
                Some(n) if n >= 1 => Ok(n),
                _ => Err(unsizable(format!("{name} is {v}"))),
            },
        }
    };
    let cpus = required(ATTR_REQUEST_CPUS)?;
    let memory_mib = required(ATTR_REQUEST_MEMORY)?;
    let gpus = match key.get(ATTR_REQUEST_GPUS) {
        None | Some(Value::Undefined) => 0,
        Some(v) => {
            whole_amount(v).ok_or_else(|| unsizable(format!("{ATTR_REQUEST_GPUS} is {v}")))?
        }
    };

    let mut injected_attrs = AttrBag::new();
    for (name, value) in &key.0 {
        injected_attrs.insert(name.clone(), value.clone());
    }
    injected_attrs.insert(ATTR_PROVISIONER_ID, config.provisioner_id.clone());
    if let Some(site) = &config.site_name {
        injected_attrs.insert(ATTR_SITE, site.clone());
    }

    let mut labels = BTreeMap::new();
    labels.insert(
        LABEL_PROVISIONER_ID.to_string(),
        config.provisioner_id.clone(),
    );
    labels.insert(LABEL_CLUSTER_HASH.to_string(), key.hash_label());

    Ok(PodSpec {
        cluster_key: key.clone(),
        resources: Resources {
            cpus,
            memory_mib,
            gpus,
        },
        image_ref: config.image_ref.clone(),
        priority_class: config.priority_class.clone(),
        affinity_terms: config.affinity_terms(),
        labels,
        injected_attrs,
        secret_ref: config.secret_ref.clone(),
        max_lifetime_s: config.max_lifetime_s,
        max_idle_s: config.max_idle_s,
    })
}

#[cfg(test)]
mod tests;
