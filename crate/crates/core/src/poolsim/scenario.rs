//! Scenario files: what arrives when, and what the backend looks like.
//!
//! Same INI dialect as the provisioner config. `[scenario]` appears once;
//! `[node]`, `[arrival]`, `[pod_batch]` and `[fault]` may repeat;
//! `[lancium]` describes aggregate capacity for the batch backend.
//! Attributes on arrivals and pod batches are written `attr.Name = literal`;
//! values that are not literals are taken as bare strings.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::backends::NodeSpec;
use crate::expr::{self, AttrBag, Value};
use crate::model::ini::{self, Entry, Section};
use crate::model::{AffinityTerm, Resources, SimTime};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: invalid `{key}`: {msg}")]
    InvalidValue {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("invalid scenario: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    SimKube,
    SimLancium,
}

impl FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "simkube" => Ok(BackendKind::SimKube),
            "simlancium" => Ok(BackendKind::SimLancium),
            other => Err(format!("unknown backend `{other}` (simkube or simlancium)")),
        }
    }
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::SimKube => "simkube",
            BackendKind::SimLancium => "simlancium",
        }
    }
}

/// How long a job runs once dispatched, in whole seconds (at least 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DurationModel {
    Fixed(u64),
    Uniform { min: u64, max: u64 },
    Exponential { mean: f64 },
}

impl DurationModel {
    pub fn is_random(&self) -> bool {
        !matches!(self, DurationModel::Fixed(_))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let secs = match *self {
            DurationModel::Fixed(s) => s,
            DurationModel::Uniform { min, max } => rng.random_range(min..=max),
            DurationModel::Exponential { mean } => {
                let exp = Exp::new(1.0 / mean).expect("mean validated positive");
                exp.sample(rng).ceil() as u64
            }
        };
        secs.max(1)
    }
}

impl FromStr for DurationModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let num = |p: &str| {
            p.parse::<u64>()
                .map_err(|_| format!("`{p}` is not a whole number of seconds"))
        };
        match parts.as_slice() {
            ["fixed", n] => Ok(DurationModel::Fixed(num(n)?)),
            ["uniform", a, b] => {
                let (min, max) = (num(a)?, num(b)?);
                if min > max {
                    return Err(format!("uniform range {min}..{max} is empty"));
                }
                Ok(DurationModel::Uniform { min, max })
            }
            ["exponential", m] => {
                let mean: f64 = m.parse().map_err(|_| format!("`{m}` is not a number"))?;
                if !(mean.is_finite() && mean > 0.0) {
                    return Err("exponential mean must be > 0".into());
                }
                Ok(DurationModel::Exponential { mean })
            }
            _ => Err(format!(
                "`{s}`: expected fixed:N, uniform:MIN:MAX or exponential:MEAN"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalGroup {
    pub time: SimTime,
    pub count: usize,
    pub attrs: AttrBag,
    pub duration: Option<DurationModel>,
}

/// Pods submitted straight to the backend by someone other than the
/// provisioner under test (for example a backfill pilot factory).
#[derive(Debug, Clone, PartialEq)]
pub struct PodBatch {
    pub time: SimTime,
    pub count: usize,
    pub resources: Resources,
    pub priority_class: Option<String>,
    pub provisioner_id: String,
    pub secret_ref: Option<String>,
    pub site: Option<String>,
    pub affinity: Vec<AffinityTerm>,
    pub max_idle_s: Option<u64>,
    pub max_lifetime_s: Option<u64>,
    pub attrs: AttrBag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultTarget {
    Backend,
    Schedd,
}

impl FaultTarget {
    pub fn name(self) -> &'static str {
        match self {
            FaultTarget::Backend => "backend",
            FaultTarget::Schedd => "schedd",
        }
    }
}

/// The target is unreachable during `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultWindow {
    pub target: FaultTarget,
    pub start: SimTime,
    pub end: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub horizon_s: SimTime,
    /// Falls back to the provisioner config's `backend_name` when unset.
    pub backend: Option<BackendKind>,
    pub nodes: Vec<NodeSpec>,
    pub lancium_capacity: Option<Resources>,
    pub start_latency_s: u64,
    pub backend_step_s: u64,
    pub job_duration: DurationModel,
    pub seed: Option<u64>,
    pub arrivals: Vec<ArrivalGroup>,
    pub pod_batches: Vec<PodBatch>,
    pub faults: Vec<FaultWindow>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            horizon_s: 86_400,
            backend: None,
            nodes: Vec::new(),
            lancium_capacity: None,
            start_latency_s: 30,
            backend_step_s: 10,
            job_duration: DurationModel::Fixed(300),
            seed: None,
            arrivals: Vec::new(),
            pod_batches: Vec::new(),
            faults: Vec::new(),
        }
    }
}

impl ScenarioSpec {
    pub fn total_jobs(&self) -> usize {
        self.arrivals.iter().map(|a| a.count).sum()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |m: String| Err(ScenarioError::Validation(m));
        if self.backend_step_s == 0 {
            return fail("backend_step_s must be > 0".into());
        }
        match self.backend {
            Some(BackendKind::SimKube) if self.nodes.is_empty() => {
                return fail("backend simkube needs at least one [node]".into())
            }
            Some(BackendKind::SimLancium) if self.lancium_capacity.is_none() => {
                return fail("backend simlancium needs a [lancium] capacity block".into())
            }
            _ => {}
        }
        let mut ids: Vec<&str> = self.nodes.iter().map(|n| n.node_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return fail(format!("duplicate node id `{}`", w[0]));
        }
        let random = self.job_duration.is_random()
            || self
                .arrivals
                .iter()
                .any(|a| a.duration.is_some_and(|d| d.is_random()));
        if random && self.seed.is_none() {
            return fail("a seed is required when job durations are random".into());
        }
        for a in &self.arrivals {
            if a.time > self.horizon_s {
                return fail(format!("arrival at t={} is past the horizon", a.time));
            }
        }
        for b in &self.pod_batches {
            if b.time > self.horizon_s {
                return fail(format!("pod batch at t={} is past the horizon", b.time));
            }
            if b.resources.cpus == 0 || b.resources.memory_mib == 0 {
                return fail("pod batch needs cpus and memory >= 1".into());
            }
        }
        for f in &self.faults {
            if f.start >= f.end || f.end > self.horizon_s {
                return fail(format!(
                    "fault window [{}, {}) must be non-empty and within the horizon",
                    f.start, f.end
                ));
            }
        }
        Ok(())
    }
}

fn invalid(e: &Entry, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::InvalidValue {
        line: e.line,
        key: e.key.clone(),
        msg: msg.into(),
    }
}

fn num<T: FromStr>(e: &Entry) -> Result<T, ScenarioError> {
    e.value
        .parse()
        .map_err(|_| invalid(e, format!("`{}` is not a valid number", e.value)))
}

fn attr_value(raw: &str) -> Value {
    expr::parse_literal(raw).unwrap_or_else(|| Value::String(raw.to_string()))
}

fn attr_entry(e: &Entry, attrs: &mut AttrBag) -> Result<bool, ScenarioError> {
    let Some(name) = e.key.strip_prefix("attr.") else {
        return Ok(false);
    };
    if !expr::is_valid_attr_name(name) {
        return Err(invalid(
            e,
            format!("`{name}` is not a valid attribute name"),
        ));
    }
    attrs.insert(name, attr_value(&e.value));
    Ok(true)
}

fn unknown(section: &Section, e: &Entry) -> ScenarioError {
    ScenarioError::InvalidValue {
        line: e.line,
        key: e.key.clone(),
        msg: format!("unknown key in [{}]", section.name),
    }
}

fn parse_labels(e: &Entry) -> Result<BTreeMap<String, String>, ScenarioError> {
    let mut labels = BTreeMap::new();
    for item in e.value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let Some((k, v)) = item.rsplit_once(':') else {
            return Err(invalid(e, format!("label `{item}` is not key:value")));
        };
        labels.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(labels)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, ScenarioError> {
    let sections = ini::parse(text).map_err(|e| ScenarioError::Syntax {
        line: e.line,
        msg: e.msg,
    })?;
    let mut spec = ScenarioSpec::default();
    let mut seen_scenario = false;
    for section in &sections {
        match section.name.as_str() {
            "scenario" => {
                if seen_scenario {
                    return Err(ScenarioError::Syntax {
                        line: section.line,
                        msg: "[scenario] appears twice".into(),
                    });
                }
                seen_scenario = true;
                for e in &section.entries {
                    match e.key.as_str() {
                        "horizon_s" => spec.horizon_s = num(e)?,
                        "backend" => {
                            spec.backend = Some(e.value.parse().map_err(|m| invalid(e, m))?)
                        }
                        "start_latency_s" => spec.start_latency_s = num(e)?,
                        "backend_step_s" => spec.backend_step_s = num(e)?,
                        "job_duration" => {
                            spec.job_duration = e.value.parse().map_err(|m| invalid(e, m))?
                        }
                        "seed" => spec.seed = Some(num(e)?),
                        _ => return Err(unknown(section, e)),
                    }
                }
            }
            "node" => {
                let mut id = None;
                let mut count = 1usize;
                let mut cap = Resources::default();
                let mut labels = BTreeMap::new();
                for e in &section.entries {
                    match e.key.as_str() {
                        "id" => id = Some(e.value.clone()),
                        "count" => count = num(e)?,
                        "cpus" => cap.cpus = num(e)?,
                        "memory" => cap.memory_mib = num(e)?,
                        "gpus" => cap.gpus = num(e)?,
                        "labels" => labels = parse_labels(e)?,
                        _ => return Err(unknown(section, e)),
                    }
                }
                let id = id.unwrap_or_else(|| format!("node{}", spec.nodes.len() + 1));
                for i in 1..=count {
                    let node_id = if count == 1 {
                        id.clone()
                    } else {
                        format!("{id}-{i:03}")
                    };
                    spec.nodes.push(NodeSpec {
                        node_id,
                        capacity: cap,
                        labels: labels.clone(),
                    });
                }
            }
            "lancium" => {
                let mut cap = Resources::default();
                for e in &section.entries {
                    match e.key.as_str() {
                        "cpus" => cap.cpus = num(e)?,
                        "memory" => cap.memory_mib = num(e)?,
                        "gpus" => cap.gpus = num(e)?,
                        _ => return Err(unknown(section, e)),
                    }
                }
                spec.lancium_capacity = Some(cap);
            }
            "arrival" => {
                let mut group = ArrivalGroup {
                    time: 0,
                    count: 1,
                    attrs: AttrBag::new(),
                    duration: None,
                };
                for e in &section.entries {
                    if attr_entry(e, &mut group.attrs)? {
                        continue;
                    }
                    match e.key.as_str() {
                        "time" => group.time = num(e)?,
                        "count" => group.count = num(e)?,
                        "duration" => {
                            group.duration = Some(e.value.parse().map_err(|m| invalid(e, m))?)
                        }
                        _ => return Err(unknown(section, e)),
                    }
                }
                spec.arrivals.push(group);
            }
            "pod_batch" => {
                let mut b = PodBatch {
                    time: 0,
                    count: 1,
                    resources: Resources::default(),
                    priority_class: None,
                    provisioner_id: "external".into(),
                    secret_ref: None,
                    site: None,
                    affinity: Vec::new(),
                    max_idle_s: None,
                    max_lifetime_s: None,
                    attrs: AttrBag::new(),
                };
                for e in &section.entries {
                    if attr_entry(e, &mut b.attrs)? {
                        continue;
                    }
                    match e.key.as_str() {
                        "time" => b.time = num(e)?,
                        "count" => b.count = num(e)?,
                        "cpus" => b.resources.cpus = num(e)?,
                        "memory" => b.resources.memory_mib = num(e)?,
                        "gpus" => b.resources.gpus = num(e)?,
                        "priority_class" => b.priority_class = Some(e.value.clone()),
                        "provisioner_id" => b.provisioner_id = e.value.clone(),
                        "secret_ref" => b.secret_ref = Some(e.value.clone()),
                        "site" => b.site = Some(e.value.clone()),
                        "node_affinity" => {
                            b.affinity = e
                                .value
                                .split(',')
                                .map(str::trim)
                                .filter(|s| !s.is_empty())
                                .map(AffinityTerm::parse)
                                .collect::<Result<_, _>>()
                                .map_err(|m| invalid(e, m))?
                        }
                        "max_idle_s" => b.max_idle_s = Some(num(e)?),
                        "max_lifetime_s" => b.max_lifetime_s = Some(num(e)?),
                        _ => return Err(unknown(section, e)),
                    }
                }
                spec.pod_batches.push(b);
            }
            "fault" => {
                let mut target = None;
                let (mut start, mut end) = (None, None);
                for e in &section.entries {
                    match e.key.as_str() {
                        "target" => {
                            target = Some(match e.value.as_str() {
                                "backend" => FaultTarget::Backend,
                                "schedd" => FaultTarget::Schedd,
                                _ => return Err(invalid(e, "expected backend or schedd")),
                            })
                        }
                        "start" => start = Some(num(e)?),
                        "end" => end = Some(num(e)?),
                        _ => return Err(unknown(section, e)),
                    }
                }
                let (Some(target), Some(start), Some(end)) = (target, start, end) else {
                    return Err(ScenarioError::Syntax {
                        line: section.line,
                        msg: "[fault] needs target, start and end".into(),
                    });
                };
                spec.faults.push(FaultWindow { target, start, end });
            }
            other => {
                return Err(ScenarioError::Syntax {
                    line: section.line,
                    msg: format!("unknown section [{other}]"),
                })
            }
        }
    }
    spec.validate()?;
    Ok(spec)
}
