use std::fmt::Write as _;

use thiserror::Error;

use super::ini;
use super::AffinityTerm;
use crate::expr::{self, Expr, ParseError};

pub const DEFAULT_POLL_INTERVAL_S: u64 = 60;
pub const DEFAULT_MAX_LIFETIME_S: u64 = 86_400;
pub const DEFAULT_MAX_IDLE_S: u64 = 1_200;
pub const DEFAULT_MAX_SUBMIT_PODS_PER_CLUSTER: u32 = 100;
pub const DEFAULT_CLUSTER_KEY_ATTRS: [&str; 3] = ["RequestCpus", "RequestMemory", "RequestGpus"];
pub const DEFAULT_PROVISIONER_ID: &str = "podprov";
pub const DEFAULT_IMAGE_REF: &str = "opensciencegrid/osgvo-docker-pilot:latest";
pub const DEFAULT_SECRET_REF: &str = "pool-token";
pub const DEFAULT_BACKEND: &str = "simkube";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown section [{section}]")]
    UnknownSection { line: usize, section: String },
    #[error("line {line}: unknown key `{key}` in section [{section}]")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {msg}")]
    InvalidValue {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("line {line}: additional_requirements: {source} in `{text}`")]
    Requirements {
        line: usize,
        text: String,
        source: ParseError,
    },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

impl ConfigError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Syntax { line, .. }
            | ConfigError::UnknownSection { line, .. }
            | ConfigError::UnknownKey { line, .. }
            | ConfigError::DuplicateKey { line, .. }
            | ConfigError::InvalidValue { line, .. }
            | ConfigError::Requirements { line, .. } => Some(*line),
            ConfigError::Validation(_) => None,
        }
    }
}

/// Administrator configuration, loaded once per process.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvisionerConfig {
    pub provisioner_id: String,
    pub poll_interval_s: u64,
    /// Job filter applied at query time. `None` accepts every idle job.
    pub additional_requirements: Option<Expr>,
    pub cluster_key_attrs: Vec<String>,
    pub max_submit_pods_per_cluster: u32,
    pub priority_class: Option<String>,
    /// Raw `[^]label:value` entries.
    pub node_affinity_dict: Vec<String>,
    pub image_ref: String,
    pub secret_ref: String,
    pub max_lifetime_s: u64,
    pub max_idle_s: u64,
    pub backend_name: String,
    /// Site name advertised by workers as `GLIDEIN_Site`.
    pub site_name: Option<String>,
    /// Token name the pool accepts from registering workers.
    pub pool_token_name: String,
}

impl Default for ProvisionerConfig {
    fn default() -> Self {
        ProvisionerConfig {
            provisioner_id: DEFAULT_PROVISIONER_ID.into(),
            poll_interval_s: DEFAULT_POLL_INTERVAL_S,
            additional_requirements: None,
            cluster_key_attrs: DEFAULT_CLUSTER_KEY_ATTRS.map(String::from).to_vec(),
            max_submit_pods_per_cluster: DEFAULT_MAX_SUBMIT_PODS_PER_CLUSTER,
            priority_class: None,
            node_affinity_dict: Vec::new(),
            image_ref: DEFAULT_IMAGE_REF.into(),
            secret_ref: DEFAULT_SECRET_REF.into(),
            max_lifetime_s: DEFAULT_MAX_LIFETIME_S,
            max_idle_s: DEFAULT_MAX_IDLE_S,
            backend_name: DEFAULT_BACKEND.into(),
            site_name: None,
            pool_token_name: DEFAULT_SECRET_REF.into(),
        }
    }
}

const KNOWN: &[(&str, &[&str])] = &[
    ("HTCondor", &["additional_requirements"]),
    (
        "k8s",
        &[
            "node_affinity_dict",
            "priority_class",
            "max_submit_pods_per_cluster",
            "image_ref",
            "secret_ref",
        ],
    ),
    (
        "provisioner",
        &[
            "provisioner_id",
            "poll_interval_s",
            "cluster_key_attrs",
            "max_lifetime_s",
            "max_idle_s",
            "backend_name",
            "site_name",
        ],
    ),
    ("pool", &["token_name"]),
];

fn positive<T: std::str::FromStr + PartialOrd + Default>(
    entry: &ini::Entry,
) -> Result<T, ConfigError> {
    match entry.value.parse::<T>() {
        Ok(v) if v > T::default() => Ok(v),
        Ok(_) => Err(ConfigError::InvalidValue {
            line: entry.line,
            key: entry.key.clone(),
            msg: "must be at least 1".into(),
        }),
        Err(_) => Err(ConfigError::InvalidValue {
            line: entry.line,
            key: entry.key.clone(),
            msg: format!("`{}` is not a non-negative integer", entry.value),
        }),
    }
}

fn non_empty(entry: &ini::Entry) -> Result<String, ConfigError> {
    if entry.value.is_empty() {
        return Err(ConfigError::InvalidValue {
            line: entry.line,
            key: entry.key.clone(),
            msg: "must not be empty".into(),
        });
    }
    Ok(entry.value.clone())
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
}

pub const KNOWN_BACKENDS: [&str; 2] = ["simkube", "simlancium"];

/// Parses and validates a configuration file.
pub fn parse_config(text: &str) -> Result<ProvisionerConfig, ConfigError> {
    let sections = ini::parse(text).map_err(|e| ConfigError::Syntax {
        line: e.line,
        msg: e.msg,
    })?;
    let mut cfg = ProvisionerConfig::default();
    let mut seen: Vec<(String, String)> = Vec::new();
    for section in &sections {
        let Some((_, keys)) = KNOWN.iter().find(|(name, _)| *name == section.name) else {
            return Err(ConfigError::UnknownSection {
                line: section.line,
                section: section.name.clone(),
            });
        };
        for entry in &section.entries {
            if !keys.contains(&entry.key.as_str()) {
                return Err(ConfigError::UnknownKey {
                    line: entry.line,
                    section: section.name.clone(),
                    key: entry.key.clone(),
                });
            }
            let id = (section.name.clone(), entry.key.clone());
            if seen.contains(&id) {
                return Err(ConfigError::DuplicateKey {
                    line: entry.line,
                    key: entry.key.clone(),
                });
            }
            seen.push(id);
            apply(&mut cfg, entry)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply(cfg: &mut ProvisionerConfig, entry: &ini::Entry) -> Result<(), ConfigError> {
    let v = entry.value.as_str();
    match entry.key.as_str() {
        "additional_requirements" => {
            cfg.additional_requirements = if v.is_empty() {
                None
            } else {
                Some(expr::parse(v).map_err(|source| ConfigError::Requirements {
                    line: entry.line,
                    text: v.to_string(),
                    source,
                })?)
            };
        }
        "node_affinity_dict" => {
            let entries: Vec<String> = split_list(v).map(String::from).collect();
            for raw in &entries {
                AffinityTerm::parse(raw).map_err(|msg| ConfigError::InvalidValue {
                    line: entry.line,
                    key: entry.key.clone(),
                    msg,
                })?;
            }
            cfg.node_affinity_dict = entries;
        }
        "priority_class" => cfg.priority_class = (!v.is_empty()).then(|| v.to_string()),
        "max_submit_pods_per_cluster" => cfg.max_submit_pods_per_cluster = positive(entry)?,
        "image_ref" => cfg.image_ref = non_empty(entry)?,
        "secret_ref" => cfg.secret_ref = non_empty(entry)?,
        "provisioner_id" => cfg.provisioner_id = non_empty(entry)?,
        "poll_interval_s" => cfg.poll_interval_s = positive(entry)?,
        "cluster_key_attrs" => {
            let attrs: Vec<String> = split_list(v).map(String::from).collect();
            if attrs.is_empty() {
                return Err(ConfigError::InvalidValue {
                    line: entry.line,
                    key: entry.key.clone(),
                    msg: "at least one attribute is required".into(),
                });
            }
            if let Some(bad) = attrs.iter().find(|a| !expr::is_valid_attr_name(a)) {
                return Err(ConfigError::InvalidValue {
                    line: entry.line,
                    key: entry.key.clone(),
                    msg: format!("`{bad}` is not a valid attribute name"),
                });
            }
            cfg.cluster_key_attrs = attrs;
        }
        "max_lifetime_s" => cfg.max_lifetime_s = positive(entry)?,
        "max_idle_s" => cfg.max_idle_s = positive(entry)?,
        "backend_name" => cfg.backend_name = non_empty(entry)?,
        "site_name" => cfg.site_name = (!v.is_empty()).then(|| v.to_string()),
        "token_name" => cfg.pool_token_name = non_empty(entry)?,
        other => unreachable!("key `{other}` listed as known but not handled"),
    }
    Ok(())
}

impl ProvisionerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Validation(msg));
        if self.poll_interval_s == 0 {
            return fail("poll_interval_s must be > 0".into());
        }
        if self.max_submit_pods_per_cluster == 0 {
            return fail("max_submit_pods_per_cluster must be >= 1".into());
        }
        if self.max_idle_s == 0 || self.max_lifetime_s <= self.max_idle_s {
            return fail(format!(
                "need max_lifetime_s > max_idle_s > 0, got {} and {}",
                self.max_lifetime_s, self.max_idle_s
            ));
        }
        if !KNOWN_BACKENDS.contains(&self.backend_name.as_str()) {
            return fail(format!(
                "backend_name `{}` is not one of {}",
                self.backend_name,
                KNOWN_BACKENDS.join(", ")
            ));
        }
        if self.cluster_key_attrs.is_empty() {
            return fail("cluster_key_attrs must not be empty".into());
        }
        for raw in &self.node_affinity_dict {
            AffinityTerm::parse(raw).map_err(ConfigError::Validation)?;
        }
        Ok(())
    }

    pub fn affinity_terms(&self) -> Vec<AffinityTerm> {
        self.node_affinity_dict
            .iter()
            .filter_map(|raw| AffinityTerm::parse(raw).ok())
            .collect()
    }

    /// Normalized file form; `parse_config(&cfg.render())` yields `cfg`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("[HTCondor]\n");
        if let Some(req) = &self.additional_requirements {
            let _ = writeln!(out, "additional_requirements = {req}");
        }
        out.push_str("\n[k8s]\n");
        if !self.node_affinity_dict.is_empty() {
            let _ = writeln!(
                out,
                "node_affinity_dict = {}",
                self.node_affinity_dict.join(",")
            );
        }
        if let Some(pc) = &self.priority_class {
            let _ = writeln!(out, "priority_class = {pc}");
        }
        let _ = writeln!(
            out,
            "max_submit_pods_per_cluster = {}",
            self.max_submit_pods_per_cluster
        );
        let _ = writeln!(out, "image_ref = {}", self.image_ref);
        let _ = writeln!(out, "secret_ref = {}", self.secret_ref);
        out.push_str("\n[provisioner]\n");
        let _ = writeln!(out, "provisioner_id = {}", self.provisioner_id);
        let _ = writeln!(out, "poll_interval_s = {}", self.poll_interval_s);
        let _ = writeln!(
            out,
            "cluster_key_attrs = {}",
            self.cluster_key_attrs.join(",")
        );
        let _ = writeln!(out, "max_lifetime_s = {}", self.max_lifetime_s);
        let _ = writeln!(out, "max_idle_s = {}", self.max_idle_s);
        let _ = writeln!(out, "backend_name = {}", self.backend_name);
        if let Some(site) = &self.site_name {
            let _ = writeln!(out, "site_name = {site}");
        }
        out.push_str("\n[pool]\n");
        let _ = writeln!(out, "token_name = {}", self.pool_token_name);
        out
    }
}
