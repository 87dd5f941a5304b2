//! Demand-driven provisioning of self-terminating pilot pods for an
//! HTCondor-style job pool, plus a deterministic simulation of the pool,
//! its workers and two container backends.
//!
//! Data flows one way: the [`provisioner`] polls a job queue and a
//! [`backends::Backend`], clusters idle jobs by resource shape
//! ([`model::cluster_jobs`]) and submits pods for the shortfall. Workers in
//! those pods join the pool, run jobs, and exit on their own after an idle
//! or lifetime limit. The provisioner never deletes anything.

pub mod backends;
pub mod cli;
pub mod expr;
pub mod model;
pub mod poolsim;
pub mod provisioner;
