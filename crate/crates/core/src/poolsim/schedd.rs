//! The simulated job queue.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::expr::{self, AttrBag, Expr, Overlay, Value};
use crate::model::{JobAd, JobState, ModelError, SimTime, ATTR_JOB_STATUS};
use crate::provisioner::{JobQueue, QueueError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimJob {
    pub ad: JobAd,
    pub duration_s: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worker_id: Option<String>,
    /// Bumped on every dispatch so completions from an earlier, preempted
    /// run can be recognised as stale.
    pub attempt: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started_at: Option<SimTime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completed_at: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct JobCounts {
    pub idle: usize,
    pub running: usize,
    pub completed: usize,
}

impl JobCounts {
    pub fn total(&self) -> usize {
        self.idle + self.running + self.completed
    }
}

#[derive(Debug, Clone)]
pub struct Schedd {
    jobs: BTreeMap<String, SimJob>,
    reachable: bool,
    next_id: u64,
}

impl Default for Schedd {
    fn default() -> Self {
        Self::new()
    }
}

impl Schedd {
    pub fn new() -> Self {
        Schedd {
            jobs: BTreeMap::new(),
            reachable: true,
            next_id: 1,
        }
    }

    pub fn set_reachable(&mut self, reachable: bool) {
        self.reachable = reachable;
    }

    pub fn is_reachable(&self) -> bool {
        self.reachable
    }

    /// Adds an idle job and returns its id.
    pub fn submit(
        &mut self,
        attrs: AttrBag,
        now: SimTime,
        duration_s: u64,
    ) -> Result<String, ModelError> {
        let job_id = format!("job-{:06}", self.next_id);
        let ad = JobAd::new(job_id.clone(), attrs, now)?;
        self.next_id += 1;
        self.jobs.insert(
            job_id.clone(),
            SimJob {
                ad,
                duration_s,
                worker_id: None,
                attempt: 0,
                started_at: None,
                completed_at: None,
            },
        );
        Ok(job_id)
    }

    pub fn job(&self, job_id: &str) -> Option<&SimJob> {
        self.jobs.get(job_id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &SimJob> {
        self.jobs.values()
    }

    pub fn counts(&self) -> JobCounts {
        let mut c = JobCounts::default();
        for j in self.jobs.values() {
            match j.ad.state {
                JobState::Idle => c.idle += 1,
                JobState::Running => c.running += 1,
                JobState::Completed => c.completed += 1,
            }
        }
        c
    }

    /// Idle jobs, oldest first (submit time, then id).
    pub fn idle_by_age(&self) -> Vec<&JobAd> {
        let mut idle: Vec<&JobAd> = self
            .jobs
            .values()
            .map(|j| &j.ad)
            .filter(|ad| ad.state == JobState::Idle)
            .collect();
        idle.sort_by(|a, b| (a.submit_time, &a.job_id).cmp(&(b.submit_time, &b.job_id)));
        idle
    }

    /// Jobs for which `constraint` evaluates to true, by job id. Fails
    /// while the schedd is unreachable.
    pub fn schedd_query(&self, constraint: &Expr) -> Result<Vec<JobAd>, QueueError> {
        if !self.reachable {
            return Err(QueueError::Unreachable);
        }
        Ok(self
            .jobs
            .values()
            .filter(|j| {
                let status = [(ATTR_JOB_STATUS, Value::Integer(j.ad.state.status_code()))];
                let view = Overlay {
                    base: &j.ad.attrs,
                    extra: &status,
                };
                expr::matches(constraint, &view)
            })
            .map(|j| j.ad.clone())
            .collect())
    }

    /// Idle -> Running on `worker_id`. Returns the new attempt number.
    pub fn dispatch(
        &mut self,
        job_id: &str,
        worker_id: &str,
        now: SimTime,
    ) -> Result<u32, ModelError> {
        let job = self.get_mut(job_id)?;
        job.ad.transition(JobState::Running)?;
        job.worker_id = Some(worker_id.to_string());
        job.attempt += 1;
        job.started_at = Some(now);
        Ok(job.attempt)
    }

    pub fn complete(&mut self, job_id: &str, now: SimTime) -> Result<(), ModelError> {
        let job = self.get_mut(job_id)?;
        job.ad.transition(JobState::Completed)?;
        job.completed_at = Some(now);
        Ok(())
    }

    /// Running -> Idle after losing its worker. The original submit time
    /// is kept, so the job stays at the front of the line.
    pub fn requeue(&mut self, job_id: &str) -> Result<(), ModelError> {
        let job = self.get_mut(job_id)?;
        job.ad.transition(JobState::Idle)?;
        job.worker_id = None;
        job.started_at = None;
        Ok(())
    }

    fn get_mut(&mut self, job_id: &str) -> Result<&mut SimJob, ModelError> {
        self.jobs
            .get_mut(job_id)
            .ok_or_else(|| ModelError::InvalidJob {
                job_id: job_id.to_string(),
                msg: "no such job".into(),
            })
    }
}

impl JobQueue for Schedd {
    fn query_jobs(&self, constraint: &Expr) -> Result<Vec<JobAd>, QueueError> {
        self.schedd_query(constraint)
    }
}
