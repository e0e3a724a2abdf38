use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};

use super::{GeneratorReport, ProfilerReport};
use crate::error::{Error, Result};
use crate::store::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainTarget {
    Profiler,
    Generator,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrainRequest {
    pub target: RetrainTarget,
    /// Generator only; `None` retrains every configured industry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub industry: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrainResult {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profiler: Option<ProfilerReport>,
    pub generators: Vec<GeneratorReport>,
    /// Industries left out for lack of data.
    pub skipped: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub requests: Vec<RetrainRequest>,
    pub state: JobState,
    /// Logical clock when the job started.
    pub started_at: Timestamp,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<RetrainResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Default)]
struct Board {
    jobs: BTreeMap<String, JobStatus>,
    running: Option<String>,
    issued: u64,
}

/// Job registry with an exclusive lock: at most one job runs.
#[derive(Default)]
pub(super) struct JobBoard {
    board: Mutex<Board>,
    changed: Condvar,
}

impl JobBoard {
    fn lock(&self) -> std::sync::MutexGuard<'_, Board> {
        self.board.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn begin(&self, requests: Vec<RetrainRequest>, now: Timestamp) -> Result<JobStatus> {
        if requests.is_empty() {
            return Err(Error::invalid("target", "nothing to retrain"));
        }
        let mut b = self.lock();
        if let Some(id) = &b.running {
            return Err(Error::Conflict(format!("retrain job {id} is already running")));
        }
        b.issued += 1;
        let job = JobStatus {
            job_id: format!("job{}", b.issued),
            requests,
            state: JobState::Running,
            started_at: now,
            result: None,
            error: None,
        };
        b.running = Some(job.job_id.clone());
        b.jobs.insert(job.job_id.clone(), job.clone());
        Ok(job)
    }

    pub fn finish(&self, job_id: &str, outcome: Result<RetrainResult>) {
        let mut b = self.lock();
        if let Some(job) = b.jobs.get_mut(job_id) {
            match outcome {
                Ok(r) => {
                    job.state = JobState::Succeeded;
                    job.result = Some(r);
                }
                Err(e) => {
                    job.state = JobState::Failed;
                    job.error = Some(e.to_string());
                }
            }
        }
        if b.running.as_deref() == Some(job_id) {
            b.running = None;
        }
        self.changed.notify_all();
    }

    pub fn get(&self, job_id: &str) -> Result<JobStatus> {
        self.lock()
            .jobs
            .get(job_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("job {job_id}")))
    }

    pub fn wait(&self, job_id: &str) -> Result<JobStatus> {
        let mut b = self.lock();
        loop {
            match b.jobs.get(job_id) {
                None => return Err(Error::NotFound(format!("job {job_id}"))),
                Some(j) if j.state != JobState::Running => return Ok(j.clone()),
                Some(_) => b = self.changed.wait(b).unwrap_or_else(|p| p.into_inner()),
            }
        }
    }
}
