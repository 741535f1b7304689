//! Interface between the trial controller and whatever runs trial jobs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MetricCollectorKind, TrialRunSpec};

/// Trial identity across namespaces, `{namespace}.{trial}`. Both parts are
/// lowercase identifiers without dots, so the id is unambiguous and
/// file-safe. Backends and the observation store key by it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(String);

impl JobId {
    pub fn new(namespace: &str, trial: &str) -> Self {
        JobId(format!("{namespace}.{trial}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn namespace(&self) -> &str {
        self.0.split_once('.').map_or("", |(ns, _)| ns)
    }

    pub fn trial(&self) -> &str {
        self.0.split_once('.').map_or(self.0.as_str(), |(_, t)| t)
    }
}

impl std::fmt::Display for JobId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JobRequest {
    pub run: TrialRunSpec,
    pub worker_count: u32,
    pub cpu_per_worker: f64,
    pub collector: MetricCollectorKind,
    /// Metrics the trial reports.
    pub metric_names: Vec<String>,
    /// Full budget of a budgeted scheduler; the trial's `budget` assignment
    /// is a share of it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_resource: Option<f64>,
}

impl JobRequest {
    pub fn id(&self) -> JobId {
        JobId::new(&self.run.namespace, &self.run.trial_name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum JobState {
    Pending,
    Running,
    Succeeded,
    Failed { temporary: bool, reason: String },
    Cancelled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobStatus {
    pub state: JobState,
    /// Restarts performed so far.
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// Worth retrying later.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("rejected: {0}")]
    Rejected(String),
}

/// An execution backend. Every call is keyed by job id and must be
/// idempotent, since a controller may repeat it after a crash.
pub trait ExecutionBackend {
    /// Current backend time (ticks or milliseconds).
    fn now(&self) -> u64;

    /// Creates the job unless one with this id exists.
    fn submit(&mut self, job: &JobRequest) -> Result<(), BackendError>;

    fn status(&self, job: &JobId) -> Option<JobStatus>;

    /// Re-queues a temporarily failed job as restart number `attempt`;
    /// no-op if the job is already at or past that attempt.
    fn restart(&mut self, job: &JobId, attempt: u32) -> Result<(), BackendError>;

    fn cancel(&mut self, job: &JobId) -> Result<(), BackendError>;

    /// Output of the job's primary worker, for log-parsed metrics.
    fn logs(&self, job: &JobId) -> Option<String>;

    /// Ensures the per-experiment suggestion service holds its resources;
    /// returns whether it is running.
    fn ensure_service(&mut self, experiment: &str, namespace: &str, cpu: f64) -> Result<bool, BackendError>;

    fn release_service(&mut self, experiment: &str, namespace: &str);
}
