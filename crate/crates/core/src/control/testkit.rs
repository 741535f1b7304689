//! Scripted in-process backend for controller tests.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::backend::{BackendError, ExecutionBackend, JobId, JobRequest, JobState, JobStatus};
use crate::metrics::{format_metric_line, MetricPoint, ObservationStore};
use crate::model::{MetricCollectorKind, RunPayload};
use crate::sim::objective::base_value;

pub(crate) struct FakeJob {
    pub request: JobRequest,
    pub state: JobState,
    pub attempt: u32,
    pub remaining: u32,
    pub log: String,
}

/// Jobs run for `duration` calls to `advance`, then report the noise-free
/// simulated objective once.
pub(crate) struct FakeBackend {
    pub now: u64,
    pub duration: u32,
    pub jobs: BTreeMap<String, FakeJob>,
    pub metrics: Arc<dyn ObservationStore>,
    pub unavailable_submits: u32,
    pub temporary_failures: BTreeSet<String>,
    pub permanent_failures: BTreeSet<String>,
    pub silent: BTreeSet<String>,
    pub services: BTreeSet<String>,
}

impl FakeBackend {
    pub fn new(metrics: Arc<dyn ObservationStore>) -> Self {
        Self {
            now: 0,
            duration: 2,
            jobs: BTreeMap::new(),
            metrics,
            unavailable_submits: 0,
            temporary_failures: BTreeSet::new(),
            permanent_failures: BTreeSet::new(),
            silent: BTreeSet::new(),
            services: BTreeSet::new(),
        }
    }

    pub fn advance(&mut self) {
        self.now += 1;
        for (id, job) in self.jobs.iter_mut() {
            let name = &job.request.run.trial_name;
            match job.state {
                JobState::Pending => job.state = JobState::Running,
                JobState::Running => {
                    job.remaining = job.remaining.saturating_sub(1);
                    if self.temporary_failures.remove(name) {
                        job.state = JobState::Failed { temporary: true, reason: "worker killed".into() };
                        continue;
                    }
                    if self.permanent_failures.contains(name) {
                        job.state = JobState::Failed { temporary: false, reason: "invalid image".into() };
                        continue;
                    }
                    if job.remaining == 0 {
                        if !self.silent.contains(name) {
                            let RunPayload::Simulated(obj) = &job.request.run.resolved_payload else {
                                panic!("fake backend runs simulated payloads only");
                            };
                            let v = base_value(obj, &job.request.run.parameter_assignments).unwrap();
                            let metric = &job.request.metric_names[0];
                            match job.request.collector {
                                MetricCollectorKind::Push => self
                                    .metrics
                                    .register(&[MetricPoint::new(id, metric, self.now as i64, v)])
                                    .unwrap(),
                                MetricCollectorKind::Pull => {
                                    job.log.push_str(&format_metric_line(self.now as i64, metric, v));
                                    job.log.push('\n');
                                }
                            }
                        }
                        job.state = JobState::Succeeded;
                    }
                }
                _ => {}
            }
        }
    }
}

impl ExecutionBackend for FakeBackend {
    fn now(&self) -> u64 {
        self.now
    }

    fn submit(&mut self, job: &JobRequest) -> Result<(), BackendError> {
        if self.unavailable_submits > 0 {
            self.unavailable_submits -= 1;
            return Err(BackendError::Unavailable("api down".into()));
        }
        if job.run.namespace == "missing" {
            return Err(BackendError::Rejected("unknown namespace missing".into()));
        }
        self.jobs.entry(job.id().as_str().to_string()).or_insert_with(|| FakeJob {
            request: job.clone(),
            state: JobState::Pending,
            attempt: 0,
            remaining: self.duration,
            log: String::new(),
        });
        Ok(())
    }

    fn status(&self, job: &JobId) -> Option<JobStatus> {
        self.jobs.get(job.as_str()).map(|j| JobStatus { state: j.state.clone(), attempt: j.attempt })
    }

    fn restart(&mut self, job: &JobId, attempt: u32) -> Result<(), BackendError> {
        let j = self.jobs.get_mut(job.as_str()).ok_or_else(|| BackendError::Rejected("no job".into()))?;
        if j.attempt < attempt {
            j.attempt = attempt;
            j.state = JobState::Pending;
        }
        Ok(())
    }

    fn cancel(&mut self, job: &JobId) -> Result<(), BackendError> {
        if let Some(j) = self.jobs.get_mut(job.as_str()) {
            j.state = JobState::Cancelled;
        }
        Ok(())
    }

    fn logs(&self, job: &JobId) -> Option<String> {
        self.jobs.get(job.as_str()).map(|j| j.log.clone())
    }

    fn ensure_service(&mut self, experiment: &str, namespace: &str, _cpu: f64) -> Result<bool, BackendError> {
        self.services.insert(format!("{namespace}/{experiment}"));
        Ok(true)
    }

    fn release_service(&mut self, experiment: &str, namespace: &str) {
        self.services.remove(&format!("{namespace}/{experiment}"));
    }
}
