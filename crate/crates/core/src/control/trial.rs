use log::debug;

use super::resource::{
    Resource, ResourceKey, Trial, TrialPhase, REASON_EXPERIMENT_TERMINATED, REASON_METRICS_UNAVAILABLE,
};
use super::store::Mutation;
use super::{BackendError, ControlError, ControlPlane, ExecutionBackend, JobId, JobRequest, JobState};
use crate::metrics::{best_objective, parse_metric_lines, ObservationFilter};
use crate::model::{render_trial_spec, MetricCollectorKind, RestartPolicy};

impl ControlPlane {
    pub fn reconcile_trial(
        &self,
        backend: &mut dyn ExecutionBackend,
        key: &ResourceKey,
    ) -> Result<Vec<Mutation>, ControlError> {
        let entry = self.store.get(key).ok_or_else(|| ControlError::NotFound(key.clone()))?;
        let trial = entry.resource.as_trial().expect("trial key");
        if trial.status.phase.is_terminal() {
            return Ok(vec![]);
        }
        let ekey = ResourceKey::experiment(&key.namespace, &trial.spec.experiment);
        let exp = self
            .store
            .get(&ekey)
            .and_then(|e| e.resource.as_experiment())
            .ok_or(ControlError::NotFound(ekey))?;
        let spec = &exp.spec;
        let name = key.name.as_str();
        let id = JobId::new(&key.namespace, name);
        let mut next = trial.clone();
        let st = &mut next.status;

        if trial.spec.cancel {
            if st.submitted {
                backend.cancel(&id)?;
            }
            st.phase = TrialPhase::Failed;
            st.reason = Some(REASON_EXPERIMENT_TERMINATED.into());
            return Ok(update(key, entry.generation, trial, next));
        }

        let restartable = spec.trial_template.restart_policy == RestartPolicy::OnTemporaryFailure;
        if !st.submitted {
            if st.retry_after.is_some_and(|t| backend.now() < t) {
                return Ok(vec![]);
            }
            let run = match render_trial_spec(&spec.trial_template, &trial.spec.assignments, name, &key.namespace) {
                Ok(run) => run,
                Err(e) => {
                    st.phase = TrialPhase::Failed;
                    st.reason = Some(format!("InvalidTemplate: {e}"));
                    return Ok(update(key, entry.generation, trial, next));
                }
            };
            let job = JobRequest {
                run,
                worker_count: spec.trial_template.worker_count,
                cpu_per_worker: spec.trial_template.cpu_per_worker,
                collector: spec.metric_collector_kind,
                metric_names: spec.objective.all_metric_names(),
                max_resource: (spec.algorithm.algorithm_name == crate::model::experiment::HYPERBAND)
                    .then(|| crate::suggest::HyperbandSchedule::from_experiment(spec).max_resource),
            };
            match backend.submit(&job) {
                Ok(()) => {
                    st.submitted = true;
                    st.phase = TrialPhase::Pending;
                    st.retry_after = None;
                }
                Err(BackendError::Unavailable(m)) => {
                    debug!("{key}: submit failed: {m}");
                    st.phase = TrialPhase::Pending;
                    st.submit_failures += 1;
                    let shift = (st.submit_failures - 1).min(6);
                    st.retry_after = Some(backend.now() + (self.config.submit_backoff << shift));
                }
                Err(BackendError::Rejected(m)) => {
                    st.phase = TrialPhase::Failed;
                    st.reason = Some(m);
                }
            }
            return Ok(update(key, entry.generation, trial, next));
        }

        let Some(job) = backend.status(&id) else {
            // the backend lost the job, e.g. after its own restart
            if restartable {
                st.submitted = false;
                st.restart_count += 1;
                st.phase = TrialPhase::Pending;
            } else {
                st.phase = TrialPhase::Failed;
                st.reason = Some("JobLost".into());
            }
            return Ok(update(key, entry.generation, trial, next));
        };
        if job.attempt > st.restart_count {
            st.restart_count = job.attempt;
        }
        match job.state {
            JobState::Pending => st.phase = TrialPhase::Pending,
            JobState::Running => st.phase = TrialPhase::Running,
            JobState::Succeeded => {
                let watched = spec.objective.all_metric_names();
                if spec.metric_collector_kind == MetricCollectorKind::Pull {
                    let logs = backend.logs(&id).unwrap_or_default();
                    let parsed = parse_metric_lines(&logs, id.as_str(), &watched);
                    if parsed.malformed > 0 {
                        debug!("{key}: {} malformed metric lines", parsed.malformed);
                    }
                    if !parsed.points.is_empty() {
                        self.metrics.register(&parsed.points)?;
                    }
                }
                let points = self.metrics.get(id.as_str(), &ObservationFilter::all())?;
                match best_objective(&points, &spec.objective) {
                    Some(v) => {
                        st.phase = TrialPhase::Succeeded;
                        st.observation = Some(v);
                        for (n, value) in watched.iter().zip(crate::metrics::latest_values(&points, &watched)) {
                            if let Some(value) = value {
                                st.metrics.insert(n.clone(), value);
                            }
                        }
                    }
                    None => {
                        st.phase = TrialPhase::Failed;
                        st.reason = Some(REASON_METRICS_UNAVAILABLE.into());
                    }
                }
            }
            JobState::Failed { temporary: true, .. } if restartable => {
                backend.restart(&id, st.restart_count + 1)?;
                st.restart_count += 1;
                st.phase = TrialPhase::Pending;
            }
            JobState::Failed { reason, .. } => {
                st.phase = TrialPhase::Failed;
                st.reason = Some(reason);
            }
            JobState::Cancelled => {
                st.phase = TrialPhase::Failed;
                st.reason = Some("Cancelled".into());
            }
        }
        Ok(update(key, entry.generation, trial, next))
    }
}

fn update(key: &ResourceKey, generation: u64, old: &Trial, new: Trial) -> Vec<Mutation> {
    if *old == new {
        return vec![];
    }
    vec![Mutation::Update {
        key: key.clone(),
        expected_generation: generation,
        resource: Resource::Trial(new),
    }]
}
