//! Reconciling controllers over a shared resource store.
//!
//! Each controller reads the current store, talks to the execution backend
//! if it must, and returns the store mutations that move its resource
//! towards the desired state. Mutations are applied atomically with
//! generation checks; a reconcile that finds nothing to do returns none.

pub mod backend;
mod experiment;
pub mod resource;
pub mod store;
mod suggestion;
mod trial;

use std::sync::Arc;

use log::{debug, warn};
use thiserror::Error;

use crate::metrics::{ObservationStore, StoreError as MetricsError};
use crate::model::ExperimentSpec;
use crate::suggest::AlgorithmRegistry;

pub use backend::{BackendError, ExecutionBackend, JobId, JobRequest, JobState, JobStatus};
pub use resource::{
    trial_name, Experiment, ExperimentPhase, ExperimentStatus, Kind, OptimalTrial, ProducedSuggestion,
    Resource, ResourceKey, Suggestion, SuggestionSpec, SuggestionStatus, Trial, TrialPhase, TrialSpec,
    TrialStatus, REASON_EXPERIMENT_TERMINATED, REASON_METRICS_UNAVAILABLE,
};
pub use store::{Entry, Mutation, ResourceStore, StoreError};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{0} not found")]
    NotFound(ResourceKey),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    /// Injected by tests to simulate a controller crash.
    #[error("controller crashed")]
    Crashed,
}

impl ControlError {
    /// Errors a later pass may resolve.
    pub fn is_transient(&self) -> bool {
        match self {
            ControlError::Store(StoreError::Conflict { .. }) => true,
            ControlError::Metrics(e) => e.is_retryable(),
            ControlError::Backend(BackendError::Unavailable(_)) => true,
            ControlError::NotFound(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControlConfig {
    /// CPU reserved by each experiment's suggestion service.
    pub suggestion_service_cpu: f64,
    /// First submit retry delay in backend time units; doubles per failure.
    pub submit_backoff: u64,
    /// Upper bound on passes per `settle`.
    pub max_passes: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            suggestion_service_cpu: 0.5,
            submit_backoff: 1,
            max_passes: 64,
        }
    }
}

pub struct ControlPlane {
    store: ResourceStore,
    registry: AlgorithmRegistry,
    metrics: Arc<dyn ObservationStore>,
    config: ControlConfig,
    commits: u64,
    crash_at: Option<u64>,
}

impl ControlPlane {
    pub fn new(
        store: ResourceStore,
        registry: AlgorithmRegistry,
        metrics: Arc<dyn ObservationStore>,
        config: ControlConfig,
    ) -> Self {
        Self {
            store,
            registry,
            metrics,
            config,
            commits: 0,
            crash_at: None,
        }
    }

    pub fn store(&self) -> &ResourceStore {
        &self.store
    }

    pub fn registry(&self) -> &AlgorithmRegistry {
        &self.registry
    }

    pub fn metrics(&self) -> &Arc<dyn ObservationStore> {
        &self.metrics
    }

    pub fn config(&self) -> &ControlConfig {
        &self.config
    }

    /// Makes the commit with this sequence number fail with `Crashed`
    /// before touching the store.
    pub fn crash_at_commit(&mut self, commit: u64) {
        self.crash_at = Some(commit);
    }

    pub fn commits(&self) -> u64 {
        self.commits
    }

    /// Admits a new experiment in the Created phase.
    pub fn submit(&mut self, spec: ExperimentSpec) -> Result<ResourceKey, ControlError> {
        spec.validate_with(&self.registry)
            .map_err(|e| ControlError::Invalid(e.to_string()))?;
        let key = ResourceKey::experiment(&spec.namespace, &spec.name);
        self.store.create(
            key.clone(),
            Resource::Experiment(Box::new(Experiment {
                spec,
                status: ExperimentStatus::default(),
            })),
        )?;
        self.store.flush()?;
        Ok(key)
    }

    fn commit(&mut self, batch: &[Mutation]) -> Result<(), ControlError> {
        if self.crash_at == Some(self.commits) {
            return Err(ControlError::Crashed);
        }
        self.store.apply(batch)?;
        self.store.flush()?;
        self.commits += 1;
        Ok(())
    }

    /// Dispatches one reconcile by resource kind.
    pub fn reconcile(
        &self,
        backend: &mut dyn ExecutionBackend,
        key: &ResourceKey,
    ) -> Result<Vec<Mutation>, ControlError> {
        match key.kind {
            Kind::Experiment => self.reconcile_experiment(key),
            Kind::Suggestion => self.reconcile_suggestion(backend, key),
            Kind::Trial => self.reconcile_trial(backend, key),
        }
    }

    /// One round-robin pass over every resource; returns the number of
    /// committed batches.
    pub fn step(&mut self, backend: &mut dyn ExecutionBackend) -> Result<usize, ControlError> {
        let mut applied = 0;
        for key in self.store.keys() {
            match self.reconcile(backend, &key) {
                Ok(batch) if batch.is_empty() => {}
                Ok(batch) => match self.commit(&batch) {
                    Ok(()) => applied += 1,
                    Err(e) if e.is_transient() => debug!("{key}: {e}; retrying next pass"),
                    Err(e) => return Err(e),
                },
                Err(e) if e.is_transient() => debug!("{key}: {e}; retrying next pass"),
                Err(e) => {
                    warn!("{key}: {e}");
                    return Err(e);
                }
            }
        }
        Ok(applied)
    }

    /// Passes until one commits nothing or the pass cap is hit.
    pub fn settle(&mut self, backend: &mut dyn ExecutionBackend) -> Result<usize, ControlError> {
        let mut total = 0;
        for _ in 0..self.config.max_passes {
            let n = self.step(backend)?;
            total += n;
            if n == 0 {
                break;
            }
        }
        Ok(total)
    }

    pub fn experiments(&self) -> Vec<(ResourceKey, &Experiment)> {
        self.store
            .iter_kind(Kind::Experiment)
            .filter_map(|(k, e)| e.resource.as_experiment().map(|x| (k.clone(), x)))
            .collect()
    }

    pub fn experiment(&self, namespace: &str, name: &str) -> Option<&Experiment> {
        self.store
            .get(&ResourceKey::experiment(namespace, name))
            .and_then(|e| e.resource.as_experiment())
    }

    pub fn suggestion(&self, namespace: &str, name: &str) -> Option<&Suggestion> {
        self.store
            .get(&ResourceKey::suggestion(namespace, name))
            .and_then(|e| e.resource.as_suggestion())
    }

    /// Trials of one experiment in spawn order.
    pub fn trials(&self, namespace: &str, experiment: &str) -> Vec<(String, &Trial)> {
        trials_of(&self.store, namespace, experiment)
            .into_iter()
            .map(|(k, _, t)| (k.name.clone(), t))
            .collect()
    }

    /// All experiments finished, no trial active and no service held.
    pub fn is_quiescent(&self) -> bool {
        let experiments_done = self
            .experiments()
            .iter()
            .all(|(_, e)| e.status.phase.is_terminal());
        let trials_done = self
            .store
            .iter_kind(Kind::Trial)
            .all(|(_, e)| e.resource.as_trial().is_some_and(|t| t.status.phase.is_terminal()));
        let services_released = self
            .store
            .iter_kind(Kind::Suggestion)
            .all(|(_, e)| e.resource.as_suggestion().is_some_and(|s| !s.status.service_ready));
        experiments_done && trials_done && services_released
    }
}

/// Trials of `experiment` sorted by index, with their generations.
pub(crate) fn trials_of<'a>(
    store: &'a ResourceStore,
    namespace: &str,
    experiment: &str,
) -> Vec<(&'a ResourceKey, u64, &'a Trial)> {
    let mut v: Vec<_> = store
        .iter_kind(Kind::Trial)
        .filter(|(k, _)| k.namespace == namespace)
        .filter_map(|(k, e)| {
            e.resource
                .as_trial()
                .filter(|t| t.spec.experiment == experiment)
                .map(|t| (k, e.generation, t))
        })
        .collect();
    v.sort_by_key(|(_, _, t)| t.spec.index);
    v
}

/// Drives `plane` until every experiment is finished and quiescent, `stop`
/// returns true, or `max_rounds` elapse. `between` runs after each settle,
/// e.g. to advance simulated time or to sleep.
pub fn run_control_loop<B: ExecutionBackend>(
    plane: &mut ControlPlane,
    backend: &mut B,
    stop: &dyn Fn() -> bool,
    max_rounds: u64,
    mut between: impl FnMut(&mut B),
) -> Result<Vec<(ResourceKey, ExperimentStatus)>, ControlError> {
    for _ in 0..max_rounds {
        plane.settle(backend)?;
        if plane.is_quiescent() || stop() {
            break;
        }
        between(backend);
    }
    Ok(plane
        .experiments()
        .into_iter()
        .map(|(k, e)| (k, e.status.clone()))
        .collect())
}

#[cfg(test)]
pub(crate) mod testkit;
