use log::info;

use super::resource::{ProducedSuggestion, Resource, ResourceKey, TrialPhase};
use super::store::Mutation;
use super::{trials_of, BackendError, ControlError, ControlPlane, ExecutionBackend};
use crate::model::AssignmentSet;
use crate::suggest::{SuggestionError, SuggestionRequest, TrialObservation};

impl ControlPlane {
    pub fn reconcile_suggestion(
        &self,
        backend: &mut dyn ExecutionBackend,
        key: &ResourceKey,
    ) -> Result<Vec<Mutation>, ControlError> {
        let entry = self.store.get(key).ok_or_else(|| ControlError::NotFound(key.clone()))?;
        let sugg = entry.resource.as_suggestion().expect("suggestion key");
        let ekey = ResourceKey::experiment(&key.namespace, &key.name);
        let exp = self
            .store
            .get(&ekey)
            .and_then(|e| e.resource.as_experiment())
            .ok_or(ControlError::NotFound(ekey))?;
        let spec = &exp.spec;
        let mut next = sugg.clone();

        if exp.status.phase.is_terminal() {
            backend.release_service(&key.name, &key.namespace);
            next.status.service_ready = false;
        } else {
            if !next.status.service_ready {
                match backend.ensure_service(&key.name, &key.namespace, self.config.suggestion_service_cpu) {
                    Ok(ready) => next.status.service_ready = ready,
                    Err(BackendError::Rejected(m)) => next.status.failure = Some(m),
                    Err(e) => return Err(e.into()),
                }
            }
            if next.status.service_ready && next.status.algorithm_state.is_none() {
                match self.registry.fresh_state(spec) {
                    Ok(s) => next.status.algorithm_state = Some(s),
                    Err(e) => next.status.failure = Some(e.to_string()),
                }
            }
            let want = next.spec.requested as usize;
            let have = next.status.produced.len();
            if next.status.service_ready
                && next.status.failure.is_none()
                && !next.status.exhausted
                && have < want
            {
                self.produce(key, spec, &mut next, want - have);
            }
        }

        if next == *sugg {
            return Ok(vec![]);
        }
        Ok(vec![Mutation::Update {
            key: key.clone(),
            expected_generation: entry.generation,
            resource: Resource::Suggestion(next),
        }])
    }

    fn produce(
        &self,
        key: &ResourceKey,
        spec: &crate::model::ExperimentSpec,
        next: &mut super::Suggestion,
        count: usize,
    ) {
        let trials = trials_of(&self.store, &key.namespace, &key.name);
        let mut history = Vec::new();
        for (_, _, t) in &trials {
            match (t.status.phase, t.status.observation) {
                (TrialPhase::Succeeded, Some(v)) => {
                    history.push(TrialObservation::succeeded(t.spec.assignments.clone(), v))
                }
                (TrialPhase::Failed, _) | (TrialPhase::Succeeded, None) => {
                    history.push(TrialObservation::failed(t.spec.assignments.clone()))
                }
                _ => {}
            }
        }
        let pending: Vec<AssignmentSet> = next
            .status
            .produced
            .iter()
            .enumerate()
            .filter(|(i, _)| trials.get(*i).is_none_or(|(_, _, t)| !t.status.phase.is_terminal()))
            .map(|(_, p)| p.assignments.clone())
            .collect();
        let request = SuggestionRequest {
            experiment: spec,
            history: &history,
            pending: &pending,
            count,
        };
        let state = next.status.algorithm_state.as_mut().expect("state initialised");
        match self.registry.get_suggestions(&request, state) {
            Ok(batch) => {
                next.status.produced.extend(batch.assignments.into_iter().map(|assignments| ProducedSuggestion {
                    assignments,
                    consumed: false,
                }));
                next.status.exhausted = batch.exhausted;
            }
            Err(SuggestionError::ExhaustedSearchSpace(_)) => next.status.exhausted = true,
            Err(e) => {
                info!("{key}: suggestions stopped: {e}");
                next.status.failure = Some(e.to_string());
            }
        }
    }
}
