//! Pluggable suggestion algorithms.
//!
//! An algorithm is registered under a name with a fresh-state constructor and
//! a `get_suggestions` implementation. All built-in algorithms refit from the
//! observation history on every call; the only state carried between calls
//! is the count of suggestions already produced (which selects the RNG
//! stream and the grid cursor) and, for Hyperband, the bracket/rung position.

pub mod bayesopt;
pub mod gp;
pub mod grid;
pub mod hyperband;
pub mod random;
pub mod space;
pub mod tpe;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::experiment::{builtin_settings, BAYESIAN_OPTIMIZATION, GRID, HYPERBAND, RANDOM, TPE};
use crate::model::template::BUDGET;
use crate::model::{AcceptedSettings, AlgorithmCatalog, AssignmentSet, ExperimentSpec, ObjectiveType};

pub use hyperband::{HyperbandSchedule, HyperbandState, Rung};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationStatus {
    Succeeded,
    Failed,
}

/// Outcome of one finished trial as seen by an algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialObservation {
    pub assignments: AssignmentSet,
    pub objective_value: Option<f64>,
    pub status: ObservationStatus,
    /// Budget the trial ran with, for budgeted schedulers.
    pub resource_consumed: Option<f64>,
}

impl TrialObservation {
    pub fn succeeded(assignments: AssignmentSet, value: f64) -> Self {
        let resource_consumed = assignments.get(BUDGET).and_then(|b| b.parse().ok());
        Self {
            assignments,
            objective_value: Some(value),
            status: ObservationStatus::Succeeded,
            resource_consumed,
        }
    }

    pub fn failed(assignments: AssignmentSet) -> Self {
        let resource_consumed = assignments.get(BUDGET).and_then(|b| b.parse().ok());
        Self {
            assignments,
            objective_value: None,
            status: ObservationStatus::Failed,
            resource_consumed,
        }
    }

    /// Objective in minimisation sense; `None` for failed trials.
    pub fn loss(&self, kind: ObjectiveType) -> Option<f64> {
        match (self.status, self.objective_value) {
            (ObservationStatus::Succeeded, Some(v)) => Some(match kind {
                ObjectiveType::Minimize => v,
                ObjectiveType::Maximize => -v,
            }),
            _ => None,
        }
    }
}

pub struct SuggestionRequest<'a> {
    pub experiment: &'a ExperimentSpec,
    /// Finished trials.
    pub history: &'a [TrialObservation],
    /// Suggestions already handed out whose trials have not finished.
    pub pending: &'a [AssignmentSet],
    pub count: usize,
}

impl SuggestionRequest<'_> {
    /// Succeeded observations as (assignments, loss).
    pub fn losses(&self) -> Vec<(&AssignmentSet, f64)> {
        let kind = self.experiment.objective.kind;
        self.history
            .iter()
            .filter_map(|o| o.loss(kind).map(|l| (&o.assignments, l)))
            .collect()
    }
}

/// Per-experiment algorithm state persisted in the suggestion resource.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AlgorithmState {
    pub algorithm: String,
    /// Suggestions produced so far.
    pub cursor: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperband: Option<HyperbandState>,
    /// Free-form state for plugin algorithms.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub data: BTreeMap<String, String>,
}

impl AlgorithmState {
    pub fn fresh(algorithm: &str) -> Self {
        Self {
            algorithm: algorithm.to_string(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SuggestionBatch {
    pub assignments: Vec<AssignmentSet>,
    /// No further suggestions will ever be produced.
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SuggestionError {
    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error("search space exhausted after {0} suggestions")]
    ExhaustedSearchSpace(u64),
    #[error("state belongs to algorithm `{found}`, expected `{expected}`")]
    IncompatibleState { expected: String, found: String },
    #[error("observation for {0} lacks a consumed resource")]
    MissingResource(String),
    #[error("invalid setting: {0}")]
    InvalidSetting(String),
    #[error("algorithm `{algorithm}` produced an infeasible assignment: {assignment}")]
    Infeasible { algorithm: String, assignment: String },
}

/// A suggestion algorithm.
pub trait SuggestionService: Send + Sync {
    fn name(&self) -> &str;

    fn accepted_settings(&self) -> AcceptedSettings {
        AcceptedSettings::Only(vec!["random_state".to_string()])
    }

    fn fresh_state(&self, _experiment: &ExperimentSpec) -> AlgorithmState {
        AlgorithmState::fresh(self.name())
    }

    /// Extra assignment names appended after the declared parameters.
    fn extra_assignments(&self) -> &'static [&'static str] {
        &[]
    }

    fn get_suggestions(
        &self,
        request: &SuggestionRequest<'_>,
        state: &mut AlgorithmState,
    ) -> Result<SuggestionBatch, SuggestionError>;
}

/// Name → algorithm table.
#[derive(Clone)]
pub struct AlgorithmRegistry {
    services: BTreeMap<String, Arc<dyn SuggestionService>>,
}

impl Default for AlgorithmRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl AlgorithmRegistry {
    pub fn empty() -> Self {
        Self {
            services: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(random::RandomSearch));
        r.register(Arc::new(grid::GridSearch));
        r.register(Arc::new(bayesopt::BayesianOptimization::default()));
        r.register(Arc::new(tpe::Tpe::default()));
        r.register(Arc::new(hyperband::Hyperband));
        r
    }

    pub fn register(&mut self, service: Arc<dyn SuggestionService>) {
        self.services.insert(service.name().to_string(), service);
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn SuggestionService>> {
        self.services.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.services.keys().map(String::as_str)
    }

    pub fn fresh_state(&self, experiment: &ExperimentSpec) -> Result<AlgorithmState, SuggestionError> {
        let name = &experiment.algorithm.algorithm_name;
        let service = self
            .get(name)
            .ok_or_else(|| SuggestionError::UnknownAlgorithm(name.clone()))?;
        Ok(service.fresh_state(experiment))
    }

    /// Dispatches to the experiment's algorithm and checks feasibility of
    /// everything it returns.
    pub fn get_suggestions(
        &self,
        request: &SuggestionRequest<'_>,
        state: &mut AlgorithmState,
    ) -> Result<SuggestionBatch, SuggestionError> {
        let name = &request.experiment.algorithm.algorithm_name;
        let service = self
            .get(name)
            .ok_or_else(|| SuggestionError::UnknownAlgorithm(name.clone()))?;
        if &state.algorithm != name {
            return Err(SuggestionError::IncompatibleState {
                expected: name.clone(),
                found: state.algorithm.clone(),
            });
        }
        let mut next = state.clone();
        let batch = service.get_suggestions(request, &mut next)?;
        let params = &request.experiment.parameters;
        let extras = service.extra_assignments();
        for set in &batch.assignments {
            if !space::is_feasible(params, set, extras) {
                return Err(SuggestionError::Infeasible {
                    algorithm: name.clone(),
                    assignment: set.to_string(),
                });
            }
        }
        *state = next;
        Ok(batch)
    }
}

impl AlgorithmCatalog for AlgorithmRegistry {
    fn accepted_settings(&self, algorithm: &str) -> Option<AcceptedSettings> {
        match builtin_settings(algorithm) {
            Some(keys) if self.services.contains_key(algorithm) => Some(AcceptedSettings::Only(
                keys.iter().map(|k| k.to_string()).collect(),
            )),
            _ => self.get(algorithm).map(|s| s.accepted_settings()),
        }
    }
}

/// Built-in algorithm names.
pub const BUILTIN: [&str; 5] = [RANDOM, GRID, BAYESIAN_OPTIMIZATION, TPE, HYPERBAND];

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Base seed of an experiment: `random_state` when set, else derived from
/// the experiment key.
pub fn experiment_seed(experiment: &ExperimentSpec) -> u64 {
    experiment
        .algorithm
        .random_state()
        .unwrap_or_else(|| fnv1a(experiment.key().as_bytes()))
}

/// RNG for the call that starts at `cursor` suggestions.
pub fn rng_for(experiment: &ExperimentSpec, cursor: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(experiment_seed(experiment));
    rng.set_stream(cursor);
    rng
}

/// Tracks assignment sets already handed out so callers can avoid repeats.
pub(crate) struct SeenSets {
    seen: HashSet<AssignmentSet>,
}

/// Redraws allowed before a duplicate is accepted.
pub(crate) const DUPLICATE_RETRIES: usize = 10;

impl SeenSets {
    pub(crate) fn from_request(request: &SuggestionRequest<'_>) -> Self {
        let mut seen: HashSet<AssignmentSet> = request
            .history
            .iter()
            .map(|o| o.assignments.clone())
            .collect();
        seen.extend(request.pending.iter().cloned());
        Self { seen }
    }

    pub(crate) fn contains(&self, set: &AssignmentSet) -> bool {
        self.seen.contains(set)
    }

    pub(crate) fn insert(&mut self, set: AssignmentSet) {
        self.seen.insert(set);
    }

    /// Draws until an unseen set appears or retries run out.
    pub(crate) fn draw_fresh(&mut self, mut draw: impl FnMut() -> AssignmentSet) -> AssignmentSet {
        let mut candidate = draw();
        for _ in 0..DUPLICATE_RETRIES {
            if !self.contains(&candidate) {
                break;
            }
            candidate = draw();
        }
        self.insert(candidate.clone());
        candidate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Assignment, ParameterSpec};

    pub(crate) fn experiment(algorithm: &str, params: Vec<ParameterSpec>) -> ExperimentSpec {
        let mut e = crate::testing::sphere_experiment("exp", "ns", params, 10, 2);
        e.algorithm.algorithm_name = algorithm.to_string();
        e
    }

    #[test]
    fn single_choice_space_yields_only_point() {
        let e = experiment(RANDOM, vec![ParameterSpec::categorical("optimizer", &["sgd"])]);
        let reg = AlgorithmRegistry::default();
        let mut st = reg.fresh_state(&e).unwrap();
        let req = SuggestionRequest { experiment: &e, history: &[], pending: &[], count: 1 };
        let b = reg.get_suggestions(&req, &mut st).unwrap();
        assert_eq!(b.assignments, vec![AssignmentSet::new(vec![Assignment::new("optimizer", "sgd")])]);
    }

    #[test]
    fn repeated_request_is_identical() {
        let mut e = experiment(
            RANDOM,
            vec![ParameterSpec::double("lr", 0.0, 1.0), ParameterSpec::int("layers", 1, 5)],
        );
        e.algorithm = e.algorithm.with_setting("random_state", crate::model::SettingValue::Int(10));
        let reg = AlgorithmRegistry::default();
        let req = SuggestionRequest { experiment: &e, history: &[], pending: &[], count: 2 };
        let mut s1 = reg.fresh_state(&e).unwrap();
        let mut s2 = reg.fresh_state(&e).unwrap();
        let a = reg.get_suggestions(&req, &mut s1).unwrap();
        let b = reg.get_suggestions(&req, &mut s2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.assignments.len(), 2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn incompatible_state_is_rejected() {
        let e = experiment(RANDOM, vec![ParameterSpec::double("lr", 0.0, 1.0)]);
        let reg = AlgorithmRegistry::default();
        let mut st = AlgorithmState::fresh(GRID);
        let req = SuggestionRequest { experiment: &e, history: &[], pending: &[], count: 1 };
        assert!(matches!(
            reg.get_suggestions(&req, &mut st),
            Err(SuggestionError::IncompatibleState { .. })
        ));
    }

    struct Constant;

    impl SuggestionService for Constant {
        fn name(&self) -> &str {
            "constant"
        }
        fn accepted_settings(&self) -> AcceptedSettings {
            AcceptedSettings::Only(vec!["value".into()])
        }
        fn get_suggestions(
            &self,
            request: &SuggestionRequest<'_>,
            state: &mut AlgorithmState,
        ) -> Result<SuggestionBatch, SuggestionError> {
            state.cursor += request.count as u64;
            let set = AssignmentSet::new(vec![Assignment::new("x", "0.5"), Assignment::new("y", "0")]);
            Ok(SuggestionBatch { assignments: vec![set; request.count], exhausted: false })
        }
    }

    #[test]
    fn plugins_register_under_their_name() {
        let mut reg = AlgorithmRegistry::default();
        reg.register(Arc::new(Constant));
        let yaml = crate::testing::sphere_yaml().replace("algorithmName: random", "algorithmName: constant")
            .replace("random_state: 7", "value: 1");
        let e = crate::model::parse_experiment_with(&yaml, &reg).unwrap();
        assert!(crate::model::parse_experiment(&yaml).is_err());
        let mut st = reg.fresh_state(&e).unwrap();
        let req = SuggestionRequest { experiment: &e, history: &[], pending: &[], count: 3 };
        let b = reg.get_suggestions(&req, &mut st).unwrap();
        assert_eq!(b.assignments.len(), 3);
    }
}
