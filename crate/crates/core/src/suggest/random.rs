//! Uniform random search.

use rand::Rng;

use super::{
    space, rng_for, AlgorithmState, SeenSets, SuggestionBatch, SuggestionError, SuggestionRequest,
    SuggestionService,
};
use crate::model::{AssignmentSet, ParameterSpec};
use crate::model::experiment::RANDOM;

pub struct RandomSearch;

/// `count` uniform draws, redrawing repeats of `seen` a bounded number of times.
pub(crate) fn random_batch<R: Rng + ?Sized>(
    params: &[ParameterSpec],
    count: usize,
    seen: &mut SeenSets,
    rng: &mut R,
) -> Vec<AssignmentSet> {
    (0..count)
        .map(|_| seen.draw_fresh(|| space::sample_set(params, rng)))
        .collect()
}

impl SuggestionService for RandomSearch {
    fn name(&self) -> &str {
        RANDOM
    }

    fn get_suggestions(
        &self,
        request: &SuggestionRequest<'_>,
        state: &mut AlgorithmState,
    ) -> Result<SuggestionBatch, SuggestionError> {
        let mut rng = rng_for(request.experiment, state.cursor);
        let mut seen = SeenSets::from_request(request);
        let assignments = random_batch(&request.experiment.parameters, request.count, &mut seen, &mut rng);
        state.cursor += assignments.len() as u64;
        Ok(SuggestionBatch {
            assignments,
            exhausted: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParameterSpec, SettingValue};
    use crate::suggest::{AlgorithmRegistry, SuggestionRequest};

    fn mnist_space() -> Vec<ParameterSpec> {
        vec![
            ParameterSpec::double("lr", 0.0, 1.0),
            ParameterSpec::int("batch-size", 10, 1000),
            ParameterSpec::int("num-layers", 1, 5),
            ParameterSpec::categorical("optimizer", &["SGD", "Adam", "FTRL"]),
        ]
    }

    fn run(seed: i64, count: usize) -> Vec<String> {
        let mut e = crate::testing::sphere_experiment("rand", "ns", mnist_space(), 15, 15);
        e.algorithm.algorithm_name = RANDOM.into();
        e.algorithm = e.algorithm.with_setting("random_state", SettingValue::Int(seed));
        let reg = AlgorithmRegistry::default();
        let mut st = reg.fresh_state(&e).unwrap();
        let req = SuggestionRequest { experiment: &e, history: &[], pending: &[], count };
        reg.get_suggestions(&req, &mut st)
            .unwrap()
            .assignments
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn fifteen_samples_in_bounds() {
        let space = mnist_space();
        let mut e = crate::testing::sphere_experiment("rand", "ns", space.clone(), 15, 15);
        e.algorithm.algorithm_name = RANDOM.into();
        let reg = AlgorithmRegistry::default();
        let mut st = reg.fresh_state(&e).unwrap();
        let req = SuggestionRequest { experiment: &e, history: &[], pending: &[], count: 15 };
        let b = reg.get_suggestions(&req, &mut st).unwrap();
        assert_eq!(b.assignments.len(), 15);
        for set in &b.assignments {
            assert!(space::is_feasible(&space, set, &[]));
        }
        assert_eq!(st.cursor, 15);
    }

    #[test]
    fn degenerate_list_always_same() {
        let p = vec![ParameterSpec::categorical("x", &["x"])];
        let mut seen = SeenSets { seen: Default::default() };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        for s in random_batch(&p, 5, &mut seen, &mut rng) {
            assert_eq!(s.get("x"), Some("x"));
        }
    }

    #[test]
    fn seed_42_sequence_is_pinned() {
        let got = run(42, 3);
        let again = run(42, 3);
        assert_eq!(got, again);
        assert_eq!(got, crate::testing::PINNED_RANDOM_42);
        assert_ne!(run(43, 3), got);
    }
}
