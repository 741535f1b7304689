//! Suggestion properties over generated search spaces and histories, as
//! plain functions so both the property tests and the acceptance report
//! can drive them.

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tunekit::model::{Assignment, AssignmentSet, FeasibleSpace, ParameterSpec, ParameterType};
use tunekit::suggest::space::{is_feasible, sample_set};
use tunekit::suggest::{AlgorithmRegistry, SuggestionError, SuggestionRequest, TrialObservation};

const ALGORITHMS: [&str; 5] = ["random", "grid", "bayesianoptimization", "tpe", "hyperband"];

fn param(i: usize) -> impl Strategy<Value = ParameterSpec> {
    let name = format!("p{i}");
    let n1 = name.clone();
    let n2 = name.clone();
    let n3 = name.clone();
    prop_oneof![
        (-100.0..100.0f64, 0.01..50.0f64, 1u32..8).prop_map(move |(lo, w, k)| {
            ParameterSpec::double(&n1, lo, lo + w).with_step(w / k as f64)
        }),
        (-50i64..50, 0i64..20).prop_map(move |(lo, w)| ParameterSpec::int(&n2, lo, lo + w)),
        proptest::collection::btree_set("[a-z]{1,6}", 1..5).prop_map(move |vals| {
            let v: Vec<&str> = vals.iter().map(String::as_str).collect();
            ParameterSpec::categorical(&n3, &v)
        }),
        proptest::collection::btree_set(-1000i32..1000, 1..5).prop_map(move |vals| {
            let v: Vec<String> = vals.iter().map(|x| (*x as f64 / 10.0).to_string()).collect();
            let r: Vec<&str> = v.iter().map(String::as_str).collect();
            ParameterSpec::discrete(&name, &r)
        }),
    ]
}

fn space() -> impl Strategy<Value = Vec<ParameterSpec>> {
    (1usize..5).prop_flat_map(|n| (0..n).map(param).collect::<Vec<_>>())
}

/// Feasible history of `n` entries drawn with `seed`; every fourth failed.
fn history(params: &[ParameterSpec], n: usize, seed: u64, budget: bool) -> Vec<TrialObservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut set = sample_set(params, &mut rng);
            if budget {
                set.0.push(Assignment::new("budget", "81"));
            }
            if i % 4 == 3 {
                TrialObservation::failed(set)
            } else {
                TrialObservation::succeeded(set, (i as f64 * 0.37).sin())
            }
        })
        .collect()
}

fn suggest(
    algorithm: &str,
    params: &[ParameterSpec],
    seed: u64,
    hist: &[TrialObservation],
    count: usize,
) -> Result<(Vec<AssignmentSet>, String), SuggestionError> {
    let registry = AlgorithmRegistry::with_builtins();
    let exp = super::experiment("prop", algorithm, params.to_vec(), seed);
    let mut state = registry.fresh_state(&exp)?;
    let req = SuggestionRequest {
        experiment: &exp,
        history: hist,
        pending: &[],
        count,
    };
    let batch = registry.get_suggestions(&req, &mut state)?;
    Ok((batch.assignments, format!("{state:?}")))
}

/// Point count from the generator's construction: lists by length, ints by
/// width + 1, stepped doubles by width / step + 1.
fn expected_grid_size(params: &[ParameterSpec]) -> u64 {
    params
        .iter()
        .map(|p| match (&p.feasible_space, p.parameter_type) {
            (FeasibleSpace::List(v), _) => v.len() as u64,
            (FeasibleSpace::Range { min, max, .. }, ParameterType::Int) => (max - min) as u64 + 1,
            (FeasibleSpace::Range { min, max, step: Some(s) }, _) => ((max - min) / s).round() as u64 + 1,
            (FeasibleSpace::Range { .. }, _) => unreachable!("generated doubles are stepped"),
        })
        .product()
}

pub type Case = (Vec<ParameterSpec>, usize, usize, usize, u64);

pub fn case() -> impl Strategy<Value = Case> {
    (space(), 0usize..ALGORITHMS.len(), 0usize..14, 1usize..5, any::<u64>())
}

pub fn feasible((params, alg, n, count, seed): Case) -> Result<(), TestCaseError> {
    let algorithm = ALGORITHMS[alg];
    let hist = history(&params, n, seed, algorithm == "hyperband");
    match suggest(algorithm, &params, seed, &hist, count) {
        Ok((sets, _)) => {
            let extras: &[&str] = if algorithm == "hyperband" { &["budget"] } else { &[] };
            prop_assert!(sets.len() <= count);
            for s in &sets {
                prop_assert!(is_feasible(&params, s, extras), "{algorithm}: {s}");
            }
        }
        Err(SuggestionError::ExhaustedSearchSpace(_)) => prop_assert_eq!(algorithm, "grid"),
        Err(e) => prop_assert!(false, "{algorithm}: {e}"),
    }
    Ok(())
}

pub fn deterministic((params, alg, n, count, seed): Case) -> Result<(), TestCaseError> {
    let algorithm = ALGORITHMS[alg];
    let hist = history(&params, n, seed, algorithm == "hyperband");
    let a = suggest(algorithm, &params, seed, &hist, count).map_err(|e| e.to_string());
    let b = suggest(algorithm, &params, seed, &hist, count).map_err(|e| e.to_string());
    prop_assert_eq!(a, b);
    Ok(())
}

pub fn grid_case() -> impl Strategy<Value = (Vec<ParameterSpec>, Vec<usize>)> {
    (space(), proptest::collection::vec(1usize..7, 1..40))
}

pub fn grid_complete((params, batches): (Vec<ParameterSpec>, Vec<usize>)) -> Result<(), TestCaseError> {
    let registry = AlgorithmRegistry::with_builtins();
    let exp = super::experiment("grid", "grid", params.clone(), 0);
    let total = expected_grid_size(&params);
    if total > 2000 {
        return Err(TestCaseError::reject("grid too large"));
    }
    let mut state = registry.fresh_state(&exp).unwrap();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut exhausted = false;
    let mut i = 0;
    while !exhausted {
        let count = batches[i % batches.len()];
        i += 1;
        let req = SuggestionRequest { experiment: &exp, history: &[], pending: &[], count };
        let batch = registry.get_suggestions(&req, &mut state).unwrap();
        for s in batch.assignments {
            *seen.entry(s.to_string()).or_default() += 1;
        }
        exhausted = batch.exhausted;
    }
    prop_assert_eq!(seen.len() as u64, total);
    prop_assert!(seen.values().all(|&c| c == 1));
    let req = SuggestionRequest { experiment: &exp, history: &[], pending: &[], count: 1 };
    let after = registry.get_suggestions(&req, &mut state);
    prop_assert!(matches!(after, Err(SuggestionError::ExhaustedSearchSpace(_))), "exhausted grid still produced");
    Ok(())
}

pub fn all_failed_case() -> impl Strategy<Value = (Vec<ParameterSpec>, usize, usize, u64)> {
    (space(), 0usize..ALGORITHMS.len(), 1usize..20, any::<u64>())
}

pub fn all_failed_tolerated((params, alg, n, seed): (Vec<ParameterSpec>, usize, usize, u64)) -> Result<(), TestCaseError> {
    let algorithm = ALGORITHMS[alg];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hist: Vec<TrialObservation> = (0..n)
        .map(|_| {
            let mut set = sample_set(&params, &mut rng);
            if algorithm == "hyperband" {
                set.0.push(Assignment::new("budget", "81"));
            }
            TrialObservation::failed(set)
        })
        .collect();
    match suggest(algorithm, &params, seed, &hist, 2) {
        Ok(_) => {}
        Err(SuggestionError::ExhaustedSearchSpace(_)) => prop_assert_eq!(algorithm, "grid"),
        Err(e) => prop_assert!(false, "{algorithm}: {e}"),
    }
    Ok(())
}

pub fn config(cases: u32) -> Config {
    Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    }
}

/// Runs every property for `cases` generated cases each.
pub fn run_all(cases: u32) -> Result<String, String> {
    let runner = || TestRunner::new(config(cases));
    runner().run(&case(), feasible).map_err(|e| format!("feasibility: {e}"))?;
    runner().run(&case(), deterministic).map_err(|e| format!("determinism: {e}"))?;
    runner().run(&grid_case(), grid_complete).map_err(|e| format!("grid completeness: {e}"))?;
    runner().run(&all_failed_case(), all_failed_tolerated).map_err(|e| format!("all-failed history: {e}"))?;
    Ok(format!("4 properties x {cases} cases"))
}
