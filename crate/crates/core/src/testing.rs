//! Fixtures shared by unit tests.

use crate::model::{
    parse_experiment, AlgorithmSpec, ExperimentSpec, MetricCollectorKind, ObjectiveSpec, ObjectiveType,
    ParameterSpec, RestartPolicy, SimObjective, TemplatePayload, TrialTemplate,
};

pub(crate) fn sphere_yaml() -> String {
    "name: sphere
namespace: team-a
objective:
  type: minimize
  objectiveMetricName: loss
algorithm:
  algorithmName: random
  algorithmSettings:
    random_state: 7
parallelTrialCount: 2
maxTrialCount: 6
maxFailedTrialCount: 2
parameters:
  - name: x
    parameterType: double
    feasibleSpace: {min: -1, max: 1}
  - name: y
    parameterType: double
    feasibleSpace: {min: -1, max: 1}
trialTemplate:
  kind: simulated
  objective:
    functionName: sphere
    durationTicks: 3
    noiseStdDev: 0
    rngSeedOffset: 0
"
    .to_string()
}

pub(crate) fn sphere_experiment(
    name: &str,
    namespace: &str,
    parameters: Vec<ParameterSpec>,
    max_trials: u32,
    parallel: u32,
) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        namespace: namespace.into(),
        objective: ObjectiveSpec {
            kind: ObjectiveType::Minimize,
            goal: None,
            objective_metric_name: "loss".into(),
            additional_metric_names: vec![],
            best_value_rule: Default::default(),
        },
        algorithm: AlgorithmSpec::new(crate::model::experiment::RANDOM),
        parallel_trial_count: parallel,
        max_trial_count: max_trials,
        max_failed_trial_count: max_trials,
        metric_collector_kind: MetricCollectorKind::Push,
        parameters,
        trial_template: TrialTemplate {
            worker_count: 1,
            cpu_per_worker: 1.0,
            restart_policy: RestartPolicy::Never,
            payload: TemplatePayload::Simulated(SimObjective {
                function_name: "sphere".into(),
                duration_ticks: 3,
                noise_std_dev: 0.0,
                rng_seed_offset: 0,
            }),
        },
    }
}

#[test]
fn sphere_yaml_parses() {
    let e = parse_experiment(&sphere_yaml()).unwrap();
    assert_eq!(e.parameters.len(), 2);
}

/// First three draws of random search over the MNIST-style space with seed 42.
pub(crate) const PINNED_RANDOM_42: [&str; 3] = [
    "lr=0.6818961923066713 batch-size=951 num-layers=3 optimizer=Adam",
    "lr=0.7371560746401922 batch-size=646 num-layers=2 optimizer=SGD",
    "lr=0.8038727671756267 batch-size=774 num-layers=2 optimizer=Adam",
];
