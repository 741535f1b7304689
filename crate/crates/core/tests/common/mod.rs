#![allow(dead_code)]

pub mod checks;
pub mod props;

use tunekit::model::{
    AlgorithmSpec, BestValueRule, ExperimentSpec, MetricCollectorKind, ObjectiveSpec, ObjectiveType, ParameterSpec,
    RestartPolicy, SettingValue, SimObjective, TemplatePayload, TrialTemplate,
};

pub fn experiment(name: &str, algorithm: &str, params: Vec<ParameterSpec>, seed: u64) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        namespace: "default".into(),
        objective: ObjectiveSpec {
            kind: ObjectiveType::Minimize,
            goal: None,
            objective_metric_name: "loss".into(),
            additional_metric_names: vec![],
            best_value_rule: BestValueRule::Latest,
        },
        algorithm: AlgorithmSpec::new(algorithm).with_setting("random_state", SettingValue::Int(seed as i64)),
        parallel_trial_count: 3,
        max_trial_count: 20,
        max_failed_trial_count: 20,
        metric_collector_kind: MetricCollectorKind::Push,
        parameters: params,
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

pub fn sphere_space(dims: usize) -> Vec<ParameterSpec> {
    (0..dims).map(|i| ParameterSpec::double(&format!("x{i}"), -2.0, 2.0)).collect()
}
