//! Declarative resource model: experiment specs, parameter spaces and trial
//! templates.

pub mod experiment;
pub mod template;
pub mod value;

pub use experiment::{
    canonical_yaml, parse_experiment, parse_experiment_with, AcceptedSettings, AlgorithmCatalog,
    AlgorithmSpec, BestValueRule, BuiltinAlgorithms, ExperimentSpec, FeasibleSpace, Issue,
    MetricCollectorKind, ObjectiveSpec, ObjectiveType, ParameterSpec, ParameterType, ParseError,
    RestartPolicy, SettingValue, SimObjective, TemplatePayload, TrialTemplate, ValidationErrors,
};
pub use template::{render_trial_spec, RunPayload, TemplateError, TrialRunSpec};
pub use value::{format_real, Assignment, AssignmentSet, ParamValue};
