//! Stored resources: experiments, their suggestion resource and trials.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{AssignmentSet, ExperimentSpec};
use crate::suggest::AlgorithmState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
pub enum Kind {
    Experiment,
    Suggestion,
    Trial,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Experiment => "Experiment",
            Kind::Suggestion => "Suggestion",
            Kind::Trial => "Trial",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        match s {
            "Experiment" => Some(Kind::Experiment),
            "Suggestion" => Some(Kind::Suggestion),
            "Trial" => Some(Kind::Trial),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ResourceKey {
    pub kind: Kind,
    pub namespace: String,
    pub name: String,
}

impl ResourceKey {
    pub fn new(kind: Kind, namespace: &str, name: &str) -> Self {
        Self {
            kind,
            namespace: namespace.to_string(),
            name: name.to_string(),
        }
    }

    pub fn experiment(namespace: &str, name: &str) -> Self {
        Self::new(Kind::Experiment, namespace, name)
    }

    pub fn suggestion(namespace: &str, name: &str) -> Self {
        Self::new(Kind::Suggestion, namespace, name)
    }

    pub fn trial(namespace: &str, name: &str) -> Self {
        Self::new(Kind::Trial, namespace, name)
    }

    /// Parses the `Kind/namespace/name` form produced by `Display`.
    pub fn parse(s: &str) -> Option<Self> {
        let mut it = s.splitn(3, '/');
        let kind = Kind::parse(it.next()?)?;
        Some(Self::new(kind, it.next()?, it.next()?))
    }
}

impl fmt::Display for ResourceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.kind.as_str(), self.namespace, self.name)
    }
}

/// Name of the `index`-th trial of an experiment.
pub fn trial_name(experiment: &str, index: usize) -> String {
    format!("{experiment}-{index:04}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ExperimentPhase {
    #[default]
    Created,
    Running,
    Succeeded,
    Failed,
}

impl ExperimentPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, ExperimentPhase::Succeeded | ExperimentPhase::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OptimalTrial {
    pub trial_name: String,
    pub assignments: AssignmentSet,
    pub objective_value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentStatus {
    pub phase: ExperimentPhase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub trials_spawned: u32,
    pub trials_pending: u32,
    pub trials_running: u32,
    pub trials_succeeded: u32,
    pub trials_failed: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_optimal: Option<OptimalTrial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub status: ExperimentStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SuggestionSpec {
    pub algorithm_name: String,
    pub requested: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProducedSuggestion {
    pub assignments: AssignmentSet,
    /// Set once the trial for this entry exists.
    pub consumed: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SuggestionStatus {
    #[serde(default)]
    pub produced: Vec<ProducedSuggestion>,
    #[serde(default)]
    pub exhausted: bool,
    /// Algorithm error that stops further suggestions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// The per-experiment algorithm service is placed and holding resources.
    #[serde(default)]
    pub service_ready: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm_state: Option<AlgorithmState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub spec: SuggestionSpec,
    pub status: SuggestionStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TrialPhase {
    #[default]
    Created,
    Pending,
    Running,
    Succeeded,
    Failed,
}

impl TrialPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, TrialPhase::Succeeded | TrialPhase::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrialPhase::Created => "Created",
            TrialPhase::Pending => "Pending",
            TrialPhase::Running => "Running",
            TrialPhase::Succeeded => "Succeeded",
            TrialPhase::Failed => "Failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialSpec {
    pub experiment: String,
    pub index: u32,
    pub assignments: AssignmentSet,
    /// Set by the experiment controller once the experiment has finished.
    #[serde(default)]
    pub cancel: bool,
}

pub const REASON_METRICS_UNAVAILABLE: &str = "metrics-unavailable";
pub const REASON_EXPERIMENT_TERMINATED: &str = "ExperimentTerminated";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialStatus {
    pub phase: TrialPhase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub restart_count: u32,
    #[serde(default)]
    pub submitted: bool,
    #[serde(default)]
    pub submit_failures: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<f64>,
    /// Final value of every tracked metric.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub spec: TrialSpec,
    pub status: TrialStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Resource {
    Experiment(Box<Experiment>),
    Suggestion(Suggestion),
    Trial(Trial),
}

impl Resource {
    pub fn kind(&self) -> Kind {
        match self {
            Resource::Experiment(_) => Kind::Experiment,
            Resource::Suggestion(_) => Kind::Suggestion,
            Resource::Trial(_) => Kind::Trial,
        }
    }

    pub fn as_experiment(&self) -> Option<&Experiment> {
        match self {
            Resource::Experiment(e) => Some(e),
            _ => None,
        }
    }

    pub fn as_suggestion(&self) -> Option<&Suggestion> {
        match self {
            Resource::Suggestion(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_trial(&self) -> Option<&Trial> {
        match self {
            Resource::Trial(t) => Some(t),
            _ => None,
        }
    }
}
