//! Experiment specification: types, YAML parsing with aggregated validation,
//! and canonical (byte-stable) emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_yaml::{Mapping, Number, Value};
use thiserror::Error;

use super::template::{self, BUDGET, HYPERPARAMETERS, TRIAL_NAME, TRIAL_NAMESPACE};
use super::value::format_real;
use crate::sim::objective::FUNCTION_NAMES;

pub const RANDOM: &str = "random";
pub const GRID: &str = "grid";
pub const BAYESIAN_OPTIMIZATION: &str = "bayesianoptimization";
pub const TPE: &str = "tpe";
pub const HYPERBAND: &str = "hyperband";

/// Maximum identifier length; leaves room for the trial suffix.
const MAX_IDENT_LEN: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveType {
    Maximize,
    Minimize,
}

impl ObjectiveType {
    /// True when `candidate` is strictly better than `incumbent`.
    pub fn better(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            ObjectiveType::Maximize => candidate > incumbent,
            ObjectiveType::Minimize => candidate < incumbent,
        }
    }

    pub fn meets_goal(self, value: f64, goal: f64) -> bool {
        match self {
            ObjectiveType::Maximize => value >= goal,
            ObjectiveType::Minimize => value <= goal,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            ObjectiveType::Maximize => "maximize",
            ObjectiveType::Minimize => "minimize",
        }
    }
}

/// How a trial's series of objective values is reduced to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BestValueRule {
    #[default]
    Latest,
    Max,
    Min,
}

impl BestValueRule {
    fn as_str(self) -> &'static str {
        match self {
            BestValueRule::Latest => "latest",
            BestValueRule::Max => "max",
            BestValueRule::Min => "min",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveType,
    pub goal: Option<f64>,
    pub objective_metric_name: String,
    pub additional_metric_names: Vec<String>,
    pub best_value_rule: BestValueRule,
}

impl ObjectiveSpec {
    /// Objective metric followed by the additional metrics.
    pub fn all_metric_names(&self) -> Vec<String> {
        let mut v = vec![self.objective_metric_name.clone()];
        v.extend(self.additional_metric_names.iter().cloned());
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParameterType {
    Int,
    Double,
    Discrete,
    Categorical,
}

impl ParameterType {
    fn as_str(self) -> &'static str {
        match self {
            ParameterType::Int => "int",
            ParameterType::Double => "double",
            ParameterType::Discrete => "discrete",
            ParameterType::Categorical => "categorical",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeasibleSpace {
    Range { min: f64, max: f64, step: Option<f64> },
    List(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpec {
    pub name: String,
    pub parameter_type: ParameterType,
    pub feasible_space: FeasibleSpace,
}

impl ParameterSpec {
    pub fn double(name: &str, min: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            parameter_type: ParameterType::Double,
            feasible_space: FeasibleSpace::Range { min, max, step: None },
        }
    }

    pub fn int(name: &str, min: i64, max: i64) -> Self {
        Self {
            name: name.into(),
            parameter_type: ParameterType::Int,
            feasible_space: FeasibleSpace::Range {
                min: min as f64,
                max: max as f64,
                step: None,
            },
        }
    }

    pub fn categorical(name: &str, values: &[&str]) -> Self {
        Self {
            name: name.into(),
            parameter_type: ParameterType::Categorical,
            feasible_space: FeasibleSpace::List(values.iter().map(|s| s.to_string()).collect()),
        }
    }

    pub fn discrete(name: &str, values: &[&str]) -> Self {
        Self {
            name: name.into(),
            parameter_type: ParameterType::Discrete,
            feasible_space: FeasibleSpace::List(values.iter().map(|s| s.to_string()).collect()),
        }
    }

    pub fn with_step(mut self, s: f64) -> Self {
        if let FeasibleSpace::Range { step, .. } = &mut self.feasible_space {
            *step = Some(s);
        }
        self
    }

    pub fn is_numeric_range(&self) -> bool {
        matches!(self.feasible_space, FeasibleSpace::Range { .. })
    }

    pub fn values(&self) -> &[String] {
        match &self.feasible_space {
            FeasibleSpace::List(v) => v,
            FeasibleSpace::Range { .. } => &[],
        }
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self.feasible_space {
            FeasibleSpace::Range { min, max, .. } => Some((min, max)),
            FeasibleSpace::List(_) => None,
        }
    }

    /// Effective grid step: explicit step, 1 for integers, none for
    /// unstepped doubles.
    pub fn grid_step(&self) -> Option<f64> {
        match (&self.feasible_space, self.parameter_type) {
            (FeasibleSpace::Range { step: Some(s), .. }, _) => Some(*s),
            (FeasibleSpace::Range { step: None, .. }, ParameterType::Int) => Some(1.0),
            _ => None,
        }
    }

    /// Rendered value for a point of a numeric range, clamped into bounds.
    pub fn render_numeric(&self, x: f64) -> String {
        let (min, max) = self.bounds().expect("numeric parameter");
        let x = x.clamp(min, max);
        match self.parameter_type {
            ParameterType::Int => {
                let v = (x.round() as i64).clamp(min as i64, max as i64);
                v.to_string()
            }
            _ => format_real(x),
        }
    }

    /// Whether `value` (as rendered) is inside the feasible space.
    pub fn contains(&self, value: &str) -> bool {
        match &self.feasible_space {
            FeasibleSpace::List(values) => values.iter().any(|v| v == value),
            FeasibleSpace::Range { min, max, step } => {
                let x = match self.parameter_type {
                    ParameterType::Int => match value.parse::<i64>() {
                        Ok(v) => v as f64,
                        Err(_) => return false,
                    },
                    _ => match value.parse::<f64>() {
                        Ok(v) if v.is_finite() => v,
                        _ => return false,
                    },
                };
                if x < *min || x > *max {
                    return false;
                }
                match step {
                    Some(s) => {
                        let k = (x - min) / s;
                        (k - k.round()).abs() < 1e-6
                    }
                    None => true,
                }
            }
        }
    }

    /// Points of the grid along this parameter, in ascending order.
    pub fn grid_points(&self) -> Option<Vec<String>> {
        match &self.feasible_space {
            FeasibleSpace::List(values) => Some(values.clone()),
            FeasibleSpace::Range { min, max, .. } => {
                let step = self.grid_step()?;
                let n = ((max - min) / step + 1e-9).floor() as u64;
                let pts = (0..=n)
                    .map(|k| {
                        let x = min + k as f64 * step;
                        // snap accumulated binary error onto a short decimal
                        let snapped = (x * 1e12).round() / 1e12;
                        self.render_numeric(snapped)
                    })
                    .collect();
                Some(pts)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SettingValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
}

impl SettingValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            SettingValue::Int(i) => Some(*i as f64),
            SettingValue::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            SettingValue::Int(i) => Some(*i),
            SettingValue::Real(r) if r.fract() == 0.0 => Some(*r as i64),
            _ => None,
        }
    }
}

impl fmt::Display for SettingValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SettingValue::Bool(b) => write!(f, "{b}"),
            SettingValue::Int(i) => write!(f, "{i}"),
            SettingValue::Real(r) => f.write_str(&format_real(*r)),
            SettingValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSpec {
    pub algorithm_name: String,
    pub settings: BTreeMap<String, SettingValue>,
}

impl AlgorithmSpec {
    pub fn new(name: &str) -> Self {
        Self {
            algorithm_name: name.to_string(),
            settings: BTreeMap::new(),
        }
    }

    pub fn with_setting(mut self, key: &str, value: SettingValue) -> Self {
        self.settings.insert(key.to_string(), value);
        self
    }

    pub fn random_state(&self) -> Option<u64> {
        self.settings
            .get("random_state")
            .and_then(SettingValue::as_i64)
            .map(|v| v as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricCollectorKind {
    Push,
    #[default]
    Pull,
}

impl MetricCollectorKind {
    fn as_str(self) -> &'static str {
        match self {
            MetricCollectorKind::Push => "push",
            MetricCollectorKind::Pull => "pull",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestartPolicy {
    #[default]
    Never,
    OnTemporaryFailure,
}

impl RestartPolicy {
    fn as_str(self) -> &'static str {
        match self {
            RestartPolicy::Never => "never",
            RestartPolicy::OnTemporaryFailure => "on-temporary-failure",
        }
    }
}

/// Synthetic objective evaluated by the simulator in place of real training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimObjective {
    pub function_name: String,
    pub duration_ticks: u32,
    pub noise_std_dev: f64,
    pub rng_seed_offset: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TemplatePayload {
    Command(String),
    Simulated(SimObjective),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialTemplate {
    pub worker_count: u32,
    pub cpu_per_worker: f64,
    pub restart_policy: RestartPolicy,
    pub payload: TemplatePayload,
}

impl TrialTemplate {
    pub fn kind(&self) -> &'static str {
        match self.payload {
            TemplatePayload::Command(_) => "local-process",
            TemplatePayload::Simulated(_) => "simulated",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub namespace: String,
    pub objective: ObjectiveSpec,
    pub algorithm: AlgorithmSpec,
    pub parallel_trial_count: u32,
    pub max_trial_count: u32,
    pub max_failed_trial_count: u32,
    pub metric_collector_kind: MetricCollectorKind,
    pub parameters: Vec<ParameterSpec>,
    pub trial_template: TrialTemplate,
}

impl ExperimentSpec {
    pub fn key(&self) -> String {
        format!("{}/{}", self.namespace, self.name)
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Runs every semantic check against the built-in algorithms.
    pub fn validate(&self) -> Result<(), ValidationErrors> {
        self.validate_with(&BuiltinAlgorithms)
    }

    pub fn validate_with(&self, catalog: &dyn AlgorithmCatalog) -> Result<(), ValidationErrors> {
        let text = canonical_yaml(self);
        parse_experiment_with(&text, catalog).map(|_| ()).map_err(|e| match e {
            ParseError::Invalid(v) => v,
            ParseError::Syntax { message, .. } => ValidationErrors(vec![Issue::new("", message)]),
        })
    }
}

/// Source of the algorithm names and setting keys accepted at validation.
pub trait AlgorithmCatalog {
    /// Setting keys accepted by `algorithm`; `None` if the algorithm is unknown.
    fn accepted_settings(&self, algorithm: &str) -> Option<AcceptedSettings>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AcceptedSettings {
    Any,
    Only(Vec<String>),
}

impl AcceptedSettings {
    pub fn allows(&self, key: &str) -> bool {
        match self {
            AcceptedSettings::Any => true,
            AcceptedSettings::Only(keys) => keys.iter().any(|k| k == key),
        }
    }
}

pub struct BuiltinAlgorithms;

impl AlgorithmCatalog for BuiltinAlgorithms {
    fn accepted_settings(&self, algorithm: &str) -> Option<AcceptedSettings> {
        builtin_settings(algorithm)
            .map(|keys| AcceptedSettings::Only(keys.iter().map(|k| k.to_string()).collect()))
    }
}

pub fn builtin_settings(algorithm: &str) -> Option<&'static [&'static str]> {
    match algorithm {
        RANDOM | GRID | BAYESIAN_OPTIMIZATION | TPE => Some(&["random_state"]),
        HYPERBAND => Some(&["random_state", "max_resource", "eta"]),
        _ => None,
    }
}

/// One semantic problem, addressed by its field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl Issue {
    fn new(path: &str, message: impl Into<String>) -> Self {
        Self {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationErrors(pub Vec<Issue>);

impl ValidationErrors {
    pub fn contains(&self, needle: &str) -> bool {
        self.0.iter().any(|i| i.to_string().contains(needle))
    }
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(ValidationErrors),
}

pub fn parse_experiment(text: &str) -> Result<ExperimentSpec, ParseError> {
    parse_experiment_with(text, &BuiltinAlgorithms)
}

pub fn parse_experiment_with(
    text: &str,
    catalog: &dyn AlgorithmCatalog,
) -> Result<ExperimentSpec, ParseError> {
    let value: Value = serde_yaml::from_str(text).map_err(|e| {
        let (line, column) = e.location().map(|l| (l.line(), l.column())).unwrap_or((0, 0));
        ParseError::Syntax {
            line,
            column,
            message: e.to_string(),
        }
    })?;
    from_value(&value, catalog).map_err(ParseError::Invalid)
}

/// Canonical document: fixed key order, defaults materialised, settings sorted.
pub fn canonical_yaml(spec: &ExperimentSpec) -> String {
    serde_yaml::to_string(&to_value(spec)).expect("mapping serialises")
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= MAX_IDENT_LEN
        && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        && !s.starts_with('-')
        && !s.ends_with('-')
}

fn is_token(s: &str) -> bool {
    !s.is_empty()
        && !s
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '=' | '$' | '{' | '}' | ','))
}

// ---------------------------------------------------------------------------
// Value -> spec

struct Reader<'c> {
    issues: Vec<Issue>,
    catalog: &'c dyn AlgorithmCatalog,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

impl Reader<'_> {
    fn err(&mut self, path: &str, msg: impl Into<String>) {
        self.issues.push(Issue::new(path, msg));
    }

    fn mapping<'v>(&mut self, v: &'v Value, path: &str) -> Option<&'v Mapping> {
        match v {
            Value::Mapping(m) => Some(m),
            _ => {
                self.err(path, "expected a mapping");
                None
            }
        }
    }

    fn check_keys(&mut self, m: &Mapping, path: &str, allowed: &[&str]) {
        for k in m.keys() {
            match k.as_str() {
                Some(k) if allowed.contains(&k) => {}
                Some(k) => self.err(&join(path, k), "unknown field"),
                None => self.err(path, "non-string key"),
            }
        }
    }

    fn required<'v>(&mut self, m: &'v Mapping, path: &str, key: &str) -> Option<&'v Value> {
        let v = m.get(key);
        if v.is_none() || matches!(v, Some(Value::Null)) {
            self.err(&join(path, key), "missing required field");
            return None;
        }
        v
    }

    fn optional<'v>(&self, m: &'v Mapping, key: &str) -> Option<&'v Value> {
        match m.get(key) {
            None | Some(Value::Null) => None,
            Some(v) => Some(v),
        }
    }

    fn string(&mut self, v: &Value, path: &str) -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            _ => {
                self.err(path, "expected a string");
                None
            }
        }
    }

    fn real(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            Some(_) => {
                self.err(path, "must be finite");
                None
            }
            None => {
                self.err(path, "expected a number");
                None
            }
        }
    }

    fn count(&mut self, v: &Value, path: &str) -> Option<u32> {
        match v.as_u64() {
            Some(n) if n <= u32::MAX as u64 => Some(n as u32),
            _ => {
                self.err(path, "expected a non-negative integer");
                None
            }
        }
    }

    fn enumeration<T: Copy>(&mut self, v: &Value, path: &str, options: &[(&str, T)]) -> Option<T> {
        let s = self.string(v, path)?;
        match options.iter().find(|(name, _)| *name == s) {
            Some((_, t)) => Some(*t),
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.err(path, format!("unknown value `{s}`, expected one of {}", names.join(", ")));
                None
            }
        }
    }
}

fn from_value(value: &Value, catalog: &dyn AlgorithmCatalog) -> Result<ExperimentSpec, ValidationErrors> {
    let mut r = Reader {
        issues: Vec::new(),
        catalog,
    };
    let spec = read_experiment(&mut r, value);
    match spec {
        Some(s) if r.issues.is_empty() => Ok(s),
        _ => {
            if r.issues.is_empty() {
                r.err("", "invalid experiment");
            }
            Err(ValidationErrors(r.issues))
        }
    }
}

fn read_experiment(r: &mut Reader<'_>, value: &Value) -> Option<ExperimentSpec> {
    let m = r.mapping(value, "")?;
    r.check_keys(
        m,
        "",
        &[
            "name",
            "namespace",
            "objective",
            "algorithm",
            "parallelTrialCount",
            "maxTrialCount",
            "maxFailedTrialCount",
            "metricCollectorKind",
            "parameters",
            "trialTemplate",
        ],
    );

    let name = r.required(m, "", "name").and_then(|v| r.string(v, "name"));
    if let Some(n) = &name {
        if !is_identifier(n) {
            r.err("name", "must be a lowercase identifier ([a-z0-9-], at most 48 chars)");
        }
    }
    let namespace = r.required(m, "", "namespace").and_then(|v| r.string(v, "namespace"));
    if let Some(n) = &namespace {
        if !is_identifier(n) {
            r.err("namespace", "must be a lowercase identifier ([a-z0-9-], at most 48 chars)");
        }
    }

    let objective = r.required(m, "", "objective").and_then(|v| read_objective(r, v));
    let algorithm = r.required(m, "", "algorithm").and_then(|v| read_algorithm(r, v));

    let parallel = r
        .required(m, "", "parallelTrialCount")
        .and_then(|v| r.count(v, "parallelTrialCount"));
    let max_trials = r
        .required(m, "", "maxTrialCount")
        .and_then(|v| r.count(v, "maxTrialCount"));
    let max_failed = match r.optional(m, "maxFailedTrialCount") {
        Some(v) => r.count(v, "maxFailedTrialCount"),
        None => Some(0),
    };
    if let Some(p) = parallel {
        if p == 0 {
            r.err("parallelTrialCount", "must be at least 1");
        }
    }
    if let Some(mx) = max_trials {
        if mx == 0 {
            r.err("maxTrialCount", "must be at least 1");
        }
    }
    if let (Some(p), Some(mx)) = (parallel, max_trials) {
        if p > mx {
            r.err("parallelTrialCount", "parallelTrialCount <= maxTrialCount violated");
        }
    }
    let collector = match r.optional(m, "metricCollectorKind") {
        Some(v) => r.enumeration(
            v,
            "metricCollectorKind",
            &[("push", MetricCollectorKind::Push), ("pull", MetricCollectorKind::Pull)],
        ),
        None => Some(MetricCollectorKind::Pull),
    };

    let parameters = r
        .required(m, "", "parameters")
        .and_then(|v| read_parameters(r, v));

    if let (Some(params), Some(alg)) = (&parameters, &algorithm) {
        if alg.algorithm_name == GRID {
            for (i, p) in params.iter().enumerate() {
                if p.is_numeric_range() && p.grid_step().is_none() {
                    r.err(
                        &format!("parameters[{i}].feasibleSpace.step"),
                        "grid search requires a step for double parameters",
                    );
                }
            }
        }
    }

    let budgeted = algorithm
        .as_ref()
        .is_some_and(|a| a.algorithm_name == HYPERBAND);
    let template = r
        .required(m, "", "trialTemplate")
        .and_then(|v| read_template(r, v, parameters.as_deref(), budgeted));

    Some(ExperimentSpec {
        name: name?,
        namespace: namespace?,
        objective: objective?,
        algorithm: algorithm?,
        parallel_trial_count: parallel?,
        max_trial_count: max_trials?,
        max_failed_trial_count: max_failed?,
        metric_collector_kind: collector?,
        parameters: parameters?,
        trial_template: template?,
    })
}

fn read_objective(r: &mut Reader<'_>, v: &Value) -> Option<ObjectiveSpec> {
    let path = "objective";
    let m = r.mapping(v, path)?;
    r.check_keys(
        m,
        path,
        &["type", "goal", "objectiveMetricName", "additionalMetricNames", "bestValueRule"],
    );
    let kind = r.required(m, path, "type").and_then(|v| {
        r.enumeration(
            v,
            "objective.type",
            &[("maximize", ObjectiveType::Maximize), ("minimize", ObjectiveType::Minimize)],
        )
    });
    let goal = match r.optional(m, "goal") {
        Some(v) => r.real(v, "objective.goal").map(Some),
        None => Some(None),
    };
    let metric = r
        .required(m, path, "objectiveMetricName")
        .and_then(|v| r.string(v, "objective.objectiveMetricName"));
    if let Some(name) = &metric {
        if !is_token(name) {
            r.err("objective.objectiveMetricName", "metric names must be non-empty without whitespace or `=`");
        }
    }
    let mut additional = Vec::new();
    let mut ok = true;
    if let Some(v) = r.optional(m, "additionalMetricNames") {
        match v {
            Value::Sequence(items) => {
                for (i, item) in items.iter().enumerate() {
                    let p = format!("objective.additionalMetricNames[{i}]");
                    match r.string(item, &p) {
                        Some(s) => {
                            if !is_token(&s) {
                                r.err(&p, "metric names must be non-empty without whitespace or `=`");
                            }
                            if additional.contains(&s) {
                                r.err(&p, format!("duplicate metric `{s}`"));
                            }
                            if metric.as_ref() == Some(&s) {
                                r.err(&p, "objectiveMetricName must not be repeated in additionalMetricNames");
                            }
                            additional.push(s);
                        }
                        None => ok = false,
                    }
                }
            }
            _ => {
                r.err("objective.additionalMetricNames", "expected a list");
                ok = false;
            }
        }
    }
    let rule = match r.optional(m, "bestValueRule") {
        Some(v) => r.enumeration(
            v,
            "objective.bestValueRule",
            &[
                ("latest", BestValueRule::Latest),
                ("max", BestValueRule::Max),
                ("min", BestValueRule::Min),
            ],
        ),
        None => Some(BestValueRule::Latest),
    };
    if !ok {
        return None;
    }
    Some(ObjectiveSpec {
        kind: kind?,
        goal: goal?,
        objective_metric_name: metric?,
        additional_metric_names: additional,
        best_value_rule: rule?,
    })
}

fn read_setting(v: &Value) -> Option<SettingValue> {
    match v {
        Value::Bool(b) => Some(SettingValue::Bool(*b)),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Some(SettingValue::Int(i))
            } else {
                n.as_f64().filter(|x| x.is_finite()).map(SettingValue::Real)
            }
        }
        Value::String(s) => Some(SettingValue::Text(s.clone())),
        _ => None,
    }
}

fn read_algorithm(r: &mut Reader<'_>, v: &Value) -> Option<AlgorithmSpec> {
    let path = "algorithm";
    let m = r.mapping(v, path)?;
    r.check_keys(m, path, &["algorithmName", "algorithmSettings"]);
    let name = r
        .required(m, path, "algorithmName")
        .and_then(|v| r.string(v, "algorithm.algorithmName"))?;
    let accepted = r.catalog.accepted_settings(&name);
    if accepted.is_none() {
        r.err("algorithm.algorithmName", format!("unknown algorithm `{name}`"));
    }
    let mut settings = BTreeMap::new();
    if let Some(sv) = r.optional(m, "algorithmSettings") {
        let sp = "algorithm.algorithmSettings";
        if let Some(sm) = r.mapping(sv, sp) {
            for (k, val) in sm {
                let Some(key) = k.as_str() else {
                    r.err(sp, "non-string key");
                    continue;
                };
                let kp = join(sp, key);
                if let Some(acc) = &accepted {
                    if !acc.allows(key) {
                        r.err(&kp, format!("unknown setting for algorithm `{name}`"));
                        continue;
                    }
                }
                match read_setting(val) {
                    Some(s) => {
                        settings.insert(key.to_string(), s);
                    }
                    None => r.err(&kp, "settings must be scalars"),
                }
            }
        }
    }
    if let Some(rs) = settings.get("random_state") {
        if !matches!(rs, SettingValue::Int(i) if *i >= 0) {
            r.err("algorithm.algorithmSettings.random_state", "must be a non-negative integer");
        }
    }
    if name == HYPERBAND {
        if let Some(mr) = settings.get("max_resource") {
            if !mr.as_f64().is_some_and(|x| x >= 1.0) {
                r.err("algorithm.algorithmSettings.max_resource", "must be a number >= 1");
            }
        }
        if let Some(eta) = settings.get("eta") {
            if !eta.as_i64().is_some_and(|x| x >= 2) {
                r.err("algorithm.algorithmSettings.eta", "must be an integer >= 2");
            }
        }
    }
    Some(AlgorithmSpec {
        algorithm_name: name,
        settings,
    })
}

fn read_parameters(r: &mut Reader<'_>, v: &Value) -> Option<Vec<ParameterSpec>> {
    let Value::Sequence(items) = v else {
        r.err("parameters", "expected a list");
        return None;
    };
    if items.is_empty() {
        r.err("parameters", "at least one parameter is required");
    }
    let mut out = Vec::new();
    let mut names = BTreeSet::new();
    let mut ok = true;
    for (i, item) in items.iter().enumerate() {
        let path = format!("parameters[{i}]");
        match read_parameter(r, item, &path) {
            Some(p) => {
                if !names.insert(p.name.clone()) {
                    r.err(&join(&path, "name"), format!("duplicate parameter name `{}`", p.name));
                }
                out.push(p);
            }
            None => ok = false,
        }
    }
    ok.then_some(out)
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Some(i.to_string())
            } else {
                n.as_f64().map(format_real)
            }
        }
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn read_parameter(r: &mut Reader<'_>, v: &Value, path: &str) -> Option<ParameterSpec> {
    let m = r.mapping(v, path)?;
    r.check_keys(m, path, &["name", "parameterType", "feasibleSpace"]);
    let name = r
        .required(m, path, "name")
        .and_then(|v| r.string(v, &join(path, "name")));
    if let Some(n) = &name {
        if !is_token(n) || n.contains('.') {
            r.err(&join(path, "name"), "parameter names must be non-empty without whitespace, `=`, `.` or `$`");
        } else if [HYPERPARAMETERS, BUDGET].contains(&n.as_str()) {
            r.err(&join(path, "name"), format!("`{n}` is reserved"));
        }
    }
    let ptype = r.required(m, path, "parameterType").and_then(|v| {
        r.enumeration(
            v,
            &join(path, "parameterType"),
            &[
                ("int", ParameterType::Int),
                ("double", ParameterType::Double),
                ("discrete", ParameterType::Discrete),
                ("categorical", ParameterType::Categorical),
            ],
        )
    });
    let fs_path = join(path, "feasibleSpace");
    let fs = r.required(m, path, "feasibleSpace")?;
    let fm = r.mapping(fs, &fs_path)?;
    let ptype = ptype?;
    let space = match ptype {
        ParameterType::Int | ParameterType::Double => {
            r.check_keys(fm, &fs_path, &["min", "max", "step"]);
            let min = r.required(fm, &fs_path, "min").and_then(|v| r.real(v, &join(&fs_path, "min")));
            let max = r.required(fm, &fs_path, "max").and_then(|v| r.real(v, &join(&fs_path, "max")));
            let step = match r.optional(fm, "step") {
                Some(v) => r.real(v, &join(&fs_path, "step")).map(Some),
                None => Some(None),
            };
            let (min, max, step) = (min?, max?, step?);
            if min >= max {
                r.err(&fs_path, "min < max violated");
            }
            if let Some(s) = step {
                if s <= 0.0 {
                    r.err(&join(&fs_path, "step"), "step > 0 violated");
                } else if (max - min) / s < 1.0 {
                    r.err(&join(&fs_path, "step"), "(max - min) / step >= 1 violated");
                }
            }
            if ptype == ParameterType::Int {
                let integral = |x: f64| x.fract() == 0.0 && x.abs() < 9.0e15;
                if !integral(min) || !integral(max) || step.is_some_and(|s| !integral(s)) {
                    r.err(&fs_path, "int parameters require integral min, max and step");
                }
            }
            FeasibleSpace::Range { min, max, step }
        }
        ParameterType::Discrete | ParameterType::Categorical => {
            r.check_keys(fm, &fs_path, &["list"]);
            let lp = join(&fs_path, "list");
            let list = r.required(fm, &fs_path, "list")?;
            let Value::Sequence(items) = list else {
                r.err(&lp, "expected a list");
                return None;
            };
            if items.is_empty() {
                r.err(&lp, "value list must be non-empty");
            }
            let mut values: Vec<String> = Vec::new();
            for (i, item) in items.iter().enumerate() {
                let ip = format!("{lp}[{i}]");
                let Some(s) = scalar_text(item) else {
                    r.err(&ip, "expected a scalar");
                    continue;
                };
                if ptype == ParameterType::Discrete && !s.parse::<f64>().is_ok_and(f64::is_finite) {
                    r.err(&ip, format!("discrete value `{s}` is not a number"));
                }
                if s.is_empty() || s.contains("${") || s.chars().any(char::is_whitespace) {
                    r.err(&ip, "values must be non-empty without whitespace or `${`");
                }
                if values.contains(&s) {
                    r.err(&ip, format!("duplicate value `{s}`"));
                }
                values.push(s);
            }
            FeasibleSpace::List(values)
        }
    };
    Some(ParameterSpec {
        name: name?,
        parameter_type: ptype,
        feasible_space: space,
    })
}

fn read_template(
    r: &mut Reader<'_>,
    v: &Value,
    params: Option<&[ParameterSpec]>,
    budgeted: bool,
) -> Option<TrialTemplate> {
    let path = "trialTemplate";
    let m = r.mapping(v, path)?;
    r.check_keys(
        m,
        path,
        &["kind", "workerCount", "cpuPerWorker", "restartPolicy", "command", "objective"],
    );
    let kind = r
        .required(m, path, "kind")
        .and_then(|v| r.enumeration(v, "trialTemplate.kind", &[("simulated", true), ("local-process", false)]));
    let workers = match r.optional(m, "workerCount") {
        Some(v) => r.count(v, "trialTemplate.workerCount"),
        None => Some(1),
    };
    if workers == Some(0) {
        r.err("trialTemplate.workerCount", "must be at least 1");
    }
    let cpu = match r.optional(m, "cpuPerWorker") {
        Some(v) => r.real(v, "trialTemplate.cpuPerWorker"),
        None => Some(1.0),
    };
    if cpu.is_some_and(|c| c <= 0.0) {
        r.err("trialTemplate.cpuPerWorker", "must be > 0");
    }
    let restart = match r.optional(m, "restartPolicy") {
        Some(v) => r.enumeration(
            v,
            "trialTemplate.restartPolicy",
            &[
                ("never", RestartPolicy::Never),
                ("on-temporary-failure", RestartPolicy::OnTemporaryFailure),
            ],
        ),
        None => Some(RestartPolicy::Never),
    };
    let payload = match kind? {
        true => {
            if m.contains_key("command") {
                r.err("trialTemplate.command", "not allowed for simulated templates");
            }
            let op = "trialTemplate.objective";
            let om = r.required(m, path, "objective").and_then(|v| r.mapping(v, op))?;
            r.check_keys(om, op, &["functionName", "durationTicks", "noiseStdDev", "rngSeedOffset"]);
            let func = r.required(om, op, "functionName").and_then(|v| r.string(v, &join(op, "functionName")));
            if let Some(f) = &func {
                if !FUNCTION_NAMES.contains(&f.as_str()) {
                    r.err(&join(op, "functionName"), format!("unknown objective function `{f}`"));
                }
            }
            let duration = r.required(om, op, "durationTicks").and_then(|v| r.count(v, &join(op, "durationTicks")));
            if duration == Some(0) {
                r.err(&join(op, "durationTicks"), "must be at least 1");
            }
            let noise = match r.optional(om, "noiseStdDev") {
                Some(v) => r.real(v, &join(op, "noiseStdDev")),
                None => Some(0.0),
            };
            if noise.is_some_and(|n| n < 0.0) {
                r.err(&join(op, "noiseStdDev"), "must be >= 0");
            }
            let offset = match r.optional(om, "rngSeedOffset") {
                Some(v) => match v.as_u64() {
                    Some(o) => Some(o),
                    None => {
                        r.err(&join(op, "rngSeedOffset"), "expected a non-negative integer");
                        None
                    }
                },
                None => Some(0),
            };
            TemplatePayload::Simulated(SimObjective {
                function_name: func?,
                duration_ticks: duration?,
                noise_std_dev: noise?,
                rng_seed_offset: offset?,
            })
        }
        false => {
            if m.contains_key("objective") {
                r.err("trialTemplate.objective", "only allowed for simulated templates");
            }
            let cp = "trialTemplate.command";
            let cmd = r.required(m, path, "command").and_then(|v| r.string(v, cp))?;
            if cmd.trim().is_empty() {
                r.err(cp, "command must not be empty");
            }
            match template::placeholders(&cmd) {
                Ok(names) => {
                    if let Some(params) = params {
                        for n in names {
                            let known = params.iter().any(|p| p.name == n)
                                || [TRIAL_NAME, TRIAL_NAMESPACE, HYPERPARAMETERS].contains(&n.as_str())
                                || (budgeted && n == BUDGET);
                            if !known {
                                r.err(cp, format!("unresolved placeholder ${{{n}}}"));
                            }
                        }
                    }
                }
                Err(e) => r.err(cp, e.to_string()),
            }
            TemplatePayload::Command(cmd)
        }
    };
    Some(TrialTemplate {
        worker_count: workers?,
        cpu_per_worker: cpu?,
        restart_policy: restart?,
        payload,
    })
}

// ---------------------------------------------------------------------------
// spec -> Value

fn s(v: &str) -> Value {
    Value::String(v.to_string())
}

fn real(x: f64) -> Value {
    Value::Number(Number::from(x))
}

fn uint(x: u64) -> Value {
    Value::Number(Number::from(x))
}

fn map(entries: Vec<(&str, Value)>) -> Value {
    let mut m = Mapping::new();
    for (k, v) in entries {
        m.insert(s(k), v);
    }
    Value::Mapping(m)
}

fn setting_value(v: &SettingValue) -> Value {
    match v {
        SettingValue::Bool(b) => Value::Bool(*b),
        SettingValue::Int(i) => Value::Number(Number::from(*i)),
        SettingValue::Real(r) => real(*r),
        SettingValue::Text(t) => s(t),
    }
}

fn parameter_value(p: &ParameterSpec) -> Value {
    let space = match &p.feasible_space {
        FeasibleSpace::Range { min, max, step } => {
            let num = |x: f64| {
                if p.parameter_type == ParameterType::Int {
                    Value::Number(Number::from(x as i64))
                } else {
                    real(x)
                }
            };
            let mut e = vec![("min", num(*min)), ("max", num(*max))];
            if let Some(st) = step {
                e.push(("step", num(*st)));
            }
            map(e)
        }
        FeasibleSpace::List(values) => map(vec![(
            "list",
            Value::Sequence(values.iter().map(|v| s(v)).collect()),
        )]),
    };
    map(vec![
        ("name", s(&p.name)),
        ("parameterType", s(p.parameter_type.as_str())),
        ("feasibleSpace", space),
    ])
}

fn to_value(spec: &ExperimentSpec) -> Value {
    let o = &spec.objective;
    let mut obj = vec![("type", s(o.kind.as_str()))];
    if let Some(g) = o.goal {
        obj.push(("goal", real(g)));
    }
    obj.push(("objectiveMetricName", s(&o.objective_metric_name)));
    obj.push((
        "additionalMetricNames",
        Value::Sequence(o.additional_metric_names.iter().map(|m| s(m)).collect()),
    ));
    obj.push(("bestValueRule", s(o.best_value_rule.as_str())));

    let mut settings = Mapping::new();
    for (k, v) in &spec.algorithm.settings {
        settings.insert(s(k), setting_value(v));
    }

    let t = &spec.trial_template;
    let mut tpl = vec![
        ("kind", s(t.kind())),
        ("workerCount", uint(t.worker_count as u64)),
        ("cpuPerWorker", real(t.cpu_per_worker)),
        ("restartPolicy", s(t.restart_policy.as_str())),
    ];
    match &t.payload {
        TemplatePayload::Command(c) => tpl.push(("command", s(c))),
        TemplatePayload::Simulated(so) => tpl.push((
            "objective",
            map(vec![
                ("functionName", s(&so.function_name)),
                ("durationTicks", uint(so.duration_ticks as u64)),
                ("noiseStdDev", real(so.noise_std_dev)),
                ("rngSeedOffset", uint(so.rng_seed_offset)),
            ]),
        )),
    }

    map(vec![
        ("name", s(&spec.name)),
        ("namespace", s(&spec.namespace)),
        ("objective", map(obj)),
        (
            "algorithm",
            map(vec![
                ("algorithmName", s(&spec.algorithm.algorithm_name)),
                ("algorithmSettings", Value::Mapping(settings)),
            ]),
        ),
        ("parallelTrialCount", uint(spec.parallel_trial_count as u64)),
        ("maxTrialCount", uint(spec.max_trial_count as u64)),
        ("maxFailedTrialCount", uint(spec.max_failed_trial_count as u64)),
        ("metricCollectorKind", s(spec.metric_collector_kind.as_str())),
        (
            "parameters",
            Value::Sequence(spec.parameters.iter().map(parameter_value).collect()),
        ),
        ("trialTemplate", map(tpl)),
    ])
}

impl Serialize for ExperimentSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        to_value(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ExperimentSpec {
    /// Accepts any algorithm name so that stored experiments of plugin
    /// algorithms load; the full catalog check happens at submission.
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Permissive;
        impl AlgorithmCatalog for Permissive {
            fn accepted_settings(&self, algorithm: &str) -> Option<AcceptedSettings> {
                BuiltinAlgorithms
                    .accepted_settings(algorithm)
                    .or(Some(AcceptedSettings::Any))
            }
        }
        let value = Value::deserialize(deserializer)?;
        from_value(&value, &Permissive).map_err(serde::de::Error::custom)
    }
}
