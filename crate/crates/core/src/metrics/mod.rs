//! Observation logs: per-trial metric series behind a small storage
//! interface, plus the two ingestion paths (log parsing and push).

mod file;
mod memory;
mod parse;
pub mod push;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BestValueRule, ObjectiveSpec};

pub use file::FileStore;
pub use memory::InMemoryStore;
pub use parse::{format_metric_line, parse_metric_line, parse_metric_lines, parse_timestamp, LineParse, ParsedMetrics};

/// One reported metric value. Timestamps are opaque ordinals: simulator
/// ticks or wall-clock milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    #[serde(rename = "trial")]
    pub trial_name: String,
    #[serde(rename = "metric")]
    pub metric_name: String,
    #[serde(rename = "ts")]
    pub timestamp: i64,
    pub value: f64,
}

impl MetricPoint {
    pub fn new(trial: &str, metric: &str, timestamp: i64, value: f64) -> Self {
        Self {
            trial_name: trial.to_string(),
            metric_name: metric.to_string(),
            timestamp,
            value,
        }
    }

    fn identity(&self) -> (String, i64, u64) {
        (self.metric_name.clone(), self.timestamp, self.value.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationFilter {
    pub start: Option<i64>,
    pub end: Option<i64>,
    pub metric_names: Option<Vec<String>>,
}

impl ObservationFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn metrics(names: &[&str]) -> Self {
        Self {
            metric_names: Some(names.iter().map(|s| s.to_string()).collect()),
            ..Self::default()
        }
    }

    /// Inclusive on both bounds.
    pub fn matches(&self, p: &MetricPoint) -> bool {
        self.start.is_none_or(|s| p.timestamp >= s)
            && self.end.is_none_or(|e| p.timestamp <= e)
            && self
                .metric_names
                .as_ref()
                .is_none_or(|names| names.contains(&p.metric_name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    /// Backend could not be reached; the call may be retried.
    #[error("observation store unavailable: {0}")]
    Unavailable(String),
    #[error("invalid observation request: {0}")]
    InvalidInput(String),
}

impl StoreError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, StoreError::Unavailable(_))
    }
}

/// Storage for observation logs.
pub trait ObservationStore: Send + Sync {
    /// Appends `points`, all of one trial. Exact repeats are ignored.
    fn register(&self, points: &[MetricPoint]) -> Result<(), StoreError>;

    /// Points of `trial` in timestamp order, ties by metric name then
    /// insertion order. Unknown trials yield an empty list.
    fn get(&self, trial: &str, filter: &ObservationFilter) -> Result<Vec<MetricPoint>, StoreError>;

    fn delete(&self, trial: &str) -> Result<(), StoreError>;
}

/// Trial names double as file names in the file backend.
fn check_trial_name(trial: &str) -> Result<(), StoreError> {
    let ok = !trial.is_empty()
        && !trial.starts_with('.')
        && trial
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidInput(format!("trial name `{trial}` is not file-safe")))
    }
}

/// Checks a register call and returns its trial name.
pub(crate) fn validate_batch(points: &[MetricPoint]) -> Result<&str, StoreError> {
    let first = points
        .first()
        .ok_or_else(|| StoreError::InvalidInput("empty batch".into()))?;
    let trial = first.trial_name.as_str();
    check_trial_name(trial)?;
    for p in points {
        if p.trial_name != trial {
            return Err(StoreError::InvalidInput(format!(
                "batch mixes trials {trial} and {}",
                p.trial_name
            )));
        }
        if p.metric_name.is_empty() {
            return Err(StoreError::InvalidInput("empty metric name".into()));
        }
        if !p.value.is_finite() {
            return Err(StoreError::InvalidInput(format!(
                "non-finite value for {}",
                p.metric_name
            )));
        }
    }
    Ok(trial)
}

/// Append-ordered log of one trial with duplicate suppression.
#[derive(Debug, Default, Clone)]
pub(crate) struct TrialLog {
    points: Vec<MetricPoint>,
    seen: std::collections::HashSet<(String, i64, u64)>,
}

impl TrialLog {
    /// Adds `p` unless an identical point exists; reports whether it was new.
    pub(crate) fn push(&mut self, p: MetricPoint) -> bool {
        if self.seen.insert(p.identity()) {
            self.points.push(p);
            true
        } else {
            false
        }
    }

    pub(crate) fn query(&self, filter: &ObservationFilter) -> Vec<MetricPoint> {
        let mut out: Vec<MetricPoint> = self.points.iter().filter(|p| filter.matches(p)).cloned().collect();
        out.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.metric_name.cmp(&b.metric_name))
        });
        out
    }
}

/// Per-trial scalar used for comparison and goal checks.
pub fn best_objective(points: &[MetricPoint], objective: &ObjectiveSpec) -> Option<f64> {
    let series = points
        .iter()
        .filter(|p| p.metric_name == objective.objective_metric_name);
    match objective.best_value_rule {
        // last point with the largest timestamp; input is in store order
        BestValueRule::Latest => series
            .fold(None, |acc: Option<&MetricPoint>, p| match acc {
                Some(a) if a.timestamp > p.timestamp => Some(a),
                _ => Some(p),
            })
            .map(|p| p.value),
        BestValueRule::Max => series.map(|p| p.value).reduce(f64::max),
        BestValueRule::Min => series.map(|p| p.value).reduce(f64::min),
    }
}

/// Latest value of every named metric.
pub fn latest_values(points: &[MetricPoint], names: &[String]) -> Vec<Option<f64>> {
    names
        .iter()
        .map(|n| {
            points
                .iter()
                .filter(|p| &p.metric_name == n)
                .fold(None, |acc: Option<&MetricPoint>, p| match acc {
                    Some(a) if a.timestamp > p.timestamp => Some(a),
                    _ => Some(p),
                })
                .map(|p| p.value)
        })
        .collect()
}
