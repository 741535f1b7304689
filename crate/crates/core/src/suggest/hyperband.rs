//! Hyperband: successive halving over a sequence of brackets.
//!
//! The scheduler hands out configurations one rung at a time. A rung's
//! promotions are decided only once every trial of the rung has reported,
//! so a call may return fewer suggestions than requested while the current
//! rung is still running.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::random::random_batch;
use super::{
    rng_for, AlgorithmState, SeenSets, SuggestionBatch, SuggestionError, SuggestionRequest,
    SuggestionService, TrialObservation,
};
use crate::model::experiment::HYPERBAND;
use crate::model::template::BUDGET;
use crate::model::{format_real, AssignmentSet, ExperimentSpec, ObjectiveType};

pub const DEFAULT_MAX_RESOURCE: f64 = 81.0;
pub const DEFAULT_ETA: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rung {
    pub configs: u64,
    pub resource: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperbandSchedule {
    pub max_resource: f64,
    pub eta: u64,
    pub s_max: u32,
}

impl HyperbandSchedule {
    pub fn new(max_resource: f64, eta: u64) -> Self {
        let mut s_max = 0u32;
        while (eta as f64).powi(s_max as i32 + 1) <= max_resource {
            s_max += 1;
        }
        Self { max_resource, eta, s_max }
    }

    pub fn from_experiment(e: &ExperimentSpec) -> Self {
        let s = &e.algorithm.settings;
        let r = s.get("max_resource").and_then(|v| v.as_f64()).unwrap_or(DEFAULT_MAX_RESOURCE);
        let eta = s
            .get("eta")
            .and_then(|v| v.as_i64())
            .map(|v| v as u64)
            .unwrap_or(DEFAULT_ETA);
        Self::new(r, eta)
    }

    /// Configurations started by bracket `s`.
    pub fn bracket_size(&self, s: u32) -> u64 {
        let num = (self.s_max as u64 + 1) * self.eta.pow(s);
        num.div_ceil(s as u64 + 1)
    }

    pub fn rung(&self, s: u32, i: u32) -> Rung {
        Rung {
            configs: self.bracket_size(s) / self.eta.pow(i),
            resource: self.max_resource * (self.eta as f64).powi(i as i32 - s as i32),
        }
    }

    pub fn bracket(&self, s: u32) -> Vec<Rung> {
        (0..=s).map(|i| self.rung(s, i)).collect()
    }

    /// Brackets in execution order, most exploratory first.
    pub fn brackets(&self) -> Vec<(u32, Vec<Rung>)> {
        (0..=self.s_max).rev().map(|s| (s, self.bracket(s))).collect()
    }

    pub fn total_trials(&self) -> u64 {
        self.brackets()
            .iter()
            .flat_map(|(_, b)| b.iter().map(|r| r.configs))
            .sum()
    }
}

/// Indices of the `floor(n / eta)` best entries by loss; failures rank last,
/// ties keep input order.
pub fn promote(losses: &[Option<f64>], eta: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| match (losses[a], losses[b]) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    idx.truncate(losses.len() / eta as usize);
    idx
}

/// Position in the schedule.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HyperbandState {
    pub bracket: u32,
    pub rung: u32,
    /// Configurations (without budget) waiting to run in the current rung.
    #[serde(default)]
    pub queue: Vec<AssignmentSet>,
    /// Suggestions (with budget) handed out for the current rung.
    #[serde(default)]
    pub issued: Vec<AssignmentSet>,
    #[serde(default)]
    pub done: bool,
}

pub struct Hyperband;

/// Losses of `issued` matched against `history`, each observation used at most
/// once. `None` overall if some issued suggestion has not reported yet.
fn rung_results(
    issued: &[AssignmentSet],
    history: &[TrialObservation],
    kind: ObjectiveType,
) -> Option<Vec<Option<f64>>> {
    let mut pool: HashMap<&AssignmentSet, Vec<&TrialObservation>> = HashMap::new();
    for o in history {
        pool.entry(&o.assignments).or_default().push(o);
    }
    issued
        .iter()
        .map(|set| pool.get_mut(set).and_then(|v| v.pop()).map(|o| o.loss(kind)))
        .collect()
}

impl SuggestionService for Hyperband {
    fn name(&self) -> &str {
        HYPERBAND
    }

    fn accepted_settings(&self) -> crate::model::AcceptedSettings {
        crate::model::AcceptedSettings::Only(
            ["random_state", "max_resource", "eta"].iter().map(|s| s.to_string()).collect(),
        )
    }

    fn fresh_state(&self, experiment: &ExperimentSpec) -> AlgorithmState {
        let schedule = HyperbandSchedule::from_experiment(experiment);
        AlgorithmState {
            hyperband: Some(HyperbandState {
                bracket: schedule.s_max,
                ..Default::default()
            }),
            ..AlgorithmState::fresh(HYPERBAND)
        }
    }

    fn extra_assignments(&self) -> &'static [&'static str] {
        &[BUDGET]
    }

    fn get_suggestions(
        &self,
        request: &SuggestionRequest<'_>,
        state: &mut AlgorithmState,
    ) -> Result<SuggestionBatch, SuggestionError> {
        if let Some(o) = request.history.iter().find(|o| o.resource_consumed.is_none()) {
            return Err(SuggestionError::MissingResource(o.assignments.to_string()));
        }
        let e = request.experiment;
        let schedule = HyperbandSchedule::from_experiment(e);
        let params = &e.parameters;
        let mut rng = rng_for(e, state.cursor);
        let mut seen = SeenSets::from_request(request);
        let mut hb = state
            .hyperband
            .clone()
            .unwrap_or_else(|| HyperbandState { bracket: schedule.s_max, ..Default::default() });
        let mut out = Vec::new();

        while !hb.done && out.len() < request.count {
            let rung = schedule.rung(hb.bracket, hb.rung);
            let target = rung.configs as usize;
            if hb.issued.len() < target {
                let n = (request.count - out.len()).min(target - hb.issued.len());
                let configs = if hb.rung == 0 {
                    random_batch(params, n, &mut seen, &mut rng)
                } else {
                    hb.queue[hb.issued.len()..hb.issued.len() + n].to_vec()
                };
                for c in configs {
                    let set = c.with(BUDGET, format_real(rung.resource));
                    hb.issued.push(set.clone());
                    out.push(set);
                }
                continue;
            }
            let Some(losses) = rung_results(&hb.issued, request.history, e.objective.kind) else {
                break;
            };
            if hb.rung == hb.bracket {
                if hb.bracket == 0 {
                    hb.done = true;
                } else {
                    hb.bracket -= 1;
                }
                hb.rung = 0;
                hb.queue.clear();
            } else {
                hb.queue = promote(&losses, schedule.eta)
                    .into_iter()
                    .map(|i| hb.issued[i].without(BUDGET))
                    .collect();
                hb.rung += 1;
            }
            hb.issued.clear();
        }

        state.cursor += out.len() as u64;
        let exhausted = hb.done;
        state.hyperband = Some(hb);
        Ok(SuggestionBatch { assignments: out, exhausted })
    }
}
