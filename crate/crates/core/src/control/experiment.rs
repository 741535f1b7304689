use super::resource::{
    trial_name, Experiment, ExperimentPhase, ExperimentStatus, OptimalTrial, Resource, ResourceKey, Suggestion,
    SuggestionSpec, SuggestionStatus, Trial, TrialPhase, TrialSpec, TrialStatus,
};
use super::store::Mutation;
use super::{trials_of, ControlError, ControlPlane};

pub const REASON_GOAL_REACHED: &str = "GoalReached";
pub const REASON_MAX_TRIALS: &str = "MaxTrialsReached";
pub const REASON_EXHAUSTED: &str = "SuggestionsExhausted";
pub const REASON_MAX_FAILED: &str = "MaxFailedTrialsReached";
pub const REASON_SUGGESTION_FAILED: &str = "SuggestionFailed";

fn count(status: &mut ExperimentStatus, phase: TrialPhase) {
    match phase {
        TrialPhase::Created | TrialPhase::Pending => status.trials_pending += 1,
        TrialPhase::Running => status.trials_running += 1,
        TrialPhase::Succeeded => status.trials_succeeded += 1,
        TrialPhase::Failed => status.trials_failed += 1,
    }
}

impl ControlPlane {
    pub fn reconcile_experiment(&self, key: &ResourceKey) -> Result<Vec<Mutation>, ControlError> {
        let entry = self.store.get(key).ok_or_else(|| ControlError::NotFound(key.clone()))?;
        let exp = entry.resource.as_experiment().expect("experiment key");
        let spec = &exp.spec;
        let ns = &key.namespace;
        let trials = trials_of(&self.store, ns, &key.name);

        let mut status = ExperimentStatus {
            phase: exp.status.phase,
            reason: exp.status.reason.clone(),
            ..Default::default()
        };
        for (k, _, t) in &trials {
            count(&mut status, t.status.phase);
            if let (TrialPhase::Succeeded, Some(v)) = (t.status.phase, t.status.observation) {
                let better = status
                    .current_optimal
                    .as_ref()
                    .is_none_or(|o| spec.objective.kind.better(v, o.objective_value));
                if better {
                    status.current_optimal = Some(OptimalTrial {
                        trial_name: k.name.clone(),
                        assignments: t.spec.assignments.clone(),
                        objective_value: v,
                    });
                }
            }
        }
        status.trials_spawned = trials.len() as u32;

        let mut out = Vec::new();
        if status.phase == ExperimentPhase::Created {
            status.phase = ExperimentPhase::Running;
        }

        let skey = ResourceKey::suggestion(ns, &key.name);
        if !status.phase.is_terminal() {
            match self.store.get(&skey) {
                None => out.push(Mutation::Create {
                    key: skey,
                    resource: Resource::Suggestion(Suggestion {
                        spec: SuggestionSpec {
                            algorithm_name: spec.algorithm.algorithm_name.clone(),
                            requested: spec.parallel_trial_count.min(spec.max_trial_count),
                        },
                        status: SuggestionStatus::default(),
                    }),
                }),
                Some(sentry) => {
                    let sugg = sentry.resource.as_suggestion().expect("suggestion key");
                    if let Some((phase, reason)) = terminal_transition(exp, &status, sugg) {
                        status.phase = phase;
                        status.reason = Some(reason.to_string());
                    } else {
                        self.spawn(key, exp, sugg, sentry.generation, &trials, &mut status, &mut out);
                    }
                }
            }
        }

        if status.phase.is_terminal() {
            for (k, generation, t) in &trials {
                if !t.status.phase.is_terminal() && !t.spec.cancel {
                    let mut t2 = (*t).clone();
                    t2.spec.cancel = true;
                    out.push(Mutation::Update {
                        key: (*k).clone(),
                        expected_generation: *generation,
                        resource: Resource::Trial(t2),
                    });
                }
            }
        }

        if status != exp.status {
            out.push(Mutation::Update {
                key: key.clone(),
                expected_generation: entry.generation,
                resource: Resource::Experiment(Box::new(Experiment {
                    spec: spec.clone(),
                    status,
                })),
            });
        }
        Ok(out)
    }

    /// Creates trials for unconsumed suggestions within the parallelism and
    /// trial budgets, then tops up the suggestion request.
    #[allow(clippy::too_many_arguments)]
    fn spawn(
        &self,
        key: &ResourceKey,
        exp: &Experiment,
        sugg: &Suggestion,
        sugg_generation: u64,
        trials: &[(&ResourceKey, u64, &Trial)],
        status: &mut ExperimentStatus,
        out: &mut Vec<Mutation>,
    ) {
        let spec = &exp.spec;
        let ns = &key.namespace;
        let parallel = spec.parallel_trial_count;
        let max = spec.max_trial_count;
        let mut active = status.trials_pending + status.trials_running;
        let mut spawned = status.trials_spawned;
        let existing = trials.len();
        let mut next = sugg.clone();

        for (i, entry) in sugg.status.produced.iter().enumerate() {
            if i < existing {
                next.status.produced[i].consumed = true;
                continue;
            }
            if active >= parallel || spawned >= max {
                break;
            }
            let name = trial_name(&key.name, i);
            out.push(Mutation::Create {
                key: ResourceKey::trial(ns, &name),
                resource: Resource::Trial(Trial {
                    spec: TrialSpec {
                        experiment: key.name.clone(),
                        index: i as u32,
                        assignments: entry.assignments.clone(),
                        cancel: false,
                    },
                    status: TrialStatus::default(),
                }),
            });
            next.status.produced[i].consumed = true;
            active += 1;
            spawned += 1;
            status.trials_pending += 1;
        }
        status.trials_spawned = spawned;

        let target = (spawned + parallel.saturating_sub(active)).min(max);
        if target > next.spec.requested {
            next.spec.requested = target;
        }
        if next != *sugg {
            out.push(Mutation::Update {
                key: ResourceKey::suggestion(ns, &key.name),
                expected_generation: sugg_generation,
                resource: Resource::Suggestion(next),
            });
        }
    }
}

/// Phase change implied by the current counters, if any. Failure wins over
/// success when both apply.
fn terminal_transition(
    exp: &Experiment,
    status: &ExperimentStatus,
    sugg: &Suggestion,
) -> Option<(ExperimentPhase, &'static str)> {
    let spec = &exp.spec;
    let active = status.trials_pending + status.trials_running;
    if status.trials_failed > spec.max_failed_trial_count {
        return Some((ExperimentPhase::Failed, REASON_MAX_FAILED));
    }
    if let (Some(goal), Some(best)) = (spec.objective.goal, &status.current_optimal) {
        if spec.objective.kind.meets_goal(best.objective_value, goal) {
            return Some((ExperimentPhase::Succeeded, REASON_GOAL_REACHED));
        }
    }
    if status.trials_succeeded + status.trials_failed >= spec.max_trial_count {
        return Some((ExperimentPhase::Succeeded, REASON_MAX_TRIALS));
    }
    let all_consumed = sugg.status.produced.len() as u32 <= status.trials_spawned;
    if sugg.status.failure.is_some() && active == 0 && all_consumed {
        return Some((ExperimentPhase::Failed, REASON_SUGGESTION_FAILED));
    }
    if sugg.status.exhausted && active == 0 && all_consumed {
        return Some((ExperimentPhase::Succeeded, REASON_EXHAUSTED));
    }
    None
}
