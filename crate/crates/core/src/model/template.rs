//! `${...}` placeholder expansion for trial templates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::experiment::{SimObjective, TemplatePayload, TrialTemplate};
use super::value::{Assignment, AssignmentSet};

pub const TRIAL_NAME: &str = "trial.name";
pub const TRIAL_NAMESPACE: &str = "trial.namespace";
pub const HYPERPARAMETERS: &str = "hyperparameters";
/// Resource budget assigned by budgeted schedulers such as Hyperband.
pub const BUDGET: &str = "budget";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("unterminated placeholder starting at byte {0}")]
    Unterminated(usize),
    #[error("empty placeholder at byte {0}")]
    Empty(usize),
    #[error("unresolved placeholder ${{{0}}}")]
    Unresolved(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

/// Splits a template into literal and placeholder segments.
pub fn scan(template: &str) -> Result<Vec<Segment<'_>>, TemplateError> {
    let mut out = Vec::new();
    let mut rest = template;
    let mut offset = 0;
    while let Some(start) = rest.find("${") {
        if start > 0 {
            out.push(Segment::Literal(&rest[..start]));
        }
        let body = &rest[start + 2..];
        let end = body
            .find('}')
            .ok_or(TemplateError::Unterminated(offset + start))?;
        let name = body[..end].trim();
        if name.is_empty() {
            return Err(TemplateError::Empty(offset + start));
        }
        out.push(Segment::Placeholder(name));
        let consumed = start + 2 + end + 1;
        offset += consumed;
        rest = &rest[consumed..];
    }
    if !rest.is_empty() {
        out.push(Segment::Literal(rest));
    }
    Ok(out)
}

/// Names of all placeholders referenced by `template`, in order of appearance.
pub fn placeholders(template: &str) -> Result<Vec<String>, TemplateError> {
    Ok(scan(template)?
        .into_iter()
        .filter_map(|s| match s {
            Segment::Placeholder(p) => Some(p.to_string()),
            Segment::Literal(_) => None,
        })
        .collect())
}

/// Concrete workload produced from a template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RunPayload {
    Command(String),
    Simulated(SimObjective),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialRunSpec {
    pub trial_name: String,
    pub namespace: String,
    pub resolved_payload: RunPayload,
    pub parameter_assignments: Vec<Assignment>,
}

fn expand(
    template: &str,
    assignments: &AssignmentSet,
    trial_name: &str,
    namespace: &str,
) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len() + 32);
    for seg in scan(template)? {
        match seg {
            Segment::Literal(s) => out.push_str(s),
            Segment::Placeholder(TRIAL_NAME) => out.push_str(trial_name),
            Segment::Placeholder(TRIAL_NAMESPACE) => out.push_str(namespace),
            Segment::Placeholder(HYPERPARAMETERS) => {
                let joined: Vec<String> = assignments
                    .iter()
                    .map(|a| format!("--{}={}", a.name, a.value))
                    .collect();
                out.push_str(&joined.join(" "));
            }
            Segment::Placeholder(name) => {
                let v = assignments
                    .get(name)
                    .ok_or_else(|| TemplateError::Unresolved(name.to_string()))?;
                out.push_str(v);
            }
        }
    }
    Ok(out)
}

/// Substitutes trial name, namespace and assignments into the template.
pub fn render_trial_spec(
    template: &TrialTemplate,
    assignments: &AssignmentSet,
    trial_name: &str,
    namespace: &str,
) -> Result<TrialRunSpec, TemplateError> {
    let resolved_payload = match &template.payload {
        TemplatePayload::Command(cmd) => {
            RunPayload::Command(expand(cmd, assignments, trial_name, namespace)?)
        }
        TemplatePayload::Simulated(obj) => RunPayload::Simulated(obj.clone()),
    };
    Ok(TrialRunSpec {
        trial_name: trial_name.to_string(),
        namespace: namespace.to_string(),
        resolved_payload,
        parameter_assignments: assignments.0.clone(),
    })
}
