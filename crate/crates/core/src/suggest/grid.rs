//! Exhaustive grid search over the cross product of per-parameter points.

use super::{AlgorithmState, SuggestionBatch, SuggestionError, SuggestionRequest, SuggestionService};
use crate::model::experiment::GRID;
use crate::model::{Assignment, AssignmentSet, ParameterSpec};

pub struct GridSearch;

/// Per-parameter grid axes in declaration order.
pub fn axes(params: &[ParameterSpec]) -> Result<Vec<Vec<String>>, SuggestionError> {
    params
        .iter()
        .map(|p| {
            p.grid_points().ok_or_else(|| {
                SuggestionError::InvalidSetting(format!("parameter {} has no grid step", p.name))
            })
        })
        .collect()
}

/// Number of grid points, saturating.
pub fn grid_size(axes: &[Vec<String>]) -> u64 {
    axes.iter()
        .fold(1u64, |acc, a| acc.saturating_mul(a.len() as u64))
}

/// Point at mixed-radix `index`; the last parameter varies fastest.
pub fn grid_point(params: &[ParameterSpec], axes: &[Vec<String>], mut index: u64) -> AssignmentSet {
    let mut values = vec![String::new(); axes.len()];
    for (i, axis) in axes.iter().enumerate().rev() {
        let n = axis.len() as u64;
        values[i] = axis[(index % n) as usize].clone();
        index /= n;
    }
    AssignmentSet::new(
        params
            .iter()
            .zip(values)
            .map(|(p, v)| Assignment::new(p.name.clone(), v))
            .collect(),
    )
}

impl SuggestionService for GridSearch {
    fn name(&self) -> &str {
        GRID
    }

    fn get_suggestions(
        &self,
        request: &SuggestionRequest<'_>,
        state: &mut AlgorithmState,
    ) -> Result<SuggestionBatch, SuggestionError> {
        let params = &request.experiment.parameters;
        let axes = axes(params)?;
        let total = grid_size(&axes);
        if state.cursor >= total {
            return Err(SuggestionError::ExhaustedSearchSpace(state.cursor));
        }
        let end = state.cursor.saturating_add(request.count as u64).min(total);
        let assignments = (state.cursor..end)
            .map(|i| grid_point(params, &axes, i))
            .collect();
        state.cursor = end;
        Ok(SuggestionBatch {
            assignments,
            exhausted: end == total,
        })
    }
}
