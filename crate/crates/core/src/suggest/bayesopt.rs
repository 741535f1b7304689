//! Bayesian optimisation with a GP surrogate and expected improvement.

use log::warn;

use super::gp::{expected_improvement, GaussianProcess};
use super::random::random_batch;
use super::{
    rng_for, space, AlgorithmState, SeenSets, SuggestionBatch, SuggestionError, SuggestionRequest,
    SuggestionService,
};
use crate::model::experiment::BAYESIAN_OPTIMIZATION;
use crate::model::{AssignmentSet, ParameterSpec};

pub struct BayesianOptimization {
    pub candidates: usize,
}

impl Default for BayesianOptimization {
    fn default() -> Self {
        Self { candidates: 1000 }
    }
}

/// Succeeded observations needed before the surrogate is used.
pub fn min_history(params: &[ParameterSpec]) -> usize {
    params.len() + 2
}

/// Zero-mean, unit-variance copy of `y`.
pub fn standardise(y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = if var > 1e-24 { var.sqrt() } else { 1.0 };
    y.iter().map(|v| (v - mean) / sd).collect()
}

struct Candidate {
    set: AssignmentSet,
    features: Vec<f64>,
}

impl BayesianOptimization {
    fn candidate_pool<R: rand::Rng + ?Sized>(
        &self,
        params: &[ParameterSpec],
        seen: &SeenSets,
        rng: &mut R,
    ) -> Vec<Candidate> {
        let mut pool: Vec<Candidate> = space::halton_points(self.candidates, params.len(), rng)
            .into_iter()
            .map(|u| {
                let set = AssignmentSet::new(
                    params
                        .iter()
                        .zip(&u)
                        .map(|(p, ui)| crate::model::Assignment::new(p.name.clone(), space::decode_unit(p, *ui)))
                        .collect(),
                );
                let features = space::embed(params, &set).expect("decoded values embed");
                Candidate { set, features }
            })
            .collect();
        let fresh: Vec<bool> = pool.iter().map(|c| !seen.contains(&c.set)).collect();
        if fresh.iter().any(|f| *f) {
            let mut i = 0;
            pool.retain(|_| {
                i += 1;
                fresh[i - 1]
            });
        }
        pool
    }
}

impl SuggestionService for BayesianOptimization {
    fn name(&self) -> &str {
        BAYESIAN_OPTIMIZATION
    }

    fn get_suggestions(
        &self,
        request: &SuggestionRequest<'_>,
        state: &mut AlgorithmState,
    ) -> Result<SuggestionBatch, SuggestionError> {
        let params = &request.experiment.parameters;
        let mut rng = rng_for(request.experiment, state.cursor);
        let mut seen = SeenSets::from_request(request);
        let observed = request.losses();
        let count = request.count;
        state.cursor += count as u64;

        if observed.len() < min_history(params) {
            let assignments = random_batch(params, count, &mut seen, &mut rng);
            return Ok(SuggestionBatch { assignments, exhausted: false });
        }

        let mut x: Vec<Vec<f64>> = Vec::with_capacity(observed.len() + count);
        let mut raw: Vec<f64> = Vec::with_capacity(observed.len());
        for (set, loss) in &observed {
            if let Some(f) = space::embed(params, set) {
                x.push(f);
                raw.push(*loss);
            }
        }
        let mut y = standardise(&raw);
        let liar = y.iter().cloned().fold(f64::INFINITY, f64::min);
        for pending in request.pending {
            if let Some(f) = space::embed(params, pending) {
                x.push(f);
                y.push(liar);
            }
        }

        let mut pool = self.candidate_pool(params, &seen, &mut rng);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let Some(gp) = GaussianProcess::fit_ml(&x, &y) else {
                warn!(
                    "{}: surrogate fit failed on {} points; sampling randomly",
                    request.experiment.key(),
                    x.len()
                );
                let rest = random_batch(params, count - out.len(), &mut seen, &mut rng);
                out.extend(rest);
                break;
            };
            if pool.is_empty() {
                out.extend(random_batch(params, 1, &mut seen, &mut rng));
                continue;
            }
            let best = y.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut pick = 0;
            let mut pick_ei = f64::NEG_INFINITY;
            for (i, c) in pool.iter().enumerate() {
                let (m, v) = gp.predict(&c.features);
                let ei = expected_improvement(m, v, best);
                if ei > pick_ei {
                    pick = i;
                    pick_ei = ei;
                }
            }
            let chosen = pool.swap_remove(pick);
            x.push(chosen.features);
            y.push(liar);
            seen.insert(chosen.set.clone());
            out.push(chosen.set);
        }
        Ok(SuggestionBatch { assignments: out, exhausted: false })
    }
}
