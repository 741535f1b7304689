//! Tree-structured Parzen estimator.

use rand::Rng;

use super::random::random_batch;
use super::{
    rng_for, space, AlgorithmState, SeenSets, SuggestionBatch, SuggestionError, SuggestionRequest,
    SuggestionService,
};
use crate::model::experiment::TPE;
use crate::model::{Assignment, AssignmentSet, FeasibleSpace, ParameterSpec};

pub struct Tpe {
    pub gamma: f64,
    pub candidates: usize,
    pub min_history: usize,
}

impl Default for Tpe {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            candidates: 24,
            min_history: 10,
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Mixture of Gaussians truncated to [0, 1] plus a uniform prior component.
#[derive(Debug, Clone)]
pub struct Parzen {
    centers: Vec<f64>,
    widths: Vec<f64>,
}

impl Parzen {
    pub fn new(points: &[f64]) -> Self {
        let mut order: Vec<f64> = points.to_vec();
        order.sort_by(f64::total_cmp);
        let mut edges = vec![0.0];
        edges.extend(order.iter().copied());
        edges.push(1.0);
        let widths = (0..order.len())
            .map(|i| {
                let left = edges[i + 1] - edges[i];
                let right = edges[i + 2] - edges[i + 1];
                left.max(right).clamp(0.01, 1.0)
            })
            .collect();
        Self { centers: order, widths }
    }

    fn prior_weight(&self) -> f64 {
        1.0 / (self.centers.len() as f64 + 1.0)
    }

    pub fn density(&self, u: f64) -> f64 {
        let w = self.prior_weight();
        let mut d = w;
        for (&mu, &s) in self.centers.iter().zip(&self.widths) {
            let z = normal_cdf((1.0 - mu) / s) - normal_cdf(-mu / s);
            let pdf = (-0.5 * ((u - mu) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            d += w * pdf / z.max(1e-12);
        }
        d
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let k = rng.random_range(0..=self.centers.len());
        if k == self.centers.len() {
            return rng.random::<f64>();
        }
        let (mu, s) = (self.centers[k], self.widths[k]);
        let normal = rand_distr::Normal::new(mu, s).expect("positive width");
        for _ in 0..100 {
            let u: f64 = rand_distr::Distribution::sample(&normal, rng);
            if (0.0..=1.0).contains(&u) {
                return u;
            }
        }
        mu
    }
}

/// Smoothed category frequencies.
#[derive(Debug, Clone)]
pub struct CategoryModel {
    probs: Vec<f64>,
}

impl CategoryModel {
    pub fn new(indices: &[usize], k: usize) -> Self {
        let n = indices.len() as f64;
        let mut counts = vec![0.0; k];
        for &i in indices {
            counts[i] += 1.0;
        }
        Self {
            probs: counts.iter().map(|c| (c + 1.0) / (n + k as f64)).collect(),
        }
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut r: f64 = rng.random();
        for (i, p) in self.probs.iter().enumerate() {
            if r < *p {
                return i;
            }
            r -= p;
        }
        self.probs.len() - 1
    }
}

enum Dim {
    Numeric { good: Parzen, bad: Parzen },
    Choice { good: CategoryModel, bad: CategoryModel },
}

fn build_dims(params: &[ParameterSpec], good: &[&AssignmentSet], bad: &[&AssignmentSet]) -> Vec<Dim> {
    params
        .iter()
        .map(|p| match &p.feasible_space {
            FeasibleSpace::List(values) => {
                let idx = |sets: &[&AssignmentSet]| -> Vec<usize> {
                    sets.iter()
                        .filter_map(|s| s.get(&p.name).and_then(|v| space::encode_choice(p, v)))
                        .collect()
                };
                Dim::Choice {
                    good: CategoryModel::new(&idx(good), values.len()),
                    bad: CategoryModel::new(&idx(bad), values.len()),
                }
            }
            FeasibleSpace::Range { .. } => {
                let us = |sets: &[&AssignmentSet]| -> Vec<f64> {
                    sets.iter()
                        .filter_map(|s| s.get(&p.name).and_then(|v| space::encode_numeric(p, v)))
                        .collect()
                };
                Dim::Numeric {
                    good: Parzen::new(&us(good)),
                    bad: Parzen::new(&us(bad)),
                }
            }
        })
        .collect()
}

/// Draws one candidate from the good-set model and returns it with its
/// log l(x) - log g(x) score.
fn draw_candidate<R: Rng + ?Sized>(params: &[ParameterSpec], dims: &[Dim], rng: &mut R) -> (AssignmentSet, f64) {
    let mut score = 0.0;
    let mut out = Vec::with_capacity(params.len());
    for (p, d) in params.iter().zip(dims) {
        let value = match d {
            Dim::Choice { good, bad } => {
                let i = good.sample(rng);
                score += good.prob(i).ln() - bad.prob(i).ln();
                p.values()[i].clone()
            }
            Dim::Numeric { good, bad } => {
                let v = space::decode_unit(p, good.sample(rng));
                let u = space::encode_numeric(p, &v).expect("decoded numeric");
                score += good.density(u).ln() - bad.density(u).ln();
                v
            }
        };
        out.push(Assignment::new(p.name.clone(), value));
    }
    (AssignmentSet::new(out), score)
}

impl SuggestionService for Tpe {
    fn name(&self) -> &str {
        TPE
    }

    fn get_suggestions(
        &self,
        request: &SuggestionRequest<'_>,
        state: &mut AlgorithmState,
    ) -> Result<SuggestionBatch, SuggestionError> {
        let params = &request.experiment.parameters;
        let mut rng = rng_for(request.experiment, state.cursor);
        let mut seen = SeenSets::from_request(request);
        state.cursor += request.count as u64;

        let mut observed = request.losses();
        if observed.len() < self.min_history {
            let assignments = random_batch(params, request.count, &mut seen, &mut rng);
            return Ok(SuggestionBatch { assignments, exhausted: false });
        }
        observed.sort_by(|a, b| a.1.total_cmp(&b.1));
        let n_good = ((self.gamma * observed.len() as f64).ceil() as usize).max(1);
        let good: Vec<&AssignmentSet> = observed[..n_good].iter().map(|o| o.0).collect();
        let bad: Vec<&AssignmentSet> = observed[n_good..].iter().map(|o| o.0).collect();
        let dims = build_dims(params, &good, &bad);

        let mut out = Vec::with_capacity(request.count);
        for _ in 0..request.count {
            let mut best: Option<(AssignmentSet, f64)> = None;
            let mut best_fresh: Option<(AssignmentSet, f64)> = None;
            for _ in 0..self.candidates {
                let (set, score) = draw_candidate(params, &dims, &mut rng);
                if !seen.contains(&set) && best_fresh.as_ref().is_none_or(|b| score > b.1) {
                    best_fresh = Some((set.clone(), score));
                }
                if best.as_ref().is_none_or(|b| score > b.1) {
                    best = Some((set, score));
                }
            }
            let (chosen, _) = best_fresh.or(best).expect("at least one candidate");
            seen.insert(chosen.clone());
            out.push(chosen);
        }
        Ok(SuggestionBatch { assignments: out, exhausted: false })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ObjectiveType;
    use crate::suggest::{AlgorithmRegistry, TrialObservation};
    use rand::SeedableRng;

    #[test]
    fn parzen_integrates_to_one() {
        let p = Parzen::new(&[0.1, 0.15, 0.9]);
        let n = 20_000;
        let integral: f64 = (0..n).map(|i| p.density((i as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64;
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| (0.0..=1.0).contains(&p.sample(&mut rng))));
    }

    #[test]
    fn category_smoothing() {
        let m = CategoryModel::new(&[0, 0, 0], 3);
        assert!((m.prob(0) - 4.0 / 6.0).abs() < 1e-12);
        assert!((m.prob(1) - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn good_category_is_favoured() {
        let params = vec![
            ParameterSpec::double("x", 0.0, 1.0),
            ParameterSpec::categorical("optimizer", &["sgd", "adam", "ftrl"]),
        ];
        let mut e = crate::testing::sphere_experiment("tpe", "ns", params, 2000, 1);
        e.algorithm.algorithm_name = TPE.into();
        e.objective.kind = ObjectiveType::Minimize;
        let opts = ["sgd", "adam", "ftrl"];
        let history: Vec<TrialObservation> = (0..40)
            .map(|i| {
                let opt = opts[i % 3];
                let x = (i as f64 * 0.618).fract();
                let loss = if opt == "sgd" { x * 0.1 } else { 1.0 + x };
                TrialObservation::succeeded(
                    AssignmentSet::new(vec![
                        Assignment::new("x", crate::model::format_real(x)),
                        Assignment::new("optimizer", opt),
                    ]),
                    loss,
                )
            })
            .collect();
        let reg = AlgorithmRegistry::default();
        let mut st = reg.fresh_state(&e).unwrap();
        let mut counts = [0usize; 3];
        for _ in 0..1000 {
            let req = SuggestionRequest { experiment: &e, history: &history, pending: &[], count: 1 };
            let b = reg.get_suggestions(&req, &mut st).unwrap();
            let o = b.assignments[0].get("optimizer").unwrap();
            counts[opts.iter().position(|x| *x == o).unwrap()] += 1;
        }
        // chi-square against uniform, 2 dof, p = 0.001 critical value 13.82
        let expected = 1000.0 / 3.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 > 13.82, "{counts:?}");
        assert!(counts[0] as f64 / 1000.0 > 1.0 / 3.0, "{counts:?}");
    }

    #[test]
    fn below_threshold_matches_random() {
        let params = vec![ParameterSpec::double("x", 0.0, 1.0)];
        let mut e = crate::testing::sphere_experiment("tpe", "ns", params, 20, 1);
        e.algorithm.algorithm_name = TPE.into();
        let reg = AlgorithmRegistry::default();
        let mut st = reg.fresh_state(&e).unwrap();
        let req = SuggestionRequest { experiment: &e, history: &[], pending: &[], count: 2 };
        let got = reg.get_suggestions(&req, &mut st).unwrap().assignments;
        let mut seen = SeenSets::from_request(&req);
        assert_eq!(got, random_batch(&e.parameters, 2, &mut seen, &mut rng_for(&e, 0)));
    }
}
