//! Sampling and unit-cube encodings of a parameter space.

use rand::Rng;

use crate::model::{Assignment, AssignmentSet, FeasibleSpace, ParameterSpec};

/// Number of steps above `min` for a stepped numeric parameter.
fn step_count(p: &ParameterSpec) -> Option<(f64, u64)> {
    let step = p.grid_step()?;
    let (min, max) = p.bounds()?;
    Some((step, ((max - min) / step + 1e-9).floor() as u64))
}

fn stepped_value(p: &ParameterSpec, k: u64) -> String {
    let (min, _) = p.bounds().expect("numeric");
    let step = p.grid_step().expect("stepped");
    let x = min + k as f64 * step;
    let snapped = (x * 1e12).round() / 1e12;
    p.render_numeric(snapped)
}

/// Uniform draw from one parameter's feasible space.
pub fn sample_value<R: Rng + ?Sized>(p: &ParameterSpec, rng: &mut R) -> String {
    match &p.feasible_space {
        FeasibleSpace::List(values) => values[rng.random_range(0..values.len())].clone(),
        FeasibleSpace::Range { min, max, .. } => match step_count(p) {
            Some((_, n)) => stepped_value(p, rng.random_range(0..=n)),
            None => p.render_numeric(rng.random_range(*min..=*max)),
        },
    }
}

pub fn sample_set<R: Rng + ?Sized>(params: &[ParameterSpec], rng: &mut R) -> AssignmentSet {
    AssignmentSet::new(
        params
            .iter()
            .map(|p| Assignment::new(p.name.clone(), sample_value(p, rng)))
            .collect(),
    )
}

/// Maps `u` in [0, 1] onto the parameter: linear for ranges (rounded for
/// integers and stepped ranges), bucketed for value lists.
pub fn decode_unit(p: &ParameterSpec, u: f64) -> String {
    let u = u.clamp(0.0, 1.0);
    match &p.feasible_space {
        FeasibleSpace::List(values) => {
            let i = ((u * values.len() as f64) as usize).min(values.len() - 1);
            values[i].clone()
        }
        FeasibleSpace::Range { min, max, .. } => match step_count(p) {
            Some((_, n)) => {
                let k = (u * n as f64).round() as u64;
                stepped_value(p, k.min(n))
            }
            None => p.render_numeric(min + u * (max - min)),
        },
    }
}

/// Position of a numeric value in [0, 1].
pub fn encode_numeric(p: &ParameterSpec, value: &str) -> Option<f64> {
    let (min, max) = p.bounds()?;
    let x: f64 = value.parse().ok()?;
    if max <= min {
        return Some(0.0);
    }
    Some(((x - min) / (max - min)).clamp(0.0, 1.0))
}

/// Index of a list value.
pub fn encode_choice(p: &ParameterSpec, value: &str) -> Option<usize> {
    p.values().iter().position(|v| v == value)
}

/// Width of the feature vector used by the GP surrogate: one column per
/// numeric parameter, one-hot columns per value-list parameter.
pub fn embedding_width(params: &[ParameterSpec]) -> usize {
    params
        .iter()
        .map(|p| match &p.feasible_space {
            FeasibleSpace::List(v) => v.len(),
            FeasibleSpace::Range { .. } => 1,
        })
        .sum()
}

pub fn embed(params: &[ParameterSpec], set: &AssignmentSet) -> Option<Vec<f64>> {
    let mut out = Vec::with_capacity(embedding_width(params));
    for p in params {
        let v = set.get(&p.name)?;
        match &p.feasible_space {
            FeasibleSpace::List(values) => {
                let idx = encode_choice(p, v)?;
                out.extend((0..values.len()).map(|i| if i == idx { 1.0 } else { 0.0 }));
            }
            FeasibleSpace::Range { .. } => out.push(encode_numeric(p, v)?),
        }
    }
    Some(out)
}

/// Whether `set` has exactly one feasible entry per declared parameter, in
/// declaration order, optionally followed by extra named entries.
pub fn is_feasible(params: &[ParameterSpec], set: &AssignmentSet, extras: &[&str]) -> bool {
    if set.len() != params.len() + extras.len() {
        return false;
    }
    let declared_ok = params
        .iter()
        .zip(set.iter())
        .all(|(p, a)| a.name == p.name && p.contains(&a.value));
    let extras_ok = set
        .iter()
        .skip(params.len())
        .zip(extras)
        .all(|(a, name)| a.name == *name);
    declared_ok && extras_ok
}

/// Radical inverse of `i` in base `b`.
fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let inv = 1.0 / b as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % b) as f64;
        i /= b;
        f *= inv;
    }
    r
}

const PRIMES: [u64; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131,
];

/// `n` points of a randomly shifted Halton sequence in [0, 1)^dim. Dimensions
/// beyond the prime table fall back to plain uniform draws.
pub fn halton_points<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    (1..=n as u64)
        .map(|i| {
            (0..dim)
                .map(|d| match PRIMES.get(d) {
                    Some(&b) => (radical_inverse(i, b) + shift[d]).fract(),
                    None => rng.random::<f64>(),
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn halton_base_two_is_van_der_corput() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = halton_points(100, 3, &mut rng);
        assert!(pts.iter().flatten().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn decode_respects_types() {
        let i = ParameterSpec::int("n", 1, 5);
        assert_eq!(decode_unit(&i, 0.0), "1");
        assert_eq!(decode_unit(&i, 1.0), "5");
        let c = ParameterSpec::categorical("o", &["a", "b", "c"]);
        assert_eq!(decode_unit(&c, 0.999), "c");
        assert_eq!(decode_unit(&c, 0.34), "b");
        let d = ParameterSpec::double("x", -1.0, 1.0);
        assert_eq!(decode_unit(&d, 0.5), "0");
    }

    #[test]
    fn single_point_range_encodes_to_zero() {
        let p = ParameterSpec::int("n", 3, 3);
        assert_eq!(encode_numeric(&p, "3"), Some(0.0));
        assert_eq!(decode_unit(&p, 0.7), "3");
    }

    #[test]
    fn embedding_one_hot() {
        let params = vec![
            ParameterSpec::double("x", 0.0, 2.0),
            ParameterSpec::categorical("o", &["a", "b"]),
        ];
        let set = AssignmentSet::new(vec![Assignment::new("x", "0.5"), Assignment::new("o", "b")]);
        assert_eq!(embed(&params, &set).unwrap(), vec![0.25, 0.0, 1.0]);
        assert_eq!(embedding_width(&params), 3);
    }
}
