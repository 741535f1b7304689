//! Synthetic training objectives used by simulated trials.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::model::{Assignment, SimObjective};
use crate::model::template::BUDGET;

pub const SPHERE: &str = "sphere";
pub const ROSENBROCK: &str = "rosenbrock";
pub const MNIST_SURROGATE: &str = "mnist-surrogate";

pub const FUNCTION_NAMES: &[&str] = &[SPHERE, ROSENBROCK, MNIST_SURROGATE];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObjectiveError {
    #[error("unknown objective function `{0}`")]
    UnknownFunction(String),
    #[error("assignment `{name}` = `{value}` is not usable by {function}")]
    BadAssignment {
        function: String,
        name: String,
        value: String,
    },
}

fn numeric_inputs(assignments: &[Assignment]) -> Vec<f64> {
    assignments
        .iter()
        .filter(|a| a.name != BUDGET)
        .filter_map(|a| a.value.parse::<f64>().ok())
        .collect()
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

fn logistic_drop(x: f64, at: f64, width: f64) -> f64 {
    1.0 / (1.0 + ((x - at) / width).exp())
}

/// Final validation accuracy of the MNIST stand-in after full training.
///
/// SGD with a learning rate around 0.1-0.3 is best; Adam and FTRL top out
/// lower and diverge at large learning rates. Depth and batch size have mild
/// quadratic penalties around 3-4 layers and ~850 samples.
pub fn mnist_accuracy(lr: f64, num_layers: f64, batch_size: f64, optimizer: &str) -> f64 {
    let (peak, learn, diverge) = match optimizer.to_ascii_lowercase().as_str() {
        "adam" => (
            0.95,
            1.0 - (-lr / 0.0005).exp(),
            logistic_drop(lr, 0.05, 0.02),
        ),
        "ftrl" => (
            0.92,
            1.0 - (-lr / 0.05).exp(),
            logistic_drop(lr, 0.6, 0.08),
        ),
        _ => (
            0.99,
            1.0 - (-lr / 0.02).exp(),
            logistic_drop(lr, 0.5, 0.04),
        ),
    };
    let depth = 1.0 - 0.01 * (num_layers - 3.5).powi(2);
    let batch = 1.0 - 0.02 * ((batch_size - 850.0) / 400.0).powi(2);
    0.1 + (peak - 0.1) * learn * diverge * depth * batch
}

fn mnist_from(assignments: &[Assignment]) -> Result<f64, ObjectiveError> {
    let num = |name: &str, default: f64| -> Result<f64, ObjectiveError> {
        match assignments.iter().find(|a| a.name == name) {
            None => Ok(default),
            Some(a) => a.value.parse::<f64>().map_err(|_| ObjectiveError::BadAssignment {
                function: MNIST_SURROGATE.into(),
                name: a.name.clone(),
                value: a.value.clone(),
            }),
        }
    };
    let optimizer = assignments
        .iter()
        .find(|a| a.name == "optimizer")
        .map(|a| a.value.as_str())
        .unwrap_or("sgd");
    Ok(mnist_accuracy(
        num("lr", 0.1)?,
        num("num-layers", 3.0)?,
        num("batch-size", 850.0)?,
        optimizer,
    ))
}

/// Noise-free value after full training.
pub fn base_value(descriptor: &SimObjective, assignments: &[Assignment]) -> Result<f64, ObjectiveError> {
    match descriptor.function_name.as_str() {
        SPHERE => Ok(sphere(&numeric_inputs(assignments))),
        ROSENBROCK => Ok(rosenbrock(&numeric_inputs(assignments))),
        MNIST_SURROGATE => mnist_from(assignments),
        other => Err(ObjectiveError::UnknownFunction(other.to_string())),
    }
}

/// Whether larger values are better for this function.
pub fn is_accuracy_like(function_name: &str) -> bool {
    function_name == MNIST_SURROGATE
}

/// Metric reported at `progress` in [0, 1] of training, plus seeded noise.
///
/// Loss-like functions decay towards their base value; the accuracy-like
/// surrogate rises from chance level (0.1) towards it.
pub fn eval_sim_objective<R: Rng + ?Sized>(
    descriptor: &SimObjective,
    assignments: &[Assignment],
    progress: f64,
    rng: &mut R,
) -> Result<f64, ObjectiveError> {
    let base = base_value(descriptor, assignments)?;
    let p = progress.clamp(0.0, 1.0);
    let value = if is_accuracy_like(&descriptor.function_name) {
        let shape = (1.0 - (-4.0 * p).exp()) / (1.0 - (-4.0f64).exp());
        0.1 + (base - 0.1) * shape
    } else {
        base + (1.0 - p) * (1.0 + base)
    };
    let noise = if descriptor.noise_std_dev > 0.0 {
        Normal::new(0.0, descriptor.noise_std_dev)
            .expect("validated std dev")
            .sample(rng)
    } else {
        0.0
    };
    Ok(value + noise)
}

/// Best surrogate accuracy on a grid over lr in [0, 1] (step 0.001), batch
/// size 10..=1000 (step 10), 1..=5 layers and every optimizer.
pub fn mnist_grid_optimum() -> (f64, Vec<Assignment>) {
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for optimizer in ["sgd", "adam", "ftrl"] {
        for layers in 1..=5 {
            for b in (10..=1000).step_by(10) {
                for i in 0..=1000 {
                    let lr = i as f64 / 1000.0;
                    let v = mnist_accuracy(lr, layers as f64, b as f64, optimizer);
                    if v > best.0 {
                        best = (
                            v,
                            vec![
                                Assignment::new("lr", lr.to_string()),
                                Assignment::new("batch-size", b.to_string()),
                                Assignment::new("num-layers", layers.to_string()),
                                Assignment::new("optimizer", optimizer),
                            ],
                        );
                    }
                }
            }
        }
    }
    best
}
