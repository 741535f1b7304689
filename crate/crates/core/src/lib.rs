//! Hyperparameter tuning orchestration: declarative experiments, pluggable
//! suggestion algorithms, metric storage, reconciling controllers and a
//! deterministic cluster simulator to run trials on.

pub mod model;
pub mod sim;
pub mod control;
pub mod metrics;
pub mod local;
pub mod suggest;

#[cfg(test)]
pub(crate) mod testing;
