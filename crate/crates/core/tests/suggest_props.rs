//! Property tests over generated search spaces and histories.

mod common;

use common::props::{self, config};
use proptest::test_runner::TestRunner;

#[test]
fn suggestions_are_feasible() {
    TestRunner::new(config(1000)).run(&props::case(), props::feasible).unwrap();
}

#[test]
fn suggestions_are_deterministic() {
    TestRunner::new(config(1000)).run(&props::case(), props::deterministic).unwrap();
}

#[test]
fn grid_covers_every_point_once() {
    TestRunner::new(config(1000)).run(&props::grid_case(), props::grid_complete).unwrap();
}

#[test]
fn all_failed_history_is_tolerated() {
    TestRunner::new(config(1000))
        .run(&props::all_failed_case(), props::all_failed_tolerated)
        .unwrap();
}
