//! Periodic fault injection.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cluster::Cluster;
use crate::control::JobState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChaosMode {
    /// Permanent failure, as for an invalid payload.
    FailTrial,
    /// One worker dies with a temporary-failure exit class.
    KillWorker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChaosPolicy {
    pub mode: ChaosMode,
    pub fraction: f64,
    pub interval_ticks: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChaosEvent {
    pub trial: String,
    pub mode: ChaosMode,
    pub worker_index: u32,
}

pub const REASON_CHAOS_FAIL: &str = "chaos: invalid payload";
pub const REASON_CHAOS_KILL: &str = "chaos: worker killed";

impl ChaosPolicy {
    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.fraction) && self.interval_ticks > 0
    }

    /// Number of victims among `running` jobs.
    pub fn victims(&self, running: usize) -> usize {
        ((self.fraction * running as f64 - 1e-9).ceil().max(0.0) as usize).min(running)
    }
}

/// On every interval tick, fails a seeded sample of the running jobs.
pub fn chaos_tick(cluster: &mut Cluster, policy: &ChaosPolicy) -> Vec<ChaosEvent> {
    let tick = cluster.tick;
    if tick == 0 || !tick.is_multiple_of(policy.interval_ticks) {
        return Vec::new();
    }
    let running: Vec<String> = cluster
        .jobs
        .iter()
        .filter(|(_, j)| j.state == JobState::Running)
        .map(|(n, _)| n.clone())
        .collect();
    let k = policy.victims(running.len());
    if k == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    rng.set_stream(tick);
    let mut picked: Vec<usize> = sample(&mut rng, running.len(), k).into_vec();
    picked.sort_unstable();
    let mut events = Vec::with_capacity(k);
    for i in picked {
        let trial = &running[i];
        let workers = cluster.jobs[trial].units.len() as u32;
        let worker_index = rand::Rng::random_range(&mut rng, 0..workers);
        match policy.mode {
            ChaosMode::FailTrial => cluster.fail_job(trial, false, REASON_CHAOS_FAIL),
            ChaosMode::KillWorker => cluster.fail_job(trial, true, REASON_CHAOS_KILL),
        }
        events.push(ChaosEvent {
            trial: trial.clone(),
            mode: policy.mode,
            worker_index,
        });
    }
    events
}
