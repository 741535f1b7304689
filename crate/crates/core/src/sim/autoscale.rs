//! Node autoscaler.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cluster::{Cluster, Millicores};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AutoscalerConfig {
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub node_capacity_cpu: f64,
    #[serde(default = "default_grace")]
    pub scale_down_grace_ticks: u64,
}

fn default_grace() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AutoscalerError {
    #[error("need 1 <= minNodes <= maxNodes, got {0}..{1}")]
    Bounds(usize, usize),
    #[error("nodeCapacityCpu must be positive")]
    Capacity,
}

impl AutoscalerConfig {
    pub fn validate(&self) -> Result<(), AutoscalerError> {
        if self.min_nodes < 1 || self.min_nodes > self.max_nodes {
            return Err(AutoscalerError::Bounds(self.min_nodes, self.max_nodes));
        }
        if Millicores::from_cpu(self.node_capacity_cpu).0 == 0 {
            return Err(AutoscalerError::Capacity);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScaleChange {
    pub added: Vec<String>,
    pub removed: Vec<String>,
}

/// Grows the cluster by enough nodes to cover `blocked` CPU, or, when nothing
/// is blocked, removes nodes idle for at least the grace period, newest
/// first. Node count stays within the configured bounds.
pub fn autoscale_tick(cluster: &mut Cluster, config: &AutoscalerConfig, blocked: Millicores) -> ScaleChange {
    let mut change = ScaleChange::default();
    let cap = Millicores::from_cpu(config.node_capacity_cpu);
    if blocked.0 > 0 {
        let wanted = blocked.0.div_ceil(cap.0) as usize;
        let room = config.max_nodes.saturating_sub(cluster.nodes.len());
        for _ in 0..wanted.min(room) {
            change.added.push(cluster.add_node(cap));
        }
        return change;
    }
    let tick = cluster.tick;
    let mut idle: Vec<usize> = cluster
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.allocated.0 == 0 && n.idle_since.is_some_and(|t| tick >= t + config.scale_down_grace_ticks))
        .map(|(i, _)| i)
        .collect();
    let removable = cluster.nodes.len().saturating_sub(config.min_nodes);
    idle.reverse();
    idle.truncate(removable);
    idle.sort_unstable();
    for i in idle.into_iter().rev() {
        change.removed.push(cluster.nodes.remove(i).id);
    }
    change.removed.reverse();
    change
}
