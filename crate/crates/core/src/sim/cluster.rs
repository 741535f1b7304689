//! Nodes, namespace quotas, trial jobs and the scheduler.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::control::{BackendError, JobRequest, JobState, JobStatus};

/// CPU in thousandths of a vCPU; integer arithmetic keeps the capacity and
/// quota checks exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Millicores(pub u64);

impl Millicores {
    pub fn from_cpu(cpu: f64) -> Self {
        Millicores((cpu * 1000.0).round().max(0.0) as u64)
    }

    pub fn as_cpu(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl fmt::Display for Millicores {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_cpu())
    }
}

impl std::ops::Add for Millicores {
    type Output = Millicores;
    fn add(self, o: Millicores) -> Millicores {
        Millicores(self.0 + o.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Node {
    pub id: String,
    pub capacity: Millicores,
    pub allocated: Millicores,
    pub idle_since: Option<u64>,
}

impl Node {
    pub fn free(&self) -> Millicores {
        Millicores(self.capacity.0 - self.allocated.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkUnit {
    pub worker_index: u32,
    pub cpu: Millicores,
    pub node: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimJob {
    pub namespace: String,
    pub request: JobRequest,
    pub units: Vec<WorkUnit>,
    pub total_ticks: u32,
    /// Completed ticks; survives restarts as the checkpoint.
    pub done_ticks: u32,
    /// Training progress reached at the last tick.
    pub final_progress: f64,
    pub attempt: u32,
    pub state: JobState,
    #[serde(default)]
    pub log: String,
}

impl SimJob {
    pub fn is_placed(&self) -> bool {
        self.units.iter().all(|u| u.node.is_some())
    }

    pub fn cpu(&self) -> Millicores {
        Millicores(self.units.iter().map(|u| u.cpu.0).sum())
    }
}

/// A per-experiment suggestion service holding CPU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ServiceUnit {
    pub namespace: String,
    pub cpu: Millicores,
    pub node: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Placement {
    pub item: String,
    pub worker_index: u32,
    pub node: String,
}

/// Result of one scheduling round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScheduleOutcome {
    pub placements: Vec<Placement>,
    /// CPU of work that found no node with room.
    pub capacity_blocked: Millicores,
    /// CPU of work held back by a namespace quota.
    pub quota_blocked: Millicores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Cluster {
    pub tick: u64,
    pub nodes: Vec<Node>,
    /// Namespace → optional CPU limit.
    pub namespaces: BTreeMap<String, Option<Millicores>>,
    pub jobs: BTreeMap<String, SimJob>,
    pub services: BTreeMap<String, ServiceUnit>,
    pub gang: bool,
    next_node: u32,
}

/// Pending group considered by the scheduler: a job or a service.
struct Group {
    item: String,
    namespace: String,
    unit_cpu: Millicores,
    units: Vec<(u32, Millicores)>,
}

impl Cluster {
    pub fn new(gang: bool) -> Self {
        Self {
            tick: 0,
            nodes: Vec::new(),
            namespaces: BTreeMap::new(),
            jobs: BTreeMap::new(),
            services: BTreeMap::new(),
            gang,
            next_node: 0,
        }
    }

    pub fn add_node(&mut self, capacity: Millicores) -> String {
        let id = format!("node-{:03}", self.next_node);
        self.next_node += 1;
        self.nodes.push(Node {
            id: id.clone(),
            capacity,
            allocated: Millicores(0),
            idle_since: Some(self.tick),
        });
        id
    }

    pub fn add_namespace(&mut self, name: &str, limit: Option<Millicores>) {
        self.namespaces.insert(name.to_string(), limit);
    }

    pub fn capacity(&self) -> Millicores {
        Millicores(self.nodes.iter().map(|n| n.capacity.0).sum())
    }

    pub fn allocated(&self) -> Millicores {
        Millicores(self.nodes.iter().map(|n| n.allocated.0).sum())
    }

    /// CPU placed on behalf of `namespace`.
    pub fn namespace_used(&self, namespace: &str) -> Millicores {
        let jobs: u64 = self
            .jobs
            .values()
            .filter(|j| j.namespace == namespace)
            .flat_map(|j| j.units.iter())
            .filter(|u| u.node.is_some())
            .map(|u| u.cpu.0)
            .sum();
        let services: u64 = self
            .services
            .values()
            .filter(|s| s.namespace == namespace && s.node.is_some())
            .map(|s| s.cpu.0)
            .sum();
        Millicores(jobs + services)
    }

    /// Jobs of `namespace` whose units are all placed.
    pub fn running_jobs(&self, namespace: &str) -> usize {
        self.jobs
            .values()
            .filter(|j| j.namespace == namespace && j.state == JobState::Running)
            .count()
    }

    fn node_mut(&mut self, id: &str) -> &mut Node {
        self.nodes.iter_mut().find(|n| n.id == id).expect("placed on known node")
    }

    fn allocate(&mut self, id: &str, cpu: Millicores) {
        let node = self.node_mut(id);
        node.allocated.0 += cpu.0;
        debug_assert!(node.allocated <= node.capacity);
        node.idle_since = None;
    }

    fn release(&mut self, id: &str, cpu: Millicores) {
        let tick = self.tick;
        let node = self.node_mut(id);
        node.allocated.0 -= cpu.0;
        if node.allocated.0 == 0 {
            node.idle_since = Some(tick);
        }
    }

    /// Frees every placed unit of `trial`.
    pub fn release_job(&mut self, trial: &str) {
        let Some(job) = self.jobs.get_mut(trial) else { return };
        let freed: Vec<(String, Millicores)> = job
            .units
            .iter_mut()
            .filter_map(|u| u.node.take().map(|n| (n, u.cpu)))
            .collect();
        for (node, cpu) in freed {
            self.release(&node, cpu);
        }
    }

    pub fn submit(&mut self, job: &JobRequest, total_ticks: u32, final_progress: f64) -> Result<(), BackendError> {
        let ns = &job.run.namespace;
        if !self.namespaces.contains_key(ns) {
            return Err(BackendError::Rejected(format!("unknown namespace {ns}")));
        }
        if job.worker_count == 0 {
            return Err(BackendError::Rejected("job has no workers".into()));
        }
        let name = job.id().as_str().to_string();
        if self.jobs.contains_key(&name) {
            return Ok(());
        }
        let cpu = Millicores::from_cpu(job.cpu_per_worker);
        self.jobs.insert(
            name,
            SimJob {
                namespace: ns.clone(),
                request: job.clone(),
                units: (0..job.worker_count)
                    .map(|i| WorkUnit { worker_index: i, cpu, node: None })
                    .collect(),
                total_ticks: total_ticks.max(1),
                done_ticks: 0,
                final_progress,
                attempt: 0,
                state: JobState::Pending,
                log: String::new(),
            },
        );
        Ok(())
    }

    pub fn status(&self, trial: &str) -> Option<JobStatus> {
        self.jobs.get(trial).map(|j| JobStatus {
            state: j.state.clone(),
            attempt: j.attempt,
        })
    }

    pub fn restart(&mut self, trial: &str, attempt: u32) -> Result<(), BackendError> {
        let job = self
            .jobs
            .get_mut(trial)
            .ok_or_else(|| BackendError::Rejected(format!("no job {trial}")))?;
        if job.attempt >= attempt {
            return Ok(());
        }
        job.attempt = attempt;
        job.state = JobState::Pending;
        self.release_job(trial);
        Ok(())
    }

    pub fn cancel(&mut self, trial: &str) {
        self.release_job(trial);
        if let Some(job) = self.jobs.get_mut(trial) {
            if !matches!(job.state, JobState::Succeeded | JobState::Failed { .. }) {
                job.state = JobState::Cancelled;
            }
        }
    }

    /// Marks a job failed and frees its CPU.
    pub fn fail_job(&mut self, trial: &str, temporary: bool, reason: &str) {
        self.release_job(trial);
        if let Some(job) = self.jobs.get_mut(trial) {
            job.state = JobState::Failed {
                temporary,
                reason: reason.to_string(),
            };
        }
    }

    pub fn ensure_service(&mut self, key: &str, namespace: &str, cpu: f64) -> Result<bool, BackendError> {
        if !self.namespaces.contains_key(namespace) {
            return Err(BackendError::Rejected(format!("unknown namespace {namespace}")));
        }
        let unit = self.services.entry(key.to_string()).or_insert_with(|| ServiceUnit {
            namespace: namespace.to_string(),
            cpu: Millicores::from_cpu(cpu),
            node: None,
        });
        Ok(unit.node.is_some() || unit.cpu.0 == 0)
    }

    pub fn release_service(&mut self, key: &str) {
        if let Some(unit) = self.services.remove(key) {
            if let Some(node) = unit.node {
                self.release(&node, unit.cpu);
            }
        }
    }

    fn pending_groups(&self) -> Vec<Group> {
        let mut groups: Vec<Group> = Vec::new();
        for (name, job) in &self.jobs {
            if job.state != JobState::Pending {
                continue;
            }
            let units: Vec<(u32, Millicores)> = job
                .units
                .iter()
                .filter(|u| u.node.is_none())
                .map(|u| (u.worker_index, u.cpu))
                .collect();
            if units.is_empty() {
                continue;
            }
            groups.push(Group {
                item: name.clone(),
                namespace: job.namespace.clone(),
                unit_cpu: units[0].1,
                units,
            });
        }
        for (key, svc) in &self.services {
            if svc.node.is_none() && svc.cpu.0 > 0 {
                groups.push(Group {
                    item: key.clone(),
                    namespace: svc.namespace.clone(),
                    unit_cpu: svc.cpu,
                    units: vec![(0, svc.cpu)],
                });
            }
        }
        groups.sort_by(|a, b| b.unit_cpu.cmp(&a.unit_cpu).then_with(|| a.item.cmp(&b.item)));
        groups
    }

    /// First-fit-decreasing placement of pending work under node capacity
    /// and namespace quotas. In gang mode a job places all its pending
    /// workers or none.
    pub fn schedule(&mut self) -> ScheduleOutcome {
        let mut out = ScheduleOutcome::default();
        for group in self.pending_groups() {
            let used = self.namespace_used(&group.namespace);
            let limit = self.namespaces.get(&group.namespace).copied().flatten();
            let demand = Millicores(group.units.iter().map(|u| u.1 .0).sum());
            let mut free: Vec<Millicores> = self.nodes.iter().map(|n| n.free()).collect();
            let mut chosen: Vec<(u32, usize)> = Vec::new();
            let mut quota_left = limit.map(|l| l.0.saturating_sub(used.0));
            let mut blocked_capacity = 0u64;
            let mut blocked_quota = 0u64;
            if self.gang && quota_left.is_some_and(|q| q < demand.0) {
                out.quota_blocked.0 += demand.0;
                continue;
            }
            for &(worker, cpu) in &group.units {
                if quota_left.is_some_and(|q| q < cpu.0) {
                    blocked_quota += cpu.0;
                    continue;
                }
                match free.iter().position(|f| *f >= cpu) {
                    Some(i) => {
                        free[i].0 -= cpu.0;
                        if let Some(q) = quota_left.as_mut() {
                            *q -= cpu.0;
                        }
                        chosen.push((worker, i));
                    }
                    None => blocked_capacity += cpu.0,
                }
            }
            if self.gang && chosen.len() < group.units.len() {
                out.capacity_blocked.0 += demand.0;
                continue;
            }
            out.capacity_blocked.0 += blocked_capacity;
            out.quota_blocked.0 += blocked_quota;
            for (worker, i) in chosen {
                let node_id = self.nodes[i].id.clone();
                let cpu = if let Some(job) = self.jobs.get_mut(&group.item) {
                    let unit = job.units.iter_mut().find(|u| u.worker_index == worker).expect("unit");
                    unit.node = Some(node_id.clone());
                    unit.cpu
                } else {
                    let svc = self.services.get_mut(&group.item).expect("service");
                    svc.node = Some(node_id.clone());
                    svc.cpu
                };
                self.allocate(&node_id, cpu);
                out.placements.push(Placement {
                    item: group.item.clone(),
                    worker_index: worker,
                    node: node_id,
                });
            }
            if let Some(job) = self.jobs.get_mut(&group.item) {
                if job.is_placed() {
                    job.state = JobState::Running;
                }
            }
        }
        out
    }
}
