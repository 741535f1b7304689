//! Tick-driven world: cluster physics plus the controllers.

use std::collections::BTreeMap;
use std::sync::Arc;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::autoscale::{autoscale_tick, AutoscalerConfig};
use super::chaos::{chaos_tick, ChaosPolicy};
use super::cluster::Cluster;
use super::objective::eval_sim_objective;
use crate::control::{
    BackendError, ControlError, ControlPlane, ExecutionBackend, ExperimentPhase, JobId, JobRequest, JobState,
    JobStatus, TrialPhase,
};
use crate::metrics::{format_metric_line, MetricPoint, ObservationStore};
use crate::model::template::BUDGET;
use crate::model::{MetricCollectorKind, RunPayload};
use crate::suggest::fnv1a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub kind: String,
    pub payload: Value,
}

impl Event {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("events serialise")
    }
}

/// Serialised events, one JSON object per line.
pub fn events_to_jsonl(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_json_line());
        out.push('\n');
    }
    out
}

#[derive(Serialize, Deserialize)]
pub struct World {
    pub cluster: Cluster,
    pub autoscaler: Option<AutoscalerConfig>,
    pub chaos: Option<ChaosPolicy>,
    pub seed: u64,
    pub events: Vec<Event>,
    #[serde(skip)]
    metrics: Option<Arc<dyn ObservationStore>>,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World")
            .field("tick", &self.cluster.tick)
            .field("nodes", &self.cluster.nodes.len())
            .field("jobs", &self.cluster.jobs.len())
            .finish()
    }
}

fn service_key(experiment: &str, namespace: &str) -> String {
    format!("{namespace}/{experiment}")
}

/// Ticks and progress a job needs for its budget share.
fn budgeted_duration(job: &JobRequest, duration: u32) -> (u32, f64) {
    let share = job.max_resource.and_then(|max| {
        job.run
            .parameter_assignments
            .iter()
            .find(|a| a.name == BUDGET)
            .and_then(|a| a.value.parse::<f64>().ok())
            .map(|b| (b / max).clamp(0.0, 1.0))
    });
    match share {
        Some(f) => (((duration as f64 * f).ceil() as u32).max(1), f),
        None => (duration.max(1), 1.0),
    }
}

impl World {
    pub fn new(cluster: Cluster, seed: u64, metrics: Arc<dyn ObservationStore>) -> Self {
        Self {
            cluster,
            autoscaler: None,
            chaos: None,
            seed,
            events: Vec::new(),
            metrics: Some(metrics),
        }
    }

    /// Restores a world saved with `to_json`.
    pub fn from_json(text: &str, metrics: Arc<dyn ObservationStore>) -> serde_json::Result<Self> {
        let mut w: World = serde_json::from_str(text)?;
        w.metrics = Some(metrics);
        Ok(w)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("world serialises")
    }

    pub fn tick(&self) -> u64 {
        self.cluster.tick
    }

    pub fn record(&mut self, kind: &str, payload: Value) {
        self.events.push(Event {
            tick: self.cluster.tick,
            kind: kind.to_string(),
            payload,
        });
    }

    /// One tick of cluster physics: chaos, job progress, scheduling, then
    /// autoscaling.
    pub fn advance(&mut self) {
        self.cluster.tick += 1;
        if let Some(policy) = self.chaos.clone() {
            for e in chaos_tick(&mut self.cluster, &policy) {
                self.record("chaos", serde_json::to_value(&e).expect("event"));
            }
        }
        self.progress();
        let out = self.cluster.schedule();
        for p in &out.placements {
            self.record("placed", serde_json::to_value(p).expect("placement"));
        }
        if let Some(config) = self.autoscaler.clone() {
            let change = autoscale_tick(&mut self.cluster, &config, out.capacity_blocked);
            if !change.added.is_empty() {
                self.record("scale-up", json!({ "nodes": change.added, "total": self.cluster.nodes.len() }));
            }
            if !change.removed.is_empty() {
                self.record("scale-down", json!({ "nodes": change.removed, "total": self.cluster.nodes.len() }));
            }
        }
        self.sample();
    }

    fn sample(&mut self) {
        let mut running: BTreeMap<String, usize> = BTreeMap::new();
        let mut used: BTreeMap<String, f64> = BTreeMap::new();
        for ns in self.cluster.namespaces.keys() {
            running.insert(ns.clone(), self.cluster.running_jobs(ns));
            used.insert(ns.clone(), self.cluster.namespace_used(ns).as_cpu());
        }
        let payload = json!({
            "nodes": self.cluster.nodes.len(),
            "capacityCpu": self.cluster.capacity().as_cpu(),
            "allocatedCpu": self.cluster.allocated().as_cpu(),
            "running": running,
            "usedCpu": used,
        });
        self.record("sample", payload);
    }

    fn progress(&mut self) {
        let tick = self.cluster.tick;
        let running: Vec<String> = self
            .cluster
            .jobs
            .iter()
            .filter(|(_, j)| j.state == JobState::Running)
            .map(|(n, _)| n.clone())
            .collect();
        for name in running {
            let job = self.cluster.jobs.get_mut(&name).expect("listed");
            job.done_ticks += 1;
            let fraction = job.final_progress * (job.done_ticks as f64 / job.total_ticks as f64).min(1.0);
            let RunPayload::Simulated(obj) = &job.request.run.resolved_payload else {
                unreachable!("command payloads are rejected at submit");
            };
            let mut points = Vec::new();
            for (stream, metric) in job.request.metric_names.iter().enumerate() {
                let key = format!("{}/{}/{}/{}", self.seed, obj.rng_seed_offset, name, job.done_ticks);
                let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes()));
                rng.set_stream(stream as u64);
                match eval_sim_objective(obj, &job.request.run.parameter_assignments, fraction, &mut rng) {
                    Ok(v) => points.push(MetricPoint::new(&name, metric, tick as i64, v)),
                    Err(e) => warn!("{name}: {e}"),
                }
            }
            match job.request.collector {
                MetricCollectorKind::Push => {
                    if let Some(store) = &self.metrics {
                        if let Err(e) = store.register(&points) {
                            warn!("{name}: metrics push failed: {e}");
                        }
                    }
                }
                MetricCollectorKind::Pull => {
                    for p in &points {
                        job.log.push_str(&format_metric_line(p.timestamp, &p.metric_name, p.value));
                        job.log.push('\n');
                    }
                }
            }
            if job.done_ticks >= job.total_ticks {
                job.state = JobState::Succeeded;
                self.cluster.release_job(&name);
                self.record("completed", json!({ "trial": name }));
            }
        }
    }

    /// Physics for one tick followed by controller passes to a fixed point.
    pub fn step(&mut self, plane: &mut ControlPlane) -> Result<(), ControlError> {
        self.advance();
        plane.settle(self)?;
        Ok(())
    }
}

impl ExecutionBackend for World {
    fn now(&self) -> u64 {
        self.cluster.tick
    }

    fn submit(&mut self, job: &JobRequest) -> Result<(), BackendError> {
        let RunPayload::Simulated(obj) = &job.run.resolved_payload else {
            return Err(BackendError::Rejected("the simulator runs simulated payloads only".into()));
        };
        let (ticks, share) = budgeted_duration(job, obj.duration_ticks);
        let id = job.id();
        let fresh = !self.cluster.jobs.contains_key(id.as_str());
        self.cluster.submit(job, ticks, share)?;
        if fresh {
            self.record(
                "submitted",
                json!({
                    "trial": id,
                    "workers": job.worker_count,
                    "cpuPerWorker": job.cpu_per_worker,
                }),
            );
        }
        Ok(())
    }

    fn status(&self, job: &JobId) -> Option<JobStatus> {
        self.cluster.status(job.as_str())
    }

    fn restart(&mut self, job: &JobId, attempt: u32) -> Result<(), BackendError> {
        let before = self.cluster.jobs.get(job.as_str()).map(|j| j.attempt);
        self.cluster.restart(job.as_str(), attempt)?;
        if before.is_some_and(|a| a < attempt) {
            self.record("restarted", json!({ "trial": job, "attempt": attempt }));
        }
        Ok(())
    }

    fn cancel(&mut self, job: &JobId) -> Result<(), BackendError> {
        self.cluster.cancel(job.as_str());
        Ok(())
    }

    fn logs(&self, job: &JobId) -> Option<String> {
        self.cluster.jobs.get(job.as_str()).map(|j| j.log.clone())
    }

    fn ensure_service(&mut self, experiment: &str, namespace: &str, cpu: f64) -> Result<bool, BackendError> {
        self.cluster.ensure_service(&service_key(experiment, namespace), namespace, cpu)
    }

    fn release_service(&mut self, experiment: &str, namespace: &str) {
        self.cluster.release_service(&service_key(experiment, namespace));
    }
}

/// Experiment and trial transitions seen between ticks, for the event log.
#[derive(Debug, Default)]
pub struct Observer {
    experiments: BTreeMap<String, (ExperimentPhase, Option<(String, u64)>)>,
    trials: BTreeMap<String, (TrialPhase, u32)>,
}

impl Observer {
    pub fn observe(&mut self, world: &mut World, plane: &ControlPlane) {
        for (key, exp) in plane.experiments() {
            let name = format!("{}/{}", key.namespace, key.name);
            let optimal = exp
                .status
                .current_optimal
                .as_ref()
                .map(|o| (o.trial_name.clone(), o.objective_value.to_bits()));
            let now = (exp.status.phase, optimal.clone());
            let before = self.experiments.insert(name.clone(), now);
            let (old_phase, old_optimal) = match before {
                Some((p, o)) => (Some(p), o),
                None => (None, None),
            };
            if old_phase != Some(exp.status.phase) {
                world.record(
                    "experiment",
                    json!({
                        "experiment": name,
                        "phase": exp.status.phase,
                        "reason": exp.status.reason,
                        "succeeded": exp.status.trials_succeeded,
                        "failed": exp.status.trials_failed,
                    }),
                );
            }
            if optimal != old_optimal {
                if let Some(o) = &exp.status.current_optimal {
                    world.record(
                        "optimal",
                        json!({ "experiment": name, "trial": o.trial_name, "value": o.objective_value }),
                    );
                }
            }
            for (trial, t) in plane.trials(&key.namespace, &key.name) {
                let now = (t.status.phase, t.status.restart_count);
                if self.trials.insert(format!("{}/{trial}", key.namespace), now) != Some(now) {
                    world.record(
                        "trial",
                        json!({
                            "trial": trial,
                            "namespace": key.namespace,
                            "phase": t.status.phase,
                            "reason": t.status.reason,
                            "restartCount": t.status.restart_count,
                            "observation": t.status.observation,
                        }),
                    );
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{ControlConfig, ResourceStore};
    use crate::sim::cluster::Millicores;
    use crate::metrics::InMemoryStore;
    use crate::model::{Assignment, ParameterSpec, SimObjective, TrialRunSpec};
    use crate::suggest::AlgorithmRegistry;
    use crate::testing::sphere_experiment;

    fn world(nodes: usize) -> World {
        let mut c = Cluster::new(true);
        for _ in 0..nodes {
            c.add_node(Millicores::from_cpu(4.0));
        }
        c.add_namespace("default", None);
        World::new(c, 11, Arc::new(InMemoryStore::new()))
    }

    fn plane_for(world: &World) -> ControlPlane {
        ControlPlane::new(
            ResourceStore::in_memory(),
            AlgorithmRegistry::with_builtins(),
            world.metrics.clone().expect("metrics"),
            ControlConfig::default(),
        )
    }

    fn request(name: &str, duration: u32, budget: Option<&str>) -> JobRequest {
        let mut assignments = vec![Assignment::new("x", "0.5")];
        if let Some(b) = budget {
            assignments.push(Assignment::new(BUDGET, b));
        }
        JobRequest {
            run: TrialRunSpec {
                trial_name: name.into(),
                namespace: "default".into(),
                resolved_payload: RunPayload::Simulated(SimObjective {
                    function_name: "sphere".into(),
                    duration_ticks: duration,
                    noise_std_dev: 0.0,
                    rng_seed_offset: 0,
                }),
                parameter_assignments: assignments,
            },
            worker_count: 1,
            cpu_per_worker: 1.0,
            collector: MetricCollectorKind::Pull,
            metric_names: vec!["loss".into()],
            max_resource: budget.map(|_| 9.0),
        }
    }

    #[test]
    fn one_tick_job_completes_and_frees_capacity() {
        let mut w = world(1);
        w.submit(&request("t", 1, None)).unwrap();
        w.advance();
        assert_eq!(w.status(&JobId::new("default", "t")).unwrap().state, JobState::Running);
        w.advance();
        assert_eq!(w.status(&JobId::new("default", "t")).unwrap().state, JobState::Succeeded);
        assert_eq!(w.cluster.allocated(), Millicores(0));
        assert_eq!(w.logs(&JobId::new("default", "t")).unwrap(), "2 loss=0.25\n");
    }

    #[test]
    fn empty_world_is_a_fixed_point() {
        let mut w = world(2);
        w.advance();
        let before = serde_json::to_value(&w.cluster).unwrap();
        w.advance();
        let mut after = serde_json::to_value(&w.cluster).unwrap();
        after["tick"] = before["tick"].clone();
        assert_eq!(before, after);
    }

    #[test]
    fn budget_shortens_training() {
        let job = request("t", 10, Some("3"));
        assert_eq!(budgeted_duration(&job, 10), (4, 3.0 / 9.0));
        assert_eq!(budgeted_duration(&request("t", 10, Some("9")), 10), (10, 1.0));
        assert_eq!(budgeted_duration(&request("t", 10, None), 10), (10, 1.0));
        assert_eq!(budgeted_duration(&request("t", 2, Some("0.1")), 2), (1, 0.1 / 9.0));
    }

    #[test]
    fn command_payloads_are_rejected() {
        let mut w = world(1);
        let mut job = request("t", 1, None);
        job.run.resolved_payload = RunPayload::Command("true".into());
        assert!(matches!(w.submit(&job), Err(BackendError::Rejected(_))));
    }

    fn run(ticks: u64) -> (String, String) {
        let mut w = world(2);
        w.chaos = Some(ChaosPolicy {
            mode: super::super::chaos::ChaosMode::KillWorker,
            fraction: 0.3,
            interval_ticks: 7,
            seed: 5,
        });
        let mut plane = plane_for(&w);
        let params = vec![ParameterSpec::double("x", -1.0, 1.0), ParameterSpec::double("y", -1.0, 1.0)];
        let mut spec = sphere_experiment("sphere", "default", params, 40, 3);
        spec.trial_template.worker_count = 2;
        spec.trial_template.restart_policy = crate::model::RestartPolicy::OnTemporaryFailure;
        plane.submit(spec).unwrap();
        let mut observer = Observer::default();
        plane.settle(&mut w).unwrap();
        for _ in 0..ticks {
            w.step(&mut plane).unwrap();
            observer.observe(&mut w, &plane);
        }
        let store: Vec<String> = plane
            .store()
            .keys()
            .iter()
            .map(|k| serde_json::to_string(&plane.store().get(k).unwrap().resource).unwrap())
            .collect();
        (w.to_json(), store.join("\n"))
    }

    #[test]
    fn identical_seeds_identical_worlds_over_1000_ticks() {
        let a = run(1000);
        let b = run(1000);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert!(a.0.contains("\"chaos\""));
    }

    #[test]
    fn world_round_trips_through_json() {
        let mut w = world(1);
        w.submit(&request("t", 5, None)).unwrap();
        w.advance();
        let text = w.to_json();
        let back = World::from_json(&text, Arc::new(InMemoryStore::new())).unwrap();
        assert_eq!(back.to_json(), text);
    }
}
