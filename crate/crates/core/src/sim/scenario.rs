//! Scenario files and the canned cluster experiments.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::autoscale::AutoscalerConfig;
use super::chaos::ChaosPolicy;
use super::cluster::{Cluster, Millicores};
use super::world::{Event, Observer, World};
use crate::control::{
    ControlConfig, ControlError, ControlPlane, ExperimentPhase, ExperimentStatus, ResourceKey, ResourceStore,
};
use crate::metrics::InMemoryStore;
use crate::model::{parse_experiment_with, AlgorithmCatalog, ExperimentSpec, SettingValue};
use crate::suggest::{fnv1a, AlgorithmRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NodePool {
    pub count: usize,
    pub cpu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NamespaceSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperimentSource {
    File { file: PathBuf },
    Inline { spec: serde_yaml::Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_gang")]
    pub gang: bool,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
    #[serde(default = "default_service_cpu")]
    pub suggestion_service_cpu: f64,
    pub nodes: NodePool,
    #[serde(default)]
    pub namespaces: Vec<NamespaceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub autoscaler: Option<AutoscalerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chaos: Option<ChaosPolicy>,
    #[serde(default)]
    pub experiments: Vec<ExperimentSource>,
}

fn default_gang() -> bool {
    true
}

fn default_max_ticks() -> u64 {
    10_000
}

fn default_service_cpu() -> f64 {
    ControlConfig::default().suggestion_service_cpu
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario syntax: {0}")]
    Syntax(String),
    #[error("scenario: {0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("experiment {origin}: {message}")]
    Experiment { origin: String, message: String },
    #[error("unknown scenario `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Control(#[from] ControlError),
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_yaml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// A single default-sized node pool with no quotas.
    pub fn open_cluster(seed: u64) -> Self {
        Self {
            seed,
            gang: true,
            max_ticks: default_max_ticks(),
            suggestion_service_cpu: default_service_cpu(),
            nodes: NodePool { count: 4, cpu: 8.0 },
            namespaces: Vec::new(),
            autoscaler: None,
            chaos: None,
            experiments: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.nodes.cpu <= 0.0 {
            return bad("nodes.cpu must be positive".into());
        }
        if let Some(a) = &self.autoscaler {
            a.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            if self.nodes.count < a.min_nodes || self.nodes.count > a.max_nodes {
                return bad(format!(
                    "nodes.count {} outside autoscaler bounds {}..={}",
                    self.nodes.count, a.min_nodes, a.max_nodes
                ));
            }
        }
        if let Some(c) = &self.chaos {
            if !c.is_valid() {
                return bad("chaos needs fraction in [0, 1] and intervalTicks > 0".into());
            }
        }
        for ns in &self.namespaces {
            if ns.cpu_limit.is_some_and(|l| l < 0.0) {
                return bad(format!("namespace {} has a negative cpuLimit", ns.name));
            }
        }
        if self.suggestion_service_cpu < 0.0 {
            return bad("suggestionServiceCpu must be >= 0".into());
        }
        Ok(())
    }

    pub fn control_config(&self) -> ControlConfig {
        ControlConfig {
            suggestion_service_cpu: self.suggestion_service_cpu,
            ..ControlConfig::default()
        }
    }

    pub fn cluster(&self) -> Cluster {
        let mut c = Cluster::new(self.gang);
        for _ in 0..self.nodes.count {
            c.add_node(Millicores::from_cpu(self.nodes.cpu));
        }
        for ns in &self.namespaces {
            c.add_namespace(&ns.name, ns.cpu_limit.map(Millicores::from_cpu));
        }
        c
    }

    /// Parses every referenced experiment. `read` resolves file entries.
    pub fn experiments(
        &self,
        catalog: &dyn AlgorithmCatalog,
        read: &dyn Fn(&Path) -> Result<String, ScenarioError>,
    ) -> Result<Vec<ExperimentSpec>, ScenarioError> {
        let mut out = Vec::new();
        for (i, src) in self.experiments.iter().enumerate() {
            let (origin, text) = match src {
                ExperimentSource::File { file } => (file.display().to_string(), read(file)?),
                ExperimentSource::Inline { spec } => (
                    format!("experiments[{i}]"),
                    serde_yaml::to_string(spec).map_err(|e| ScenarioError::Syntax(e.to_string()))?,
                ),
            };
            let mut spec = parse_experiment_with(&text, catalog).map_err(|e| ScenarioError::Experiment {
                origin,
                message: e.to_string(),
            })?;
            seed_experiment(&mut spec, self.seed);
            out.push(spec);
        }
        Ok(out)
    }

    /// Loads a scenario file; experiment paths are relative to it.
    pub fn load(path: &Path, catalog: &dyn AlgorithmCatalog) -> Result<(Self, Vec<ExperimentSpec>), ScenarioError> {
        let text = read_file(path)?;
        let scenario = Self::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let specs = scenario.experiments(catalog, &|p| read_file(&base.join(p)))?;
        Ok((scenario, specs))
    }
}

fn read_file(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Gives an experiment without `random_state` one derived from the scenario
/// seed and its key, so reruns with another seed explore differently.
pub fn seed_experiment(spec: &mut ExperimentSpec, seed: u64) {
    if spec.algorithm.random_state().is_none() {
        let derived = fnv1a(format!("{seed}/{}", spec.key()).as_bytes()) & i64::MAX as u64;
        spec.algorithm
            .settings
            .insert("random_state".into(), SettingValue::Int(derived as i64));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub ticks: u64,
    /// Every experiment finished and the cluster drained.
    pub finished: bool,
    pub experiments: Vec<(ResourceKey, ExperimentStatus)>,
}

/// A world and the control plane driving it.
pub struct Simulation {
    pub world: World,
    pub plane: ControlPlane,
    observer: Observer,
}

impl Simulation {
    pub fn new(scenario: &Scenario, plane: ControlPlane) -> Self {
        let mut world = World::new(scenario.cluster(), scenario.seed, plane.metrics().clone());
        world.autoscaler = scenario.autoscaler.clone();
        world.chaos = scenario.chaos.clone();
        Self {
            world,
            plane,
            observer: Observer::default(),
        }
    }

    /// Resumes a saved world under `plane`.
    pub fn from_parts(world: World, plane: ControlPlane) -> Self {
        Self {
            world,
            plane,
            observer: Observer::default(),
        }
    }

    /// An in-memory simulation of `scenario`.
    pub fn in_memory(scenario: &Scenario, registry: AlgorithmRegistry) -> Self {
        let plane = ControlPlane::new(
            ResourceStore::in_memory(),
            registry,
            Arc::new(InMemoryStore::new()),
            scenario.control_config(),
        );
        Self::new(scenario, plane)
    }

    pub fn submit(&mut self, spec: ExperimentSpec) -> Result<ResourceKey, ControlError> {
        self.plane.submit(spec)
    }

    fn drained(&self) -> bool {
        let min = self.world.autoscaler.as_ref().map(|a| a.min_nodes);
        self.plane.is_quiescent() && min.is_none_or(|m| self.world.cluster.nodes.len() <= m)
    }

    /// Ticks until all experiments finish and the autoscaler has shrunk the
    /// cluster back, or until `max_ticks`.
    pub fn run(&mut self, max_ticks: u64) -> Result<RunSummary, ControlError> {
        self.run_until(max_ticks, &|| false)
    }

    pub fn run_until(&mut self, max_ticks: u64, stop: &dyn Fn() -> bool) -> Result<RunSummary, ControlError> {
        self.plane.settle(&mut self.world)?;
        self.observer.observe(&mut self.world, &self.plane);
        while !self.drained() && self.world.tick() < max_ticks && !stop() {
            self.world.step(&mut self.plane)?;
            self.observer.observe(&mut self.world, &self.plane);
        }
        Ok(self.summary())
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            ticks: self.world.tick(),
            finished: self.drained(),
            experiments: self
                .plane
                .experiments()
                .into_iter()
                .map(|(k, e)| (k, e.status.clone()))
                .collect(),
        }
    }
}

pub const CANNED: &[&str] = &["multi-tenancy", "autoscale", "chaos-fail", "chaos-kill", "portability"];

const MULTI_TENANCY: &str = include_str!("../../assets/scenarios/multi-tenancy.yaml");
const AUTOSCALE: &str = include_str!("../../assets/scenarios/autoscale.yaml");
const CHAOS_FAIL: &str = include_str!("../../assets/scenarios/chaos-fail.yaml");
const CHAOS_KILL: &str = include_str!("../../assets/scenarios/chaos-kill.yaml");
const PORTABILITY: &str = include_str!("../../assets/scenarios/portability.yaml");
const MNIST_WIDE: &str = include_str!("../../assets/experiments/mnist-wide.yaml");
const MNIST_NARROWED: &str = include_str!("../../assets/experiments/mnist-narrowed.yaml");

pub fn canned_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "multi-tenancy" => MULTI_TENANCY,
        "autoscale" => AUTOSCALE,
        "chaos-fail" => CHAOS_FAIL,
        "chaos-kill" => CHAOS_KILL,
        "portability" => PORTABILITY,
        _ => return None,
    })
}

fn canned_file(path: &Path) -> Result<String, ScenarioError> {
    match path.file_name().and_then(|f| f.to_str()) {
        Some("mnist-wide.yaml") => Ok(MNIST_WIDE.into()),
        Some("mnist-narrowed.yaml") => Ok(MNIST_NARROWED.into()),
        _ => Err(ScenarioError::Invalid(format!("no bundled file {}", path.display()))),
    }
}

/// Parsed canned scenario and its experiments; `seed` replaces the file's.
pub fn canned(name: &str, seed: Option<u64>) -> Result<(Scenario, Vec<ExperimentSpec>), ScenarioError> {
    let text = canned_source(name).ok_or_else(|| ScenarioError::Unknown(name.into()))?;
    let mut scenario = Scenario::parse(text)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let specs = scenario.experiments(&AlgorithmRegistry::with_builtins(), &canned_file)?;
    Ok((scenario, specs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub scenario: String,
    pub checks: Vec<Check>,
    pub events: Vec<Event>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn simulate(scenario: &Scenario, specs: Vec<ExperimentSpec>) -> Result<(Simulation, RunSummary), ScenarioError> {
    let mut sim = Simulation::in_memory(scenario, AlgorithmRegistry::with_builtins());
    for spec in specs {
        sim.submit(spec)?;
    }
    let summary = sim.run(scenario.max_ticks)?;
    Ok((sim, summary))
}

fn samples(events: &[Event]) -> impl Iterator<Item = &Event> {
    events.iter().filter(|e| e.kind == "sample")
}

fn status_of<'a>(summary: &'a RunSummary, namespace: &str) -> Option<&'a ExperimentStatus> {
    summary
        .experiments
        .iter()
        .find(|(k, _)| k.namespace == namespace)
        .map(|(_, s)| s)
}

/// Runs a canned scenario and evaluates its assertions.
pub fn run_canned(name: &str, seed: Option<u64>) -> Result<ScenarioReport, ScenarioError> {
    let (scenario, specs) = canned(name, seed)?;
    let (checks, events) = match name {
        "multi-tenancy" => multi_tenancy(&scenario, specs)?,
        "autoscale" => autoscale(&scenario, specs)?,
        "chaos-fail" => chaos_fail(&scenario, specs)?,
        "chaos-kill" => chaos_kill(&scenario, specs)?,
        "portability" => portability(&scenario, specs)?,
        other => return Err(ScenarioError::Unknown(other.into())),
    };
    Ok(ScenarioReport {
        scenario: name.into(),
        checks,
        events,
    })
}

type Outcome = (Vec<Check>, Vec<Event>);

fn multi_tenancy(scenario: &Scenario, specs: Vec<ExperimentSpec>) -> Result<Outcome, ScenarioError> {
    let (sim, summary) = simulate(scenario, specs)?;
    let events = sim.world.events.clone();
    let mut checks = vec![Check::new("finished", summary.finished, format!("{} ticks", summary.ticks))];
    for (ns, expected) in [("user1", 8u64), ("user2", 2)] {
        let peak = samples(&events)
            .filter_map(|e| e.payload["running"][ns].as_u64())
            .max()
            .unwrap_or(0);
        checks.push(Check::new(format!("{ns} peak concurrency"), peak == expected, format!("{peak}, want {expected}")));
        let limit = scenario
            .namespaces
            .iter()
            .find(|n| n.name == ns)
            .and_then(|n| n.cpu_limit)
            .unwrap_or(f64::INFINITY);
        let over = samples(&events).any(|e| e.payload["usedCpu"][ns].as_f64().unwrap_or(0.0) > limit);
        checks.push(Check::new(format!("{ns} within quota"), !over, format!("limit {limit}")));
        let st = status_of(&summary, ns);
        let ok = st.is_some_and(|s| s.phase == ExperimentPhase::Succeeded && s.trials_succeeded == 12);
        checks.push(Check::new(
            format!("{ns} all trials succeed"),
            ok,
            st.map(|s| format!("{:?}, {} succeeded", s.phase, s.trials_succeeded)).unwrap_or_default(),
        ));
    }
    Ok((checks, events))
}

fn autoscale(scenario: &Scenario, specs: Vec<ExperimentSpec>) -> Result<Outcome, ScenarioError> {
    let config = scenario
        .autoscaler
        .clone()
        .ok_or_else(|| ScenarioError::Invalid("autoscale scenario needs an autoscaler".into()))?;
    let total: u32 = specs.iter().map(|s| s.max_trial_count).sum();
    let (sim, summary) = simulate(scenario, specs)?;
    let events = sim.world.events.clone();
    let counts: Vec<(u64, usize)> = samples(&events)
        .map(|e| (e.tick, e.payload["nodes"].as_u64().unwrap_or(0) as usize))
        .collect();
    let lo = counts.iter().map(|c| c.1).min().unwrap_or(0);
    let hi = counts.iter().map(|c| c.1).max().unwrap_or(0);
    let last_done = events.iter().filter(|e| e.kind == "completed").map(|e| e.tick).max().unwrap_or(0);
    let back = counts
        .iter()
        .find(|(t, n)| *t >= last_done && *n == config.min_nodes)
        .map(|c| c.0);
    let succeeded = summary.experiments.iter().map(|(_, s)| s.trials_succeeded).sum::<u32>();
    let checks = vec![
        Check::new(
            "node count within bounds",
            lo >= config.min_nodes && hi <= config.max_nodes,
            format!("{lo}..={hi}"),
        ),
        Check::new("reaches maximum", hi == config.max_nodes, format!("peak {hi}")),
        Check::new(
            "returns to minimum within grace",
            back.is_some_and(|t| t - last_done <= config.scale_down_grace_ticks),
            format!("last completion at {last_done}, back at {back:?}"),
        ),
        Check::new("all trials succeed", succeeded == total, format!("{succeeded}/{total}")),
    ];
    Ok((checks, events))
}

pub const CHAOS_FAIL_RATES: [f64; 4] = [0.0, 0.05, 0.5, 1.0];

fn chaos_fail(scenario: &Scenario, specs: Vec<ExperimentSpec>) -> Result<Outcome, ScenarioError> {
    let mut checks = Vec::new();
    let mut events = Vec::new();
    for rate in CHAOS_FAIL_RATES {
        let mut s = scenario.clone();
        if let Some(c) = s.chaos.as_mut() {
            c.fraction = rate;
        }
        let (sim, summary) = simulate(&s, specs.clone())?;
        let label = format!("rate {rate}");
        events.push(Event {
            tick: 0,
            kind: "run".into(),
            payload: serde_json::json!({ "chaosFraction": rate }),
        });
        events.extend(sim.world.events.iter().cloned());
        let max_failed = specs.first().map_or(0, |s| s.max_failed_trial_count);
        let Some((key, st)) = summary.experiments.first() else {
            return Err(ScenarioError::Invalid("chaos-fail has no experiment".into()));
        };
        let bests: Vec<f64> = sim
            .world
            .events
            .iter()
            .filter(|e| e.kind == "optimal")
            .filter_map(|e| e.payload["value"].as_f64())
            .collect();
        let monotone = bests.windows(2).all(|w| w[1] <= w[0]);
        let observed_min = sim
            .plane
            .trials(&key.namespace, &key.name)
            .iter()
            .filter(|(_, t)| t.status.phase == crate::control::TrialPhase::Succeeded)
            .filter_map(|(_, t)| t.status.observation)
            .fold(f64::INFINITY, f64::min);
        let final_best = st.current_optimal.as_ref().map_or(f64::INFINITY, |o| o.objective_value);
        checks.push(Check::new(
            format!("{label}: best-so-far monotone"),
            monotone && final_best == observed_min,
            format!("{} improvements, best {final_best}", bests.len()),
        ));
        let within = st.trials_failed <= max_failed;
        checks.push(Check::new(
            format!("{label}: succeeds within failure budget"),
            !within || st.phase == ExperimentPhase::Succeeded,
            format!("{:?} with {} failed, {} succeeded", st.phase, st.trials_failed, st.trials_succeeded),
        ));
        let failures_ok = if rate > 0.0 { st.trials_failed > 0 } else { st.trials_failed == 0 };
        checks.push(Check::new(
            format!("{label}: failures injected"),
            failures_ok,
            format!("{} failed", st.trials_failed),
        ));
    }
    Ok((checks, events))
}

fn chaos_kill(scenario: &Scenario, specs: Vec<ExperimentSpec>) -> Result<Outcome, ScenarioError> {
    let (sim, summary) = simulate(scenario, specs)?;
    let events = sim.world.events.clone();
    let (key, st) = summary
        .experiments
        .first()
        .ok_or_else(|| ScenarioError::Invalid("chaos-kill has no experiment".into()))?;
    let trials = sim.plane.trials(&key.namespace, &key.name);
    let failed = trials
        .iter()
        .filter(|(_, t)| t.status.phase == crate::control::TrialPhase::Failed)
        .count();
    let restarted = trials.iter().filter(|(_, t)| t.status.restart_count > 0).count();
    let kills = events.iter().filter(|e| e.kind == "chaos").count();
    let checks = vec![
        Check::new("no failed trials", failed == 0, format!("{failed} failed")),
        Check::new(
            "killed trials restarted",
            restarted > 0,
            format!("{restarted} trials restarted after {kills} kills"),
        ),
        Check::new("experiment succeeds", st.phase == ExperimentPhase::Succeeded, format!("{:?}", st.phase)),
    ];
    Ok((checks, events))
}

pub const PORTABILITY_SEEDS: u64 = 20;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn best_value(summary: &RunSummary) -> f64 {
    summary
        .experiments
        .first()
        .and_then(|(_, s)| s.current_optimal.as_ref())
        .map_or(f64::NEG_INFINITY, |o| o.objective_value)
}

/// Best accuracy of the wide random search and of the narrowed Bayesian
/// search for one seed.
pub fn portability_pair(scenario: &Scenario, wide: &ExperimentSpec, seed: u64) -> Result<(f64, f64), ScenarioError> {
    let catalog = AlgorithmRegistry::with_builtins();
    let mut s = scenario.clone();
    s.seed = seed;
    let mut phase1 = wide.clone();
    phase1.algorithm.settings.remove("random_state");
    seed_experiment(&mut phase1, seed);
    let (_, first) = simulate(&s, vec![phase1])?;
    let mut phase2 = parse_experiment_with(MNIST_NARROWED, &catalog).map_err(|e| ScenarioError::Experiment {
        origin: "mnist-narrowed.yaml".into(),
        message: e.to_string(),
    })?;
    seed_experiment(&mut phase2, seed);
    let (_, second) = simulate(&s, vec![phase2])?;
    Ok((best_value(&first), best_value(&second)))
}

fn portability(scenario: &Scenario, specs: Vec<ExperimentSpec>) -> Result<Outcome, ScenarioError> {
    let wide = specs
        .first()
        .ok_or_else(|| ScenarioError::Invalid("portability needs the wide experiment".into()))?;
    let (optimum, _) = super::objective::mnist_grid_optimum();
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut events = Vec::new();
    for i in 0..PORTABILITY_SEEDS {
        let seed = scenario.seed.wrapping_add(i);
        let (a, b) = portability_pair(scenario, wide, seed)?;
        events.push(Event {
            tick: 0,
            kind: "portability".into(),
            payload: serde_json::json!({ "seed": seed, "wideBest": a, "narrowedBest": b }),
        });
        first.push(a);
        second.push(b);
    }
    let worst = second.iter().copied().fold(f64::INFINITY, f64::min);
    let m1 = median(&mut first);
    let m2 = median(&mut second);
    let checks = vec![
        Check::new(
            "narrowed median >= wide median",
            m2 >= m1,
            format!("{m2:.4} vs {m1:.4}"),
        ),
        Check::new(
            "narrowed best within 1% of optimum",
            worst >= 0.99 * optimum,
            format!("worst seed {worst:.4}, optimum {optimum:.4}"),
        ),
    ];
    Ok((checks, events))
}
