//! Operator commands behind the `tunectl` binary.

pub mod export;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tunekit::control::{
    run_control_loop, ControlConfig, ControlError, ControlPlane, Experiment, ResourceStore, StoreError,
};
use tunekit::local::{LocalBackend, LocalConfig};
use tunekit::metrics::push::PushServer;
use tunekit::metrics::{FileStore, ObservationStore};
use tunekit::model::{parse_experiment_with, ParseError};
use tunekit::sim::scenario::{self, Scenario, ScenarioError, Simulation};
use tunekit::sim::world::{events_to_jsonl, World};
use tunekit::suggest::AlgorithmRegistry;

pub use export::{find_experiment, Format, ResultsTable};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0} scenario check(s) failed")]
    Assertions(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Conflict(_) => 3,
            CliError::Runtime(_) => 4,
            CliError::Assertions(_) => 5,
        }
    }
}

impl From<ControlError> for CliError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::Invalid(m) => CliError::Validation(m),
            ControlError::Store(StoreError::AlreadyExists(k)) => CliError::Conflict(format!("{k} already exists")),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Control(c) => c.into(),
            ScenarioError::Io { .. } => CliError::Runtime(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Layout of a store directory.
pub struct Workspace {
    dir: PathBuf,
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn resources(&self) -> PathBuf {
        self.dir.join("resources")
    }

    fn metrics_dir(&self) -> PathBuf {
        self.dir.join("metrics")
    }

    fn world_file(&self) -> PathBuf {
        self.dir.join("world.json")
    }

    pub fn store(&self) -> Result<ResourceStore, CliError> {
        ResourceStore::open(self.resources()).map_err(runtime)
    }

    pub fn plane(&self, config: ControlConfig) -> Result<ControlPlane, CliError> {
        let metrics: Arc<dyn ObservationStore> = Arc::new(FileStore::open(self.metrics_dir()).map_err(runtime)?);
        Ok(ControlPlane::new(self.store()?, AlgorithmRegistry::with_builtins(), metrics, config))
    }

    fn load_world(&self, metrics: Arc<dyn ObservationStore>) -> Result<Option<World>, CliError> {
        let path = self.world_file();
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(runtime)?;
        World::from_json(&text, metrics)
            .map(Some)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }

    fn save_world(&self, world: &World) -> Result<(), CliError> {
        let tmp = self.dir.join("world.json.tmp");
        std::fs::write(&tmp, world.to_json()).map_err(runtime)?;
        std::fs::rename(&tmp, self.world_file()).map_err(runtime)
    }
}

fn parse_error(path: &Path, e: ParseError) -> CliError {
    CliError::Validation(match e {
        ParseError::Syntax { .. } => format!("{}: {e}", path.display()),
        ParseError::Invalid(errors) => errors
            .0
            .iter()
            .map(|i| format!("{}: {i}", path.display()))
            .collect::<Vec<_>>()
            .join("\n"),
    })
}

/// Validates and stores an experiment in the Created phase.
pub fn cmd_submit(ws: &Workspace, file: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(file).map_err(|e| CliError::Validation(format!("{}: {e}", file.display())))?;
    let registry = AlgorithmRegistry::with_builtins();
    let spec = parse_experiment_with(&text, &registry).map_err(|e| parse_error(file, e))?;
    let mut plane = ws.plane(ControlConfig::default())?;
    let key = plane.submit(spec)?;
    Ok(format!("{key}\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Backend {
    Sim,
    Local,
}

pub struct RunOptions {
    pub backend: Backend,
    pub scenario: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Ticks (sim) or polling rounds (local) for this invocation.
    pub max_ticks: Option<u64>,
    pub events: Option<PathBuf>,
}

pub fn summary(experiments: &[(String, &Experiment)]) -> String {
    let mut out = String::new();
    for (key, e) in experiments {
        let st = &e.status;
        let reason = st.reason.as_deref().map(|r| format!(" ({r})")).unwrap_or_default();
        let _ = writeln!(out, "{key}: {:?}{reason}", st.phase);
        let _ = writeln!(
            out,
            "  trials: spawned {}, succeeded {}, failed {}, running {}, pending {}",
            st.trials_spawned, st.trials_succeeded, st.trials_failed, st.trials_running, st.trials_pending
        );
        if let Some(o) = &st.current_optimal {
            let assignments: Vec<String> = o.assignments.iter().map(|a| format!("{}={}", a.name, a.value)).collect();
            let _ = writeln!(
                out,
                "  optimal: {} {}={} {}",
                o.trial_name,
                e.spec.objective.objective_metric_name,
                tunekit::model::format_real(o.objective_value),
                assignments.join(" ")
            );
        }
    }
    out
}

fn plane_summary(plane: &ControlPlane) -> String {
    let exps: Vec<(String, &Experiment)> = plane
        .experiments()
        .into_iter()
        .map(|(k, e)| (format!("{}/{}", k.namespace, k.name), e))
        .collect();
    summary(&exps)
}

/// Drives every stored experiment with the chosen backend.
pub fn cmd_run(ws: &Workspace, opts: &RunOptions) -> Result<String, CliError> {
    let registry = AlgorithmRegistry::with_builtins();
    let (mut scn, specs) = match &opts.scenario {
        Some(path) => Scenario::load(path, &registry)?,
        None => (Scenario::open_cluster(opts.seed.unwrap_or(0)), Vec::new()),
    };
    if let Some(seed) = opts.seed {
        scn.seed = seed;
    }
    let mut plane = ws.plane(scn.control_config())?;
    for spec in specs {
        if plane.experiment(&spec.namespace, &spec.name).is_none() {
            plane.submit(spec)?;
        }
    }
    if plane.experiments().is_empty() {
        return Err(CliError::Runtime("no experiments in the store".into()));
    }
    match opts.backend {
        Backend::Sim => run_sim(ws, plane, scn, opts),
        Backend::Local => run_local(plane, opts),
    }
}

fn run_sim(ws: &Workspace, plane: ControlPlane, mut scn: Scenario, opts: &RunOptions) -> Result<String, CliError> {
    if opts.scenario.is_none() {
        for (k, _) in plane.experiments() {
            if !scn.namespaces.iter().any(|n| n.name == k.namespace) {
                scn.namespaces.push(scenario::NamespaceSpec {
                    name: k.namespace.clone(),
                    cpu_limit: None,
                });
            }
        }
    }
    let world = match ws.load_world(plane.metrics().clone())? {
        Some(w) => w,
        None => {
            let mut w = World::new(scn.cluster(), scn.seed, plane.metrics().clone());
            w.autoscaler = scn.autoscaler.clone();
            w.chaos = scn.chaos.clone();
            w
        }
    };
    let limit = world.tick() + opts.max_ticks.unwrap_or(scn.max_ticks);
    let mut sim = Simulation::from_parts(world, plane);
    let result = sim.run(limit);
    ws.save_world(&sim.world)?;
    let run = result?;
    if let Some(path) = &opts.events {
        std::fs::write(path, events_to_jsonl(&sim.world.events)).map_err(runtime)?;
    }
    let mut out = plane_summary(&sim.plane);
    if !run.finished {
        let _ = writeln!(out, "stopped at tick {} before completion", run.ticks);
    }
    Ok(out)
}

fn run_local(mut plane: ControlPlane, opts: &RunOptions) -> Result<String, CliError> {
    let server = PushServer::start(plane.metrics().clone()).map_err(runtime)?;
    let mut backend = LocalBackend::new(LocalConfig {
        push_addr: Some(server.addr()),
        ..LocalConfig::default()
    });
    let rounds = opts.max_ticks.unwrap_or(u64::MAX);
    run_control_loop(&mut plane, &mut backend, &|| false, rounds, |_| {
        std::thread::sleep(Duration::from_millis(20))
    })?;
    Ok(plane_summary(&plane))
}

pub fn cmd_status(ws: &Workspace, experiment: Option<&str>) -> Result<String, CliError> {
    let store = ws.store()?;
    let exps: Vec<(String, &Experiment)> = match experiment {
        Some(id) => {
            let e = find_experiment(&store, id).map_err(CliError::Runtime)?;
            vec![(e.spec.key(), e)]
        }
        None => store
            .iter_kind(tunekit::control::Kind::Experiment)
            .filter_map(|(k, e)| e.resource.as_experiment().map(|x| (format!("{}/{}", k.namespace, k.name), x)))
            .collect(),
    };
    Ok(summary(&exps))
}

pub fn cmd_export(ws: &Workspace, experiment: &str, format: Format) -> Result<String, CliError> {
    let store = ws.store()?;
    let e = find_experiment(&store, experiment).map_err(CliError::Runtime)?;
    Ok(ResultsTable::build(&store, e).render(format))
}

/// Runs a canned scenario. The report lists every check; failures turn
/// into `CliError::Assertions` after the report is written.
pub fn cmd_scenario(name: &str, seed: Option<u64>, events: Option<&Path>) -> Result<(String, Option<CliError>), CliError> {
    let report = scenario::run_canned(name, seed)?;
    if let Some(path) = events {
        std::fs::write(path, events_to_jsonl(&report.events)).map_err(runtime)?;
    }
    let mut out = String::new();
    for c in &report.checks {
        let _ = writeln!(out, "{} {name}: {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    Ok((out, (failed > 0).then_some(CliError::Assertions(failed))))
}
