//! Checks shared by the storage, recovery and acceptance targets. Each
//! returns a short summary on success and the first discrepancy otherwise.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tunekit::control::{
    run_control_loop, ControlConfig, ControlError, ControlPlane, ExperimentStatus, ResourceKey, ResourceStore,
};
use tunekit::metrics::push::{PushClient, PushServer};
use tunekit::metrics::{
    best_objective, format_metric_line, parse_metric_lines, FileStore, InMemoryStore, MetricPoint,
    ObservationFilter, ObservationStore, StoreError,
};
use tunekit::model::{BestValueRule, ObjectiveSpec, ObjectiveType};
use tunekit::sim::scenario::{Scenario, ScenarioError};
use tunekit::sim::world::World;
use tunekit::sim::objective::sphere;
use tunekit::suggest::hyperband::HyperbandSchedule;
use tunekit::suggest::{AlgorithmRegistry, SuggestionRequest, TrialObservation};

const TRIALS: [&str; 3] = ["ns.t1", "ns.t2", "other.t1"];
const METRICS: [&str; 3] = ["accuracy", "loss", "Validation-accuracy"];

#[derive(Debug, Clone)]
pub enum Op {
    Register(Vec<MetricPoint>),
    Get(String, ObservationFilter),
    Delete(String),
    Reopen,
}

fn random_point<R: Rng>(rng: &mut R, trial: &str) -> MetricPoint {
    let value = match rng.random_range(0..10) {
        0 => f64::NAN,
        1 => -0.0,
        // small value pool so exact repeats happen often
        _ => rng.random_range(0..4) as f64 * 0.25,
    };
    let metric = if rng.random_range(0..40) == 0 {
        ""
    } else {
        METRICS[rng.random_range(0..METRICS.len())]
    };
    MetricPoint::new(trial, metric, rng.random_range(0..8), value)
}

fn random_filter<R: Rng>(rng: &mut R) -> ObservationFilter {
    let bound = |rng: &mut R| rng.random_bool(0.5).then(|| rng.random_range(-1..9));
    let metric_names = rng.random_bool(0.4).then(|| {
        METRICS
            .iter()
            .filter(|_| rng.random_bool(0.5))
            .map(|m| m.to_string())
            .collect()
    });
    ObservationFilter {
        start: bound(rng),
        end: bound(rng),
        metric_names,
    }
}

pub fn random_ops(seed: u64, len: usize) -> Vec<Op> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| match rng.random_range(0..20) {
            0..=8 => {
                let trial = TRIALS[rng.random_range(0..TRIALS.len())];
                let n = rng.random_range(0..5);
                let mut batch: Vec<_> = (0..n).map(|_| random_point(&mut rng, trial)).collect();
                match rng.random_range(0..30) {
                    0 if !batch.is_empty() => batch[0].trial_name = "ns.mixed".into(),
                    1 => batch.iter_mut().for_each(|p| p.trial_name = "../escape".into()),
                    _ => {}
                }
                Op::Register(batch)
            }
            9..=15 => {
                let trial = if rng.random_range(0..10) == 0 {
                    "unknown"
                } else {
                    TRIALS[rng.random_range(0..TRIALS.len())]
                };
                Op::Get(trial.into(), random_filter(&mut rng))
            }
            16..=17 => Op::Delete(TRIALS[rng.random_range(0..TRIALS.len())].into()),
            _ => Op::Reopen,
        })
        .collect()
}

#[derive(Debug, PartialEq)]
enum Outcome {
    Ack,
    Points(Vec<(String, String, i64, u64)>),
    Invalid,
    Unavailable,
}

fn outcome<T>(r: Result<T, StoreError>, f: impl FnOnce(T) -> Outcome) -> Outcome {
    match r {
        Ok(v) => f(v),
        Err(StoreError::InvalidInput(_)) => Outcome::Invalid,
        Err(StoreError::Unavailable(_)) => Outcome::Unavailable,
    }
}

fn points_outcome(v: Vec<MetricPoint>) -> Outcome {
    Outcome::Points(
        v.into_iter()
            .map(|p| (p.trial_name, p.metric_name, p.timestamp, p.value.to_bits()))
            .collect(),
    )
}

fn apply(store: &dyn ObservationStore, op: &Op) -> Outcome {
    match op {
        Op::Register(batch) => outcome(store.register(batch), |_| Outcome::Ack),
        Op::Get(trial, filter) => outcome(store.get(trial, filter), points_outcome),
        Op::Delete(trial) => outcome(store.delete(trial), |_| Outcome::Ack),
        Op::Reopen => Outcome::Ack,
    }
}

/// Reference model: one list per trial, exact repeats dropped, stable sort.
#[derive(Default)]
struct Model {
    logs: std::collections::BTreeMap<String, Vec<MetricPoint>>,
}

impl Model {
    fn valid(batch: &[MetricPoint]) -> bool {
        let Some(first) = batch.first() else { return false };
        let t = &first.trial_name;
        let safe = !t.starts_with('.')
            && t.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        safe && batch
            .iter()
            .all(|p| &p.trial_name == t && !p.metric_name.is_empty() && p.value.is_finite())
    }

    fn apply(&mut self, op: &Op) -> Outcome {
        match op {
            Op::Register(batch) if !Self::valid(batch) => Outcome::Invalid,
            Op::Register(batch) => {
                let log = self.logs.entry(batch[0].trial_name.clone()).or_default();
                for p in batch {
                    let dup = log.iter().any(|q| {
                        q.metric_name == p.metric_name
                            && q.timestamp == p.timestamp
                            && q.value.to_bits() == p.value.to_bits()
                    });
                    if !dup {
                        log.push(p.clone());
                    }
                }
                Outcome::Ack
            }
            Op::Get(trial, filter) => {
                let mut v: Vec<MetricPoint> = self
                    .logs
                    .get(trial)
                    .map(|l| l.iter().filter(|p| filter_oracle(filter, p)).cloned().collect())
                    .unwrap_or_default();
                v.sort_by(|a, b| (a.timestamp, &a.metric_name).cmp(&(b.timestamp, &b.metric_name)));
                points_outcome(v)
            }
            Op::Delete(trial) => {
                self.logs.remove(trial);
                Outcome::Ack
            }
            Op::Reopen => Outcome::Ack,
        }
    }
}

/// Filter predicate written out independently of `ObservationFilter::matches`.
pub fn filter_oracle(f: &ObservationFilter, p: &MetricPoint) -> bool {
    if let Some(s) = f.start {
        if p.timestamp < s {
            return false;
        }
    }
    if let Some(e) = f.end {
        if p.timestamp > e {
            return false;
        }
    }
    match &f.metric_names {
        Some(names) => names.contains(&p.metric_name),
        None => true,
    }
}

/// Runs `sequences` random call sequences against the in-memory store, the
/// file store (reopened on `Reopen`) and the reference model.
pub fn storage_differential(sequences: u64, len: usize) -> Result<String, String> {
    let mut calls = 0usize;
    for seed in 0..sequences {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mem = InMemoryStore::new();
        let mut file = FileStore::open(dir.path()).map_err(|e| e.to_string())?;
        let mut model = Model::default();
        for (i, op) in random_ops(seed, len).iter().enumerate() {
            if let Op::Reopen = op {
                file = FileStore::open(dir.path()).map_err(|e| e.to_string())?;
            }
            let a = apply(&mem, op);
            let b = apply(&file, op);
            let c = model.apply(op);
            if a != b || a != c {
                return Err(format!(
                    "sequence {seed} call {i} {op:?}: memory {a:?}, file {b:?}, model {c:?}"
                ));
            }
            calls += 1;
        }
    }
    Ok(format!("{sequences} sequences, {calls} calls agree"))
}

fn objective(rule: BestValueRule) -> ObjectiveSpec {
    ObjectiveSpec {
        kind: ObjectiveType::Maximize,
        goal: None,
        objective_metric_name: "accuracy".into(),
        additional_metric_names: vec!["loss".into()],
        best_value_rule: rule,
    }
}

/// Sends the same random series through the push endpoint and through the
/// log parser, then compares best objectives bit for bit.
pub fn push_pull_equivalence(streams: u64) -> Result<String, String> {
    let store: Arc<dyn ObservationStore> = Arc::new(InMemoryStore::new());
    let server = PushServer::start(store.clone()).map_err(|e| e.to_string())?;
    let watched = vec!["accuracy".to_string(), "loss".to_string()];
    for seed in 0..streams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trial = format!("ns.push-{seed}");
        let mut client = PushClient::connect(server.addr(), &trial).map_err(|e| e.to_string())?;
        let mut log = String::from("INFO starting\n");
        for _ in 0..rng.random_range(1..30) {
            let ts = rng.random_range(0..20);
            let name = watched[rng.random_range(0..2)].as_str();
            let value: f64 = rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-8..8));
            client.push(ts, name, value).map_err(|e| e.to_string())?;
            log.push_str(&format_metric_line(ts, name, value));
            log.push('\n');
            if rng.random_bool(0.2) {
                log.push_str("epoch done\n");
            }
        }
        let pulled = parse_metric_lines(&log, &trial, &watched);
        if pulled.malformed != 0 {
            return Err(format!("stream {seed}: {} malformed lines", pulled.malformed));
        }
        let pull_store = InMemoryStore::new();
        pull_store.register(&pulled.points).map_err(|e| e.to_string())?;
        let pushed = store.get(&trial, &ObservationFilter::all()).map_err(|e| e.to_string())?;
        let pulled = pull_store.get(&trial, &ObservationFilter::all()).map_err(|e| e.to_string())?;
        for rule in [BestValueRule::Latest, BestValueRule::Max, BestValueRule::Min] {
            let a = best_objective(&pushed, &objective(rule)).map(f64::to_bits);
            let b = best_objective(&pulled, &objective(rule)).map(f64::to_bits);
            if a != b {
                return Err(format!("stream {seed} {rule:?}: push {a:?} vs pull {b:?}"));
            }
        }
    }
    Ok(format!("{streams} streams identical under latest, max and min"))
}

/// Two tenants: TPE on a 3-D sphere, and random search with 2-worker
/// restartable trials under worker kills.
pub const RECOVERY_SCENARIO: &str = r#"
seed: 11
nodes: {count: 4, cpu: 4}
namespaces:
  - {name: a}
  - {name: b, cpuLimit: 6}
chaos: {mode: kill-worker, fraction: 0.2, intervalTicks: 7, seed: 3}
experiments:
  - spec:
      name: tpe-sphere
      namespace: a
      objective: {type: minimize, objectiveMetricName: loss}
      algorithm: {algorithmName: tpe}
      parallelTrialCount: 3
      maxTrialCount: 12
      maxFailedTrialCount: 3
      parameters:
        - {name: x, parameterType: double, feasibleSpace: {min: -2, max: 2}}
        - {name: y, parameterType: double, feasibleSpace: {min: -2, max: 2}}
        - {name: z, parameterType: double, feasibleSpace: {min: -2, max: 2}}
      trialTemplate:
        kind: simulated
        objective: {functionName: sphere, durationTicks: 4, noiseStdDev: 0.01}
  - spec:
      name: resumable
      namespace: b
      objective: {type: minimize, objectiveMetricName: loss}
      algorithm: {algorithmName: random}
      parallelTrialCount: 3
      maxTrialCount: 8
      maxFailedTrialCount: 0
      parameters:
        - {name: x, parameterType: double, feasibleSpace: {min: -2, max: 2}}
      trialTemplate:
        kind: simulated
        workerCount: 2
        cpuPerWorker: 1
        restartPolicy: on-temporary-failure
        objective: {functionName: sphere, durationTicks: 6}
"#;

type Statuses = Vec<(ResourceKey, ExperimentStatus)>;

fn no_files(p: &Path) -> Result<String, ScenarioError> {
    Err(ScenarioError::Invalid(format!("no file {}", p.display())))
}

fn open_plane(dir: &Path, scenario: &Scenario) -> Result<ControlPlane, String> {
    let metrics: Arc<dyn ObservationStore> =
        Arc::new(FileStore::open(dir.join("metrics")).map_err(|e| e.to_string())?);
    let config = ControlConfig {
        max_passes: 256,
        ..scenario.control_config()
    };
    Ok(ControlPlane::new(
        ResourceStore::open(dir.join("resources")).map_err(|e| e.to_string())?,
        AlgorithmRegistry::with_builtins(),
        metrics,
        config,
    ))
}

/// Runs the recovery scenario with file-backed stores, crashing the
/// controller at `crash` (if any). After a crash the stores are reopened
/// from disk, the cluster state is restored from its JSON snapshot, and the
/// loop resumes. Returns the final statuses and the commit count.
pub fn recovery_run(crash: Option<u64>) -> Result<(Statuses, u64), String> {
    let scenario = Scenario::parse(RECOVERY_SCENARIO).map_err(|e| e.to_string())?;
    let specs = scenario
        .experiments(&AlgorithmRegistry::with_builtins(), &no_files)
        .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut plane = open_plane(dir.path(), &scenario)?;
    let mut world = World::new(scenario.cluster(), scenario.seed, plane.metrics().clone());
    world.chaos = scenario.chaos.clone();
    for spec in specs {
        plane.submit(spec).map_err(|e| e.to_string())?;
    }
    if let Some(c) = crash {
        plane.crash_at_commit(c);
    }
    let never = || false;
    let mut commits = 0;
    let statuses = match run_control_loop(&mut plane, &mut world, &never, 10_000, World::advance) {
        Ok(s) => s,
        Err(ControlError::Crashed) => {
            commits += plane.commits();
            let snapshot = world.to_json();
            drop(world);
            drop(plane);
            let mut plane = open_plane(dir.path(), &scenario)?;
            let mut world = World::from_json(&snapshot, plane.metrics().clone()).map_err(|e| e.to_string())?;
            let s = run_control_loop(&mut plane, &mut world, &never, 10_000, World::advance)
                .map_err(|e| e.to_string())?;
            commits += plane.commits();
            if !plane.is_quiescent() {
                return Err("resumed run did not finish".into());
            }
            return Ok((s, commits));
        }
        Err(e) => return Err(e.to_string()),
    };
    if !plane.is_quiescent() {
        return Err("run did not finish".into());
    }
    Ok((statuses, plane.commits()))
}

/// Crashes the controller at `kill_points` random commits and compares each
/// recovered outcome with the uninterrupted one.
pub fn recovery(kill_points: usize, seed: u64) -> Result<String, String> {
    let (reference, total) = recovery_run(None)?;
    if reference.iter().any(|(_, s)| !s.phase.is_terminal()) {
        return Err(format!("reference run not terminal: {reference:?}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..kill_points {
        let crash = rng.random_range(0..total);
        let (got, _) = recovery_run(Some(crash))?;
        for ((key, want), (_, have)) in reference.iter().zip(&got) {
            if want.phase != have.phase || want.current_optimal != have.current_optimal {
                return Err(format!(
                    "crash at commit {crash}: {key} ended {:?} {:?}, expected {:?} {:?}",
                    have.phase, have.current_optimal, want.phase, want.current_optimal
                ));
            }
        }
        if got.len() != reference.len() {
            return Err(format!("crash at commit {crash}: experiment count differs"));
        }
    }
    Ok(format!("{kill_points} kill points over {total} commits recover identically"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Best noiseless 3-D sphere value found by `algorithm` in `trials`
/// sequential suggestions.
pub fn sphere_best(algorithm: &str, trials: usize, seed: u64) -> Result<f64, String> {
    let registry = AlgorithmRegistry::with_builtins();
    let exp = super::experiment("dominance", algorithm, super::sphere_space(3), seed);
    let mut state = registry.fresh_state(&exp).map_err(|e| e.to_string())?;
    let mut history: Vec<TrialObservation> = Vec::new();
    let mut best = f64::INFINITY;
    while history.len() < trials {
        let req = SuggestionRequest {
            experiment: &exp,
            history: &history,
            pending: &[],
            count: 1,
        };
        let batch = registry.get_suggestions(&req, &mut state).map_err(|e| e.to_string())?;
        for set in batch.assignments {
            let x: Vec<f64> = set.iter().map(|a| a.value.parse::<f64>().unwrap_or(f64::NAN)).collect();
            let y = sphere(&x);
            best = best.min(y);
            history.push(TrialObservation::succeeded(set, y));
        }
    }
    Ok(best)
}

/// Median best over `seeds` for BO and TPE against random search.
pub fn algorithm_dominance(trials: usize, seeds: u64) -> Result<String, String> {
    let med = |alg: &str| -> Result<f64, String> {
        Ok(median((0..seeds).map(|s| sphere_best(alg, trials, s)).collect::<Result<_, _>>()?))
    };
    let random = med("random")?;
    let bo = med("bayesianoptimization")?;
    let tpe = med("tpe")?;
    let detail = format!("median best: random {random:.4}, bo {bo:.4}, tpe {tpe:.4}");
    if bo < random && tpe < random {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Successive-halving table computed from the recurrence with integer
/// arithmetic only: s_max by repeated multiplication, bracket sizes by
/// ceiling division, rung sizes by repeated floor division.
pub fn halving_oracle(max_resource: u64, eta: u64) -> Vec<Vec<(u64, f64)>> {
    let mut s_max = 0u32;
    let mut p = eta;
    while p <= max_resource {
        s_max += 1;
        p *= eta;
    }
    (0..=s_max)
        .rev()
        .map(|s| {
            let n = ((s_max as u64 + 1) * eta.pow(s) + s as u64) / (s as u64 + 1);
            let mut configs = n;
            let mut resource = max_resource as f64 / eta.pow(s) as f64;
            let mut rungs = Vec::new();
            for _ in 0..=s {
                rungs.push((configs, resource));
                configs /= eta;
                resource *= eta as f64;
            }
            rungs
        })
        .collect()
}

pub fn rung_table(max_resource: u64, eta: u64) -> Result<String, String> {
    let schedule = HyperbandSchedule::new(max_resource as f64, eta);
    let got: Vec<Vec<(u64, f64)>> = schedule
        .brackets()
        .into_iter()
        .map(|(_, rungs)| rungs.iter().map(|r| (r.configs, r.resource)).collect())
        .collect();
    let want = halving_oracle(max_resource, eta);
    if got == want {
        Ok(format!("{} brackets, {} trials", got.len(), schedule.total_trials()))
    } else {
        Err(format!("schedule {got:?} vs oracle {want:?}"))
    }
}
