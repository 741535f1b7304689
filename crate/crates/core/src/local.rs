//! Runs trial commands as local child processes.
//!
//! Each worker is a separate process with the rendered command line. Worker
//! 0's stdout is the trial log. The environment carries:
//!
//! - `TUNE_JOB_ID`, `TUNE_TRIAL_NAME`, `TUNE_NAMESPACE`
//! - `TUNE_WORKER_INDEX`, `TUNE_WORKER_COUNT`, `TUNE_ATTEMPT`
//! - `TUNE_METRICS_ADDR` when metrics are pushed
//! - `TUNE_BUDGET_MAX` for budgeted schedulers

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use log::warn;

use crate::control::{BackendError, ExecutionBackend, JobId, JobRequest, JobState, JobStatus};
use crate::model::{MetricCollectorKind, RunPayload};

/// Exit code a trainer uses to ask for a restart (EX_TEMPFAIL).
pub const DEFAULT_TEMPORARY_EXIT_CODE: i32 = 75;

#[derive(Debug, Clone)]
pub struct LocalConfig {
    pub temporary_exit_code: i32,
    pub workdir: Option<PathBuf>,
    pub push_addr: Option<SocketAddr>,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            temporary_exit_code: DEFAULT_TEMPORARY_EXIT_CODE,
            workdir: None,
            push_addr: None,
        }
    }
}

struct Worker {
    child: Child,
    exit: Option<i32>,
    reader: Option<JoinHandle<()>>,
}

struct LocalJob {
    request: JobRequest,
    attempt: u32,
    workers: Vec<Worker>,
    state: JobState,
    log: Arc<Mutex<String>>,
}

impl LocalJob {
    fn kill(&mut self) {
        for w in &mut self.workers {
            if w.exit.is_none() {
                let _ = w.child.kill();
                let _ = w.child.wait();
            }
            if let Some(r) = w.reader.take() {
                let _ = r.join();
            }
        }
        self.workers.clear();
    }

    /// Folds worker exits into the job state.
    fn poll(&mut self, temporary_code: i32) {
        if !matches!(self.state, JobState::Running) {
            return;
        }
        for w in &mut self.workers {
            if w.exit.is_none() {
                match w.child.try_wait() {
                    Ok(Some(status)) => w.exit = Some(status.code().unwrap_or(-1)),
                    Ok(None) => {}
                    Err(e) => {
                        warn!("waiting on worker: {e}");
                        w.exit = Some(-1);
                    }
                }
            }
        }
        let failed = self.workers.iter().enumerate().find_map(|(i, w)| match w.exit {
            Some(0) | None => None,
            Some(code) => Some((i, code)),
        });
        if let Some((i, code)) = failed {
            self.kill();
            self.state = JobState::Failed {
                temporary: code == temporary_code,
                reason: format!("worker {i} exited with code {code}"),
            };
        } else if self.workers.iter().all(|w| w.exit == Some(0)) {
            for w in &mut self.workers {
                if let Some(r) = w.reader.take() {
                    let _ = r.join();
                }
            }
            self.state = JobState::Succeeded;
        }
    }
}

/// Child-process backend. The job table sits behind a mutex so status
/// reads may come from any thread.
pub struct LocalBackend {
    config: LocalConfig,
    started: Instant,
    jobs: Mutex<BTreeMap<String, LocalJob>>,
    services: BTreeSet<String>,
}

impl LocalBackend {
    pub fn new(config: LocalConfig) -> Self {
        Self {
            config,
            started: Instant::now(),
            jobs: Mutex::new(BTreeMap::new()),
            services: BTreeSet::new(),
        }
    }

    fn spawn(&self, job: &mut LocalJob) {
        let RunPayload::Command(line) = &job.request.run.resolved_payload else {
            unreachable!("checked at submit");
        };
        let argv = match shell_words::split(line) {
            Ok(v) if !v.is_empty() => v,
            Ok(_) => {
                job.state = JobState::Failed { temporary: false, reason: "empty command".into() };
                return;
            }
            Err(e) => {
                job.state = JobState::Failed { temporary: false, reason: format!("bad command line: {e}") };
                return;
            }
        };
        let id = job.request.id();
        job.workers.clear();
        for index in 0..job.request.worker_count {
            let mut cmd = Command::new(&argv[0]);
            cmd.args(&argv[1..])
                .env("TUNE_JOB_ID", id.as_str())
                .env("TUNE_TRIAL_NAME", &job.request.run.trial_name)
                .env("TUNE_NAMESPACE", &job.request.run.namespace)
                .env("TUNE_WORKER_INDEX", index.to_string())
                .env("TUNE_WORKER_COUNT", job.request.worker_count.to_string())
                .env("TUNE_ATTEMPT", job.attempt.to_string())
                .stdin(Stdio::null())
                .stderr(Stdio::null())
                .stdout(if index == 0 { Stdio::piped() } else { Stdio::null() });
            if let (MetricCollectorKind::Push, Some(addr)) = (job.request.collector, self.config.push_addr) {
                cmd.env("TUNE_METRICS_ADDR", addr.to_string());
            }
            if let Some(max) = job.request.max_resource {
                cmd.env("TUNE_BUDGET_MAX", max.to_string());
            }
            if let Some(dir) = &self.config.workdir {
                cmd.current_dir(dir);
            }
            match cmd.spawn() {
                Ok(mut child) => {
                    let reader = child.stdout.take().map(|mut out| {
                        let log = job.log.clone();
                        std::thread::spawn(move || {
                            let mut buf = [0u8; 4096];
                            while let Ok(n) = out.read(&mut buf) {
                                if n == 0 {
                                    break;
                                }
                                log.lock().expect("log lock").push_str(&String::from_utf8_lossy(&buf[..n]));
                            }
                        })
                    });
                    job.workers.push(Worker { child, exit: None, reader });
                }
                Err(e) => {
                    job.kill();
                    job.state = JobState::Failed {
                        temporary: false,
                        reason: format!("spawning `{}`: {e}", argv[0]),
                    };
                    return;
                }
            }
        }
        job.state = JobState::Running;
    }

    /// Jobs not yet finished.
    pub fn active(&self) -> usize {
        self.jobs
            .lock()
            .expect("job table")
            .values()
            .filter(|j| matches!(j.state, JobState::Pending | JobState::Running))
            .count()
    }
}

impl Drop for LocalBackend {
    fn drop(&mut self) {
        if let Ok(mut jobs) = self.jobs.lock() {
            for job in jobs.values_mut() {
                job.kill();
            }
        }
    }
}

impl ExecutionBackend for LocalBackend {
    fn now(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn submit(&mut self, request: &JobRequest) -> Result<(), BackendError> {
        if !matches!(request.run.resolved_payload, RunPayload::Command(_)) {
            return Err(BackendError::Rejected("the local backend runs commands only".into()));
        }
        let id = request.id();
        if self.jobs.lock().expect("job table").contains_key(id.as_str()) {
            return Ok(());
        }
        let mut job = LocalJob {
            request: request.clone(),
            attempt: 0,
            workers: Vec::new(),
            state: JobState::Pending,
            log: Arc::new(Mutex::new(String::new())),
        };
        self.spawn(&mut job);
        self.jobs.lock().expect("job table").insert(id.as_str().to_string(), job);
        Ok(())
    }

    fn status(&self, job: &JobId) -> Option<JobStatus> {
        let mut jobs = self.jobs.lock().expect("job table");
        let j = jobs.get_mut(job.as_str())?;
        j.poll(self.config.temporary_exit_code);
        Some(JobStatus {
            state: j.state.clone(),
            attempt: j.attempt,
        })
    }

    fn restart(&mut self, job: &JobId, attempt: u32) -> Result<(), BackendError> {
        let mut taken = {
            let mut jobs = self.jobs.lock().expect("job table");
            let j = jobs
                .get_mut(job.as_str())
                .ok_or_else(|| BackendError::Rejected(format!("no job {job}")))?;
            if j.attempt >= attempt {
                return Ok(());
            }
            jobs.remove(job.as_str()).expect("present")
        };
        taken.kill();
        taken.attempt = attempt;
        self.spawn(&mut taken);
        self.jobs.lock().expect("job table").insert(job.as_str().to_string(), taken);
        Ok(())
    }

    fn cancel(&mut self, job: &JobId) -> Result<(), BackendError> {
        let mut jobs = self.jobs.lock().expect("job table");
        if let Some(j) = jobs.get_mut(job.as_str()) {
            j.poll(self.config.temporary_exit_code);
            if matches!(j.state, JobState::Pending | JobState::Running) {
                j.kill();
                j.state = JobState::Cancelled;
            }
        }
        Ok(())
    }

    fn logs(&self, job: &JobId) -> Option<String> {
        let jobs = self.jobs.lock().expect("job table");
        jobs.get(job.as_str()).map(|j| j.log.lock().expect("log lock").clone())
    }

    fn ensure_service(&mut self, experiment: &str, namespace: &str, _cpu: f64) -> Result<bool, BackendError> {
        self.services.insert(format!("{namespace}/{experiment}"));
        Ok(true)
    }

    fn release_service(&mut self, experiment: &str, namespace: &str) {
        self.services.remove(&format!("{namespace}/{experiment}"));
    }
}
