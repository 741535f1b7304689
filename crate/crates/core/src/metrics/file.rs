use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{validate_batch, MetricPoint, ObservationFilter, ObservationStore, StoreError, TrialLog};

/// Append-only JSON-lines store: one `<trial>.jsonl` file per trial, one
/// point per line. All logs are cached in memory after `open`.
#[derive(Debug)]
pub struct FileStore {
    dir: PathBuf,
    logs: Mutex<HashMap<String, TrialLog>>,
}

fn unavailable(e: impl std::fmt::Display) -> StoreError {
    StoreError::Unavailable(e.to_string())
}

impl FileStore {
    /// Opens (creating if needed) the store rooted at `dir` and loads it.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(unavailable)?;
        let mut logs = HashMap::new();
        for entry in fs::read_dir(&dir).map_err(unavailable)? {
            let path = entry.map_err(unavailable)?.path();
            if path.extension().is_none_or(|e| e != "jsonl") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(unavailable)?;
            let mut log = TrialLog::default();
            let mut trial = None;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let p: MetricPoint = serde_json::from_str(line)
                    .map_err(|e| unavailable(format!("{}: {e}", path.display())))?;
                trial.get_or_insert_with(|| p.trial_name.clone());
                log.push(p);
            }
            if let Some(t) = trial {
                logs.insert(t, log);
            }
        }
        Ok(Self {
            dir,
            logs: Mutex::new(logs),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_of(&self, trial: &str) -> PathBuf {
        self.dir.join(format!("{trial}.jsonl"))
    }

    fn lock(&self) -> Result<std::sync::MutexGuard<'_, HashMap<String, TrialLog>>, StoreError> {
        self.logs
            .lock()
            .map_err(|_| StoreError::Unavailable("store lock poisoned".into()))
    }
}

impl ObservationStore for FileStore {
    fn register(&self, points: &[MetricPoint]) -> Result<(), StoreError> {
        let trial = validate_batch(points)?;
        let mut logs = self.lock()?;
        let mut next = logs.get(trial).cloned().unwrap_or_default();
        let mut buf = String::new();
        for p in points {
            if next.push(p.clone()) {
                buf.push_str(&serde_json::to_string(p).map_err(unavailable)?);
                buf.push('\n');
            }
        }
        if buf.is_empty() {
            return Ok(());
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path_of(trial))
            .map_err(unavailable)?;
        f.write_all(buf.as_bytes()).map_err(unavailable)?;
        f.flush().map_err(unavailable)?;
        logs.insert(trial.to_string(), next);
        Ok(())
    }

    fn get(&self, trial: &str, filter: &ObservationFilter) -> Result<Vec<MetricPoint>, StoreError> {
        Ok(self
            .lock()?
            .get(trial)
            .map(|l| l.query(filter))
            .unwrap_or_default())
    }

    fn delete(&self, trial: &str) -> Result<(), StoreError> {
        let mut logs = self.lock()?;
        if logs.remove(trial).is_some() {
            match fs::remove_file(self.path_of(trial)) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(unavailable(e)),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = FileStore::open(dir.path()).unwrap();
            s.register(&[
                MetricPoint::new("t1", "loss", 2, 0.25),
                MetricPoint::new("t1", "loss", 1, 0.1 + 0.2),
            ])
            .unwrap();
        }
        let s = FileStore::open(dir.path()).unwrap();
        let got = s.get("t1", &ObservationFilter::all()).unwrap();
        assert_eq!(got[0].value.to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(got.len(), 2);
        s.register(&[MetricPoint::new("t1", "loss", 2, 0.25)]).unwrap();
        let text = fs::read_to_string(dir.path().join("t1.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with(r#"{"trial":"t1","metric":"loss","ts":2,"value":0.25}"#));
        s.delete("t1").unwrap();
        assert!(!dir.path().join("t1.jsonl").exists());
    }

    #[test]
    fn unsafe_trial_names_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = FileStore::open(dir.path()).unwrap();
        let err = s.register(&[MetricPoint::new("../x", "m", 1, 1.0)]).unwrap_err();
        assert!(matches!(err, StoreError::InvalidInput(_)));
    }

    #[test]
    fn unreachable_directory_is_retryable() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "").unwrap();
        let err = FileStore::open(blocker.join("sub")).unwrap_err();
        assert!(err.is_retryable());
    }
}
