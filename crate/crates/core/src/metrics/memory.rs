use std::collections::HashMap;
use std::sync::Mutex;

use super::{validate_batch, MetricPoint, ObservationFilter, ObservationStore, StoreError, TrialLog};

/// Volatile store, mainly for tests and simulations.
#[derive(Debug, Default)]
pub struct InMemoryStore {
    logs: Mutex<HashMap<String, TrialLog>>,
}

impl InMemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> Result<std::sync::MutexGuard<'_, HashMap<String, TrialLog>>, StoreError> {
        self.logs
            .lock()
            .map_err(|_| StoreError::Unavailable("store lock poisoned".into()))
    }
}

impl ObservationStore for InMemoryStore {
    fn register(&self, points: &[MetricPoint]) -> Result<(), StoreError> {
        let trial = validate_batch(points)?;
        let mut logs = self.lock()?;
        let log = logs.entry(trial.to_string()).or_default();
        for p in points {
            log.push(p.clone());
        }
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
        self.lock()?.remove(trial);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_idempotency() {
        let s = InMemoryStore::new();
        let pts = vec![
            MetricPoint::new("t1", "accuracy", 3, 0.5),
            MetricPoint::new("t1", "Validation-accuracy", 1, 0.4),
            MetricPoint::new("t1", "accuracy", 1, 0.3),
        ];
        s.register(&pts).unwrap();
        s.register(&pts).unwrap();
        let got = s.get("t1", &ObservationFilter::all()).unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].metric_name, "Validation-accuracy");
        assert_eq!(got[1].metric_name, "accuracy");
        assert_eq!(got[2].timestamp, 3);
        let acc = s.get("t1", &ObservationFilter::metrics(&["accuracy"])).unwrap();
        assert_eq!(acc.len(), 2);
        assert!(s.get("nobody", &ObservationFilter::all()).unwrap().is_empty());
    }

    #[test]
    fn delete_is_isolated() {
        let s = InMemoryStore::new();
        s.register(&[MetricPoint::new("t1", "m", 1, 1.0)]).unwrap();
        s.register(&[MetricPoint::new("t2", "m", 1, 2.0)]).unwrap();
        s.delete("t1").unwrap();
        s.delete("unknown").unwrap();
        assert!(s.get("t1", &ObservationFilter::all()).unwrap().is_empty());
        assert_eq!(s.get("t2", &ObservationFilter::all()).unwrap().len(), 1);
    }

    #[test]
    fn rejects_mixed_or_bad_batches() {
        let s = InMemoryStore::new();
        let mixed = [MetricPoint::new("a", "m", 1, 1.0), MetricPoint::new("b", "m", 1, 1.0)];
        assert!(matches!(s.register(&mixed), Err(StoreError::InvalidInput(_))));
        assert!(s.register(&[MetricPoint::new("a", "m", 1, f64::NAN)]).is_err());
        assert!(s.register(&[]).is_err());
    }
}
