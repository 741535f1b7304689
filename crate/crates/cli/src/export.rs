//! Per-trial results tables for plotting.

use std::io::Write;

use serde_json::{Map, Number, Value};
use tunekit::control::{trial_name, Experiment, ResourceStore, Trial};
use tunekit::control::{Kind, ResourceKey};
use tunekit::model::format_real;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Real(f64),
    Count(u32),
    Empty,
}

impl Cell {
    fn as_csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Real(x) => format_real(*x),
            Cell::Count(n) => n.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn as_json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Real(x) => Number::from_f64(*x).map_or(Value::Null, Value::Number),
            Cell::Count(n) => Value::from(*n),
            Cell::Empty => Value::Null,
        }
    }
}

/// One row per spawned trial, in spawn order. Columns: trial, parameters
/// in declaration order, objective, additional metrics, phase, restartCount.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

impl ResultsTable {
    pub fn build(store: &ResourceStore, experiment: &Experiment) -> Self {
        let spec = &experiment.spec;
        let metrics = spec.objective.all_metric_names();
        let mut columns = vec!["trial".to_string()];
        columns.extend(spec.parameters.iter().map(|p| p.name.clone()));
        columns.extend(metrics.iter().cloned());
        columns.push("phase".into());
        columns.push("restartCount".into());

        let mut trials: Vec<&Trial> = store
            .iter_kind(Kind::Trial)
            .filter(|(k, _)| k.namespace == spec.namespace)
            .filter_map(|(_, e)| e.resource.as_trial())
            .filter(|t| t.spec.experiment == spec.name)
            .collect();
        trials.sort_by_key(|t| t.spec.index);
        let rows = trials
            .into_iter()
            .map(|t| {
                let mut row = vec![Cell::Text(trial_name(&spec.name, t.spec.index as usize))];
                for p in &spec.parameters {
                    row.push(t.spec.assignments.get(&p.name).map_or(Cell::Empty, |v| Cell::Text(v.to_string())));
                }
                for (i, m) in metrics.iter().enumerate() {
                    let v = if i == 0 { t.status.observation } else { t.status.metrics.get(m).copied() };
                    row.push(v.map_or(Cell::Empty, Cell::Real));
                }
                row.push(Cell::Text(t.status.phase.as_str().into()));
                row.push(Cell::Count(t.status.restart_count));
                row
            })
            .collect();
        Self { columns, rows }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::as_csv))?;
        }
        w.flush()?;
        Ok(())
    }

    /// One object per row; a zero-trial table is a single header object
    /// listing the columns.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        if self.rows.is_empty() {
            let header = serde_json::json!({ "columns": self.columns });
            writeln!(out, "{header}")?;
        }
        for row in &self.rows {
            let obj: Map<String, Value> = self
                .columns
                .iter()
                .cloned()
                .zip(row.iter().map(Cell::as_json))
                .collect();
            writeln!(out, "{}", Value::Object(obj))?;
        }
        Ok(())
    }

    pub fn render(&self, format: Format) -> String {
        let mut buf = Vec::new();
        match format {
            Format::Csv => self.write_csv(&mut buf).expect("in-memory csv"),
            Format::Jsonl => self.write_jsonl(&mut buf).expect("in-memory jsonl"),
        }
        String::from_utf8(buf).expect("utf-8")
    }
}

/// Finds an experiment by `namespace/name`, or by bare name when unique.
pub fn find_experiment<'a>(store: &'a ResourceStore, id: &str) -> Result<&'a Experiment, String> {
    if let Some((ns, name)) = id.split_once('/') {
        return store
            .get(&ResourceKey::experiment(ns, name))
            .and_then(|e| e.resource.as_experiment())
            .ok_or_else(|| format!("no experiment {id}"));
    }
    let matches: Vec<&Experiment> = store
        .iter_kind(Kind::Experiment)
        .filter(|(k, _)| k.name == id)
        .filter_map(|(_, e)| e.resource.as_experiment())
        .collect();
    match matches.as_slice() {
        [one] => Ok(one),
        [] => Err(format!("no experiment {id}")),
        _ => Err(format!("experiment name {id} is ambiguous; use namespace/name")),
    }
}
