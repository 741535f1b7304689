use std::fmt;

use serde::{Deserialize, Serialize};

/// One `name = value` pair of a suggestion. Values are carried as strings so
/// that the same bytes flow from the algorithm into the rendered command line,
/// the resource store and the results table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub name: String,
    pub value: String,
}

impl Assignment {
    pub fn new(name: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value: value.into(),
        }
    }
}

/// Ordered list of assignments, one per declared parameter (plus `budget` for
/// budgeted algorithms).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AssignmentSet(pub Vec<Assignment>);

impl AssignmentSet {
    pub fn new(items: Vec<Assignment>) -> Self {
        Self(items)
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|a| a.name == name)
            .map(|a| a.value.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Assignment> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Copy without the named entry.
    pub fn without(&self, name: &str) -> AssignmentSet {
        AssignmentSet(self.0.iter().filter(|a| a.name != name).cloned().collect())
    }

    pub fn with(mut self, name: &str, value: String) -> AssignmentSet {
        self.0.push(Assignment::new(name, value));
        self
    }
}

impl fmt::Display for AssignmentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}={}", a.name, a.value)?;
        }
        Ok(())
    }
}

/// Shortest decimal string that parses back to the same `f64`.
pub fn format_real(x: f64) -> String {
    if x == 0.0 {
        // normalise -0
        return "0".to_string();
    }
    format!("{x}")
}

/// Typed view of a parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Choice(String),
}

impl ParamValue {
    pub fn render(&self) -> String {
        match self {
            ParamValue::Int(v) => v.to_string(),
            ParamValue::Real(v) => format_real(*v),
            ParamValue::Choice(s) => s.clone(),
        }
    }
}
