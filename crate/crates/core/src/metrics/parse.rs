//! The metric line format `<ts> <name>=<value>`, where `<ts>` is an integer
//! tick or an ISO-8601 date-time.

use chrono::{DateTime, NaiveDateTime};

use super::MetricPoint;

#[derive(Debug, Clone, PartialEq)]
pub enum LineParse {
    Metric { timestamp: i64, name: String, value: f64 },
    /// Not a metric line at all.
    Ignored,
    /// Looks like a metric line but does not parse.
    Malformed(String),
}

/// Integer ticks pass through; date-times become Unix milliseconds.
pub fn parse_timestamp(token: &str) -> Option<i64> {
    if let Ok(t) = token.parse::<i64>() {
        return Some(t);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(token) {
        return Some(dt.timestamp_millis());
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(token, f).ok())
        .map(|dt| dt.and_utc().timestamp_millis())
}

pub fn parse_metric_line(line: &str) -> LineParse {
    let line = line.trim();
    let Some((ts_tok, rest)) = line.split_once(char::is_whitespace) else {
        return LineParse::Ignored;
    };
    let Some(timestamp) = parse_timestamp(ts_tok) else {
        return LineParse::Ignored;
    };
    let rest = rest.trim();
    let Some((name, value)) = rest.split_once('=') else {
        return LineParse::Ignored;
    };
    if name.is_empty() || name.contains(char::is_whitespace) {
        return LineParse::Malformed(format!("bad metric name in `{line}`"));
    }
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => LineParse::Metric {
            timestamp,
            name: name.to_string(),
            value: v,
        },
        _ => LineParse::Malformed(format!("bad value in `{line}`")),
    }
}

pub fn format_metric_line(timestamp: i64, name: &str, value: f64) -> String {
    format!("{timestamp} {name}={value}")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedMetrics {
    pub points: Vec<MetricPoint>,
    pub malformed: usize,
}

/// Extracts watched metrics from a log stream. Unrelated lines are skipped;
/// broken metric lines are counted.
pub fn parse_metric_lines(text: &str, trial: &str, watched: &[String]) -> ParsedMetrics {
    let mut out = ParsedMetrics::default();
    for line in text.lines() {
        match parse_metric_line(line) {
            LineParse::Metric { timestamp, name, value } => {
                if watched.contains(&name) {
                    out.points.push(MetricPoint {
                        trial_name: trial.to_string(),
                        metric_name: name,
                        timestamp,
                        value,
                    });
                }
            }
            LineParse::Malformed(_) => out.malformed += 1,
            LineParse::Ignored => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn watch(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tick_line() {
        let p = parse_metric_lines("17 Validation-accuracy=0.977", "t", &watch(&["Validation-accuracy"]));
        assert_eq!(p.points, vec![MetricPoint::new("t", "Validation-accuracy", 17, 0.977)]);
    }

    #[test]
    fn prose_is_ignored() {
        let p = parse_metric_lines("INFO starting epoch 3", "t", &watch(&["accuracy"]));
        assert!(p.points.is_empty());
        assert_eq!(p.malformed, 0);
    }

    #[test]
    fn unwatched_metrics_dropped() {
        let text = "1 accuracy=0.5\n1 loss=2.0\n2 accuracy=0.6\n2 loss=1.5\n";
        let p = parse_metric_lines(text, "t", &watch(&["accuracy"]));
        assert_eq!(p.points.len(), 2);
        assert!(p.points.iter().all(|x| x.metric_name == "accuracy"));
    }

    #[test]
    fn iso_timestamps_and_malformed_count() {
        let text = "2024-01-02T03:04:05Z accuracy=0.5\n2024-01-02T03:04:06.5 accuracy=0.6\n3 accuracy=abc\n3 accuracy=inf\n";
        let p = parse_metric_lines(text, "t", &watch(&["accuracy"]));
        assert_eq!(p.points[0].timestamp, 1_704_164_645_000);
        assert_eq!(p.points[1].timestamp, 1_704_164_646_500);
        assert_eq!(p.malformed, 2);
    }

    #[test]
    fn formatting_round_trips_bits() {
        for v in [0.1 + 0.2, -1e-300, 123456.789, 0.9774999999999999] {
            match parse_metric_line(&format_metric_line(5, "m", v)) {
                LineParse::Metric { value, .. } => assert_eq!(value.to_bits(), v.to_bits()),
                other => panic!("{other:?}"),
            }
        }
    }
}
