//! CSV tables and the run manifest.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::commands::Experiment;
use crate::CliError;

/// Header plus string rows, written verbatim.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Column `name` of every row.
    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    /// Value of `name` in the first row.
    pub fn first(&self, name: &str) -> Option<&str> {
        self.column(name)?.first().copied()
    }
}

/// Result of one command.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub experiment: Experiment,
    /// Resolved configuration, flat.
    pub config: Map<String, Value>,
    pub summary: Table,
    pub trials: Table,
    /// Extra files, relative to the output directory.
    pub extra: Vec<(String, String)>,
    /// Exact-invariant violations.
    pub violations: u64,
}

fn cell_value(s: &str) -> Value {
    if let Ok(i) = s.parse::<i64>() {
        return json!(i);
    }
    match s.parse::<f64>() {
        Ok(f) if f.is_finite() => json!(f),
        _ => match s {
            "true" => json!(true),
            "false" => json!(false),
            _ => json!(s),
        },
    }
}

pub fn manifest(outcome: &Outcome, workers: usize, wall_clock: f64) -> Value {
    let summary: Map<String, Value> = match outcome.summary.rows.first() {
        Some(row) => outcome.summary.header.iter().cloned().zip(row.iter().map(|c| cell_value(c))).collect(),
        None => Map::new(),
    };
    json!({
        "command": outcome.experiment.name(),
        "engine_version": env!("CARGO_PKG_VERSION"),
        "config": outcome.config,
        "seed_rule": "trial k runs with derive_trial_seed(seed, k) = mix64(mix64(seed ^ 0xA0761D6478BD642F) ^ k * 0xE7037ED1A0B428DB); environment seeds use derive_trial_seed(seed ^ 0x6A09E667F3BCC909, k)",
        "summary": summary,
        "violations": outcome.violations,
        "workers": workers,
        "wall_clock_seconds": wall_clock,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::Output(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

pub fn write_all(dir: &Path, outcome: &Outcome, workers: usize, wall_clock: f64) -> Result<(), CliError> {
    write(&dir.join("trials.csv"), &outcome.trials.to_csv())?;
    write(&dir.join("summary.csv"), &outcome.summary.to_csv())?;
    for (name, text) in &outcome.extra {
        write(&dir.join(name), text)?;
    }
    let m = serde_json::to_string_pretty(&manifest(outcome, workers, wall_clock)).expect("manifest serializes");
    write(&dir.join("manifest.json"), &(m + "\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x;y".into()]);
        assert_eq!(t.to_csv(), "a,b\n1,x;y\n");
        assert_eq!(t.first("b"), Some("x;y"));
        assert_eq!(t.column("c"), None);
    }

    #[test]
    fn cell_types() {
        assert_eq!(cell_value("3"), json!(3));
        assert_eq!(cell_value("0.5"), json!(0.5));
        assert_eq!(cell_value("NaN"), json!("NaN"));
        assert_eq!(cell_value("true"), json!(true));
    }
}
