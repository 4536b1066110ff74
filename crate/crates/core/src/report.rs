use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One asserted inequality: passes iff `value` is on the right side of
/// `threshold` (the direction is encoded in the check's name).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
}

/// Outcome of a verification suite or experiment. Contains only quantities
/// that are reproducible bit-for-bit from the configuration; timing lives
/// with the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub suite: String,
    pub pass: bool,
    pub samples: u64,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(suite: &str, samples: u64, seed: u64) -> Self {
        Self {
            suite: suite.to_string(),
            pass: true,
            samples,
            seed,
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn metric(&mut self, name: &str, value: f64) -> &mut Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    /// Records `value ≤ threshold`.
    pub fn check_le(&mut self, name: &str, value: f64, threshold: f64) -> &mut Self {
        self.push(
            format!("{name} <= threshold"),
            value <= threshold,
            value,
            threshold,
        )
    }

    /// Records `value ≥ threshold`.
    pub fn check_ge(&mut self, name: &str, value: f64, threshold: f64) -> &mut Self {
        self.push(
            format!("{name} >= threshold"),
            value >= threshold,
            value,
            threshold,
        )
    }

    /// Records `value < threshold`.
    pub fn check_lt(&mut self, name: &str, value: f64, threshold: f64) -> &mut Self {
        self.push(
            format!("{name} < threshold"),
            value < threshold,
            value,
            threshold,
        )
    }

    /// Records `value > threshold`.
    pub fn check_gt(&mut self, name: &str, value: f64, threshold: f64) -> &mut Self {
        self.push(
            format!("{name} > threshold"),
            value > threshold,
            value,
            threshold,
        )
    }

    pub fn note(&mut self, text: impl Into<String>) -> &mut Self {
        self.notes.push(text.into());
        self
    }

    fn push(&mut self, name: String, pass: bool, value: f64, threshold: f64) -> &mut Self {
        self.pass &= pass;
        self.checks.push(Check {
            name,
            pass,
            value,
            threshold,
        });
        self
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}
