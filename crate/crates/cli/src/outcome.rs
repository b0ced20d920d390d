//! What an experiment hands back: a CSV table, gate checks and a free-form summary.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// A CSV table with pre-formatted cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self { header: header.iter().map(|h| h.as_ref().to_owned()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> anyhow::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

/// Shortest round-trip decimal form, so equal values print identically.
pub fn num(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

/// One gate condition `value <= threshold` or `value >= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, relation: Relation::AtMost, threshold, passed: value <= threshold }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, relation: Relation::AtLeast, threshold, passed: value >= threshold }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let rel = match self.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        };
        let mark = if self.passed { "pass" } else { "FAIL" };
        write!(f, "{mark} {}: {:.6} {rel} {:.6}", self.name, self.value, self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outcome {
    pub table: Table,
    pub checks: Vec<Check>,
    pub summary: Map<String, Value>,
}

impl Outcome {
    pub fn new(table: Table) -> Self {
        Self { table, ..Default::default() }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(key.to_owned(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// `max / geometric mean` of positive ratios; infinite when any ratio is not positive and finite.
pub fn spread(ratios: &[f64]) -> (f64, f64, f64) {
    if ratios.is_empty() || ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return (f64::NAN, f64::NAN, f64::INFINITY);
    }
    let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gm = (ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64).exp();
    (max, gm, max / gm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_never_passes() {
        assert!(!Check::at_most("x", f64::NAN, 1.0).passed);
        assert!(!Check::at_least("x", f64::NAN, 1.0).passed);
        assert!(Check::at_least("x", 2.0, 1.0).passed);
    }

    #[test]
    fn csv_quotes_when_needed() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1,2".into(), num(0.1)]);
        assert_eq!(t.to_csv().unwrap(), "a,b\n\"1,2\",0.1\n");
    }

    #[test]
    fn spread_of_constant_ratios_is_one() {
        let (max, gm, f) = spread(&[2.0, 2.0, 2.0]);
        assert_eq!((max, f), (2.0, 1.0));
        assert!((gm - 2.0).abs() < 1e-15);
        assert!(spread(&[1.0, 0.0]).2.is_infinite());
    }
}
