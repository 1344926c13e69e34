//! Report records and their serialization.

use std::fmt::Write as _;

use serde::Serialize;

use crate::measure_est::Estimate;

/// One pass/fail line: `lo <= value <= hi`, with missing bounds open.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// What the value is compared against.
    pub oracle: String,
    /// The statement of the result being checked.
    pub anchor: String,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, oracle: &str, anchor: &str, value: f64, lo: Option<f64>, hi: Option<f64>) -> Self {
        let pass = value.is_finite() && lo.is_none_or(|l| value >= l) && hi.is_none_or(|h| value <= h);
        Self { name: name.into(), oracle: oracle.into(), anchor: anchor.into(), value, lo, hi, pass }
    }

    pub fn at_most(name: &str, oracle: &str, anchor: &str, value: f64, hi: f64) -> Self {
        Self::new(name, oracle, anchor, value, None, Some(hi))
    }

    pub fn at_least(name: &str, oracle: &str, anchor: &str, value: f64, lo: f64) -> Self {
        Self::new(name, oracle, anchor, value, Some(lo), None)
    }

    pub fn within(name: &str, oracle: &str, anchor: &str, value: f64, target: f64, tol: f64) -> Self {
        Self::new(name, oracle, anchor, value, Some(target - tol), Some(target + tol))
    }

    /// `|value / target - 1| <= rel`, reported as the relative error itself.
    pub fn relative(name: &str, oracle: &str, anchor: &str, value: f64, target: f64, rel: f64) -> Self {
        Self::at_most(name, oracle, anchor, (value / target - 1.0).abs(), rel)
    }

    pub fn describe(&self) -> String {
        let range = match (self.lo, self.hi) {
            (Some(l), Some(h)) => format!("in [{}, {}]", num(l), num(h)),
            (Some(l), None) => format!(">= {}", num(l)),
            (None, Some(h)) => format!("<= {}", num(h)),
            (None, None) => "finite".into(),
        };
        format!("{} {}: {} {range}", if self.pass { "PASS" } else { "FAIL" }, self.name, num(self.value))
    }
}

fn num(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-3 {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

/// A plot-ready table written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push<I, T>(&mut self, row: I)
    where
        I: IntoIterator<Item = T>,
        T: ToString,
    {
        self.rows.push(row.into_iter().map(|v| v.to_string()).collect());
    }

    /// Splits CSV text without quoting, as produced by this crate.
    pub fn from_csv(name: &str, text: &str) -> Self {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default().split(',').map(str::to_string).collect();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Self { name: name.into(), header, rows }
    }

    /// Long-format samples: `series,value`.
    pub fn samples(name: &str, series: &[(&str, &[f64])]) -> Self {
        let mut t = Self::new(name, &["series", "value"]);
        for (label, values) in series {
            for v in *values {
                t.rows.push(vec![label.to_string(), v.to_string()]);
            }
        }
        t
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for row in &self.rows {
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

/// A path or conditioned excursion to write under `paths/` on request.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDump {
    pub shard: u64,
    pub replica: u64,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub experiment: String,
    pub inputs: serde_json::Value,
    pub estimates: Vec<Estimate>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub pass: bool,
    #[serde(skip)]
    pub tables: Vec<Table>,
    #[serde(skip)]
    pub dumps: Vec<PathDump>,
}

impl Report {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Sorted-key JSON; the maps are `BTreeMap`s, so key order is fixed.
    pub fn to_json(&self) -> crate::Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string_pretty(&value)? + "\n")
    }
}
