//! Pass/fail checks with fitted constants. Oracle checks are deterministic;
//! Monte Carlo checks pass only with a 3σ margin and are otherwise reported
//! as inconclusive.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

mod functional;
mod gibbs;
mod patching;
mod tables;

pub use functional::*;
pub use gibbs::*;
pub use patching::*;
pub use tables::*;

/// Confidence multiplier for Monte Carlo checks.
pub const SIGMA: f64 = 3.0;
/// Tolerance on deterministic oracle quantities.
pub const ORACLE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Oracle,
    MonteCarlo,
}

/// A numeric table backing a report; written as CSV.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Evidence {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Evidence {
    pub fn new(columns: &[&str]) -> Evidence {
        Evidence { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for r in &self.rows {
            out.write_record(r.iter().map(|v| format!("{:.17e}", v)))?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckReport {
    pub id: String,
    pub inputs: serde_json::Value,
    /// Fitted constants (C, c, α, δ, ...) by name.
    pub constants: BTreeMap<String, f64>,
    /// Positive when the check holds; in units of the checked quantity.
    pub margin: f64,
    pub status: Status,
    pub provenance: Provenance,
    /// Largest standard error entering the decision, for Monte Carlo checks.
    pub stderr: Option<f64>,
    pub notes: Vec<String>,
    pub evidence: Evidence,
}

impl CheckReport {
    pub fn new(id: &str, inputs: serde_json::Value, provenance: Provenance) -> CheckReport {
        CheckReport {
            id: id.to_string(),
            inputs,
            constants: BTreeMap::new(),
            margin: f64::NAN,
            status: Status::Fail,
            provenance,
            stderr: None,
            notes: Vec::new(),
            evidence: Evidence::default(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.get(name).copied()
    }

    fn set(&mut self, name: &str, v: f64) {
        self.constants.insert(name.to_string(), v);
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    /// Sets status from a margin: pass if positive, fail otherwise.
    fn decide(&mut self, margin: f64) {
        self.margin = margin;
        self.status = if margin >= 0.0 { Status::Pass } else { Status::Fail };
    }

    /// Monte Carlo decision: pass if `margin − 3σ ≥ 0`, fail if
    /// `margin + 3σ < 0`, inconclusive in between.
    fn decide_mc(&mut self, margin: f64, sigma: f64) {
        self.margin = margin;
        self.stderr = Some(sigma);
        self.status = if margin - SIGMA * sigma >= 0.0 {
            Status::Pass
        } else if margin + SIGMA * sigma < 0.0 {
            Status::Fail
        } else {
            Status::Inconclusive
        };
    }
}

/// Per-level constants are uniform in the level if the top level needs no
/// larger constant than the others, or if the increments contract so the
/// sequence stays bounded. Returns (uniform, bound) where bound is the
/// largest constant or, for contracting increments, the geometric-tail bound.
pub fn level_uniform(per_level: &[f64], sigma: &[f64]) -> (bool, f64) {
    let k = per_level.len();
    let max = per_level.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if k < 2 {
        return (per_level.iter().all(|v| v.is_finite()), max);
    }
    let top = per_level[k - 1];
    let rest = per_level[..k - 1]
        .iter()
        .zip(sigma)
        .map(|(c, s)| c + SIGMA * s)
        .fold(f64::NEG_INFINITY, f64::max);
    if top - SIGMA * sigma[k - 1] <= rest + ORACLE_TOL * rest.abs().max(1.0) {
        return (true, max);
    }
    if k >= 3 {
        let d1 = per_level[k - 2] - per_level[k - 3];
        let d2 = top - per_level[k - 2];
        if d1 > 0.0 && d2 > 0.0 && d2 < d1 {
            let r = d2 / d1;
            return (true, top + d2 * r / (1.0 - r));
        }
    }
    (false, max)
}

/// Sets the fitted constant `name` and the status of a check whose
/// per-level constants must be uniform in the level. The margin is the
/// distance from the top constant to the bound, negative on failure.
fn finish_uniform(r: &mut CheckReport, name: &str, per_level: &[f64], sigma: &[f64]) {
    let mc = r.provenance == Provenance::MonteCarlo;
    let zeros = vec![0.0; sigma.len()];
    let (strict, bound) = level_uniform(per_level, &zeros);
    let (lenient, _) = level_uniform(per_level, sigma);
    r.set(name, bound.max(0.0));
    let k = per_level.len();
    let top = per_level[k - 1];
    let rest = per_level[..k - 1].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ok = strict || (mc && lenient);
    r.margin = if k < 2 {
        0.0
    } else if ok {
        bound.max(rest) - top
    } else {
        rest - top
    };
    r.status = if ok { Status::Pass } else { Status::Fail };
    if mc {
        r.stderr = sigma.iter().cloned().reduce(f64::max);
    }
    if !strict && lenient && mc {
        r.note("level-uniform only within 3 standard errors");
    }
    if !ok && mc && k == 2 {
        r.status = Status::Inconclusive;
        r.note("two levels cannot separate a saturating constant from a growing one");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_uniformity() {
        assert!(level_uniform(&[3.0, 2.0, 1.0], &[0.0; 3]).0);
        let (ok, bound) = level_uniform(&[1.0, 1.5, 1.75], &[0.0; 3]);
        assert!(ok);
        assert!((bound - 2.0).abs() < 1e-12);
        assert!(!level_uniform(&[1.0, 2.0, 3.0], &[0.0; 3]).0);
        assert!(level_uniform(&[1.0, 1.0, 1.2], &[0.0, 0.0, 0.1]).0);
    }

    #[test]
    fn mc_decision_has_three_states() {
        let mut r = CheckReport::new("x", serde_json::Value::Null, Provenance::MonteCarlo);
        r.decide_mc(1.0, 0.1);
        assert_eq!(r.status, Status::Pass);
        r.decide_mc(0.1, 0.1);
        assert_eq!(r.status, Status::Inconclusive);
        r.decide_mc(-1.0, 0.1);
        assert_eq!(r.status, Status::Fail);
    }

    #[test]
    fn evidence_csv_header() {
        let mut e = Evidence::new(&["level", "value"]);
        e.push(vec![1.0, 0.5]);
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("level,value\n"));
    }
}
