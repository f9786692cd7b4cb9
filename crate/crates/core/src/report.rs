use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Named residual checks plus integer counts, in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerificationReport {
    pub title: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub checks: Vec<CheckResult>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub counts: BTreeMap<String, u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn new(title: impl Into<String>) -> Self {
        VerificationReport {
            title: title.into(),
            ..Default::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Passes iff `residual <= tolerance` (NaN fails).
    pub fn check(&mut self, name: impl Into<String>, residual: f64, tolerance: f64) -> &mut CheckResult {
        self.checks.push(CheckResult {
            name: name.into(),
            max_residual: residual,
            tolerance,
            passed: residual <= tolerance,
            detail: None,
        });
        self.checks.last_mut().expect("just pushed")
    }

    /// Passes iff `value >= threshold`; used for checks that must detect a defect.
    pub fn check_at_least(&mut self, name: impl Into<String>, value: f64, threshold: f64) -> &mut CheckResult {
        self.checks.push(CheckResult {
            name: name.into(),
            max_residual: value,
            tolerance: threshold,
            passed: value >= threshold,
            detail: Some("lower bound".into()),
        });
        self.checks.last_mut().expect("just pushed")
    }

    pub fn count(&mut self, name: impl Into<String>, n: u64) {
        self.counts.insert(name.into(), n);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn residual(&self, name: &str) -> f64 {
        self.get(name).map(|c| c.max_residual).unwrap_or(f64::NAN)
    }

    /// Appends another report's checks and counts under `prefix/`.
    pub fn absorb(&mut self, prefix: &str, other: VerificationReport) {
        for mut c in other.checks {
            c.name = format!("{prefix}/{}", c.name);
            self.checks.push(c);
        }
        for (k, v) in other.counts {
            self.counts.insert(format!("{prefix}/{k}"), v);
        }
        self.notes.extend(other.notes);
    }
}

impl CheckResult {
    pub fn with_detail(&mut self, detail: impl Into<String>) -> &mut Self {
        self.detail = Some(detail.into());
        self
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} [{}]", self.title, if self.passed() { "PASS" } else { "FAIL" })?;
        for c in &self.checks {
            writeln!(
                f,
                "  {:<4} {:<48} residual {:.3e}  tol {:.1e}",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.max_residual,
                c.tolerance
            )?;
        }
        for (k, v) in &self.counts {
            writeln!(f, "  count {k} = {v}")?;
        }
        Ok(())
    }
}

/// Running maximum that keeps NaN sticky.
pub(crate) fn max_abs(acc: f64, v: f64) -> f64 {
    if acc.is_nan() || v.is_nan() {
        f64::NAN
    } else {
        acc.max(v.abs())
    }
}
