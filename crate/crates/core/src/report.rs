//! Named pass/fail checks with residuals, shared by every verifier.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `residual` and passes it iff it is finite and at most `tol`.
    pub fn check(&mut self, name: impl Into<String>, residual: f64, tol: f64) -> bool {
        let pass = residual.is_finite() && residual <= tol;
        self.checks.push(Check { name: name.into(), pass, residual });
        pass
    }

    /// A boolean verdict; the residual is 0 on pass and 1 on failure.
    pub fn flag(&mut self, name: impl Into<String>, pass: bool) -> bool {
        self.checks.push(Check { name: name.into(), pass, residual: if pass { 0.0 } else { 1.0 } });
        pass
    }

    pub fn extend(&mut self, prefix: &str, other: Report) {
        for mut c in other.checks {
            if !prefix.is_empty() {
                c.name = format!("{prefix}.{}", c.name);
            }
            self.checks.push(c);
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn max_residual(&self) -> f64 {
        self.checks.iter().map(|c| c.residual).fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}
