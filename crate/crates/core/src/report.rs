//! Residual reports: one entry per evaluated equation, with the per-point
//! breakdown kept so reports are reproducible and diffable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquationResidual {
    pub name: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Scaled residual at each sample point, in point order.
    pub per_point: Vec<f64>,
}

impl EquationResidual {
    pub fn new(name: impl Into<String>, per_point: Vec<f64>, tolerance: f64) -> EquationResidual {
        let max_residual = per_point.iter().fold(0.0f64, |a, &b| a.max(b));
        EquationResidual {
            name: name.into(),
            max_residual,
            tolerance,
            pass: max_residual <= tolerance,
            per_point,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualReport {
    pub check: String,
    pub seed: Option<u64>,
    pub tolerance: f64,
    pub equations: Vec<EquationResidual>,
    /// Free-form findings: resolved sign conventions, toggle outcomes, and
    /// similar notes a caller may want to surface.
    pub flags: BTreeMap<String, String>,
}

impl ResidualReport {
    pub fn new(check: impl Into<String>, tolerance: f64) -> ResidualReport {
        ResidualReport {
            check: check.into(),
            seed: None,
            tolerance,
            equations: Vec::new(),
            flags: BTreeMap::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> ResidualReport {
        self.seed = Some(seed);
        self
    }

    pub fn push(&mut self, eq: EquationResidual) {
        self.equations.push(eq);
    }

    pub fn push_residuals(&mut self, name: impl Into<String>, per_point: Vec<f64>) {
        let tol = self.tolerance;
        self.push(EquationResidual::new(name, per_point, tol));
    }

    /// Same, but the equation is informational: it never affects `passed`.
    pub fn push_informational(&mut self, name: impl Into<String>, per_point: Vec<f64>) {
        let tol = self.tolerance;
        let mut eq = EquationResidual::new(name, per_point, f64::INFINITY);
        eq.tolerance = tol;
        eq.pass = true;
        eq.name = format!("{} (informational)", eq.name);
        self.push(eq);
    }

    pub fn flag(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.flags.insert(key.into(), value.into());
    }

    pub fn equation(&self, name: &str) -> Option<&EquationResidual> {
        self.equations.iter().find(|e| e.name == name)
    }

    pub fn max_residual(&self) -> f64 {
        self.equations
            .iter()
            .fold(0.0f64, |a, e| a.max(e.max_residual))
    }

    pub fn passed(&self) -> bool {
        self.equations.iter().all(|e| e.pass)
    }
}
