//! JSON fit report.

use serde::{Deserialize, Serialize};

use crate::data::{Role, SurvivalDataset};
use crate::error::Result;
use crate::model::ModelSpec;
use crate::solver::FitResult;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub role: Role,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

/// Everything needed to inspect a fit and to predict from it later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n: usize,
    pub events: usize,
    pub coefficients: Vec<Coefficient>,
    /// Confidence level of the intervals.
    pub level: f64,
    pub spec: ModelSpec,
    pub fit: FitResult,
}

impl FitReport {
    /// Report with normal-theory intervals `β̂ ± z·SE` at `level`, when the
    /// fit carries a variance.
    pub fn new(fit: &FitResult, data: &SurvivalDataset, spec: &ModelSpec, level: f64) -> Self {
        let names = data.names();
        let roles = names
            .z1
            .iter()
            .map(|n| (n, Role::Z1))
            .chain(names.z2.iter().map(|n| (n, Role::Z2)))
            .chain(names.z3.iter().map(|n| (n, Role::Z3)));
        let beta = fit.beta_hat.to_flat();
        let se = fit.standard_errors();
        let z = stats::normal_quantile(0.5 + level / 2.0);
        let coefficients = roles
            .enumerate()
            .map(|(k, (name, role))| {
                let s = se.as_ref().map(|v| v[k]);
                Coefficient {
                    name: name.clone(),
                    role,
                    estimate: beta[k],
                    se: s,
                    ci_lo: s.map(|s| beta[k] - z * s),
                    ci_hi: s.map(|s| beta[k] + z * s),
                }
            })
            .collect();
        Self {
            n: data.len(),
            events: data.event_count(),
            coefficients,
            level,
            spec: *spec,
            fit: fit.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
