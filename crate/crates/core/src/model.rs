use serde::{Deserialize, Serialize};

use crate::data::Dims;
use crate::error::{Error, Result};

/// Known link function applied to a linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Exp,
    Identity,
}

impl Link {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Link::Exp => x.exp(),
            Link::Identity => x,
        }
    }
}

/// The `(l, h, g)` links of the general model form
/// `λ(t|Z) = λ0(t·l(β1Z1))·l(β1Z1)·h(β2Z2(t)) + g(β3Z3(t))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Links {
    pub time_scale: Link,
    pub multiplicative: Link,
    pub additive: Link,
}

impl Default for Links {
    fn default() -> Self {
        Self {
            time_scale: Link::Exp,
            multiplicative: Link::Exp,
            additive: Link::Identity,
        }
    }
}

impl Links {
    /// `l(x)`, which must be strictly positive.
    #[inline]
    pub fn time_scale(&self, x: f64) -> Result<f64> {
        positive(self.time_scale.apply(x))
    }

    /// `h(x)`, which must be strictly positive.
    #[inline]
    pub fn multiplicative(&self, x: f64) -> Result<f64> {
        positive(self.multiplicative.apply(x))
    }

    #[inline]
    pub fn additive(&self, x: f64) -> f64 {
        self.additive.apply(x)
    }
}

#[inline]
fn positive(v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonPositiveLink { value: v })
    }
}

/// How `dt` integrals in the baseline estimator and score are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integration {
    /// Exact integration of the piecewise-constant integrands.
    #[default]
    Exact,
    /// Midpoint rule on this many equally spaced points over `[0, τ]`.
    Grid(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub links: Links,
    /// Quantile of the transformed observed times used as truncation time τ.
    pub truncation_quantile: f64,
    pub integration: Integration,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            links: Links::default(),
            truncation_quantile: 1.0,
            integration: Integration::Exact,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.truncation_quantile > 0.0 && self.truncation_quantile <= 1.0) {
            return Err(Error::Config(format!(
                "truncation quantile must lie in (0, 1], got {}",
                self.truncation_quantile
            )));
        }
        if let Integration::Grid(0) = self.integration {
            return Err(Error::Config("integration grid needs at least one point".into()));
        }
        Ok(())
    }
}

/// Regression coefficients `β = (β1, β2, β3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaVector {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub beta3: Vec<f64>,
}

impl BetaVector {
    pub fn new(beta1: Vec<f64>, beta2: Vec<f64>, beta3: Vec<f64>) -> Self {
        Self { beta1, beta2, beta3 }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::new(vec![0.0; dims.p1], vec![0.0; dims.p2], vec![0.0; dims.p3])
    }

    pub fn from_flat(flat: &[f64], dims: Dims) -> Self {
        assert_eq!(flat.len(), dims.total(), "flat beta has wrong length");
        let (b1, rest) = flat.split_at(dims.p1);
        let (b2, b3) = rest.split_at(dims.p2);
        Self::new(b1.to_vec(), b2.to_vec(), b3.to_vec())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.beta1.clone();
        v.extend_from_slice(&self.beta2);
        v.extend_from_slice(&self.beta3);
        v
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.beta1.len(), self.beta2.len(), self.beta3.len())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
