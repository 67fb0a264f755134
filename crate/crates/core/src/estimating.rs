//! The weighted estimating equation `S(β)` and the risk-set weighted mean.

use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::model::{BetaVector, ModelSpec};
use crate::sweep::{Sweep, SweepOutput};
use crate::weights::{Materialized, WeightPolicy, WeightScaling};

/// Score vector with per-subject contributions.
///
/// `value = n⁻¹ Σ_i contribution_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: Vec<f64>,
    /// Row-major `n × p`.
    pub contributions: Vec<f64>,
    pub n: usize,
    pub p: usize,
}

impl Score {
    pub fn contribution(&self, i: usize) -> &[f64] {
        &self.contributions[i * self.p..(i + 1) * self.p]
    }

    fn from_raw(contributions: Vec<f64>, n: usize, p: usize) -> Self {
        let mut value = vec![0.0; p];
        for row in contributions.chunks(p.max(1)) {
            for (v, c) in value.iter_mut().zip(row) {
                *v += c;
            }
        }
        value.iter_mut().for_each(|v| *v /= n as f64);
        Self {
            value,
            contributions,
            n,
            p,
        }
    }

    /// `max_k |S_k|`.
    pub fn linf(&self) -> f64 {
        self.value.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Reusable score evaluator for one dataset and weight policy.
pub struct ScoreEngine<'a> {
    sweep: Sweep<'a>,
    out: SweepOutput,
    n: usize,
}

impl<'a> ScoreEngine<'a> {
    pub fn new(data: &'a SurvivalDataset, spec: &'a ModelSpec, policy: &WeightPolicy) -> Result<Self> {
        spec.validate()?;
        let w = Materialized::new(policy, data)?;
        Ok(Self {
            sweep: Sweep::new(data, spec, Some(w)),
            out: SweepOutput::default(),
            n: data.len(),
        })
    }

    pub fn p(&self) -> usize {
        self.sweep.weights().map_or(0, |w| w.p)
    }

    /// Affine rescaling applied to covariate weights, if any.
    pub fn scaling(&self) -> Option<&WeightScaling> {
        self.sweep.weights().and_then(|w| w.scaling.as_ref())
    }

    fn check_dims(&self, beta: &BetaVector) -> Result<()> {
        if beta.dims().total() != self.p() {
            return Err(Error::Config(format!(
                "beta has {} components, weights have {}",
                beta.dims().total(),
                self.p()
            )));
        }
        Ok(())
    }

    /// Full score with per-subject contributions.
    pub fn score(&mut self, beta: &BetaVector) -> Result<Score> {
        self.check_dims(beta)?;
        self.sweep.run_into(beta, &mut self.out)?;
        let s = Score::from_raw(self.out.contributions.clone(), self.n, self.p());
        if s.value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteScore { beta: beta.to_flat() });
        }
        Ok(s)
    }

    /// Normalized score value only, written into `value`.
    pub fn value_into(&mut self, beta: &BetaVector, value: &mut Vec<f64>) -> Result<()> {
        self.check_dims(beta)?;
        self.sweep.run_into(beta, &mut self.out)?;
        let p = self.p();
        value.clear();
        value.resize(p, 0.0);
        for row in self.out.contributions.chunks(p.max(1)) {
            for (v, c) in value.iter_mut().zip(row) {
                *v += c;
            }
        }
        let n = self.n as f64;
        value.iter_mut().for_each(|v| *v /= n);
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteScore { beta: beta.to_flat() });
        }
        Ok(())
    }

    /// `W̄(t; β)` at transformed time `t`.
    pub fn weighted_mean(&mut self, beta: &BetaVector, t: f64) -> Result<Vec<f64>> {
        self.check_dims(beta)?;
        self.sweep.weighted_mean(beta, t)
    }
}

/// `W̄(t;β) = Σ_j W_j(t) Y_j(t e^{-β1Z1_j}) h(β2Z2_j) / Σ_j Y_j(t e^{-β1Z1_j}) h(β2Z2_j)`.
pub fn weighted_mean(
    t: f64,
    beta: &BetaVector,
    data: &SurvivalDataset,
    policy: &WeightPolicy,
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    ScoreEngine::new(data, spec, policy)?.weighted_mean(beta, t)
}

/// `S(β) = n⁻¹ Σ_i ∫_0^τ (W_i − W̄)(t) [dN_i(t e^{-β1Z1_i}) − Y_i(t e^{-β1Z1_i}) g(β3Z3_i) e^{-β1Z1_i} dt]`.
pub fn score(beta: &BetaVector, data: &SurvivalDataset, policy: &WeightPolicy, spec: &ModelSpec) -> Result<Score> {
    ScoreEngine::new(data, spec, policy)?.score(beta)
}

/// Scores under two weight policies on identical risk sets.
pub fn score_with_weights(
    beta: &BetaVector,
    data: &SurvivalDataset,
    policy_a: &WeightPolicy,
    policy_b: &WeightPolicy,
    spec: &ModelSpec,
) -> Result<(Score, Score)> {
    Ok((score(beta, data, policy_a, spec)?, score(beta, data, policy_b, spec)?))
}
