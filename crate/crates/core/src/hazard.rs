//! Model hazard, cumulative hazard, and the moment-based baseline estimator.

use crate::curve::StepCurve;
use crate::data::{CovariateProfile, SurvivalDataset};
use crate::error::{Error, Result};
use crate::model::{dot, BetaVector, ModelSpec};
use crate::sweep::Sweep;

/// Hazard value with a flag for negative results.
///
/// The model admits negative hazards when the additive part is negative;
/// callers that generate data must reject them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardValue {
    pub value: f64,
    pub negative: bool,
}

/// `λ(t|Z) = λ0(t·l(β1Z1))·l(β1Z1)·h(β2Z2(t)) + g(β3Z3(t))`.
pub fn model_hazard(
    beta: &BetaVector,
    lambda0: impl Fn(f64) -> f64,
    profile: &CovariateProfile,
    t: f64,
    spec: &ModelSpec,
) -> Result<HazardValue> {
    let links = &spec.links;
    let l = links.time_scale(dot(&beta.beta1, &profile.z1))?;
    let seg = profile.segment_at(t);
    let h = links.multiplicative(dot(&beta.beta2, &seg.z2))?;
    let g = links.additive(dot(&beta.beta3, &seg.z3));
    let value = lambda0(t * l) * l * h + g;
    Ok(HazardValue {
        value,
        negative: value < 0.0,
    })
}

/// Cumulative hazard of one covariate profile given a baseline step curve,
/// precomputed for repeated evaluation on the original time scale.
#[derive(Debug, Clone)]
pub struct ProfileCumHazard {
    /// Baseline jump times mapped to the original scale.
    jump_times: Vec<f64>,
    /// Cumulative `Σ h(β2Z2(u_k))·ΔΛ0_k`.
    jump_cum: Vec<f64>,
    /// Additive-rate pieces: start times, rates `g(β3Z3)`, and the
    /// integral up to each start.
    add_start: Vec<f64>,
    add_rate: Vec<f64>,
    add_cum: Vec<f64>,
    support_end: f64,
}

impl ProfileCumHazard {
    pub fn new(
        beta: &BetaVector,
        baseline: &StepCurve,
        profile: &CovariateProfile,
        spec: &ModelSpec,
    ) -> Result<Self> {
        let links = &spec.links;
        let l = links.time_scale(dot(&beta.beta1, &profile.z1))?;
        let mut jump_times = Vec::with_capacity(baseline.len());
        let mut jump_cum = Vec::with_capacity(baseline.len());
        let mut acc = 0.0;
        for (&k, d) in baseline.knots().iter().zip(baseline.increments()) {
            let u = k / l;
            let seg = profile.segment_at(u);
            acc += links.multiplicative(dot(&beta.beta2, &seg.z2))? * d;
            jump_times.push(u);
            jump_cum.push(acc);
        }
        let mut add_start = Vec::new();
        let mut add_rate = Vec::new();
        let mut add_cum = Vec::new();
        let mut acc = 0.0;
        for (k, seg) in profile.segments.iter().enumerate() {
            if k > 0 {
                let prev = &profile.segments[k - 1];
                acc += add_rate[k - 1] * (seg.start - prev.start);
            }
            add_start.push(seg.start);
            add_rate.push(links.additive(dot(&beta.beta3, &seg.z3)));
            add_cum.push(acc);
        }
        Ok(Self {
            jump_times,
            jump_cum,
            add_start,
            add_rate,
            add_cum,
            support_end: baseline.support_end() / l,
        })
    }

    /// Largest time at which the baseline is defined for this profile.
    pub fn support_end(&self) -> f64 {
        self.support_end
    }

    fn jumps_upto(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.jump_cum[k - 1]
        }
    }

    /// Integral of the additive rate over `[0, t]`.
    pub fn additive_part(&self, t: f64) -> f64 {
        let k = self.add_start.partition_point(|&s| s <= t).saturating_sub(1);
        self.add_cum[k] + self.add_rate[k] * (t - self.add_start[k])
    }

    /// Additive rate in effect at `t`.
    pub fn additive_rate(&self, t: f64) -> f64 {
        let k = self.add_start.partition_point(|&s| s <= t).saturating_sub(1);
        self.add_rate[k]
    }

    /// `Λ(t|Z)` (right-continuous).
    pub fn value(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&u| u <= t);
        self.jumps_upto(k) + self.additive_part(t)
    }

    /// `Λ(t-|Z)`.
    pub fn value_left(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&u| u < t);
        self.jumps_upto(k) + self.additive_part(t)
    }

    /// Jump times on the original scale with their weighted sizes.
    pub fn jumps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.jump_times.iter().enumerate().map(move |(k, &u)| (u, self.jump_cum[k] - self.jumps_upto(k)))
    }

    /// Smallest `t` with `Λ(t|Z) >= level`, if reached within the support.
    pub fn first_passage(&self, level: f64) -> Option<f64> {
        // Between jumps Λ moves only through the additive part, which is
        // piecewise linear; check each stretch and each jump in order.
        let mut from = 0.0;
        let mut k = 0;
        loop {
            let to = self.jump_times.get(k).copied().unwrap_or(self.support_end).min(self.support_end);
            if let Some(t) = self.linear_passage(from, to, level) {
                return Some(t);
            }
            if k >= self.jump_times.len() || self.jump_times[k] > self.support_end {
                return None;
            }
            if self.value(to) >= level {
                return Some(to);
            }
            from = to;
            k += 1;
        }
    }

    fn linear_passage(&self, from: f64, to: f64, level: f64) -> Option<f64> {
        if !(to > from) {
            return None;
        }
        let base = self.value(from);
        if base >= level && from > 0.0 {
            return Some(from);
        }
        let mut a = from;
        let mut k = self.add_start.partition_point(|&s| s <= from).saturating_sub(1);
        while a < to {
            let b = self.add_start.get(k + 1).copied().unwrap_or(f64::INFINITY).min(to);
            let rate = self.add_rate[k];
            let va = base + self.additive_part(a) - self.additive_part(from);
            let vb = va + rate * (b - a);
            if rate > 0.0 && vb >= level {
                return Some(a + (level - va) / rate);
            }
            a = b;
            k += 1;
        }
        None
    }
}

/// `Λ(t|Z) = ∫_0^t h(β2Z2(u)) dΛ0(u·l(β1Z1)) + g(β3Z3(u)) du`.
pub fn cumulative_hazard(
    beta: &BetaVector,
    baseline: &StepCurve,
    profile: &CovariateProfile,
    t: f64,
    spec: &ModelSpec,
) -> Result<f64> {
    Ok(ProfileCumHazard::new(beta, baseline, profile, spec)?.value(t))
}

/// Baseline estimate with its diagnostics.
#[derive(Debug, Clone)]
pub struct BaselineEstimate {
    pub curve: StepCurve,
    pub tau: f64,
    pub negative_increments: usize,
    pub excluded_events: usize,
}

/// Moment-based estimator `Λ̂0(t; β)` on the transformed time scale.
///
/// Jumps sit at transformed event times `T*_i·l(β1Z1_i)`; each carries
/// `Σ 1/Σ_j Y_j h_j` for the events there minus the additive correction
/// `∫ Σ_j Y_j g_j/l_j / Σ_j Y_j h_j ds` accumulated since the previous jump.
pub fn estimate_baseline(beta: &BetaVector, data: &SurvivalDataset, spec: &ModelSpec) -> Result<StepCurve> {
    Ok(baseline_with_diagnostics(beta, data, spec)?.curve)
}

pub fn baseline_with_diagnostics(
    beta: &BetaVector,
    data: &SurvivalDataset,
    spec: &ModelSpec,
) -> Result<BaselineEstimate> {
    spec.validate()?;
    if beta.dims() != data.dims() {
        return Err(Error::Config("beta dimensions do not match dataset".into()));
    }
    let mut sweep = Sweep::new(data, spec, None);
    let out = sweep.run(beta)?;
    if out.knots.is_empty() {
        return Err(Error::Estimation("no events within the truncation time".into()));
    }
    let negative_increments = out.increments.iter().filter(|d| **d < 0.0).count();
    let curve = StepCurve::from_increments(out.knots, &out.increments, out.tau)?;
    Ok(BaselineEstimate {
        curve,
        tau: out.tau,
        negative_increments,
        excluded_events: out.excluded_events,
    })
}
