//! Goodness of fit: a Kolmogorov–Smirnov-type comparison against a
//! kernel-smoothed nonparametric cumulative hazard, and the
//! Gill–Schumacher two-weight score test.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::StepCurve;
use crate::data::{CovariateProfile, Dims, SubjectRecord, SurvivalDataset};
use crate::error::{Error, Result};
use crate::estimating::ScoreEngine;
use crate::hazard::ProfileCumHazard;
use crate::model::{BetaVector, ModelSpec};
use crate::rng;
use crate::solver::{minimize, refit, solve, FitResult, Norm, Residual, SolverConfig};
use crate::stats;
use crate::variance::variance_bootstrap;
use crate::weights::WeightPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Gaussian,
}

impl Kernel {
    /// Unnormalized kernel; constants cancel in the estimator.
    fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u.abs() < 1.0 {
                    1.0 - u * u
                } else {
                    0.0
                }
            }
            Kernel::Gaussian => (-0.5 * u * u).exp(),
        }
    }
}

fn check_time_independent(data: &SurvivalDataset) -> Result<()> {
    if data.is_time_independent() {
        Ok(())
    } else {
        Err(Error::Unsupported(
            "goodness of fit requires time-independent covariates".into(),
        ))
    }
}

/// Default bandwidths `sd(Z_j)·n^{-1/3}` per stacked covariate (1 for a
/// constant covariate, where any bandwidth gives the same weights).
pub fn default_bandwidths(data: &SurvivalDataset) -> Vec<f64> {
    let p = data.dims().total();
    let rows: Vec<Vec<f64>> = data.subjects().iter().map(|s| s.covariates.stacked_initial()).collect();
    let factor = (data.len() as f64).powf(-1.0 / 3.0);
    (0..p)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let sd = stats::sd(&col);
            if sd > 0.0 {
                sd * factor
            } else {
                1.0
            }
        })
        .collect()
}

/// Sorted subjects with their stacked covariates, shared across profiles.
struct Kerneled {
    times: Vec<f64>,
    events: Vec<bool>,
    z: Vec<Vec<f64>>,
    max_time: f64,
}

impl Kerneled {
    fn new(data: &SurvivalDataset) -> Result<Self> {
        check_time_independent(data)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let s = data.subjects();
        order.sort_by(|&a, &b| s[a].time.total_cmp(&s[b].time));
        Ok(Self {
            times: order.iter().map(|&i| s[i].time).collect(),
            events: order.iter().map(|&i| s[i].event).collect(),
            z: order.iter().map(|&i| s[i].covariates.stacked_initial()).collect(),
            max_time: data.max_time(),
        })
    }

    fn cumhaz(&self, z: &[f64], kernel: Kernel, h: &[f64]) -> Result<StepCurve> {
        if h.len() != z.len() || h.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("one positive bandwidth per covariate is required".into()));
        }
        let w: Vec<f64> = self
            .z
            .iter()
            .map(|zi| zi.iter().zip(z).zip(h).map(|((a, b), hh)| kernel.eval((a - b) / hh)).product())
            .collect();
        let mut at_risk: f64 = w.iter().sum();
        if !(at_risk > 0.0) {
            return Err(Error::InvalidData(format!("no kernel mass at covariate point {z:?}")));
        }
        let mut knots = Vec::new();
        let mut incs = Vec::new();
        let n = self.times.len();
        let mut i = 0;
        while i < n {
            let t = self.times[i];
            let mut j = i;
            let mut dn = 0.0;
            let mut leaving = 0.0;
            while j < n && self.times[j] == t {
                if self.events[j] {
                    dn += w[j];
                }
                leaving += w[j];
                j += 1;
            }
            if dn > 0.0 {
                knots.push(t);
                incs.push(dn / at_risk);
            }
            at_risk -= leaving;
            i = j;
        }
        StepCurve::from_increments(knots, &incs, self.max_time)
    }
}

/// Kernel-smoothed Nelson–Aalen estimate of `Λ(u|z)`:
/// `∫_0^u Σ_i K_h(Z_i − z) dN_i / Σ_i K_h(Z_i − z) Y_i` with a product kernel.
pub fn np_cumhaz(data: &SurvivalDataset, z: &[f64], kernel: Kernel, bandwidths: &[f64]) -> Result<StepCurve> {
    Kerneled::new(data)?.cumhaz(z, kernel, bandwidths)
}

/// Weight function `Q(t)` of the discrepancy process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QWeight {
    Constant { value: f64 },
    /// Right-continuous steps: `values[k]` on `[knots[k], knots[k+1])`, and
    /// `initial` before the first knot.
    Steps { initial: f64, knots: Vec<f64>, values: Vec<f64> },
}

impl Default for QWeight {
    fn default() -> Self {
        QWeight::Constant { value: 1.0 }
    }
}

impl QWeight {
    fn value(&self, t: f64) -> f64 {
        match self {
            QWeight::Constant { value } => *value,
            QWeight::Steps { initial, knots, values } => {
                let k = knots.partition_point(|&u| u <= t);
                if k == 0 {
                    *initial
                } else {
                    values[k - 1]
                }
            }
        }
    }

    fn knots(&self) -> &[f64] {
        match self {
            QWeight::Constant { .. } => &[],
            QWeight::Steps { knots, .. } => knots,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            QWeight::Constant { value } if value.is_finite() => Ok(()),
            QWeight::Steps { initial, knots, values }
                if knots.len() == values.len()
                    && knots.windows(2).all(|w| w[0] < w[1])
                    && initial.is_finite()
                    && values.iter().all(|v| v.is_finite()) =>
            {
                Ok(())
            }
            _ => Err(Error::Config("invalid Q weight".into())),
        }
    }
}

/// Difference `Λ̂ − Λ̂_NP` for one profile: signed jumps plus the constant
/// additive rate of the model part.
#[derive(Debug, Clone, Default)]
struct Difference {
    jumps: Vec<(f64, f64)>,
    rate: f64,
}

impl Difference {
    fn new(model: &ProfileCumHazard, np: &StepCurve, horizon: f64) -> Self {
        let mut jumps: Vec<(f64, f64)> = model.jumps().filter(|(t, _)| *t <= horizon).collect();
        jumps.extend(
            np.knots()
                .iter()
                .zip(np.increments())
                .filter(|(t, _)| **t <= horizon)
                .map(|(&t, d)| (t, -d)),
        );
        Self {
            jumps,
            rate: model.additive_rate(0.0),
        }
    }

    fn scaled(&self, w: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.jumps.iter().map(move |&(t, d)| (t, w * d))
    }
}

/// `D(t) = scale·∫_0^t Q d(Λ̂ − Λ̂_NP)` evaluated just before and at every
/// breakpoint up to `horizon`, as `(t, D(t-), D(t))`.
fn walk(mut jumps: Vec<(f64, f64)>, rate: f64, q: &QWeight, horizon: f64, scale: f64) -> Vec<(f64, f64, f64)> {
    jumps.extend(q.knots().iter().filter(|&&t| t <= horizon).map(|&t| (t, 0.0)));
    jumps.push((horizon, 0.0));
    jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::with_capacity(jumps.len());
    let mut d = 0.0;
    let mut last = 0.0;
    let mut i = 0;
    while i < jumps.len() {
        let t = jumps[i].0;
        d += q.value(last) * rate * (t - last);
        let left = d;
        while i < jumps.len() && jumps[i].0 == t {
            d += q.value(t) * jumps[i].1;
            i += 1;
        }
        out.push((t, scale * left, scale * d));
        last = t;
    }
    out
}

fn sup_abs(path: &[(f64, f64, f64)]) -> f64 {
    path.iter().fold(0.0, |m, &(_, a, b)| m.max(a.abs()).max(b.abs()))
}

/// Settings of [`ks_test`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsOptions {
    pub kernel: Kernel,
    /// Per-covariate bandwidths; defaults to [`default_bandwidths`].
    pub bandwidths: Option<Vec<f64>>,
    pub q: QWeight,
    /// Largest time compared. By default the 90th percentile of observed
    /// times, capped at the baseline support of every profile; the rule is
    /// reapplied to each bootstrap data set so the null distribution
    /// reflects its dependence on the data.
    pub horizon: Option<f64>,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for KsOptions {
    fn default() -> Self {
        Self {
            kernel: Kernel::default(),
            bandwidths: None,
            q: QWeight::default(),
            horizon: None,
            replicates: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// `sup` over times and observed profiles of `|D|`.
    pub d1: f64,
    /// `sup` over times of the profile-frequency average of `D`.
    pub d2: f64,
    pub pvalue: f64,
    pub d2_pvalue: f64,
    pub kernel: Kernel,
    pub bandwidths: Vec<f64>,
    pub q: QWeight,
    pub horizon: f64,
    pub replicates: usize,
    pub dropped: usize,
}

/// Distinct covariate profiles with their frequencies.
fn profiles(data: &SurvivalDataset) -> Vec<(CovariateProfile, f64)> {
    let mut out: Vec<(Vec<f64>, CovariateProfile, f64)> = Vec::new();
    let mut stacked: Vec<(Vec<f64>, usize)> = data
        .subjects()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.covariates.stacked_initial(), i))
        .collect();
    stacked.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let w = 1.0 / data.len() as f64;
    for (z, i) in stacked {
        match out.last_mut() {
            Some(last) if last.0 == z => last.2 += w,
            _ => out.push((z, data.subjects()[i].covariates.clone(), w)),
        }
    }
    out.into_iter().map(|(_, p, w)| (p, w)).collect()
}

/// Statistics `(D1, D2)` of a fit against the kernel estimate.
struct KsSetup<'a> {
    profiles: Vec<(CovariateProfile, f64)>,
    kernel: Kernel,
    bandwidths: &'a [f64],
    q: &'a QWeight,
    /// Fixed horizon; `None` applies [`default_horizon`] to each data set.
    horizon: Option<f64>,
}

/// The 90th percentile of observed times, capped at the baseline support of
/// every profile.
fn default_horizon(
    fit: &FitResult,
    data: &SurvivalDataset,
    spec: &ModelSpec,
    profiles: &[(CovariateProfile, f64)],
) -> Result<f64> {
    let times: Vec<f64> = data.subjects().iter().map(|s| s.time).collect();
    let mut h = stats::quantile(&times, 0.9);
    for (p, _) in profiles {
        h = h.min(ProfileCumHazard::new(&fit.beta_hat, &fit.baseline, p, spec)?.support_end());
    }
    Ok(h)
}

impl KsSetup<'_> {
    /// `(D1, D2, horizon)`.
    fn statistics(&self, fit: &FitResult, data: &SurvivalDataset, spec: &ModelSpec) -> Result<(f64, f64, f64)> {
        let horizon = match self.horizon {
            Some(h) => h,
            None => default_horizon(fit, data, spec, &self.profiles)?,
        };
        let k = Kerneled::new(data)?;
        let scale = 1.0 / (data.len() as f64).sqrt();
        let mut d1 = 0.0f64;
        let mut pooled = Vec::new();
        let mut pooled_rate = 0.0;
        for (profile, w) in &self.profiles {
            let model = ProfileCumHazard::new(&fit.beta_hat, &fit.baseline, profile, spec)?;
            if model.support_end() < horizon {
                return Err(Error::Truncation {
                    requested: horizon,
                    max_time: model.support_end(),
                });
            }
            let np = k.cumhaz(&profile.stacked_initial(), self.kernel, self.bandwidths)?;
            let diff = Difference::new(&model, &np, horizon);
            d1 = d1.max(sup_abs(&walk(diff.jumps.clone(), diff.rate, self.q, horizon, scale)));
            pooled.extend(diff.scaled(*w));
            pooled_rate += w * diff.rate;
        }
        let d2 = sup_abs(&walk(pooled, pooled_rate, self.q, horizon, scale));
        Ok((d1, d2, horizon))
    }
}

/// Reverse Kaplan–Meier estimate of the censoring distribution.
struct Censoring {
    times: Vec<f64>,
    cdf: Vec<f64>,
    cap: f64,
}

impl Censoring {
    fn new(data: &SurvivalDataset) -> Self {
        let mut obs: Vec<(f64, bool)> = data.subjects().iter().map(|s| (s.time, s.event)).collect();
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = obs.len();
        let mut surv = 1.0;
        let mut times = Vec::new();
        let mut cdf = Vec::new();
        let mut i = 0;
        while i < n {
            let t = obs[i].0;
            let at_risk = (n - i) as f64;
            let mut j = i;
            let mut censored = 0.0;
            while j < n && obs[j].0 == t {
                if !obs[j].1 {
                    censored += 1.0;
                }
                j += 1;
            }
            if censored > 0.0 {
                surv *= 1.0 - censored / at_risk;
                times.push(t);
                cdf.push(1.0 - surv);
            }
            i = j;
        }
        Self {
            times,
            cdf,
            cap: data.max_time(),
        }
    }

    /// Draw by inversion; mass beyond the last censoring time sits at the
    /// largest observed time.
    fn sample(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c < u);
        self.times.get(k).copied().unwrap_or(self.cap).min(self.cap)
    }
}

/// Inverse of the piecewise-linear interpolation of `Λ̂(·|Z)` through its
/// values at the jump times; `∞` when `level` is not reached within the
/// support. Sampling from the step function itself would put every draw on
/// a baseline knot and create massive ties in transformed time.
fn interpolated_passage(cum: &ProfileCumHazard, level: f64) -> f64 {
    let end = cum.support_end();
    let mut prev = (0.0, 0.0);
    let knots = cum.jumps().map(|(u, _)| u).filter(|&u| u <= end).chain(std::iter::once(end));
    for u in knots {
        let v = cum.value(u);
        if v >= level && u > prev.0 {
            if v <= prev.1 {
                return u;
            }
            return prev.0 + (u - prev.0) * (level - prev.1).max(0.0) / (v - prev.1);
        }
        prev = (u, v);
    }
    f64::INFINITY
}

/// Data simulated from a fitted model on the observed covariates, with
/// censoring drawn from the reverse Kaplan–Meier estimate.
fn simulate_from_fit(
    fit: &FitResult,
    data: &SurvivalDataset,
    spec: &ModelSpec,
    censoring: &Censoring,
    seed: u64,
    replicate: u64,
) -> Result<SurvivalDataset> {
    let mut r = rng::stream(seed, &[replicate]);
    let mut subjects = Vec::with_capacity(data.len());
    for s in data.subjects() {
        let cum = ProfileCumHazard::new(&fit.beta_hat, &fit.baseline, &s.covariates, spec)?;
        let e = -(1.0 - r.gen::<f64>()).ln();
        let t = interpolated_passage(&cum, e);
        let c = censoring.sample(r.gen());
        let seg = &s.covariates.segments[0];
        subjects.push(SubjectRecord::fixed(
            s.id.clone(),
            t.min(c),
            t <= c,
            s.covariates.z1.clone(),
            seg.z2.clone(),
            seg.z3.clone(),
        ));
    }
    SurvivalDataset::with_names(subjects, data.dims(), data.names().clone())
}

/// Kolmogorov–Smirnov-type test of the fitted model against the kernel
/// estimate at every observed covariate profile. The null distribution of
/// `D1` and `D2` comes from a parametric bootstrap: data are simulated from
/// the fit, refitted near `β̂`, and the statistics recomputed.
pub fn ks_test(
    fit: &FitResult,
    data: &SurvivalDataset,
    spec: &ModelSpec,
    policy: &WeightPolicy,
    cfg: &SolverConfig,
    opts: &KsOptions,
) -> Result<KsResult> {
    check_time_independent(data)?;
    opts.q.validate()?;
    if !fit.converged() {
        return Err(Error::Estimation("fit did not converge".into()));
    }
    if opts.replicates < 2 {
        return Err(Error::Config("bootstrap needs at least 2 replicates".into()));
    }
    let bandwidths = opts.bandwidths.clone().unwrap_or_else(|| default_bandwidths(data));
    let profiles = profiles(data);
    let setup = KsSetup {
        profiles,
        kernel: opts.kernel,
        bandwidths: &bandwidths,
        q: &opts.q,
        horizon: opts.horizon,
    };
    let (d1, d2, horizon) = setup.statistics(fit, data, spec)?;

    let censoring = Censoring::new(data);
    let null: Vec<Option<(f64, f64)>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let sim = simulate_from_fit(fit, data, spec, &censoring, opts.seed, b as u64).ok()?;
            let fitted = refit(&sim, spec, policy, cfg, &fit.beta_hat).ok()?;
            if !fitted.converged() {
                return None;
            }
            setup.statistics(&fitted, &sim, spec).ok().map(|(d1, d2, _)| (d1, d2))
        })
        .collect();
    let dropped = null.iter().filter(|v| v.is_none()).count();
    if dropped * 10 > opts.replicates {
        return Err(Error::Bootstrap {
            dropped,
            total: opts.replicates,
        });
    }
    let null: Vec<(f64, f64)> = null.into_iter().flatten().collect();
    let pvalue = |stat: f64, pick: fn(&(f64, f64)) -> f64| {
        (1 + null.iter().filter(|v| pick(v) >= stat).count()) as f64 / (null.len() + 1) as f64
    };
    Ok(KsResult {
        d1,
        d2,
        pvalue: pvalue(d1, |v| v.0),
        d2_pvalue: pvalue(d2, |v| v.1),
        kernel: opts.kernel,
        bandwidths,
        q: opts.q.clone(),
        horizon,
        replicates: null.len(),
        dropped,
    })
}

/// Settings of [`gs_test`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsOptions {
    /// Replicates for the standard errors of `β̂` and for the covariance of
    /// the stacked score.
    pub replicates: usize,
    pub seed: u64,
    /// Half-width of the search box in standard errors.
    pub box_ses: f64,
}

impl Default for GsOptions {
    fn default() -> Self {
        Self {
            replicates: 200,
            seed: 0,
            box_ses: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsResult {
    pub tgs: f64,
    pub df: usize,
    pub pvalue: f64,
    /// Rank of the stacked-score covariance; below `2p` a pseudo-inverse
    /// was used.
    pub rank: usize,
    pub beta_first: Vec<f64>,
    /// Minimizer of the quadratic form.
    pub beta_min: Vec<f64>,
    pub policies: (WeightPolicy, WeightPolicy),
    pub replicates: usize,
    pub dropped: usize,
}

/// `n^{1/2}·W·(S(β̂) + A(β − β̂))` for the stacked score `S = (S1, S2)`,
/// with `WᵀW` the pseudo-inverse of its covariance, so the squared norm is
/// the quadratic form of the linearized score.
struct Whitened {
    center: Vec<f64>,
    intercept: DVector<f64>,
    slopes: DMatrix<f64>,
    white: DMatrix<f64>,
    root_n: f64,
}

impl Residual for Whitened {
    fn eval(&mut self, beta: &BetaVector, out: &mut Vec<f64>) -> Result<()> {
        let d = DVector::from_iterator(self.center.len(), beta.to_flat().iter().zip(&self.center).map(|(b, c)| b - c));
        let r = &self.white * (&self.intercept + &self.slopes * d) * self.root_n;
        out.clear();
        out.extend(r.iter());
        Ok(())
    }
}

/// Stacked score at `beta`.
fn stacked_score(first: &mut ScoreEngine, second: &mut ScoreEngine, beta: &[f64], dims: Dims) -> Result<Vec<f64>> {
    let b = BetaVector::from_flat(beta, dims);
    let mut out = Vec::new();
    let mut buf = Vec::new();
    first.value_into(&b, &mut out)?;
    second.value_into(&b, &mut buf)?;
    out.extend_from_slice(&buf);
    Ok(out)
}

/// Least-squares slopes of the stacked score along each coordinate over
/// `center ± 2·scale_k`. The score is a fine staircase in the time-scale
/// coefficients, so local differences do not reflect its trend.
fn regression_slopes(
    first: &mut ScoreEngine,
    second: &mut ScoreEngine,
    center: &[f64],
    scale: &[f64],
    dims: Dims,
) -> Result<DMatrix<f64>> {
    let p = center.len();
    let offsets: Vec<f64> = (-4..=4).map(|j| j as f64 * 0.5).collect();
    let mut a = DMatrix::zeros(2 * p, p);
    for k in 0..p {
        let mut rows = Vec::with_capacity(offsets.len());
        for &o in &offsets {
            let mut b = center.to_vec();
            b[k] += o * scale[k];
            rows.push(stacked_score(first, second, &b, dims)?);
        }
        let sxx: f64 = offsets.iter().map(|o| (o * scale[k]).powi(2)).sum();
        for m in 0..2 * p {
            let mean = rows.iter().map(|r| r[m]).sum::<f64>() / rows.len() as f64;
            let sxy: f64 = offsets.iter().zip(&rows).map(|(o, r)| o * scale[k] * (r[m] - mean)).sum();
            a[(m, k)] = sxy / sxx;
        }
    }
    Ok(a)
}

/// Whitening rows `Λ^{-1/2}Vᵀ` over the eigenvalues above the rank cutoff.
fn whitening(sigma: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let eig = SymmetricEigen::new(sigma.clone());
    let top = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&k| eig.eigenvalues[k] > 1e-10 * top)
        .collect();
    let m = sigma.nrows();
    let mut white = DMatrix::zeros(keep.len(), m);
    for (row, &k) in keep.iter().enumerate() {
        let s = eig.eigenvalues[k].sqrt();
        for c in 0..m {
            white[(row, c)] = eig.eigenvectors[(c, k)] / s;
        }
    }
    (white, keep.len())
}

/// Gill–Schumacher test: do two weight policies share a root? The fit
/// under the first policy fixes the center of a box of `±box_ses`
/// bootstrap standard errors; over that box the statistic is the minimum
/// of `n·Sᵀ Σ̂⁺ S` for the stacked score `S = (S1, S2)`, referred to
/// `χ²` with `rank(Σ̂) − p` degrees of freedom.
///
/// The stacked score is linearized around `β̂` with slopes fitted over
/// `±2` standard errors. Minimizing the exact score instead lets the
/// search exploit its staircase in the time-scale coefficients, which
/// pulls the statistic well below its `χ²` reference.
pub fn gs_test(
    data: &SurvivalDataset,
    spec: &ModelSpec,
    policies: (&WeightPolicy, &WeightPolicy),
    cfg: &SolverConfig,
    opts: &GsOptions,
) -> Result<GsResult> {
    if policies.0 == policies.1 {
        return Err(Error::Config("the two weight policies must differ".into()));
    }
    if !(opts.box_ses > 0.0) {
        return Err(Error::Config("search box must have positive width".into()));
    }
    let fit = solve(data, spec, policies.0, cfg)?;
    if !fit.converged() {
        return Err(Error::Estimation("fit under the first weight did not converge".into()));
    }
    let dims: Dims = data.dims();
    let p = dims.total();
    let boot = variance_bootstrap(data, spec, policies.0, cfg, Some(&fit.beta_hat), opts.replicates, rng::derive(opts.seed, &[1]))?;
    let se = boot.standard_errors();

    let mut first = ScoreEngine::new(data, spec, policies.0)?;
    let mut second = ScoreEngine::new(data, spec, policies.1)?;
    let s1 = first.score(&fit.beta_hat)?;
    let s2 = second.score(&fit.beta_hat)?;
    let n = data.len();
    let stacked: Vec<Vec<f64>> = (0..n)
        .map(|i| s1.contribution(i).iter().chain(s2.contribution(i)).copied().collect())
        .collect();
    let sigma_seed = rng::derive(opts.seed, &[2]);
    let root_n = (n as f64).sqrt();
    let draws: Vec<Vec<f64>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(sigma_seed, &[b as u64]);
            let mut acc = vec![0.0; 2 * p];
            for _ in 0..n {
                let row = &stacked[r.gen_range(0..n)];
                acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
            acc.iter().map(|a| a / root_n).collect()
        })
        .collect();
    let sigma = DMatrix::from_row_slice(2 * p, 2 * p, &stats::covariance(&draws, 2 * p));
    let (white, rank) = whitening(&sigma);
    if rank <= p {
        return Err(Error::Estimation(format!(
            "stacked score covariance has rank {rank}; at least {} needed",
            p + 1
        )));
    }

    let center = fit.beta_hat.to_flat();
    let scale: Vec<f64> = se.iter().map(|s| s.max(1e-6)).collect();
    let slopes = regression_slopes(&mut first, &mut second, &center, &scale, dims)?;
    let intercept = DVector::from_column_slice(&stacked_score(&mut first, &mut second, &center, dims)?);
    let half: Vec<f64> = scale.iter().map(|s| opts.box_ses * s).collect();
    let search_cfg = SolverConfig {
        norm: Norm::L2,
        center: Some(center.clone()),
        restarts_per_dim: 1,
        ..cfg.clone()
    };
    let mut res = Whitened {
        center,
        intercept,
        slopes,
        white,
        root_n,
    };
    let min = minimize(&mut res, dims, half, &search_cfg)?;
    if !min.finished || !min.norm.is_finite() {
        return Err(Error::Estimation("minimization of the score statistic did not converge".into()));
    }
    let tgs = min.norm * min.norm;
    let df = rank - p;
    Ok(GsResult {
        tgs,
        df,
        pvalue: stats::chi2_upper(tgs, df),
        rank,
        beta_first: fit.beta_hat.to_flat(),
        beta_min: min.beta.to_flat(),
        policies: (policies.0.clone(), policies.1.clone()),
        replicates: boot.replicates.len(),
        dropped: boot.dropped,
    })
}

/// Combined goodness-of-fit report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GofReport {
    pub ks: Option<KsResult>,
    pub gs: Option<GsResult>,
}

impl GofReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `D(t)` path of one profile, as `(t, D(t))` at each breakpoint up to
/// `horizon`, for export.
#[allow(clippy::too_many_arguments)]
pub fn discrepancy_path(
    fit: &FitResult,
    data: &SurvivalDataset,
    spec: &ModelSpec,
    profile: &CovariateProfile,
    kernel: Kernel,
    bandwidths: &[f64],
    q: &QWeight,
    horizon: f64,
) -> Result<Vec<(f64, f64)>> {
    let model = ProfileCumHazard::new(&fit.beta_hat, &fit.baseline, profile, spec)?;
    let np = np_cumhaz(data, &profile.stacked_initial(), kernel, bandwidths)?;
    let diff = Difference::new(&model, &np, horizon);
    let scale = 1.0 / (data.len() as f64).sqrt();
    Ok(walk(diff.jumps, diff.rate, q, horizon, scale)
        .into_iter()
        .map(|(t, _, d)| (t, d))
        .collect())
}
