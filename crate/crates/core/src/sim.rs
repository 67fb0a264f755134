//! Simulation from the shape-invariant model and the replication harness.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CovariateProfile, Dims, SubjectRecord, SurvivalDataset};
use crate::error::{Error, Result};
use crate::model::{dot, BetaVector, Links, ModelSpec};
use crate::rng;
use crate::solver::{solve, SolverConfig};
use crate::stats;
use crate::variance::{variance_bootstrap, variance_numerical};
use crate::weights::WeightPolicy;

/// Baseline cumulative hazard `Λ0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Baseline {
    /// `Λ0(t) = log(1 + t)`, i.e. `λ0(t) = 1/(1 + t)`.
    #[default]
    Log1p,
    /// `Λ0(t) = scale·t^shape`.
    Weibull { scale: f64, shape: f64 },
    /// Piecewise-linear `Λ0` through `(0, 0)` and the given points, extended
    /// with the last slope.
    Tabulated { times: Vec<f64>, cumhaz: Vec<f64> },
}

impl Baseline {
    pub fn validate(&self) -> Result<()> {
        match self {
            Baseline::Log1p => Ok(()),
            Baseline::Weibull { scale, shape } => {
                if *scale > 0.0 && *shape > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config("weibull scale and shape must be positive".into()))
                }
            }
            Baseline::Tabulated { times, cumhaz } => {
                let ok = !times.is_empty()
                    && times.len() == cumhaz.len()
                    && times.first().is_some_and(|t| *t > 0.0)
                    && times.windows(2).all(|w| w[0] < w[1])
                    && cumhaz.first().is_some_and(|c| *c >= 0.0)
                    && cumhaz.windows(2).all(|w| w[0] <= w[1]);
                if ok {
                    Ok(())
                } else {
                    Err(Error::Config("tabulated baseline must be increasing from the origin".into()))
                }
            }
        }
    }

    fn table(times: &[f64], cumhaz: &[f64], t: f64) -> (f64, f64) {
        // (value, slope) of the interpolant at t.
        let k = times.partition_point(|&x| x <= t);
        let (t0, c0) = if k == 0 { (0.0, 0.0) } else { (times[k - 1], cumhaz[k - 1]) };
        let (t1, c1) = if k < times.len() {
            (times[k], cumhaz[k])
        } else if times.len() >= 2 {
            (times[k - 1], cumhaz[k - 1])
        } else {
            (times[0], cumhaz[0])
        };
        let slope = if k < times.len() {
            (c1 - c0) / (t1 - t0)
        } else if times.len() >= 2 {
            let n = times.len();
            (cumhaz[n - 1] - cumhaz[n - 2]) / (times[n - 1] - times[n - 2])
        } else {
            cumhaz[0] / times[0]
        };
        (c0 + slope * (t - t0), slope)
    }

    pub fn cumulative(&self, t: f64) -> f64 {
        match self {
            Baseline::Log1p => t.ln_1p(),
            Baseline::Weibull { scale, shape } => scale * t.powf(*shape),
            Baseline::Tabulated { times, cumhaz } => Self::table(times, cumhaz, t).0,
        }
    }

    pub fn hazard(&self, t: f64) -> f64 {
        match self {
            Baseline::Log1p => 1.0 / (1.0 + t),
            Baseline::Weibull { scale, shape } => scale * shape * t.powf(shape - 1.0),
            Baseline::Tabulated { times, cumhaz } => Self::table(times, cumhaz, t).1,
        }
    }

    /// `Λ0⁻¹(y)`, or infinity when `Λ0` never reaches `y`.
    pub fn inverse(&self, y: f64) -> f64 {
        match self {
            Baseline::Log1p => y.exp_m1(),
            Baseline::Weibull { scale, shape } => (y / scale).powf(1.0 / shape),
            Baseline::Tabulated { times, cumhaz } => {
                let k = cumhaz.partition_point(|&c| c < y);
                if k < times.len() {
                    let (t0, c0) = if k == 0 { (0.0, 0.0) } else { (times[k - 1], cumhaz[k - 1]) };
                    if cumhaz[k] == c0 {
                        return times[k];
                    }
                    t0 + (y - c0) * (times[k] - t0) / (cumhaz[k] - c0)
                } else {
                    let (c, slope) = Self::table(times, cumhaz, *times.last().unwrap());
                    if slope > 0.0 {
                        times.last().unwrap() + (y - c) / slope
                    } else {
                        f64::INFINITY
                    }
                }
            }
        }
    }
}

/// Distribution of each covariate within one effect part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum CovariateLaw {
    Bernoulli { p: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Default for CovariateLaw {
    fn default() -> Self {
        CovariateLaw::Bernoulli { p: 0.5 }
    }
}

impl CovariateLaw {
    fn draw<R: Rng>(&self, r: &mut R) -> f64 {
        match *self {
            CovariateLaw::Bernoulli { p } => (r.gen::<f64>() < p) as u8 as f64,
            CovariateLaw::Uniform { lo, hi } => lo + (hi - lo) * r.gen::<f64>(),
        }
    }

    /// Extreme points of the support.
    fn extremes(&self) -> [f64; 2] {
        match *self {
            CovariateLaw::Bernoulli { .. } => [0.0, 1.0],
            CovariateLaw::Uniform { lo, hi } => [lo, hi],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PartLaws {
    #[serde(default)]
    pub z1: CovariateLaw,
    #[serde(default)]
    pub z2: CovariateLaw,
    #[serde(default)]
    pub z3: CovariateLaw,
}

fn default_replicates() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub beta_true: BetaVector,
    #[serde(default)]
    pub baseline: Baseline,
    #[serde(default)]
    pub laws: PartLaws,
    #[serde(default)]
    pub links: Links,
    /// Target censoring proportion.
    pub censoring: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub seed: u64,
}

impl SimConfig {
    /// The simulation setting of the replication tables: binary covariates,
    /// `λ0(t) = 1/(1+t)`, exponential censoring.
    pub fn table(n: usize, beta: [f64; 3], censoring: f64, replicates: usize, seed: u64) -> Self {
        Self {
            n,
            beta_true: BetaVector::new(vec![beta[0]], vec![beta[1]], vec![beta[2]]),
            baseline: Baseline::Log1p,
            laws: PartLaws::default(),
            links: Links::default(),
            censoring,
            replicates,
            seed,
        }
    }

    pub fn dims(&self) -> Dims {
        self.beta_true.dims()
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            links: self.links,
            ..ModelSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config("sample size must be at least 2".into()));
        }
        if !(0.0..=0.9).contains(&self.censoring) {
            return Err(Error::Config(format!("censoring target {} outside [0, 0.9]", self.censoring)));
        }
        if self.replicates == 0 {
            return Err(Error::Config("need at least one replicate".into()));
        }
        if self.dims().total() == 0 || !self.beta_true.is_finite() {
            return Err(Error::Config("true beta must be finite and nonempty".into()));
        }
        self.baseline.validate()?;
        self.check_nonnegative_hazard()
    }

    /// Rejects configurations whose hazard turns negative for some
    /// covariate value on the support (checked at the extreme points of each
    /// covariate law, over a 1000-point grid up to where `Λ0` reaches 10).
    fn check_nonnegative_hazard(&self) -> Result<()> {
        let d = self.dims();
        let horizon = self.baseline.inverse(10.0).min(1e6);
        let grid: Vec<f64> = (0..=1000).map(|k| horizon * k as f64 / 1000.0).collect();
        for z in self.lattice(d) {
            let l = self.links.time_scale(dot(&self.beta_true.beta1, &z.z1))?;
            let h = self.links.multiplicative(dot(&self.beta_true.beta2, &z.segments[0].z2))?;
            let g = self.links.additive(dot(&self.beta_true.beta3, &z.segments[0].z3));
            for &t in &grid {
                let lam = self.baseline.hazard(t * l) * l * h + g;
                if lam < 0.0 {
                    return Err(Error::ConfigRejected(format!(
                        "hazard is negative ({lam:.4}) at t = {t:.4} for covariates {:?}",
                        z.stacked_initial()
                    )));
                }
            }
        }
        Ok(())
    }

    fn lattice(&self, d: Dims) -> Vec<CovariateProfile> {
        let laws: Vec<CovariateLaw> = std::iter::repeat(self.laws.z1)
            .take(d.p1)
            .chain(std::iter::repeat(self.laws.z2).take(d.p2))
            .chain(std::iter::repeat(self.laws.z3).take(d.p3))
            .collect();
        let p = laws.len();
        (0..1usize << p)
            .map(|mask| {
                let v: Vec<f64> = laws
                    .iter()
                    .enumerate()
                    .map(|(k, law)| law.extremes()[(mask >> k) & 1])
                    .collect();
                CovariateProfile::fixed(
                    v[..d.p1].to_vec(),
                    v[d.p1..d.p1 + d.p2].to_vec(),
                    v[d.p1 + d.p2..].to_vec(),
                )
            })
            .collect()
    }

    fn draw_profile<R: Rng>(&self, r: &mut R) -> CovariateProfile {
        let d = self.dims();
        let z1 = (0..d.p1).map(|_| self.laws.z1.draw(r)).collect();
        let z2 = (0..d.p2).map(|_| self.laws.z2.draw(r)).collect();
        let z3 = (0..d.p3).map(|_| self.laws.z3.draw(r)).collect();
        CovariateProfile::fixed(z1, z2, z3)
    }
}

/// Event time solving `h(β2Z2)·Λ0(t·l(β1Z1)) + g(β3Z3)·t = −log u`.
pub fn sample_event_time(
    beta: &BetaVector,
    z: &CovariateProfile,
    baseline: &Baseline,
    links: &Links,
    u: f64,
) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::Config(format!("uniform draw {u} outside (0, 1]")));
    }
    if !z.is_time_independent() {
        return Err(Error::Unsupported("simulation needs time-independent covariates".into()));
    }
    let seg = &z.segments[0];
    let l = links.time_scale(dot(&beta.beta1, &z.z1))?;
    let h = links.multiplicative(dot(&beta.beta2, &seg.z2))?;
    let g = links.additive(dot(&beta.beta3, &seg.z3));
    let y = -u.ln();
    if y == 0.0 {
        return Ok(0.0);
    }
    let big_l = |t: f64| h * baseline.cumulative(t * l) + g * t;
    if g == 0.0 {
        return Ok(baseline.inverse(y / h) / l);
    }
    let hazard = |t: f64| baseline.hazard(t * l) * l * h + g;
    let mut hi = if g > 0.0 {
        (baseline.inverse(y / h) / l).min(y / g)
    } else {
        let mut hi = 1.0;
        let mut k = 0;
        while big_l(hi) < y {
            hi *= 2.0;
            k += 1;
            if k > 200 || hazard(hi) < 0.0 {
                return Err(Error::ConfigRejected(format!(
                    "cumulative hazard is not increasing: hazard {} at t = {hi}",
                    hazard(hi)
                )));
            }
        }
        hi
    };
    let mut lo = 0.0;
    for _ in 0..300 {
        if hi - lo <= 1e-10 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if big_l(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    if g < 0.0 {
        // Negative hazard anywhere before t makes the inversion meaningless.
        if (0..=64).any(|k| hazard(t * k as f64 / 64.0) < 0.0) {
            return Err(Error::ConfigRejected(format!("negative hazard before t = {t}")));
        }
    }
    Ok(t)
}

const PILOT_SEED: u64 = 0x5eed_ca1b;

fn pilot_times(cfg: &SimConfig, draws: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let mut r = rng::stream(seed, &[]);
    (0..draws)
        .map(|_| {
            let z = cfg.draw_profile(&mut r);
            let u = 1.0 - r.gen::<f64>();
            let t = sample_event_time(&cfg.beta_true, &z, &cfg.baseline, &cfg.links, u)?;
            let e = -(1.0 - r.gen::<f64>()).ln();
            Ok((t, e))
        })
        .collect()
}

fn censored_share(pilot: &[(f64, f64)], rate: f64) -> f64 {
    pilot.iter().filter(|(t, e)| *e < rate * t).count() as f64 / pilot.len() as f64
}

/// Share of censored subjects under exponential censoring at `rate`,
/// measured on `draws` fresh draws from `seed`.
pub fn censoring_share(cfg: &SimConfig, rate: f64, draws: usize, seed: u64) -> Result<f64> {
    Ok(censored_share(&pilot_times(cfg, draws, seed)?, rate))
}

/// Exponential censoring rate giving the target censored share, found by
/// bisection on a fixed 20000-draw pilot sample.
pub fn calibrate_censoring(cfg: &SimConfig) -> Result<f64> {
    if !(0.0..=0.9).contains(&cfg.censoring) {
        return Err(Error::Calibration(format!("target {} outside [0, 0.9]", cfg.censoring)));
    }
    if cfg.censoring == 0.0 {
        return Ok(0.0);
    }
    let pilot = pilot_times(cfg, 20_000, PILOT_SEED)?;
    let never = pilot.iter().filter(|(t, _)| t.is_infinite()).count() as f64 / pilot.len() as f64;
    if never > cfg.censoring + 0.01 {
        return Err(Error::Calibration(format!(
            "{:.3} of event times are infinite, above the target {}",
            never, cfg.censoring
        )));
    }
    let target = cfg.censoring;
    let mut hi = 1.0;
    let mut k = 0;
    while censored_share(&pilot, hi) < target {
        hi *= 2.0;
        k += 1;
        if k > 100 {
            return Err(Error::Calibration(format!("target {target} not reachable")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if censored_share(&pilot, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// One simulated dataset with exponential censoring at `rate` (0 means
/// no censoring).
pub fn generate<R: Rng>(cfg: &SimConfig, rate: f64, r: &mut R) -> Result<SurvivalDataset> {
    let subjects = (0..cfg.n)
        .map(|i| {
            let z = cfg.draw_profile(r);
            let u = 1.0 - r.gen::<f64>();
            let t = sample_event_time(&cfg.beta_true, &z, &cfg.baseline, &cfg.links, u)?;
            let c = if rate > 0.0 {
                -(1.0 - r.gen::<f64>()).ln() / rate
            } else {
                f64::INFINITY
            };
            let time = t.min(c);
            if !time.is_finite() {
                return Err(Error::Calibration("infinite event time without censoring".into()));
            }
            let seg = &z.segments[0];
            Ok(SubjectRecord::fixed(
                (i + 1).to_string(),
                time,
                t <= c,
                z.z1.clone(),
                seg.z2.clone(),
                seg.z3.clone(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    SurvivalDataset::new(subjects, cfg.dims())
}

/// Variance estimate attached to each harness replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum HarnessVariance {
    None,
    Numerical,
    Bootstrap { replicates: usize },
}

/// Outcome of one harness replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub beta: Option<Vec<f64>>,
    pub se: Option<Vec<f64>>,
    pub censored: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n: usize,
    pub beta_true: Vec<f64>,
    pub components: Vec<String>,
    pub censoring_target: f64,
    pub censoring_rate: f64,
    pub censoring_achieved: f64,
    pub replicates: usize,
    pub converged: usize,
    pub failures: usize,
    pub seed: u64,
    pub variance: HarnessVariance,
    pub bias: Vec<f64>,
    /// Replicate standard deviation; absent with fewer than two fits.
    pub emp_se: Option<Vec<f64>>,
    /// Mean per-replicate standard error; absent without a variance method.
    pub est_se: Option<Vec<f64>>,
    /// Replicates with a converged fit but a failed variance estimate.
    pub variance_failures: usize,
    pub estimates: Vec<Vec<f64>>,
}

impl SimReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Tab-separated table with one row per component:
    /// `component, true, bias, est_se, emp_se`.
    pub fn write_table<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "component\ttrue\tbias\test_se\temp_se")?;
        for (k, name) in self.components.iter().enumerate() {
            let fmt = |v: Option<&Vec<f64>>| v.map_or("NA".to_string(), |v| format!("{:.4}", v[k]));
            writeln!(
                out,
                "{name}\t{}\t{:.4}\t{}\t{}",
                self.beta_true[k],
                self.bias[k],
                fmt(self.est_se.as_ref()),
                fmt(self.emp_se.as_ref())
            )?;
        }
        Ok(())
    }
}

fn run_replicate(
    cfg: &SimConfig,
    rate: f64,
    solver: &SolverConfig,
    variance: HarnessVariance,
    r: usize,
) -> ReplicateOutcome {
    let mut g = rng::stream(cfg.seed, &[r as u64]);
    let spec = cfg.spec();
    let policy = WeightPolicy::default();
    let Ok(data) = generate(cfg, rate, &mut g) else {
        return ReplicateOutcome { beta: None, se: None, censored: f64::NAN };
    };
    let censored = 1.0 - data.event_count() as f64 / data.len() as f64;
    let fit = match solve(&data, &spec, &policy, solver) {
        Ok(f) if f.converged() => f,
        _ => return ReplicateOutcome { beta: None, se: None, censored },
    };
    let p = fit.dims().total();
    let se = match variance {
        HarnessVariance::None => None,
        HarnessVariance::Numerical => variance_numerical(&fit, &data, &spec, &policy, solver)
            .ok()
            .map(|v| (0..p).map(|k| v[k * p + k].max(0.0).sqrt()).collect()),
        HarnessVariance::Bootstrap { replicates } => {
            variance_bootstrap(&data, &spec, &policy, solver, Some(&fit.beta_hat), replicates, rng::derive(cfg.seed, &[r as u64, 1]))
                .ok()
                .map(|b| b.standard_errors())
        }
    };
    ReplicateOutcome {
        beta: Some(fit.beta_hat.to_flat()),
        se,
        censored,
    }
}

/// Runs `cfg.replicates` simulate-and-fit replicates in parallel and
/// summarizes bias, empirical SE and mean estimated SE over the converged
/// ones. Fails when more than 20% of the replicates do not converge.
pub fn run_harness(cfg: &SimConfig, solver: &SolverConfig, variance: HarnessVariance) -> Result<SimReport> {
    cfg.validate()?;
    solver.validate()?;
    let rate = calibrate_censoring(cfg)?;
    let outcomes: Vec<ReplicateOutcome> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, rate, solver, variance, r))
        .collect();
    summarize(cfg, rate, variance, &outcomes)
}

pub fn summarize(cfg: &SimConfig, rate: f64, variance: HarnessVariance, outcomes: &[ReplicateOutcome]) -> Result<SimReport> {
    let d = cfg.dims();
    let p = d.total();
    let estimates: Vec<Vec<f64>> = outcomes.iter().filter_map(|o| o.beta.clone()).collect();
    let converged = estimates.len();
    let failures = outcomes.len() - converged;
    if failures * 5 > outcomes.len() || converged == 0 {
        return Err(Error::Harness {
            failed: failures,
            total: outcomes.len(),
        });
    }
    let truth = cfg.beta_true.to_flat();
    let column = |k: usize| estimates.iter().map(|e| e[k]).collect::<Vec<f64>>();
    let bias = (0..p).map(|k| stats::mean(&column(k)) - truth[k]).collect();
    let emp_se = (converged >= 2).then(|| (0..p).map(|k| stats::sd(&column(k))).collect());
    let ses: Vec<&Vec<f64>> = outcomes
        .iter()
        .filter(|o| o.beta.is_some())
        .filter_map(|o| o.se.as_ref())
        .collect();
    let variance_failures = converged - ses.len();
    let est_se = (!ses.is_empty() && variance != HarnessVariance::None)
        .then(|| (0..p).map(|k| ses.iter().map(|s| s[k]).sum::<f64>() / ses.len() as f64).collect());
    let cens: Vec<f64> = outcomes.iter().map(|o| o.censored).filter(|c| c.is_finite()).collect();
    let components = (1..=d.p1)
        .map(|k| format!("beta1_{k}"))
        .chain((1..=d.p2).map(|k| format!("beta2_{k}")))
        .chain((1..=d.p3).map(|k| format!("beta3_{k}")))
        .collect();
    Ok(SimReport {
        n: cfg.n,
        beta_true: truth,
        components,
        censoring_target: cfg.censoring,
        censoring_rate: rate,
        censoring_achieved: stats::mean(&cens),
        replicates: outcomes.len(),
        converged,
        failures,
        seed: cfg.seed,
        variance,
        bias,
        emp_se,
        est_se,
        variance_failures,
        estimates,
    })
}
