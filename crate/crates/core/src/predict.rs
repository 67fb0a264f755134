//! Subject-specific predicted cumulative hazard and survival, with bootstrap
//! pointwise intervals and simultaneous bands.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{CovariateProfile, SurvivalDataset};
use crate::error::{Error, Result};
use crate::hazard::ProfileCumHazard;
use crate::model::ModelSpec;
use crate::solver::{refit, FitResult, SolverConfig};
use crate::stats;
use crate::variance::resample_map;
use crate::weights::WeightPolicy;

/// Predicted `Λ̂(t|Z)` on a grid with its uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionCurve {
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    /// Bootstrap standard deviation `v(t)`.
    pub se: Vec<f64>,
    pub pointwise_lo: Vec<f64>,
    pub pointwise_hi: Vec<f64>,
    pub band_lo: Vec<f64>,
    pub band_hi: Vec<f64>,
    pub c_alpha: f64,
    pub alpha: f64,
    pub replicates: usize,
    pub dropped: usize,
}

impl PredictionCurve {
    /// `exp(−Λ̂(t|Z))`.
    pub fn survival(&self) -> Vec<f64> {
        self.estimate.iter().map(|l| (-l).exp()).collect()
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t\testimate\tse\tlo\thi\tband_lo\tband_hi")?;
        for k in 0..self.grid.len() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                self.grid[k],
                self.estimate[k],
                self.se[k],
                self.pointwise_lo[k],
                self.pointwise_hi[k],
                self.band_lo[k],
                self.band_hi[k]
            )?;
        }
        Ok(())
    }
}

/// 200 equally spaced points from 0 to the 95th percentile of observed times.
pub fn default_grid(data: &SurvivalDataset) -> Vec<f64> {
    let times: Vec<f64> = data.subjects().iter().map(|s| s.time).collect();
    let end = stats::quantile(&times, 0.95);
    let m = 200;
    (0..m).map(|k| end * k as f64 / (m - 1) as f64).collect()
}

/// `Λ̂(t|Z)` at each grid time.
///
/// Fails with a truncation error when the grid reaches beyond the support
/// of the baseline estimate for this profile.
pub fn predict(fit: &FitResult, profile: &CovariateProfile, grid: &[f64], spec: &ModelSpec) -> Result<Vec<f64>> {
    if profile.dims() != fit.dims() {
        return Err(Error::Config("profile dimensions do not match the fit".into()));
    }
    let cum = ProfileCumHazard::new(&fit.beta_hat, &fit.baseline, profile, spec)?;
    let max_time = cum.support_end();
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Config(format!("invalid prediction time {t}")));
        }
        if t > max_time {
            return Err(Error::Truncation { requested: t, max_time });
        }
        out.push(cum.value(t));
    }
    Ok(out)
}

/// Bootstrap settings for [`predict_with_uncertainty`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandOptions {
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BandOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            replicates: 200,
            seed: 0,
        }
    }
}

/// Prediction with bootstrap intervals: the data are resampled, refitted
/// (searching near `β̂`) and re-predicted. `v(t)` is the replicate standard
/// deviation; the band critical value is the `1 − α` quantile of the
/// studentized sup-deviation, floored at `z_{1−α/2}` so the band always
/// contains the pointwise interval.
#[allow(clippy::too_many_arguments)]
pub fn predict_with_uncertainty(
    fit: &FitResult,
    data: &SurvivalDataset,
    spec: &ModelSpec,
    policy: &WeightPolicy,
    cfg: &SolverConfig,
    profile: &CovariateProfile,
    grid: &[f64],
    opts: &BandOptions,
) -> Result<PredictionCurve> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::Config("alpha must lie in (0, 1)".into()));
    }
    if opts.replicates < 50 {
        return Err(Error::Config("prediction bands need at least 50 bootstrap replicates".into()));
    }
    if !fit.converged() {
        return Err(Error::Estimation("fit did not converge".into()));
    }
    let estimate = predict(fit, profile, grid, spec)?;
    let (curves, dropped) = resample_map(data, policy, opts.replicates, opts.seed, |d, w| {
        let fitted = refit(d, spec, w, cfg, &fit.beta_hat).ok()?;
        if !fitted.converged() {
            return None;
        }
        predict(&fitted, profile, grid, spec).ok()
    })?;

    let m = grid.len();
    let se: Vec<f64> = (0..m)
        .map(|k| {
            let col: Vec<f64> = curves.iter().map(|c| c[k]).collect();
            stats::sd(&col)
        })
        .collect();
    if se.iter().all(|v| *v == 0.0) {
        return Err(Error::Variance("bootstrap spread is zero at every grid point".into()));
    }
    let sups: Vec<f64> = curves
        .iter()
        .map(|c| {
            (0..m)
                .filter(|&k| se[k] > 0.0)
                .map(|k| (c[k] - estimate[k]).abs() / se[k])
                .fold(0.0, f64::max)
        })
        .collect();
    let z = stats::normal_quantile(1.0 - opts.alpha / 2.0);
    let c_alpha = stats::quantile(&sups, 1.0 - opts.alpha).max(z);
    let bound = |mult: f64, sign: f64| -> Vec<f64> { (0..m).map(|k| estimate[k] + sign * mult * se[k]).collect() };
    Ok(PredictionCurve {
        grid: grid.to_vec(),
        pointwise_lo: bound(z, -1.0),
        pointwise_hi: bound(z, 1.0),
        band_lo: bound(c_alpha, -1.0),
        band_hi: bound(c_alpha, 1.0),
        estimate,
        se,
        c_alpha,
        alpha: opts.alpha,
        replicates: curves.len(),
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::StepCurve;
    use crate::data::Dims;
    use crate::model::BetaVector;
    use crate::solver::Diagnostics;

    fn fit_with(beta: BetaVector, baseline: StepCurve) -> FitResult {
        FitResult {
            score: vec![0.0; beta.dims().total()],
            beta_hat: beta,
            tau: baseline.support_end(),
            baseline,
            n: 3,
            scaling: None,
            variance: None,
            diagnostics: Diagnostics {
                converged: true,
                score_norm: 0.0,
                evaluations: 0,
                root_candidates: vec![],
                negative_increments: 0,
                excluded_events: 0,
            },
        }
    }

    fn baseline() -> StepCurve {
        StepCurve::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], 4.0).unwrap()
    }

    #[test]
    fn null_effects_reproduce_baseline() {
        let fit = fit_with(BetaVector::zeros(Dims::new(1, 1, 1)), baseline());
        let z = CovariateProfile::fixed(vec![0.7], vec![-2.0], vec![3.0]);
        let grid = [0.0, 0.5, 1.0, 2.5, 4.0];
        let got = predict(&fit, &z, &grid, &ModelSpec::default()).unwrap();
        assert_eq!(got, vec![0.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn additive_term_adds_linear_drift() {
        let fit = fit_with(BetaVector::new(vec![0.0], vec![0.0], vec![0.1]), baseline());
        let z = CovariateProfile::fixed(vec![1.0], vec![1.0], vec![1.0]);
        let got = predict(&fit, &z, &[2.5, 3.5], &ModelSpec::default()).unwrap();
        assert!((got[0] - 2.25).abs() < 1e-14);
        assert!((got[1] - 3.35).abs() < 1e-14);
    }

    #[test]
    fn grid_beyond_support_is_truncated() {
        let fit = fit_with(BetaVector::new(vec![2f64.ln()], vec![0.0], vec![0.0]), baseline());
        let z = CovariateProfile::fixed(vec![1.0], vec![0.0], vec![0.0]);
        match predict(&fit, &z, &[1.0, 2.5], &ModelSpec::default()) {
            Err(Error::Truncation { max_time, .. }) => assert!((max_time - 2.0).abs() < 1e-12),
            other => panic!("expected truncation, got {other:?}"),
        }
    }
}
