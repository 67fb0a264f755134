//! Variance of `β̂`: the numerical `Σ̂ = BBᵀ` perturbation method and the
//! nonparametric bootstrap.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::estimating::ScoreEngine;
use crate::model::ModelSpec;
use crate::rng;
use crate::model::BetaVector;
use crate::solver::{refit, solve, solve_target, FitResult, SolverConfig};
use crate::stats;
use crate::weights::WeightPolicy;

/// Symmetric factor `B` (row-major) with `BBᵀ = Σ` for a PSD `Σ`.
///
/// Fails when `Σ` has an eigenvalue below `−1e-10·max(1, ‖Σ‖)`.
pub fn factor(sigma: &[f64], p: usize) -> Result<Vec<f64>> {
    let m = DMatrix::from_row_slice(p, p, sigma);
    let scale = m.amax().max(1.0);
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
        return Err(Error::Variance(
            "score covariance is not positive semidefinite; use the bootstrap".into(),
        ));
    }
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let b = &eig.eigenvectors * sqrt;
    Ok(b.transpose().as_slice().to_vec())
}

/// `Σ̂ = n⁻¹ Σ_i S_i(β̂) S_i(β̂)ᵀ`, row-major.
pub fn score_covariance(fit: &FitResult, data: &SurvivalDataset, spec: &ModelSpec, policy: &WeightPolicy) -> Result<Vec<f64>> {
    let mut engine = ScoreEngine::new(data, spec, policy)?;
    let s = engine.score(&fit.beta_hat)?;
    let p = s.p;
    let mut sigma = vec![0.0; p * p];
    for i in 0..s.n {
        let c = s.contribution(i);
        for a in 0..p {
            for b in 0..p {
                sigma[a * p + b] += c[a] * c[b];
            }
        }
    }
    sigma.iter_mut().for_each(|v| *v /= s.n as f64);
    Ok(sigma)
}

/// Numerical variance: with `Σ̂ = BBᵀ`, solve `S(β) = n^{-1/2} b_k` from
/// `β̂` for each column `b_k`; the variance is `DDᵀ` where column `k` of `D`
/// is the solution minus `β̂`.
pub fn variance_numerical(
    fit: &FitResult,
    data: &SurvivalDataset,
    spec: &ModelSpec,
    policy: &WeightPolicy,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    if !fit.converged() {
        return Err(Error::Variance("fit did not converge".into()));
    }
    let p = fit.dims().total();
    let sigma = score_covariance(fit, data, spec, policy)?;
    if sigma.iter().all(|v| *v == 0.0) {
        return Ok(vec![0.0; p * p]);
    }
    let b = factor(&sigma, p)?;
    let local = cfg.local(&fit.beta_hat, cfg.half_width);
    let root_n = (data.len() as f64).sqrt();
    let base = fit.beta_hat.to_flat();
    let mut d = vec![0.0; p * p];
    for k in 0..p {
        let target: Vec<f64> = (0..p).map(|r| b[r * p + k] / root_n).collect();
        let (beta, ok) = solve_target(data, spec, policy, &local, &target)?;
        if !ok {
            return Err(Error::Variance(format!("perturbed solve {k} did not converge")));
        }
        for (r, v) in beta.to_flat().iter().enumerate() {
            d[r * p + k] = v - base[r];
        }
    }
    let mut v = vec![0.0; p * p];
    for a in 0..p {
        for c in 0..p {
            v[a * p + c] = (0..p).map(|k| d[a * p + k] * d[c * p + k]).sum();
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Row-major `p × p` sample covariance of the replicate estimates.
    pub covariance: Vec<f64>,
    /// Estimates of the retained replicates, in replicate order.
    pub replicates: Vec<Vec<f64>>,
    pub dropped: usize,
}

impl BootstrapResult {
    pub fn standard_errors(&self) -> Vec<f64> {
        let p = (self.covariance.len() as f64).sqrt() as usize;
        (0..p).map(|k| self.covariance[k * p + k].max(0.0).sqrt()).collect()
    }
}

/// Resampling indices of bootstrap replicate `b`.
pub fn bootstrap_indices(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, &[b as u64]);
    (0..n).map(|_| r.gen_range(0..n)).collect()
}

/// Runs `f` on `b` resampled copies of the data in parallel and keeps the
/// replicates that return a value. Fails when more than 10% are dropped.
pub(crate) fn resample_map<T, F>(
    data: &SurvivalDataset,
    policy: &WeightPolicy,
    b: usize,
    seed: u64,
    f: F,
) -> Result<(Vec<T>, usize)>
where
    T: Send,
    F: Fn(&SurvivalDataset, &WeightPolicy) -> Option<T> + Sync,
{
    let out: Vec<Option<T>> = (0..b)
        .into_par_iter()
        .map(|k| {
            let idx = bootstrap_indices(data.len(), seed, k);
            let resampled = data.select(&idx).ok()?;
            f(&resampled, &policy.select(&idx))
        })
        .collect();
    let dropped = out.iter().filter(|v| v.is_none()).count();
    if dropped * 10 > b {
        return Err(Error::Bootstrap { dropped, total: b });
    }
    Ok((out.into_iter().flatten().collect(), dropped))
}

/// Nonparametric bootstrap of `β̂`. Replicates run in parallel; each uses
/// the stream derived from `(seed, replicate)`, so results do not depend on
/// scheduling. With `start` (normally the full-data estimate) each
/// replicate is refitted by a search seeded there. Fails when more than 10%
/// of the replicates fail to converge.
pub fn variance_bootstrap(
    data: &SurvivalDataset,
    spec: &ModelSpec,
    policy: &WeightPolicy,
    cfg: &SolverConfig,
    start: Option<&BetaVector>,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if b < 2 {
        return Err(Error::Config("bootstrap needs at least 2 replicates".into()));
    }
    let p = data.dims().total();
    let (replicates, dropped) = resample_map(data, policy, b, seed, |d, w| {
        let fit = match start {
            Some(beta) => refit(d, spec, w, cfg, beta),
            None => solve(d, spec, w, cfg),
        }
        .ok()?;
        fit.converged().then(|| fit.beta_hat.to_flat())
    })?;
    Ok(BootstrapResult {
        covariance: stats::covariance(&replicates, p),
        replicates,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_reconstructs_sigma() {
        let sigma = [4.0, 1.2, 0.3, 1.2, 2.0, -0.4, 0.3, -0.4, 1.0];
        let b = factor(&sigma, 3).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let v: f64 = (0..3).map(|k| b[r * 3 + k] * b[c * 3 + k]).sum();
                assert!((v - sigma[r * 3 + c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn factor_of_singular_psd() {
        let sigma = [1.0, 1.0, 1.0, 1.0];
        let b = factor(&sigma, 2).unwrap();
        let v: f64 = b[0] * b[2] + b[1] * b[3];
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn factor_rejects_indefinite() {
        assert!(factor(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
    }

    #[test]
    fn indices_are_deterministic() {
        assert_eq!(bootstrap_indices(10, 3, 4), bootstrap_indices(10, 3, 4));
        assert_ne!(bootstrap_indices(10, 3, 4), bootstrap_indices(10, 3, 5));
        assert!(bootstrap_indices(10, 3, 4).iter().all(|&i| i < 10));
    }
}
