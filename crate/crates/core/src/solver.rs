//! Derivative-free root search for the estimating equation.
//!
//! The score is a step function of `β1` (risk-set order changes at
//! discrete points), so the search works on `‖S(β) − target‖` directly: a
//! pattern search on a shrinking `{−1, 0, 1}^p` lattice around the incumbent,
//! halving the lattice step whenever no lattice point improves on it. Central
//! differences from the axis points give a free Jacobian estimate, and the
//! resulting Newton point is tried first at each step, which makes the search
//! exact for linear scores and fast on the smooth `β2`/`β3` directions.
//!
//! Because `S` jumps in `β1`, a point is also accepted as a root when the
//! remaining residual is within a small multiple of the score's local jump
//! size: no finer search can do better.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curve::StepCurve;
use crate::data::{Dims, SurvivalDataset};
use crate::error::{Error, Result};
use crate::estimating::ScoreEngine;
use crate::hazard::baseline_with_diagnostics;
use crate::model::{BetaVector, ModelSpec};
use crate::weights::{WeightPolicy, WeightScaling};

/// Norm minimized by the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Linf,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub norm: Norm,
    /// Half-width of the search box per component.
    pub half_width: f64,
    /// Center of the search box; zero when absent.
    pub center: Option<Vec<f64>>,
    /// Maximal number of step halvings.
    pub depth: usize,
    /// Restart points per dimension on the search-box lattice.
    pub restarts_per_dim: usize,
    /// Score-norm tolerance (on the `n⁻¹`-normalized score).
    pub tolerance: f64,
    /// Lattice step, relative to the half-width, below which a search
    /// stops refining.
    pub step_tolerance: f64,
    pub max_evals: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            norm: Norm::Linf,
            half_width: 2.0,
            center: None,
            depth: 40,
            restarts_per_dim: 3,
            tolerance: 1e-6,
            step_tolerance: 1e-10,
            max_evals: 50_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("solver tolerance must be positive".into()));
        }
        if self.depth < 10 {
            return Err(Error::Config("solver depth must be at least 10".into()));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::Config("search half-width must be positive".into()));
        }
        if self.restarts_per_dim == 0 || self.max_evals == 0 {
            return Err(Error::Config("restart lattice and evaluation budget must be nonempty".into()));
        }
        Ok(())
    }

    /// Single-start search seeded at `beta`, as used for refits that are
    /// known to have a root nearby (bootstrap replicates, perturbed solves).
    pub fn local(&self, beta: &BetaVector, half_width: f64) -> Self {
        Self {
            center: Some(beta.to_flat()),
            half_width,
            restarts_per_dim: 1,
            ..self.clone()
        }
    }
}

/// How a variance matrix was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMethod {
    Numerical,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variance {
    pub method: VarianceMethod,
    /// Row-major `p × p`.
    pub matrix: Vec<f64>,
    /// Bootstrap replicates dropped for non-convergence.
    pub dropped: usize,
}

impl Variance {
    pub fn standard_errors(&self) -> Vec<f64> {
        let p = (self.matrix.len() as f64).sqrt() as usize;
        (0..p).map(|k| self.matrix[k * p + k].max(0.0).sqrt()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub score_norm: f64,
    pub evaluations: usize,
    /// Distinct near-minimizers (including the returned one).
    pub root_candidates: Vec<Vec<f64>>,
    pub negative_increments: usize,
    pub excluded_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta_hat: BetaVector,
    pub baseline: StepCurve,
    /// Score at `beta_hat`.
    pub score: Vec<f64>,
    pub tau: f64,
    pub n: usize,
    pub scaling: Option<WeightScaling>,
    pub variance: Option<Variance>,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn dims(&self) -> Dims {
        self.beta_hat.dims()
    }

    pub fn converged(&self) -> bool {
        self.diagnostics.converged
    }

    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        self.variance.as_ref().map(Variance::standard_errors)
    }
}

/// Vector-valued function whose norm the search minimizes.
pub(crate) trait Residual {
    fn eval(&mut self, beta: &BetaVector, out: &mut Vec<f64>) -> Result<()>;
}

/// `S(β) − target`.
struct ScoreResidual<'e, 'a> {
    engine: &'e mut ScoreEngine<'a>,
    target: Vec<f64>,
}

impl Residual for ScoreResidual<'_, '_> {
    fn eval(&mut self, beta: &BetaVector, out: &mut Vec<f64>) -> Result<()> {
        self.engine.value_into(beta, out)?;
        for (o, t) in out.iter_mut().zip(&self.target) {
            *o -= t;
        }
        Ok(())
    }
}

/// A point of the search in unit-box coordinates `y ∈ [−1, 1]^p`, where
/// `β = center + half_width ⊙ y`.
#[derive(Debug, Clone)]
struct Point {
    y: Vec<f64>,
    r: Vec<f64>,
    norm: f64,
    l2: f64,
}

impl Point {
    fn better_than(&self, other: &Point) -> bool {
        self.norm < other.norm || (self.norm == other.norm && self.l2 < other.l2)
    }
}

struct Objective<'r> {
    res: &'r mut dyn Residual,
    dims: Dims,
    norm: Norm,
    center: Vec<f64>,
    half: Vec<f64>,
    evals: usize,
    max_evals: usize,
    buf: Vec<f64>,
}

impl Objective<'_> {
    fn exhausted(&self) -> bool {
        self.evals >= self.max_evals
    }

    fn to_beta(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.center.iter().zip(&self.half))
            .map(|(v, (c, h))| c + h * v)
            .collect()
    }

    fn eval(&mut self, y: &[f64]) -> Result<Point> {
        let y: Vec<f64> = y.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        self.evals += 1;
        let beta = BetaVector::from_flat(&self.to_beta(&y), self.dims);
        match self.res.eval(&beta, &mut self.buf) {
            Ok(()) => {}
            // Outside the domain of the links: treat as infeasible.
            Err(Error::NonPositiveLink { .. }) => {
                return Ok(Point {
                    r: vec![f64::INFINITY; self.buf.len().max(y.len())],
                    y,
                    norm: f64::INFINITY,
                    l2: f64::INFINITY,
                })
            }
            Err(e) => return Err(e),
        }
        let r = self.buf.clone();
        let l2 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm = match self.norm {
            Norm::Linf => r.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            Norm::L2 => l2,
        };
        Ok(Point { y, r, norm, l2 })
    }
}

/// Outcome of one local search.
#[derive(Debug, Clone)]
struct Local {
    best: Point,
    step: f64,
    /// Largest componentwise range of the residual over the last poll.
    spread: f64,
    finished: bool,
}

const CORNER_STEP: f64 = 1e-6;

fn lattice_offsets(p: usize) -> Vec<Vec<f64>> {
    // All of {-1, 0, 1}^p except the origin and the 2p axis points, which
    // are polled separately.
    let total = 3usize.pow(p as u32);
    (0..total)
        .map(|mut code| {
            (0..p)
                .map(|_| {
                    let d = (code % 3) as f64 - 1.0;
                    code /= 3;
                    d
                })
                .collect::<Vec<f64>>()
        })
        .filter(|v| v.iter().filter(|d| **d != 0.0).count() >= 2)
        .collect()
}

/// Gauss–Newton point from central differences at the axis points.
fn newton_point(c: &Point, axis: &[(Point, Point)], step: f64) -> Option<Vec<f64>> {
    let p = c.y.len();
    let m = c.r.len();
    let mut j = DMatrix::<f64>::zeros(m, p);
    for (k, (plus, minus)) in axis.iter().enumerate() {
        if !(plus.norm.is_finite() && minus.norm.is_finite()) {
            return None;
        }
        let dy = plus.y[k] - minus.y[k];
        if dy == 0.0 {
            return None;
        }
        for row in 0..m {
            j[(row, k)] = (plus.r[row] - minus.r[row]) / dy;
        }
    }
    let rhs = -DVector::from_column_slice(&c.r);
    let d = if m == p {
        j.lu().solve(&rhs)?
    } else {
        j.svd(true, true).solve(&rhs, 1e-14).ok()?
    };
    if d.iter().any(|v| !v.is_finite()) || d.amax() < 1e-3 * step {
        return None;
    }
    Some(c.y.iter().zip(d.iter()).map(|(a, b)| a + b).collect())
}

fn local_search(obj: &mut Objective, start: Point, step0: f64, depth: usize, step_tol: f64, stop_norm: f64) -> Result<Local> {
    let p = start.y.len();
    let m = start.r.len();
    let corners = lattice_offsets(p);
    let mut c = start;
    let mut step = step0;
    let mut spread = 0.0;
    let mut level = 0;
    let mut finished = true;
    'levels: while level < depth && step >= step_tol {
        if c.norm <= stop_norm {
            break;
        }
        loop {
            if obj.exhausted() {
                finished = false;
                break 'levels;
            }
            let mut axis = Vec::with_capacity(p);
            let mut best: Option<Point> = None;
            let mut lo = c.r.clone();
            let mut hi = c.r.clone();
            let mut track = |pt: &Point, best: &mut Option<Point>| {
                for k in 0..m {
                    lo[k] = lo[k].min(pt.r[k]);
                    hi[k] = hi[k].max(pt.r[k]);
                }
                if pt.better_than(best.as_ref().unwrap_or(&c)) {
                    *best = Some(pt.clone());
                }
            };
            for k in 0..p {
                let mut xp = c.y.clone();
                xp[k] += step;
                let mut xm = c.y.clone();
                xm[k] -= step;
                let a = obj.eval(&xp)?;
                let b = obj.eval(&xm)?;
                track(&a, &mut best);
                track(&b, &mut best);
                axis.push((a, b));
            }
            if let Some(x) = newton_point(&c, &axis, step) {
                let n = obj.eval(&x)?;
                if n.better_than(best.as_ref().unwrap_or(&c)) {
                    best = Some(n);
                } else if best.is_none() {
                    // Backtrack: the full step may cross a discontinuity
                    // of the score in β1.
                    let d: Vec<f64> = x.iter().zip(&c.y).map(|(a, b)| a - b).collect();
                    let len = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    let mut alpha = 0.5;
                    while alpha * len > 1e-3 * step {
                        let y: Vec<f64> = c.y.iter().zip(&d).map(|(a, v)| a + alpha * v).collect();
                        let pt = obj.eval(&y)?;
                        if pt.better_than(&c) {
                            best = Some(pt);
                            break;
                        }
                        alpha *= 0.5;
                    }
                }
            }
            // Diagonal moves matter while the lattice is coarse; at fine
            // steps the Newton line search covers them.
            if best.is_none() && step >= CORNER_STEP {
                for off in &corners {
                    let x: Vec<f64> = c.y.iter().zip(off).map(|(a, d)| a + d * step).collect();
                    let pt = obj.eval(&x)?;
                    track(&pt, &mut best);
                }
            }
            match best {
                Some(b) => {
                    c = b;
                    if c.norm <= stop_norm {
                        break 'levels;
                    }
                }
                None => {
                    spread = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
                    break;
                }
            }
        }
        step *= 0.5;
        level += 1;
    }
    if finished {
        spread = spread.max(jump_scale(obj, &c)?);
    }
    Ok(Local {
        best: c,
        step,
        spread,
        finished,
    })
}

/// Largest change of any residual component across `y ± h·e_k` for
/// `h ∈ {1e-9, 1e-8, 1e-7}`. Continuous components change by `O(h)`;
/// anything larger is a jump of `S`.
fn jump_scale(obj: &mut Objective, c: &Point) -> Result<f64> {
    let mut scale = 0.0f64;
    for k in 0..c.y.len() {
        for h in [1e-9, 1e-8, 1e-7] {
            let mut a = c.y.clone();
            a[k] += h;
            let mut b = c.y.clone();
            b[k] -= h;
            let (pa, pb) = (obj.eval(&a)?, obj.eval(&b)?);
            for (ra, rb) in pa.r.iter().zip(&pb.r) {
                let d = (ra - rb).abs();
                if d.is_finite() {
                    scale = scale.max(d);
                }
            }
        }
    }
    Ok(scale)
}

/// Residual accepted relative to the local jump scale of `S`: in `β1` the
/// score is a staircase, and the best attainable residual is a few jumps.
const JUMP_FACTOR: f64 = 10.0;

fn certified(l: &Local, tol: f64) -> bool {
    l.best.norm <= tol || (l.finished && l.best.norm.is_finite() && l.best.norm <= JUMP_FACTOR * l.spread)
}

fn separated(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).any(|(x, y)| (x - y).abs() > 0.05)
}

struct SearchOutcome {
    best: Local,
    /// `β` at the best point.
    beta: Vec<f64>,
    candidates: Vec<Vec<f64>>,
    evals: usize,
}

/// Minimizes `‖res(β)‖` over `center ± half_width` (componentwise) by
/// lattice restarts followed by refinement of the best distinct basins.
fn search(res: &mut dyn Residual, dims: Dims, half_width: Vec<f64>, cfg: &SolverConfig) -> Result<SearchOutcome> {
    cfg.validate()?;
    let p = dims.total();
    let center = cfg.center.clone().unwrap_or_else(|| vec![0.0; p]);
    if center.len() != p || half_width.len() != p {
        return Err(Error::Config("search center has wrong dimension".into()));
    }
    if half_width.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(Error::Config("search half-widths must be positive".into()));
    }
    let mut obj = Objective {
        res,
        dims,
        norm: cfg.norm,
        center,
        half: half_width,
        evals: 0,
        max_evals: cfg.max_evals,
        buf: Vec::with_capacity(p),
    };
    let m = cfg.restarts_per_dim;
    let step0 = 1.0 / m as f64;
    let stop_norm = cfg.tolerance * 1e-4;

    // Coarse descent from every lattice start.
    let starts = m.pow(p as u32);
    let coarse_depth = if starts > 1 { 8.min(cfg.depth) } else { cfg.depth };
    let mut locals = Vec::with_capacity(starts);
    for code in 0..starts {
        let mut rest = code;
        let y: Vec<f64> = (0..p)
            .map(|_| {
                let k = rest % m;
                rest /= m;
                (2.0 * k as f64 + 1.0 - m as f64) / m as f64
            })
            .collect();
        let pt = obj.eval(&y)?;
        let local = local_search(&mut obj, pt, step0, coarse_depth, cfg.step_tolerance, stop_norm)?;
        locals.push(local);
        if obj.exhausted() {
            break;
        }
    }
    locals.sort_by(|a, b| {
        a.best
            .norm
            .total_cmp(&b.best.norm)
            .then(a.best.l2.total_cmp(&b.best.l2))
    });

    // Refine the best few distinct basins to full depth.
    let mut refined: Vec<Local> = Vec::new();
    for l in locals {
        if refined.len() >= 4 {
            break;
        }
        let bl = obj.to_beta(&l.best.y);
        if refined.iter().any(|r| !separated(&obj.to_beta(&r.best.y), &bl)) {
            continue;
        }
        let r = if starts > 1 && l.best.norm > stop_norm {
            let remaining = cfg.depth.saturating_sub(coarse_depth).max(1);
            local_search(&mut obj, l.best.clone(), l.step * 2.0, remaining, cfg.step_tolerance, stop_norm)?
        } else {
            l
        };
        refined.push(r);
    }
    refined.sort_by(|a, b| {
        a.best
            .norm
            .total_cmp(&b.best.norm)
            .then(a.best.l2.total_cmp(&b.best.l2))
    });
    let best = refined.first().cloned().ok_or_else(|| Error::Estimation("no search start evaluated".into()))?;
    let limit = 10.0 * cfg.tolerance.max(best.best.norm);
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    for r in &refined {
        let b = obj.to_beta(&r.best.y);
        if certified(r, cfg.tolerance) && r.best.norm <= limit && candidates.iter().all(|c| separated(c, &b)) {
            candidates.push(b);
        }
    }
    Ok(SearchOutcome {
        beta: obj.to_beta(&best.best.y),
        best,
        candidates,
        evals: obj.evals,
    })
}

/// Result of [`minimize`].
pub(crate) struct Minimum {
    pub beta: BetaVector,
    pub norm: f64,
    /// The search refined to its step tolerance or depth without running
    /// out of evaluations.
    pub finished: bool,
    /// The minimum is a root of the residual.
    pub root: bool,
}

/// Minimizes `‖res(β)‖` over `center ± half_width`.
pub(crate) fn minimize(res: &mut dyn Residual, dims: Dims, half_width: Vec<f64>, cfg: &SolverConfig) -> Result<Minimum> {
    let out = search(res, dims, half_width, cfg)?;
    Ok(Minimum {
        beta: BetaVector::from_flat(&out.beta, dims),
        norm: out.best.best.norm,
        finished: out.best.finished,
        root: certified(&out.best, cfg.tolerance),
    })
}

/// Solves `S(β) = target` and returns `β` with its convergence flag.
pub fn solve_target(
    data: &SurvivalDataset,
    spec: &ModelSpec,
    policy: &WeightPolicy,
    cfg: &SolverConfig,
    target: &[f64],
) -> Result<(BetaVector, bool)> {
    let mut engine = ScoreEngine::new(data, spec, policy)?;
    let dims = data.dims();
    let mut res = ScoreResidual {
        engine: &mut engine,
        target: target.to_vec(),
    };
    let m = minimize(&mut res, dims, vec![cfg.half_width; dims.total()], cfg)?;
    Ok((m.beta, m.root))
}

/// Fits the model: `β̂ = argmin ‖S(β)‖` over the search box, then
/// `Λ̂0(·; β̂)`.
pub fn solve(data: &SurvivalDataset, spec: &ModelSpec, policy: &WeightPolicy, cfg: &SolverConfig) -> Result<FitResult> {
    let mut engine = ScoreEngine::new(data, spec, policy)?;
    let dims = data.dims();
    let mut res = ScoreResidual {
        engine: &mut engine,
        target: vec![0.0; dims.total()],
    };
    let out = search(&mut res, dims, vec![cfg.half_width; dims.total()], cfg)?;
    let converged = certified(&out.best, cfg.tolerance);
    let beta_hat = BetaVector::from_flat(&out.beta, dims);
    let base = baseline_with_diagnostics(&beta_hat, data, spec)?;
    Ok(FitResult {
        score: out.best.best.r.clone(),
        scaling: engine.scaling().cloned(),
        beta_hat,
        baseline: base.curve,
        tau: base.tau,
        n: data.len(),
        variance: None,
        diagnostics: Diagnostics {
            converged,
            score_norm: out.best.best.norm,
            evaluations: out.evals,
            root_candidates: out.candidates,
            negative_increments: base.negative_increments,
            excluded_events: base.excluded_events,
        },
    })
}

/// Refit for data close to a dataset already fitted at `start` (bootstrap
/// replicates, perturbed solves): a single search seeded at `start`, falling
/// back to the full lattice search when that does not converge.
pub fn refit(
    data: &SurvivalDataset,
    spec: &ModelSpec,
    policy: &WeightPolicy,
    cfg: &SolverConfig,
    start: &BetaVector,
) -> Result<FitResult> {
    let near = solve(data, spec, policy, &cfg.local(start, cfg.half_width))?;
    if near.converged() {
        return Ok(near);
    }
    let full = solve(data, spec, policy, cfg)?;
    Ok(if full.converged() || full.diagnostics.score_norm < near.diagnostics.score_norm {
        full
    } else {
        near
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_excludes_axis_points() {
        assert!(lattice_offsets(1).is_empty());
        assert_eq!(lattice_offsets(2).len(), 4);
        assert_eq!(lattice_offsets(3).len(), 27 - 1 - 6);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            depth: 5,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            tolerance: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
