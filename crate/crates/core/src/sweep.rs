//! Single pass over the transformed time axis shared by the baseline
//! estimator and the estimating equation.
//!
//! On the transformed scale `t = u·l(β1Z1_i)` subject `i` is at risk on
//! `(0, s_i]` with `s_i = T*_i·l(β1Z1_i)`. Between consecutive change points
//! (exits and covariate/weight switches) every risk-set sum is constant, so
//! the `dt` integrals are accumulated exactly (or against the midpoint-grid
//! measure) and the `dN` terms are evaluated at left limits.

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::model::{dot, BetaVector, Integration, ModelSpec};
use crate::weights::Materialized;

/// Integration measure `M(t) = μ((0, min(t, τ)])`.
#[derive(Debug, Clone, Copy)]
struct Measure {
    tau: f64,
    grid: Option<usize>,
}

impl Measure {
    #[inline]
    fn upto(&self, t: f64) -> f64 {
        if t >= self.tau {
            return self.tau;
        }
        match self.grid {
            None => t.max(0.0),
            Some(k) => {
                let kf = k as f64;
                let count = (t * kf / self.tau + 0.5).floor().clamp(0.0, kf);
                count * self.tau / kf
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Switch,
    Exit,
}

#[derive(Debug, Clone, Copy)]
struct Change {
    time: f64,
    subject: u32,
    kind: Kind,
    /// Piece index the subject switches to (unused for exits).
    piece: u32,
}

/// Per-evaluation state for one subject's constant pieces.
#[derive(Debug, Default, Clone)]
struct Pieces {
    start: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
    w: Vec<f64>,
    /// Index of each subject's first piece.
    first: Vec<usize>,
}

/// Result of a sweep at one `β`.
#[derive(Debug, Clone, Default)]
pub(crate) struct SweepOutput {
    pub tau: f64,
    /// Transformed event times carrying a baseline increment (plus τ when a
    /// trailing correction remains).
    pub knots: Vec<f64>,
    pub increments: Vec<f64>,
    /// Raw per-subject score contributions, `n × p` row-major.
    pub contributions: Vec<f64>,
    pub excluded_events: usize,
}

/// Reusable evaluator. Holds scratch buffers so repeated evaluations at
/// different `β` do not reallocate.
#[derive(Debug, Clone)]
pub(crate) struct Sweep<'a> {
    data: &'a SurvivalDataset,
    spec: &'a ModelSpec,
    weights: Option<Materialized>,
    pieces: Pieces,
    changes: Vec<Change>,
    scales: Vec<f64>,
    stimes: Vec<f64>,
    sorted: Vec<f64>,
    events: Vec<bool>,
    current: Vec<usize>,
    open_m: Vec<f64>,
    open_phi: Vec<f64>,
    phi: Vec<f64>,
    sum_w: Vec<f64>,
}

impl<'a> Sweep<'a> {
    pub fn new(data: &'a SurvivalDataset, spec: &'a ModelSpec, weights: Option<Materialized>) -> Self {
        let p = weights.as_ref().map_or(0, |w| w.p);
        let n = data.len();
        Self {
            data,
            spec,
            weights,
            pieces: Pieces::default(),
            changes: Vec::with_capacity(n),
            scales: Vec::with_capacity(n),
            stimes: Vec::with_capacity(n),
            sorted: Vec::with_capacity(n),
            events: data.subjects().iter().map(|s| s.event).collect(),
            current: vec![0; n],
            open_m: vec![0.0; n],
            open_phi: vec![0.0; n * p],
            phi: vec![0.0; p],
            sum_w: vec![0.0; p],
        }
    }

    pub fn weights(&self) -> Option<&Materialized> {
        self.weights.as_ref()
    }

    fn p(&self) -> usize {
        self.weights.as_ref().map_or(0, |w| w.p)
    }

    /// Transformed observed times and the truncation time τ.
    fn transform(&mut self, beta: &BetaVector) -> Result<f64> {
        let links = &self.spec.links;
        self.scales.clear();
        self.stimes.clear();
        for s in self.data.subjects() {
            let l = links.time_scale(dot(&beta.beta1, s.z1()))?;
            self.scales.push(l);
            self.stimes.push(s.time * l);
        }
        let q = self.spec.truncation_quantile;
        let tau = if q >= 1.0 {
            self.stimes.iter().copied().fold(0.0, f64::max)
        } else {
            self.sorted.clear();
            self.sorted.extend_from_slice(&self.stimes);
            self.sorted.sort_unstable_by(f64::total_cmp);
            let n = self.sorted.len();
            let k = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
            self.sorted[k]
        };
        Ok(tau)
    }

    fn build_pieces(&mut self, beta: &BetaVector) -> Result<()> {
        let links = self.spec.links;
        let p = self.p();
        let pc = &mut self.pieces;
        pc.start.clear();
        pc.h.clear();
        pc.c.clear();
        pc.w.clear();
        pc.first.clear();
        self.changes.clear();
        for (i, s) in self.data.subjects().iter().enumerate() {
            let l = self.scales[i];
            let st = self.stimes[i];
            pc.first.push(pc.start.len());
            let segs = &s.covariates.segments;
            let knots: &[f64] = self.weights.as_ref().map_or(&[], |w| w.time_knots(i));
            // Merge covariate segment starts (mapped to the transformed
            // scale) with weight knots; both are increasing.
            let (mut j, mut k) = (0usize, 0usize);
            let mut start = 0.0;
            loop {
                let seg = &segs[j];
                let h = links.multiplicative(dot(&beta.beta2, &seg.z2))?;
                let c = links.additive(dot(&beta.beta3, &seg.z3)) / l;
                let piece = pc.start.len() - pc.first[i];
                if piece > 0 {
                    self.changes.push(Change {
                        time: start,
                        subject: i as u32,
                        kind: Kind::Switch,
                        piece: piece as u32,
                    });
                }
                pc.start.push(start);
                pc.h.push(h);
                pc.c.push(c);
                if let Some(w) = &self.weights {
                    let at = pc.w.len();
                    pc.w.resize(at + p, 0.0);
                    w.fill(i, j, k, &mut pc.w[at..at + p]);
                }
                let next_seg = segs.get(j + 1).map(|s| s.start * l);
                let next_knot = knots.get(k).copied();
                let next = match (next_seg, next_knot) {
                    (None, None) => break,
                    (Some(a), None) => a,
                    (None, Some(b)) => b,
                    (Some(a), Some(b)) => a.min(b),
                };
                if next >= st {
                    break;
                }
                if next_seg == Some(next) {
                    j += 1;
                }
                if next_knot == Some(next) {
                    k += 1;
                }
                start = next;
            }
            self.changes.push(Change {
                time: st,
                subject: i as u32,
                kind: Kind::Exit,
                piece: 0,
            });
        }
        self.changes.sort_unstable_by(|a, b| {
            a.time
                .total_cmp(&b.time)
                .then(a.subject.cmp(&b.subject))
                .then(a.kind.cmp(&b.kind))
        });
        Ok(())
    }

    /// Runs the sweep. Score contributions are produced when weights were
    /// supplied; baseline increments are always produced.
    pub fn run(&mut self, beta: &BetaVector) -> Result<SweepOutput> {
        let mut out = SweepOutput::default();
        self.run_into(beta, &mut out)?;
        Ok(out)
    }

    pub fn run_into(&mut self, beta: &BetaVector, out: &mut SweepOutput) -> Result<()> {
        let tau = self.transform(beta)?;
        self.build_pieces(beta)?;
        let n = self.data.len();
        let p = self.p();
        let has_w = self.weights.is_some();
        let measure = Measure {
            tau,
            grid: match self.spec.integration {
                Integration::Exact => None,
                Integration::Grid(k) => Some(k),
            },
        };

        out.tau = tau;
        out.knots.clear();
        out.increments.clear();
        out.contributions.clear();
        out.contributions.resize(n * p, 0.0);
        out.excluded_events = 0;

        let pc = &self.pieces;
        let (mut sum_h, mut sum_c) = (0.0, 0.0);
        self.sum_w.iter_mut().for_each(|v| *v = 0.0);
        self.phi.iter_mut().for_each(|v| *v = 0.0);
        self.open_phi.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let k = pc.first[i];
            self.current[i] = k;
            self.open_m[i] = 0.0;
            sum_h += pc.h[k];
            sum_c += pc.c[k];
            if has_w {
                let w = &pc.w[k * p..(k + 1) * p];
                for (s, wv) in self.sum_w.iter_mut().zip(w) {
                    *s += wv * pc.h[k];
                }
            }
        }
        let mut at_risk = n;
        let mut m_cur = 0.0;
        let mut corr = 0.0;
        let mut corr_at_knot = 0.0;

        let events = &self.events;
        let mut g = 0;
        while g < self.changes.len() {
            let t = self.changes[g].time;
            let mut end = g;
            while end < self.changes.len() && self.changes[end].time == t {
                end += 1;
            }

            // (prev, t]: all sums constant.
            let m_new = measure.upto(t);
            let dm = m_new - m_cur;
            if dm > 0.0 {
                if !(sum_h > 0.0) {
                    return Err(Error::EmptyRiskSet { time: t });
                }
                corr += sum_c / sum_h * dm;
                if has_w {
                    for (ph, sw) in self.phi.iter_mut().zip(&self.sum_w) {
                        *ph += sw / sum_h * dm;
                    }
                }
                m_cur = m_new;
            }

            // dN terms at t, evaluated with the left-limit risk set.
            let mut jump = 0.0;
            let mut any_event = false;
            for ch in &self.changes[g..end] {
                let i = ch.subject as usize;
                if ch.kind != Kind::Exit || !events[i] {
                    continue;
                }
                if t > tau {
                    out.excluded_events += 1;
                    continue;
                }
                if !(sum_h > 0.0) {
                    return Err(Error::ZeroDenominator { time: t });
                }
                any_event = true;
                jump += 1.0 / sum_h;
                if has_w {
                    let k = self.current[i];
                    let w = &pc.w[k * p..(k + 1) * p];
                    let row = &mut out.contributions[i * p..(i + 1) * p];
                    for ((r, wv), sw) in row.iter_mut().zip(w).zip(&self.sum_w) {
                        *r += wv - sw / sum_h;
                    }
                }
            }
            if any_event {
                out.knots.push(t);
                out.increments.push(jump - (corr - corr_at_knot));
                corr_at_knot = corr;
            }

            // Close pieces ending at t, open the next ones.
            for ch in &self.changes[g..end] {
                let i = ch.subject as usize;
                let k = self.current[i];
                let (h, c) = (pc.h[k], pc.c[k]);
                if has_w {
                    let w = &pc.w[k * p..(k + 1) * p];
                    let dmi = m_cur - self.open_m[i];
                    let row = &mut out.contributions[i * p..(i + 1) * p];
                    let open = &self.open_phi[i * p..(i + 1) * p];
                    for d in 0..p {
                        row[d] -= c * (w[d] * dmi - (self.phi[d] - open[d]));
                    }
                    for (s, wv) in self.sum_w.iter_mut().zip(w) {
                        *s -= wv * h;
                    }
                }
                sum_h -= h;
                sum_c -= c;
                match ch.kind {
                    Kind::Switch => {
                        let k2 = pc.first[i] + ch.piece as usize;
                        self.current[i] = k2;
                        sum_h += pc.h[k2];
                        sum_c += pc.c[k2];
                        if has_w {
                            let w = &pc.w[k2 * p..(k2 + 1) * p];
                            for (s, wv) in self.sum_w.iter_mut().zip(w) {
                                *s += wv * pc.h[k2];
                            }
                            self.open_m[i] = m_cur;
                            self.open_phi[i * p..(i + 1) * p].copy_from_slice(&self.phi);
                        }
                    }
                    Kind::Exit => {
                        at_risk -= 1;
                        if at_risk == 0 {
                            sum_h = 0.0;
                            sum_c = 0.0;
                            self.sum_w.iter_mut().for_each(|v| *v = 0.0);
                        }
                    }
                }
            }
            g = end;
        }

        let trailing = corr - corr_at_knot;
        if trailing != 0.0 && out.knots.last().map_or(true, |&k| k < tau) {
            out.knots.push(tau);
            out.increments.push(-trailing);
        }
        Ok(())
    }

    /// `W̄(t; β)` by direct summation over the risk set at transformed time `t`.
    pub fn weighted_mean(&mut self, beta: &BetaVector, t: f64) -> Result<Vec<f64>> {
        if self.weights.is_none() {
            return Err(Error::Config("weighted mean needs a weight policy".into()));
        }
        self.transform(beta)?;
        let w = self.weights.as_ref().expect("checked above");
        let links = self.spec.links;
        let mut num = vec![0.0; w.p];
        let mut den = 0.0;
        for (i, s) in self.data.subjects().iter().enumerate() {
            if self.stimes[i] < t {
                continue;
            }
            let u = t / self.scales[i];
            let seg_idx = s.covariates.segments.partition_point(|sg| sg.start <= u).saturating_sub(1);
            let seg = &s.covariates.segments[seg_idx];
            let h = links.multiplicative(dot(&beta.beta2, &seg.z2))?;
            let wi = w.value_at(i, seg_idx, t);
            for (a, b) in num.iter_mut().zip(&wi) {
                *a += b * h;
            }
            den += h;
        }
        if !(den > 0.0) {
            return Err(Error::EmptyRiskSet { time: t });
        }
        Ok(num.into_iter().map(|v| v / den).collect())
    }
}
