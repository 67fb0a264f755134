//! Weight processes `W_i(t)` for the estimating equation.

use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::stats;

/// Piecewise-constant weight path on the transformed time scale.
///
/// `values[0]` applies on `(0, knots[0]]`, `values[k]` on
/// `(knots[k-1], knots[k]]`, and the last value beyond the last knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPath {
    pub knots: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl WeightPath {
    pub fn constant(value: Vec<f64>) -> Self {
        Self {
            knots: vec![],
            values: vec![value],
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        if self.values.len() != self.knots.len() + 1 {
            return Err(Error::Config("weight path needs one more value than knots".into()));
        }
        if self.knots.windows(2).any(|w| !(w[0] < w[1])) || self.knots.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::Config("weight path knots must be positive and increasing".into()));
        }
        for v in &self.values {
            if v.len() != p || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("weight values must be finite {p}-vectors")));
            }
        }
        Ok(())
    }
}

/// How the weight `W_i(t)` of each subject is formed.
///
/// Weights never depend on `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WeightPolicy {
    /// The stacked covariates `(Z1, Z2(·), Z3(·))`, optionally rescaled per
    /// dimension to `[-1, 1]`.
    Covariates { rescale: bool },
    /// Componentwise indicator `1{Z > median}`.
    AboveMedian,
    /// Rescaled covariates switched off after transformed time `cut`:
    /// `W_i(t) = Z_i·1{t <= cut}`.
    EarlyCovariates { cut: f64 },
    /// One explicit path per subject, in dataset order.
    User(Vec<WeightPath>),
}

impl Default for WeightPolicy {
    fn default() -> Self {
        WeightPolicy::Covariates { rescale: true }
    }
}

impl WeightPolicy {
    /// Second weight for the Gill–Schumacher comparison.
    ///
    /// `1{Z > median}` is an affine function of `Z` when a covariate takes
    /// only two values, which makes the stacked score degenerate; in that case
    /// the covariate weight truncated at the median observed time is used.
    pub fn contrast_for(data: &SurvivalDataset) -> Self {
        let two_level = (0..data.dims().total()).any(|k| distinct_values(data, k) <= 2);
        if two_level {
            let mut times: Vec<f64> = data.subjects().iter().map(|s| s.time).collect();
            times.sort_by(f64::total_cmp);
            WeightPolicy::EarlyCovariates {
                cut: stats::median_sorted(&times),
            }
        } else {
            WeightPolicy::AboveMedian
        }
    }

    /// Policy for a resampled dataset built from `indices`.
    pub fn select(&self, indices: &[usize]) -> Self {
        match self {
            WeightPolicy::User(paths) => {
                WeightPolicy::User(indices.iter().map(|&i| paths[i].clone()).collect())
            }
            other => other.clone(),
        }
    }
}

fn distinct_values(data: &SurvivalDataset, k: usize) -> usize {
    let mut v: Vec<f64> = data
        .subjects()
        .iter()
        .flat_map(|s| segment_covariates(s, k))
        .collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

fn segment_covariates(s: &crate::data::SubjectRecord, k: usize) -> Vec<f64> {
    let p1 = s.covariates.z1.len();
    s.covariates
        .segments
        .iter()
        .map(|seg| {
            if k < p1 {
                s.covariates.z1[k]
            } else if k < p1 + seg.z2.len() {
                seg.z2[k - p1]
            } else {
                seg.z3[k - p1 - seg.z2.len()]
            }
        })
        .collect()
}

/// Affine map `w = (z - offset) / scale` applied to the covariate weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScaling {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) enum TimeFactor {
    None,
    Cut(f64),
    User(Vec<WeightPath>),
}

/// A policy evaluated on a dataset: `W_i(t) = base[segment] ⊙ factor_i(t)`.
#[derive(Debug, Clone)]
pub(crate) struct Materialized {
    pub p: usize,
    /// Flat `p`-vectors, one per (subject, segment) in dataset order.
    pub base: Vec<f64>,
    /// Offset of each subject's first segment in units of segments.
    pub seg_offset: Vec<usize>,
    pub time: TimeFactor,
    pub scaling: Option<WeightScaling>,
}

impl Materialized {
    pub fn new(policy: &WeightPolicy, data: &SurvivalDataset) -> Result<Self> {
        let p = data.dims().total();
        let mut seg_offset = Vec::with_capacity(data.len());
        let mut raw = Vec::new();
        let mut count = 0;
        for s in data.subjects() {
            seg_offset.push(count);
            for seg in &s.covariates.segments {
                raw.extend_from_slice(&s.covariates.z1);
                raw.extend_from_slice(&seg.z2);
                raw.extend_from_slice(&seg.z3);
                count += 1;
            }
        }
        let (base, time, scaling) = match policy {
            WeightPolicy::Covariates { rescale: false } => (raw, TimeFactor::None, None),
            WeightPolicy::Covariates { rescale: true } => {
                let sc = scaling_of(&raw, p);
                (apply_scaling(raw, &sc), TimeFactor::None, Some(sc))
            }
            WeightPolicy::EarlyCovariates { cut } => {
                if !(cut.is_finite() && *cut > 0.0) {
                    return Err(Error::Config(format!("weight cut must be positive, got {cut}")));
                }
                let sc = scaling_of(&raw, p);
                (apply_scaling(raw, &sc), TimeFactor::Cut(*cut), Some(sc))
            }
            WeightPolicy::AboveMedian => {
                let medians: Vec<f64> = (0..p)
                    .map(|k| {
                        let mut col: Vec<f64> = raw.iter().skip(k).step_by(p).copied().collect();
                        col.sort_by(f64::total_cmp);
                        stats::median_sorted(&col)
                    })
                    .collect();
                let base = raw
                    .chunks(p)
                    .flat_map(|row| {
                        row.iter()
                            .zip(&medians)
                            .map(|(z, m)| if z > m { 1.0 } else { 0.0 })
                            .collect::<Vec<_>>()
                    })
                    .collect();
                (base, TimeFactor::None, None)
            }
            WeightPolicy::User(paths) => {
                if paths.len() != data.len() {
                    return Err(Error::Config(format!(
                        "user weights given for {} subjects, dataset has {}",
                        paths.len(),
                        data.len()
                    )));
                }
                for path in paths {
                    path.validate(p)?;
                }
                (vec![1.0; raw.len()], TimeFactor::User(paths.clone()), None)
            }
        };
        Ok(Self {
            p,
            base,
            seg_offset,
            time,
            scaling,
        })
    }

    #[inline]
    pub fn base(&self, subject: usize, segment: usize) -> &[f64] {
        let k = self.seg_offset[subject] + segment;
        &self.base[k * self.p..(k + 1) * self.p]
    }

    /// Knots of subject `i`'s time factor on the transformed scale.
    pub fn time_knots(&self, subject: usize) -> &[f64] {
        match &self.time {
            TimeFactor::None => &[],
            TimeFactor::Cut(c) => std::slice::from_ref(c),
            TimeFactor::User(paths) => &paths[subject].knots,
        }
    }

    /// Writes `base ⊙ factor` for the `k`-th time interval into `out`.
    #[inline]
    pub fn fill(&self, subject: usize, segment: usize, interval: usize, out: &mut [f64]) {
        let base = self.base(subject, segment);
        match &self.time {
            TimeFactor::None => out.copy_from_slice(base),
            TimeFactor::Cut(_) => {
                let f = if interval == 0 { 1.0 } else { 0.0 };
                for (o, b) in out.iter_mut().zip(base) {
                    *o = b * f;
                }
            }
            TimeFactor::User(paths) => {
                let v = &paths[subject].values[interval];
                for ((o, b), f) in out.iter_mut().zip(base).zip(v) {
                    *o = b * f;
                }
            }
        }
    }

    /// `W_i(t)` given the subject's segment and transformed time.
    pub fn value_at(&self, subject: usize, segment: usize, t: f64) -> Vec<f64> {
        let knots = self.time_knots(subject);
        let interval = knots.partition_point(|&k| k < t);
        let mut out = vec![0.0; self.p];
        self.fill(subject, segment, interval, &mut out);
        out
    }
}

fn scaling_of(raw: &[f64], p: usize) -> WeightScaling {
    let mut offset = vec![0.0; p];
    let mut scale = vec![1.0; p];
    for k in 0..p {
        let (lo, hi) = raw
            .iter()
            .skip(k)
            .step_by(p)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        offset[k] = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        scale[k] = if half > 0.0 { half } else { 1.0 };
    }
    WeightScaling { offset, scale }
}

fn apply_scaling(mut raw: Vec<f64>, sc: &WeightScaling) -> Vec<f64> {
    let p = sc.offset.len();
    for row in raw.chunks_mut(p) {
        for ((v, o), s) in row.iter_mut().zip(&sc.offset).zip(&sc.scale) {
            *v = (*v - o) / s;
        }
    }
    raw
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dims, SubjectRecord};

    fn data(z: &[(f64, f64)]) -> SurvivalDataset {
        let subjects = z
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| SubjectRecord::fixed(i.to_string(), 1.0 + i as f64, true, vec![a], vec![b], vec![]))
            .collect();
        SurvivalDataset::new(subjects, Dims::new(1, 1, 0)).unwrap()
    }

    #[test]
    fn rescaled_weights_lie_in_unit_box() {
        let d = data(&[(0.0, 10.0), (2.0, 20.0), (4.0, 15.0)]);
        let m = Materialized::new(&WeightPolicy::default(), &d).unwrap();
        assert_eq!(m.base(0, 0), &[-1.0, -1.0]);
        assert_eq!(m.base(1, 0), &[0.0, 1.0]);
        assert_eq!(m.base(2, 0), &[1.0, 0.0]);
        let sc = m.scaling.unwrap();
        assert_eq!(sc.offset, vec![2.0, 15.0]);
        assert_eq!(sc.scale, vec![2.0, 5.0]);
    }

    #[test]
    fn constant_covariate_maps_to_zero() {
        let d = data(&[(1.0, 0.0), (1.0, 1.0)]);
        let m = Materialized::new(&WeightPolicy::default(), &d).unwrap();
        assert_eq!(m.base(0, 0)[0], 0.0);
    }

    #[test]
    fn above_median_indicator() {
        let d = data(&[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]);
        let m = Materialized::new(&WeightPolicy::AboveMedian, &d).unwrap();
        assert_eq!(m.base(0, 0), &[0.0, 0.0]);
        assert_eq!(m.base(2, 0), &[1.0, 1.0]);
    }

    #[test]
    fn contrast_falls_back_for_binary_covariates() {
        let d = data(&[(0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]);
        assert!(matches!(WeightPolicy::contrast_for(&d), WeightPolicy::EarlyCovariates { .. }));
        let c = data(&[(0.0, 1.0), (1.0, 0.5), (2.0, 1.5)]);
        assert_eq!(WeightPolicy::contrast_for(&c), WeightPolicy::AboveMedian);
    }

    #[test]
    fn early_weights_switch_off_after_cut() {
        let d = data(&[(0.0, 10.0), (2.0, 20.0)]);
        let m = Materialized::new(&WeightPolicy::EarlyCovariates { cut: 1.5 }, &d).unwrap();
        assert_eq!(m.value_at(0, 0, 1.5), vec![-1.0, -1.0]);
        assert_eq!(m.value_at(0, 0, 1.6), vec![0.0, 0.0]);
    }

    #[test]
    fn user_weights_checked_against_dataset() {
        let d = data(&[(0.0, 10.0), (2.0, 20.0)]);
        let one = WeightPolicy::User(vec![WeightPath::constant(vec![1.0, 1.0])]);
        assert!(Materialized::new(&one, &d).is_err());
    }
}
