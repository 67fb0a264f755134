//! Survival data in counting-process form.
//!
//! Each subject carries an observed time `T* = min(T, C)`, an event flag, a
//! time-independent time-scale covariate vector `Z1`, and piecewise-constant
//! paths for the multiplicative (`Z2`) and additive (`Z3`) covariates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Effect part a covariate is assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    /// Time-scale (accelerated) effect.
    Z1,
    /// Multiplicative effect.
    Z2,
    /// Additive effect.
    Z3,
}

/// Time-varying covariate part selector for [`CovariateProfile::covariate_at`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Z2,
    Z3,
}

/// Covariate dimensions `(p1, p2, p3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Dims {
    pub p1: usize,
    pub p2: usize,
    pub p3: usize,
}

impl Dims {
    pub fn new(p1: usize, p2: usize, p3: usize) -> Self {
        Self { p1, p2, p3 }
    }

    pub fn total(&self) -> usize {
        self.p1 + self.p2 + self.p3
    }
}

/// One constant piece of the `Z2`/`Z3` paths, covering `[start, stop)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub stop: f64,
    pub z2: Vec<f64>,
    pub z3: Vec<f64>,
}

/// Covariate values of one subject (or a prediction profile).
///
/// The last segment's value is carried forward past its `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateProfile {
    pub z1: Vec<f64>,
    pub segments: Vec<Segment>,
}

impl CovariateProfile {
    /// Time-independent profile with a single segment `[0, ∞)`.
    pub fn fixed(z1: Vec<f64>, z2: Vec<f64>, z3: Vec<f64>) -> Self {
        Self {
            z1,
            segments: vec![Segment {
                start: 0.0,
                stop: f64::INFINITY,
                z2,
                z3,
            }],
        }
    }

    fn segment_index(&self, t: f64) -> usize {
        // Right-continuous: the segment with the largest start <= t.
        let k = self.segments.partition_point(|s| s.start <= t);
        k.saturating_sub(1)
    }

    pub fn segment_at(&self, t: f64) -> &Segment {
        &self.segments[self.segment_index(t)]
    }

    /// Value of the `Z2` or `Z3` path at time `t`.
    pub fn covariate_at(&self, part: Part, t: f64) -> &[f64] {
        let seg = self.segment_at(t);
        match part {
            Part::Z2 => &seg.z2,
            Part::Z3 => &seg.z3,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        self.segments.windows(2).all(|w| w[0].z2 == w[1].z2 && w[0].z3 == w[1].z3)
    }

    /// All covariates stacked as `(Z1, Z2(0), Z3(0))`.
    pub fn stacked_initial(&self) -> Vec<f64> {
        let seg = &self.segments[0];
        let mut v = self.z1.clone();
        v.extend_from_slice(&seg.z2);
        v.extend_from_slice(&seg.z3);
        v
    }

    pub fn dims(&self) -> Dims {
        let seg = &self.segments[0];
        Dims::new(self.z1.len(), seg.z2.len(), seg.z3.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    /// Observed time `T* = min(T, C)`.
    pub time: f64,
    /// `Δ = 1{T <= C}`.
    pub event: bool,
    pub covariates: CovariateProfile,
}

impl SubjectRecord {
    /// Subject with time-independent covariates.
    pub fn fixed(
        id: impl Into<String>,
        time: f64,
        event: bool,
        z1: Vec<f64>,
        z2: Vec<f64>,
        z3: Vec<f64>,
    ) -> Self {
        let mut covariates = CovariateProfile::fixed(z1, z2, z3);
        covariates.segments[0].stop = time;
        Self {
            id: id.into(),
            time,
            event,
            covariates,
        }
    }

    pub fn covariate_at(&self, part: Part, t: f64) -> &[f64] {
        self.covariates.covariate_at(part, t)
    }

    /// At-risk process `Y(t) = 1{T* >= t}`.
    pub fn at_risk(&self, t: f64) -> bool {
        self.time >= t
    }

    /// Counting process `N(t) = 1{Δ = 1, T* <= t}`.
    pub fn counting(&self, t: f64) -> u8 {
        u8::from(self.event && self.time <= t)
    }

    pub fn z1(&self) -> &[f64] {
        &self.covariates.z1
    }

    fn validate(&self, dims: Dims) -> Result<()> {
        let fail = |msg: String| Error::Validation {
            id: self.id.clone(),
            msg,
        };
        if !(self.time.is_finite() && self.time > 0.0) {
            return Err(fail(format!("observed time must be positive and finite, got {}", self.time)));
        }
        let cov = &self.covariates;
        if cov.z1.len() != dims.p1 {
            return Err(fail(format!("expected {} Z1 values, got {}", dims.p1, cov.z1.len())));
        }
        if cov.z1.iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite Z1 value".into()));
        }
        let segs = &cov.segments;
        if segs.is_empty() {
            return Err(fail("no covariate segments".into()));
        }
        if segs[0].start != 0.0 {
            return Err(fail(format!(
                "first interval starts at {}, must start at 0",
                segs[0].start
            )));
        }
        for (k, s) in segs.iter().enumerate() {
            if !(s.start < s.stop) {
                return Err(fail(format!("empty interval ({}, {})", s.start, s.stop)));
            }
            if s.z2.len() != dims.p2 || s.z3.len() != dims.p3 {
                return Err(fail("covariate dimension mismatch".into()));
            }
            if s.z2.iter().chain(&s.z3).any(|v| !v.is_finite()) {
                return Err(fail("non-finite covariate value".into()));
            }
            if let Some(next) = segs.get(k + 1) {
                if next.start > s.stop {
                    return Err(fail(format!(
                        "gap between intervals ({}, {}) and ({}, {})",
                        s.start, s.stop, next.start, next.stop
                    )));
                }
                if next.start < s.stop {
                    return Err(fail(format!(
                        "overlapping intervals ({}, {}) and ({}, {})",
                        s.start, s.stop, next.start, next.stop
                    )));
                }
            }
        }
        let last = segs.last().unwrap();
        if last.stop != self.time {
            return Err(fail(format!(
                "intervals end at {} but observed time is {}",
                last.stop, self.time
            )));
        }
        Ok(())
    }
}

/// Covariate column names by role, in file order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CovariateNames {
    pub z1: Vec<String>,
    pub z2: Vec<String>,
    pub z3: Vec<String>,
}

impl CovariateNames {
    /// Generic names `z1_1, .., z3_k` for the given dimensions.
    pub fn generic(dims: Dims) -> Self {
        let make = |part: usize, k: usize| (1..=k).map(|j| format!("z{part}_{j}")).collect();
        Self {
            z1: make(1, dims.p1),
            z2: make(2, dims.p2),
            z3: make(3, dims.p3),
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.z1.iter().chain(&self.z2).chain(&self.z3)
    }
}

/// A validated set of subjects. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    subjects: Vec<SubjectRecord>,
    dims: Dims,
    names: CovariateNames,
}

impl SurvivalDataset {
    pub fn new(subjects: Vec<SubjectRecord>, dims: Dims) -> Result<Self> {
        Self::with_names(subjects, dims, CovariateNames::generic(dims))
    }

    pub fn with_names(
        subjects: Vec<SubjectRecord>,
        dims: Dims,
        names: CovariateNames,
    ) -> Result<Self> {
        if subjects.len() < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 subjects, got {}",
                subjects.len()
            )));
        }
        if dims.total() == 0 {
            return Err(Error::InvalidData("no covariates".into()));
        }
        if names.z1.len() != dims.p1 || names.z2.len() != dims.p2 || names.z3.len() != dims.p3 {
            return Err(Error::InvalidData("covariate names do not match dimensions".into()));
        }
        for s in &subjects {
            s.validate(dims)?;
        }
        if !subjects.iter().any(|s| s.event) {
            return Err(Error::InvalidData("no events in dataset".into()));
        }
        Ok(Self {
            subjects,
            dims,
            names,
        })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn names(&self) -> &CovariateNames {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn event_count(&self) -> usize {
        self.subjects.iter().filter(|s| s.event).count()
    }

    pub fn is_time_independent(&self) -> bool {
        self.subjects.iter().all(|s| s.covariates.is_time_independent())
    }

    pub fn max_time(&self) -> f64 {
        self.subjects.iter().map(|s| s.time).fold(0.0, f64::max)
    }

    /// Dataset made of the subjects at `indices` (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let subjects = indices.iter().map(|&i| self.subjects[i].clone()).collect();
        Self::with_names(subjects, self.dims, self.names.clone())
    }

    /// Same data with every time multiplied by `factor`.
    pub fn rescale_time(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Config(format!("time factor must be positive, got {factor}")));
        }
        let subjects = self
            .subjects
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.time *= factor;
                for seg in &mut s.covariates.segments {
                    seg.start *= factor;
                    seg.stop *= factor;
                }
                s
            })
            .collect();
        Self::with_names(subjects, self.dims, self.names.clone())
    }

    /// Sorted distinct observed times.
    pub fn distinct_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.subjects.iter().map(|s| s.time).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    /// Median of the observed event times.
    pub fn median_event_time(&self) -> f64 {
        let mut t: Vec<f64> = self.subjects.iter().filter(|s| s.event).map(|s| s.time).collect();
        t.sort_by(f64::total_cmp);
        crate::stats::median_sorted(&t)
    }
}
