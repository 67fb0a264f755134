use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-continuous step function with `value(t) = 0` before the first knot.
///
/// Used for baseline and predicted cumulative hazards. Increments may be
/// negative: the moment-based baseline estimator is not constrained to be
/// monotone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Right end of the range on which the curve is defined.
    support_end: f64,
}

impl StepCurve {
    pub fn new(knots: Vec<f64>, values: Vec<f64>, support_end: f64) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::InvalidData("knots and values differ in length".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidData("step-curve knots must be strictly increasing".into()));
        }
        if knots.first().is_some_and(|&k| k < 0.0) {
            return Err(Error::InvalidData("step-curve knots must be nonnegative".into()));
        }
        if knots.last().is_some_and(|&k| k > support_end) {
            return Err(Error::InvalidData("knot beyond support end".into()));
        }
        Ok(Self {
            knots,
            values,
            support_end,
        })
    }

    /// Builds a curve from knots and per-knot increments.
    pub fn from_increments(knots: Vec<f64>, increments: &[f64], support_end: f64) -> Result<Self> {
        let mut acc = 0.0;
        let values = increments
            .iter()
            .map(|d| {
                acc += d;
                acc
            })
            .collect();
        Self::new(knots, values, support_end)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support_end(&self) -> f64 {
        self.support_end
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Value at `t`: the value of the largest knot `<= t`, or 0.
    pub fn value(&self, t: f64) -> f64 {
        let k = self.knots.partition_point(|&x| x <= t);
        if k == 0 {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    /// Left limit at `t`: the value of the largest knot `< t`, or 0.
    pub fn value_left(&self, t: f64) -> f64 {
        let k = self.knots.partition_point(|&x| x < t);
        if k == 0 {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    /// Increments at each knot.
    pub fn increments(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.values
            .iter()
            .map(|&v| {
                let d = v - prev;
                prev = v;
                d
            })
            .collect()
    }

    /// Two-column `time<TAB>value` export.
    pub fn write_tsv<W: Write>(&self, mut out: W, value_name: &str) -> Result<()> {
        writeln!(out, "time\t{value_name}")?;
        for (t, v) in self.knots.iter().zip(&self.values) {
            writeln!(out, "{t}\t{v}")?;
        }
        Ok(())
    }
}
