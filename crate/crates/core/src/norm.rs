//! Min/max scaling of label vectors onto `[0, 1]`, matching sigmoid heads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm_sim::{ActuationRanges, Channel};

#[derive(Debug, Error, PartialEq)]
pub enum NormError {
    #[error("min/max lengths differ ({min} vs {max})")]
    LengthMismatch { min: usize, max: usize },
    #[error("component {index}: max {max} must exceed min {min}")]
    EmptyRange { index: usize, min: f64, max: f64 },
    #[error("expected {expected} components, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("no rows to fit")]
    Empty,
}

/// Per-component affine map `v -> (v - min) / (max - min)`.
///
/// Values outside `[min, max]` deliberately map outside `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ChannelNorm {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self, NormError> {
        let n = ChannelNorm { min, max };
        n.validate()?;
        Ok(n)
    }

    /// Bounds of the actuation envelope itself.
    pub fn from_ranges(ranges: &ActuationRanges) -> Self {
        ChannelNorm {
            min: Channel::ALL.iter().map(|c| ranges.channel(*c).min).collect(),
            max: Channel::ALL.iter().map(|c| ranges.channel(*c).max).collect(),
        }
    }

    /// Column-wise extrema of `rows`.
    ///
    /// A constant column would give an empty range, so it is widened by one
    /// unit around its value.
    pub fn fit<'a, I>(rows: I) -> Result<Self, NormError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut it = rows.into_iter();
        let first = it.next().ok_or(NormError::Empty)?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in it {
            if row.len() != min.len() {
                return Err(NormError::Arity {
                    expected: min.len(),
                    got: row.len(),
                });
            }
            for (i, v) in row.iter().enumerate() {
                min[i] = min[i].min(*v);
                max[i] = max[i].max(*v);
            }
        }
        for i in 0..min.len() {
            if max[i] <= min[i] {
                min[i] -= 0.5;
                max[i] += 0.5;
            }
        }
        ChannelNorm::new(min, max)
    }

    pub fn validate(&self) -> Result<(), NormError> {
        if self.min.len() != self.max.len() {
            return Err(NormError::LengthMismatch {
                min: self.min.len(),
                max: self.max.len(),
            });
        }
        for (i, (lo, hi)) in self.min.iter().zip(&self.max).enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(NormError::EmptyRange {
                    index: i,
                    min: *lo,
                    max: *hi,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    fn check(&self, v: &[f64]) -> Result<(), NormError> {
        if v.len() != self.len() {
            return Err(NormError::Arity {
                expected: self.len(),
                got: v.len(),
            });
        }
        Ok(())
    }

    pub fn normalize(&self, v: &[f64]) -> Result<Vec<f64>, NormError> {
        self.check(v)?;
        Ok(v.iter()
            .enumerate()
            .map(|(i, x)| (x - self.min[i]) / (self.max[i] - self.min[i]))
            .collect())
    }

    pub fn denormalize(&self, v: &[f64]) -> Result<Vec<f64>, NormError> {
        self.check(v)?;
        Ok(v.iter()
            .enumerate()
            .map(|(i, x)| self.min[i] + x * (self.max[i] - self.min[i]))
            .collect())
    }
}
