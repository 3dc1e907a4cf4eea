//! Statistic maps applied to empirical or mean-field measures before they
//! enter cost and transition functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::ProbVec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StatisticMap {
    /// Passes the whole measure through.
    Identity,
    /// `p -> sum_u embedding[u] * p[u]`.
    MeanEmbedding { embedding: Vec<f64> },
}

/// Value of a statistic: the measure itself or a scalar.
#[derive(Debug, Clone, PartialEq)]
pub enum StatValue {
    Measure(Vec<f64>),
    Scalar(f64),
}

impl StatValue {
    /// Scalar summary used by the parametric cost families: the scalar
    /// itself, or the mean of the element index under the measure.
    pub fn mean(&self) -> f64 {
        match self {
            StatValue::Scalar(s) => *s,
            StatValue::Measure(p) => p.iter().enumerate().map(|(i, w)| i as f64 * w).sum(),
        }
    }

    pub fn measure(&self) -> Option<&[f64]> {
        match self {
            StatValue::Measure(p) => Some(p),
            StatValue::Scalar(_) => None,
        }
    }
}

impl StatisticMap {
    pub fn apply(&self, p: &ProbVec) -> Result<StatValue> {
        self.apply_slice(p.weights())
    }

    pub(crate) fn apply_slice(&self, p: &[f64]) -> Result<StatValue> {
        match self {
            StatisticMap::Identity => Ok(StatValue::Measure(p.to_vec())),
            StatisticMap::MeanEmbedding { embedding } => {
                if embedding.len() != p.len() {
                    return Err(Error::DimensionMismatch {
                        what: "embedding",
                        got: embedding.len(),
                        expected: p.len(),
                    });
                }
                Ok(StatValue::Scalar(
                    embedding.iter().zip(p).map(|(e, w)| e * w).sum(),
                ))
            }
        }
    }

    /// Value attached to a single element by this statistic: its embedding
    /// coordinate, or its index for the identity statistic.
    pub fn element_value(&self, u: usize) -> f64 {
        match self {
            StatisticMap::Identity => u as f64,
            StatisticMap::MeanEmbedding { embedding } => embedding[u],
        }
    }

    pub fn issue(&self, size: usize) -> Option<String> {
        match self {
            StatisticMap::Identity => None,
            StatisticMap::MeanEmbedding { embedding } => {
                if embedding.len() != size {
                    Some(format!(
                        "embedding has {} entries for a space of size {size}",
                        embedding.len()
                    ))
                } else if embedding.iter().any(|e| !e.is_finite()) {
                    Some("embedding has non-finite entries".into())
                } else {
                    None
                }
            }
        }
    }
}

/// Convenience wrapper matching the free-function form of the operation.
pub fn apply_statistic(xi: &StatisticMap, p: &ProbVec) -> Result<StatValue> {
    xi.apply(p)
}
