//! Probability primitives on finite spaces.
//!
//! Every [`ProbVec`] built by a checked constructor is nonnegative and sums
//! to one within [`NORMALIZATION_TOL`]. Deserialized vectors are not checked
//! here; spec validation reports on them instead of failing the parse.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalization tolerance for every probability vector in the crate.
pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiniteSpace {
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl FiniteSpace {
    pub fn new(size: usize) -> Self {
        FiniteSpace { size, labels: None }
    }

    /// Problems with this space, empty when valid.
    pub fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.size == 0 {
            out.push("size must be >= 1".to_string());
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.size {
                out.push(format!(
                    "has {} labels for {} elements",
                    labels.len(),
                    self.size
                ));
            }
            let mut sorted = labels.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != labels.len() {
                out.push("labels are not distinct".to_string());
            }
        }
        out
    }
}

/// A point of the probability simplex over a finite space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVec(Vec<f64>);

impl ProbVec {
    /// Checked constructor.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let p = ProbVec(weights);
        match p.issue() {
            None => Ok(p),
            Some(msg) => Err(Error::InvalidProbability(msg)),
        }
    }

    /// Wraps weights produced by arithmetic the caller knows is stochastic.
    /// Debug builds still assert the invariant.
    pub(crate) fn from_normalized(weights: Vec<f64>) -> Self {
        let p = ProbVec(weights);
        debug_assert!(p.issue().is_none(), "not a probability vector: {:?}", p.0);
        p
    }

    /// Divides by the total mass. Fails on zero or non-finite mass.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidProbability(format!(
                "cannot normalize weights {weights:?}"
            )));
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(ProbVec(weights))
    }

    pub fn dirac(size: usize, at: usize) -> Self {
        let mut w = vec![0.0; size];
        w[at] = 1.0;
        ProbVec(w)
    }

    pub fn uniform(size: usize) -> Self {
        ProbVec(vec![1.0 / size as f64; size])
    }

    /// Describes the first violated invariant, if any.
    pub fn issue(&self) -> Option<String> {
        if self.0.is_empty() {
            return Some("empty".into());
        }
        if let Some(w) = self.0.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Some(format!("entry {w} is negative or not finite"));
        }
        let total: f64 = self.0.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Some(format!("not normalized (sum = {total})"));
        }
        None
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.0
    }

    /// Expectation of `values` under this law.
    pub fn expect(&self, values: &[f64]) -> f64 {
        self.0.iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

impl std::ops::Index<usize> for ProbVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Total variation distance, `0.5 * sum |p - q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// A row-stochastic matrix: one law over the target space per source element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Kernel {
    rows: Vec<ProbVec>,
}

impl Kernel {
    pub fn new(rows: Vec<ProbVec>) -> Result<Self> {
        let k = Kernel { rows };
        if let Some(msg) = k.issue() {
            return Err(Error::InvalidProbability(msg));
        }
        Ok(k)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Kernel::new(rows.into_iter().map(ProbVec).collect())
    }

    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Self {
        Kernel {
            rows: rows.into_iter().map(ProbVec::from_normalized).collect(),
        }
    }

    /// Every source maps to the same law.
    pub fn constant(sources: usize, row: ProbVec) -> Self {
        Kernel {
            rows: vec![row; sources],
        }
    }

    /// Deterministic kernel sending source `s` to `map[s]`.
    pub fn deterministic(map: &[usize], targets: usize) -> Self {
        Kernel {
            rows: map.iter().map(|&t| ProbVec::dirac(targets, t)).collect(),
        }
    }

    pub fn identity(size: usize) -> Self {
        Kernel::deterministic(&(0..size).collect::<Vec<_>>(), size)
    }

    pub fn issue(&self) -> Option<String> {
        if self.rows.is_empty() {
            return Some("kernel has no rows".into());
        }
        let width = self.rows[0].len();
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != width {
                return Some(format!(
                    "row {i} has length {} (expected {width})",
                    row.len()
                ));
            }
            if let Some(msg) = row.issue() {
                return Some(format!("row {i}: {msg}"));
            }
        }
        None
    }

    pub fn sources(&self) -> usize {
        self.rows.len()
    }

    pub fn targets(&self) -> usize {
        self.rows.first().map_or(0, ProbVec::len)
    }

    pub fn row(&self, source: usize) -> &ProbVec {
        &self.rows[source]
    }

    pub fn rows(&self) -> &[ProbVec] {
        &self.rows
    }

    pub fn prob(&self, source: usize, target: usize) -> f64 {
        self.rows[source][target]
    }

    /// Pushes a law on the source space forward: `q(t) = sum_s p(s) K(t|s)`.
    pub fn push_forward(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.targets()];
        for (ps, row) in p.iter().zip(&self.rows) {
            if *ps == 0.0 {
                continue;
            }
            for (o, k) in out.iter_mut().zip(row.weights()) {
                *o += ps * k;
            }
        }
        out
    }

    /// Composition `self` then `next`.
    pub fn compose(&self, next: &Kernel) -> Kernel {
        Kernel {
            rows: self
                .rows
                .iter()
                .map(|r| ProbVec::from_normalized(renormalize(next.push_forward(r.weights()))))
                .collect(),
        }
    }

    /// True when every row is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.weights().iter().filter(|w| **w != 0.0).count() == 1)
    }

    /// Largest row-wise total variation distance.
    pub fn max_row_tv(&self, other: &Kernel) -> f64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| tv_distance(a.weights(), b.weights()))
            .fold(0.0, f64::max)
    }
}

/// Removes round-off drift from a vector that is stochastic up to rounding.
pub(crate) fn renormalize(mut w: Vec<f64>) -> Vec<f64> {
    for x in &mut w {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        for x in &mut w {
            *x /= total;
        }
    }
    w
}

/// Empirical measure `(1/N) sum_p delta_{u_p}` of a sample of indices.
pub fn emp_measure(actions: &[usize], space: &FiniteSpace) -> Result<ProbVec> {
    let counts = count(actions, space.size)?;
    let n = actions.len() as f64;
    Ok(ProbVec::from_normalized(
        counts.into_iter().map(|c| c as f64 / n).collect(),
    ))
}

/// Exact rational empirical measure.
pub fn emp_measure_exact(actions: &[usize], space: &FiniteSpace) -> Result<Vec<Ratio<u64>>> {
    let counts = count(actions, space.size)?;
    let n = actions.len() as u64;
    Ok(counts.into_iter().map(|c| Ratio::new(c, n)).collect())
}

fn count(actions: &[usize], size: usize) -> Result<Vec<u64>> {
    if actions.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut counts = vec![0u64; size];
    for &a in actions {
        if a >= size {
            return Err(Error::IndexOutOfRange {
                what: "action",
                index: a,
                size,
            });
        }
        counts[a] += 1;
    }
    Ok(counts)
}

/// Compensated summation (Neumaier's variant of Kahan's algorithm).
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut k = KahanSum::new();
        for x in iter {
            k.add(x);
        }
        k
    }
}

/// Grid points of the simplex over `dim` elements with step `1/steps`.
pub fn simplex_grid(dim: usize, steps: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; dim];
    fn rec(i: usize, left: usize, cur: &mut Vec<usize>, steps: usize, out: &mut Vec<Vec<f64>>) {
        if i + 1 == cur.len() {
            cur[i] = left;
            out.push(cur.iter().map(|&c| c as f64 / steps as f64).collect());
            return;
        }
        for c in 0..=left {
            cur[i] = c;
            rec(i + 1, left - c, cur, steps, out);
        }
    }
    if dim == 0 {
        return out;
    }
    rec(0, steps, &mut current, steps, &mut out);
    out
}

/// Number of points returned by [`simplex_grid`].
pub fn simplex_grid_len(dim: usize, steps: usize) -> u128 {
    if dim == 0 {
        return 0;
    }
    // C(steps + dim - 1, dim - 1)
    let k = (dim - 1) as u128;
    let n = steps as u128 + k;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Number of grid steps for a resolution, e.g. `0.01 -> 100`.
pub fn steps_for(resolution: f64) -> Result<usize> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "resolution {resolution} must lie in (0, 1]"
        )));
    }
    Ok((1.0 / resolution).round().max(1.0) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emp_measure_counts() {
        let s2 = FiniteSpace::new(2);
        let s3 = FiniteSpace::new(3);
        assert_eq!(
            emp_measure(&[0, 0, 1, 1], &s2).unwrap().weights(),
            &[0.5, 0.5]
        );
        assert_eq!(emp_measure(&[1], &s3).unwrap().weights(), &[0.0, 1.0, 0.0]);
        let p = emp_measure(&[0, 1, 1, 2, 2, 2], &s3).unwrap();
        assert_eq!(p.weights(), &[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]);
        assert!((p.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn emp_measure_errors() {
        let s2 = FiniteSpace::new(2);
        assert!(matches!(emp_measure(&[], &s2), Err(Error::EmptySample)));
        assert!(matches!(
            emp_measure(&[2], &s2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn exact_measure_sums_to_one() {
        let s3 = FiniteSpace::new(3);
        let p = emp_measure_exact(&[0, 1, 1, 2, 2, 2, 2], &s3).unwrap();
        let total = p.iter().fold(Ratio::from_integer(0u64), |a, b| a + b);
        assert_eq!(total, Ratio::from_integer(1));
        assert_eq!(p[2], Ratio::new(4, 7));
    }

    #[test]
    fn probvec_checks() {
        assert!(ProbVec::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbVec::new(vec![0.6, 0.6]).is_err());
        assert!(ProbVec::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVec::new(vec![]).is_err());
    }

    #[test]
    fn space_checks() {
        assert!(FiniteSpace::new(0).issues().len() == 1);
        let dup = FiniteSpace {
            size: 2,
            labels: Some(vec!["a".into(), "a".into()]),
        };
        assert_eq!(dup.issues(), vec!["labels are not distinct".to_string()]);
        let short = FiniteSpace {
            size: 3,
            labels: Some(vec!["a".into()]),
        };
        assert_eq!(short.issues().len(), 1);
    }

    #[test]
    fn simplex_grid_counts() {
        assert_eq!(simplex_grid(2, 4).len(), 5);
        assert_eq!(simplex_grid(3, 4).len() as u128, simplex_grid_len(3, 4));
        assert_eq!(simplex_grid_len(3, 4), 15);
        for p in simplex_grid(3, 5) {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kahan_beats_naive_on_cancellation() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        let k: KahanSum = xs.iter().copied().collect();
        assert_eq!(k.value(), 2.0);
    }
}
