//! Feature vectors, pairwise similarities and the dense similarity matrix
//! consumed by the message-passing engines.

use std::ops::Deref;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite, non-empty vector of numeric features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("feature vector has dimension 0"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "feature vector entry {pos} is not finite ({})",
                values[pos]
            )));
        }
        Ok(FeatureVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Arithmetic mean of a non-empty set of equal-dimension vectors.
    pub fn mean<'a, I>(vectors: I) -> Result<FeatureVector>
    where
        I: IntoIterator<Item = &'a FeatureVector>,
    {
        let mut iter = vectors.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::invalid("mean of an empty set of vectors"))?;
        let mut acc = first.0.clone();
        let mut count = 1usize;
        for v in iter {
            check_dims(first, v)?;
            for (a, x) in acc.iter_mut().zip(&v.0) {
                *a += x;
            }
            count += 1;
        }
        let scale = count as f64;
        acc.iter_mut().for_each(|a| *a /= scale);
        Ok(FeatureVector(acc))
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        FeatureVector::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Vec<f64> {
        v.0
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `-‖a − b‖₂`.
pub fn negative_euclidean(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    check_dims(a, b)?;
    Ok(-squared_distance(a, b).sqrt())
}

/// `-‖a − b‖₂²`, the convention used by several other AP implementations.
pub fn negative_squared_euclidean(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    check_dims(a, b)?;
    Ok(-squared_distance(a, b))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A pairwise similarity between two vectors of equal dimension.
///
/// Implementations must be symmetric for the median/minimum preference rules
/// to be meaningful; callers validate dimensions before invoking it.
pub trait SimilarityMeasure: Sync {
    fn similarity(&self, a: &[f64], b: &[f64]) -> f64;
}

/// Built-in similarity measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Similarity {
    #[default]
    NegativeEuclidean,
    NegativeSquaredEuclidean,
}

impl SimilarityMeasure for Similarity {
    fn similarity(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Similarity::NegativeEuclidean => -squared_distance(a, b).sqrt(),
            Similarity::NegativeSquaredEuclidean => -squared_distance(a, b),
        }
    }
}

/// How the diagonal (self-similarity) of the matrix is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreferencePolicy {
    /// Median of all off-diagonal similarities.
    #[default]
    Median,
    /// Minimum off-diagonal similarity.
    Minimum,
    Fixed(f64),
}

impl std::str::FromStr for PreferencePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(PreferencePolicy::Median),
            "minimum" | "min" => Ok(PreferencePolicy::Minimum),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(PreferencePolicy::Fixed)
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "preference must be `median`, `minimum` or a finite number, got `{other}`"
                    ))
                }),
        }
    }
}

/// Dense `n × n` similarity matrix, row-major, preference on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
    preference: Option<f64>,
}

impl SimilarityMatrix {
    /// Wraps an explicit row-major matrix, diagonal included.
    pub fn from_dense(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("similarity matrix must have n >= 1"));
        }
        if values.len() != n * n {
            return Err(Error::invalid(format!(
                "expected {} entries for n = {n}, got {}",
                n * n,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("similarity matrix contains non-finite entries"));
        }
        let first = values[0];
        let uniform = (0..n).all(|i| values[i * n + i] == first);
        Ok(SimilarityMatrix {
            n,
            values,
            preference: uniform.then_some(first),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// The shared diagonal value, if the diagonal is uniform.
    pub fn preference(&self) -> Option<f64> {
        self.preference
    }

    /// Overwrites every diagonal entry with `p`.
    pub fn set_preference(&mut self, p: f64) {
        for i in 0..self.n {
            self.values[i * self.n + i] = p;
        }
        self.preference = Some(p);
    }

    /// Re-applies `policy` to the current off-diagonal entries.
    pub fn apply_policy(&mut self, policy: PreferencePolicy) {
        let p = preference_for(self, policy);
        self.set_preference(p);
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

fn preference_for(s: &SimilarityMatrix, policy: PreferencePolicy) -> f64 {
    let n = s.n;
    match policy {
        PreferencePolicy::Fixed(p) => p,
        _ if n == 1 => 0.0,
        PreferencePolicy::Minimum => off_diagonal(s).fold(f64::INFINITY, f64::min),
        PreferencePolicy::Median => {
            let mut values: Vec<f64> = off_diagonal(s).collect();
            median_in_place(&mut values)
        }
    }
}

fn off_diagonal(s: &SimilarityMatrix) -> impl Iterator<Item = f64> + '_ {
    let n = s.n;
    s.values
        .iter()
        .enumerate()
        .filter(move |(idx, _)| idx / n != idx % n)
        .map(|(_, &v)| v)
}

/// Median of a non-empty slice; even counts average the two central values.
/// The slice is reordered.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let len = values.len();
    debug_assert!(len > 0);
    let mid = len / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if len % 2 == 1 {
        upper
    } else {
        let lower = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

/// Builds the matrix with the default negative Euclidean similarity.
pub fn build_similarity_matrix(
    objects: &[FeatureVector],
    policy: PreferencePolicy,
) -> Result<SimilarityMatrix> {
    build_similarity_matrix_with(objects, &Similarity::NegativeEuclidean, policy)
}

pub fn build_similarity_matrix_with(
    objects: &[FeatureVector],
    measure: &dyn SimilarityMeasure,
    policy: PreferencePolicy,
) -> Result<SimilarityMatrix> {
    let first = objects
        .first()
        .ok_or_else(|| Error::invalid("cannot build a similarity matrix over zero objects"))?;
    for v in &objects[1..] {
        check_dims(first, v)?;
    }
    if let PreferencePolicy::Fixed(p) = policy {
        if !p.is_finite() {
            return Err(Error::invalid("fixed preference must be finite"));
        }
    }

    let n = objects.len();
    let mut values = vec![0.0; n * n];
    values
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            for (k, cell) in row.iter_mut().enumerate() {
                if k != i {
                    *cell = measure.similarity(&objects[i], &objects[k]);
                }
            }
        });
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("similarity measure produced a non-finite value"));
    }

    let mut matrix = SimilarityMatrix {
        n,
        values,
        preference: None,
    };
    matrix.apply_policy(policy);
    Ok(matrix)
}
