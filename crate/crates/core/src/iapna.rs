//! Incremental affinity propagation with nearest-neighbor assignment.
//!
//! Messages are kept between time-steps. Each newly arrived object inherits
//! the responsibility and availability rows and columns of its nearest
//! pre-existing object, then the ordinary message loop resumes from that
//! warm state over the whole accumulated dataset.

use crate::ap::{run_from, ApConfig, ClusteringResult, MessageState};
use crate::error::{Error, Result};
use crate::geometry::{build_similarity_matrix_with, FeatureVector, Similarity, SimilarityMatrix};

/// Index of the object in `existing` closest to `x` in Euclidean distance.
/// Ties resolve to the lowest index.
pub fn nearest_neighbor(x: &FeatureVector, existing: &[FeatureVector]) -> Result<usize> {
    if existing.is_empty() {
        return Err(Error::invalid("nearest neighbor over an empty set"));
    }
    let mut best = f64::INFINITY;
    let mut best_idx = 0;
    for (idx, e) in existing.iter().enumerate() {
        if e.dim() != x.dim() {
            return Err(Error::invalid(format!(
                "dimension mismatch: {} vs {}",
                x.dim(),
                e.dim()
            )));
        }
        let d: f64 = x.iter().zip(e.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best {
            best = d;
            best_idx = idx;
        }
    }
    Ok(best_idx)
}

/// Session state carried across IAPNA time-steps.
#[derive(Debug, Clone, Default)]
pub struct IapnaState {
    objects: Vec<FeatureVector>,
    similarity: Option<SimilarityMatrix>,
    messages: Option<MessageState>,
    last_result: Option<ClusteringResult>,
    measure: Similarity,
}

impl IapnaState {
    pub fn new() -> Self {
        IapnaState::default()
    }

    pub fn with_measure(measure: Similarity) -> Self {
        IapnaState {
            measure,
            ..IapnaState::default()
        }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn objects(&self) -> &[FeatureVector] {
        &self.objects
    }

    pub fn similarity(&self) -> Option<&SimilarityMatrix> {
        self.similarity.as_ref()
    }

    pub fn messages(&self) -> Option<&MessageState> {
        self.messages.as_ref()
    }

    pub fn last_result(&self) -> Option<&ClusteringResult> {
        self.last_result.as_ref()
    }

    /// Replaces the stored vectors of the already accumulated objects, e.g.
    /// after cumulative re-normalization. Messages are untouched.
    pub fn replace_objects(&mut self, objects: Vec<FeatureVector>) -> Result<()> {
        if objects.len() != self.objects.len() {
            return Err(Error::invalid(format!(
                "expected {} replacement vectors, got {}",
                self.objects.len(),
                objects.len()
            )));
        }
        self.objects = objects;
        Ok(())
    }

    /// Appends `new_objects`, rebuilds the similarity matrix over every
    /// accumulated object with a freshly computed preference, and extends the
    /// message matrices with the nearest-neighbor copy rule.
    pub fn extend_messages(
        &mut self,
        new_objects: Vec<FeatureVector>,
        config: &ApConfig,
    ) -> Result<()> {
        let n = self.objects.len();
        let neighbors = if n == 0 {
            Vec::new()
        } else {
            new_objects
                .iter()
                .map(|x| nearest_neighbor(x, &self.objects))
                .collect::<Result<Vec<_>>>()?
        };

        let mut all = self.objects.clone();
        all.extend(new_objects);
        let similarity = build_similarity_matrix_with(&all, &self.measure, config.preference)?;

        let messages = match &self.messages {
            Some(old) if n > 0 => copy_extend(old, &neighbors),
            _ => MessageState::zeros(all.len()),
        };

        self.objects = all;
        self.similarity = Some(similarity);
        self.messages = Some(messages);
        Ok(())
    }

    /// One time-step: extend, then run the message loop from the warm state.
    pub fn step(
        &mut self,
        new_objects: Vec<FeatureVector>,
        config: &ApConfig,
    ) -> Result<ClusteringResult> {
        if new_objects.is_empty() {
            return Err(Error::invalid("an IAPNA step needs at least one new object"));
        }
        config.validate()?;
        self.extend_messages(new_objects, config)?;
        let (s, messages) = match (&self.similarity, &mut self.messages) {
            (Some(s), Some(m)) => (s, m),
            _ => unreachable!("extend_messages populates both matrices"),
        };
        let result = run_from(s, messages, config)?;
        self.last_result = Some(result.clone());
        Ok(result)
    }
}

/// Grows `old` (n × n) to (n + m) × (n + m). Object `n + j` is backed by
/// `neighbors[j]`; its messages mirror that neighbor's, and a pair of new
/// objects sharing the same neighbor starts at zero.
fn copy_extend(old: &MessageState, neighbors: &[usize]) -> MessageState {
    let n = old.n();
    let total = n + neighbors.len();
    let source = |i: usize| if i < n { i } else { neighbors[i - n] };
    let mut r = vec![0.0; total * total];
    let mut a = vec![0.0; total * total];
    for i in 0..total {
        let si = source(i);
        for k in 0..total {
            let sk = source(k);
            if i != k && i >= n && k >= n && si == sk {
                continue;
            }
            r[i * total + k] = old.r(si, sk);
            a[i * total + k] = old.a(si, sk);
        }
    }
    MessageState::from_parts(total, r, a).expect("sizes computed above")
}
