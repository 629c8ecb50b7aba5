//! Damped affinity propagation message passing.
//!
//! Responsibilities are updated for the whole matrix first, then
//! availabilities from the fresh responsibilities. Both updates are
//! row-parallel; every cell is computed from the same inputs regardless of
//! thread scheduling, so results are deterministic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PreferencePolicy, SimilarityMatrix};

/// Stand-in for the maximum over an empty candidate set (only reachable when
/// n = 1), so that responsibilities stay finite.
pub const EMPTY_MAX_SENTINEL: f64 = -1e300;

const PARALLEL_MIN_ROWS: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApConfig {
    pub max_iterations: usize,
    pub damping: f64,
    /// Iterations with an unchanged exemplar set required to stop.
    pub convergence_window: usize,
    pub preference: PreferencePolicy,
    /// When set, a tiny seeded perturbation is added to the similarities to
    /// break exact ties the way some reference implementations do.
    pub jitter_seed: Option<u64>,
}

impl Default for ApConfig {
    fn default() -> Self {
        ApConfig {
            max_iterations: 200,
            damping: 0.9,
            convergence_window: 15,
            preference: PreferencePolicy::Median,
            jitter_seed: None,
        }
    }
}

impl ApConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..1.0).contains(&self.damping) {
            return Err(Error::invalid(format!(
                "damping must lie in [0.5, 1), got {}",
                self.damping
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be positive"));
        }
        if self.convergence_window == 0 || self.convergence_window >= self.max_iterations {
            return Err(Error::invalid(format!(
                "convergence_window must be in [1, max_iterations), got {} with max_iterations {}",
                self.convergence_window, self.max_iterations
            )));
        }
        Ok(())
    }
}

/// Responsibility and availability matrices, row-major `n × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    n: usize,
    responsibilities: Vec<f64>,
    availabilities: Vec<f64>,
}

impl MessageState {
    pub fn zeros(n: usize) -> Self {
        MessageState {
            n,
            responsibilities: vec![0.0; n * n],
            availabilities: vec![0.0; n * n],
        }
    }

    pub fn from_parts(n: usize, responsibilities: Vec<f64>, availabilities: Vec<f64>) -> Result<Self> {
        if responsibilities.len() != n * n || availabilities.len() != n * n {
            return Err(Error::invalid(format!(
                "message matrices must have {} entries for n = {n}",
                n * n
            )));
        }
        Ok(MessageState {
            n,
            responsibilities,
            availabilities,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn r(&self, i: usize, k: usize) -> f64 {
        self.responsibilities[i * self.n + k]
    }

    #[inline]
    pub fn a(&self, i: usize, k: usize) -> f64 {
        self.availabilities[i * self.n + k]
    }

    pub fn responsibilities(&self) -> &[f64] {
        &self.responsibilities
    }

    pub fn availabilities(&self) -> &[f64] {
        &self.availabilities
    }

    fn check(&self, s: &SimilarityMatrix) -> Result<()> {
        if s.n() != self.n {
            return Err(Error::invalid(format!(
                "similarity matrix is {0}x{0} but message state is {1}x{1}",
                s.n(),
                self.n
            )));
        }
        Ok(())
    }
}

#[inline]
fn damp(old: f64, new: f64, damping: f64) -> f64 {
    damping * old + (1.0 - damping) * new
}

fn check_damping(damping: f64) -> Result<()> {
    if !(0.0..1.0).contains(&damping) {
        return Err(Error::invalid(format!("damping must lie in [0, 1), got {damping}")));
    }
    Ok(())
}

/// `r(i,k) ← s(i,k) − max_{k'≠k} {a(i,k') + s(i,k')}`, damped.
pub fn update_responsibilities(
    s: &SimilarityMatrix,
    state: &mut MessageState,
    damping: f64,
) -> Result<()> {
    state.check(s)?;
    check_damping(damping)?;
    let n = state.n;
    let availabilities = &state.availabilities;
    let update_row = |(i, r_row): (usize, &mut [f64])| {
        let s_row = s.row(i);
        let a_row = &availabilities[i * n..(i + 1) * n];
        let (mut best, mut best_idx, mut second) = (f64::NEG_INFINITY, usize::MAX, f64::NEG_INFINITY);
        for k in 0..n {
            let v = a_row[k] + s_row[k];
            if v > best {
                second = best;
                best = v;
                best_idx = k;
            } else if v > second {
                second = v;
            }
        }
        if second == f64::NEG_INFINITY {
            second = EMPTY_MAX_SENTINEL;
        }
        for k in 0..n {
            let competitor = if k == best_idx { second } else { best };
            r_row[k] = damp(r_row[k], s_row[k] - competitor, damping);
        }
    };
    if n >= PARALLEL_MIN_ROWS {
        state
            .responsibilities
            .par_chunks_mut(n)
            .enumerate()
            .for_each(update_row);
    } else {
        state.responsibilities.chunks_mut(n).enumerate().for_each(update_row);
    }
    Ok(())
}

/// Availabilities from the current responsibilities, damped:
/// `a(i,k) ← min{0, r(k,k) + Σ_{i'∉{i,k}} max{0, r(i',k)}}` for `i ≠ k` and
/// `a(k,k) ← Σ_{i'≠k} max{0, r(i',k)}`.
pub fn update_availabilities(state: &mut MessageState, damping: f64) -> Result<()> {
    check_damping(damping)?;
    let n = state.n;
    let r = &state.responsibilities;

    // Column sums of positive off-diagonal responsibilities.
    let mut positive_sums = vec![0.0; n];
    for i in 0..n {
        let row = &r[i * n..(i + 1) * n];
        for (k, (&v, sum)) in row.iter().zip(positive_sums.iter_mut()).enumerate() {
            if k != i && v > 0.0 {
                *sum += v;
            }
        }
    }
    let self_r: Vec<f64> = (0..n).map(|k| r[k * n + k]).collect();

    let update_row = |(i, a_row): (usize, &mut [f64])| {
        let r_row = &r[i * n..(i + 1) * n];
        for k in 0..n {
            let new = if k == i {
                positive_sums[k]
            } else {
                (self_r[k] + positive_sums[k] - r_row[k].max(0.0)).min(0.0)
            };
            a_row[k] = damp(a_row[k], new, damping);
        }
    };
    if n >= PARALLEL_MIN_ROWS {
        state
            .availabilities
            .par_chunks_mut(n)
            .enumerate()
            .for_each(update_row);
    } else {
        state.availabilities.chunks_mut(n).enumerate().for_each(update_row);
    }
    Ok(())
}

/// Partition decoded from a message state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// Cluster index per object; `exemplars[labels[i]]` is object i's exemplar.
    pub labels: Vec<usize>,
    /// Exemplar object indices, ascending.
    pub exemplars: Vec<usize>,
}

/// Indices whose `a + r` row maximum is on the diagonal. Falls back to the
/// single best self-score when no object elects itself.
fn decode_exemplars(state: &MessageState) -> Vec<usize> {
    let mut exemplars = elected_exemplars(state);
    if exemplars.is_empty() && state.n > 0 {
        exemplars.push(best_self_score(state));
    }
    exemplars
}

fn best_self_score(state: &MessageState) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut best_k = 0;
    for k in 0..state.n {
        let v = state.a(k, k) + state.r(k, k);
        if v > best {
            best = v;
            best_k = k;
        }
    }
    best_k
}

fn elected_exemplars(state: &MessageState) -> Vec<usize> {
    let n = state.n;
    (0..n)
        .filter(|&i| {
            let mut best = f64::NEG_INFINITY;
            let mut best_k = 0;
            for k in 0..n {
                let v = state.a(i, k) + state.r(i, k);
                if v > best {
                    best = v;
                    best_k = k;
                }
            }
            best_k == i
        })
        .collect()
}

fn assign_to_exemplars(s: &SimilarityMatrix, exemplars: Vec<usize>) -> Assignment {
    let n = s.n();
    let mut labels = vec![0usize; n];
    for (i, label) in labels.iter_mut().enumerate() {
        if let Ok(pos) = exemplars.binary_search(&i) {
            *label = pos;
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for (pos, &e) in exemplars.iter().enumerate() {
            let v = s.get(i, e);
            if v > best {
                best = v;
                *label = pos;
            }
        }
    }
    Assignment { labels, exemplars }
}

/// Decodes exemplars from `a + r` and assigns every other object to its most
/// similar exemplar. Ties go to the lowest index.
pub fn extract_assignment(s: &SimilarityMatrix, state: &MessageState) -> Result<Assignment> {
    state.check(s)?;
    Ok(assign_to_exemplars(s, decode_exemplars(state)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub labels: Vec<usize>,
    pub exemplars: Vec<usize>,
    pub iterations_run: usize,
    pub converged: bool,
}

impl ClusteringResult {
    pub fn cluster_count(&self) -> usize {
        self.exemplars.len()
    }

    fn singleton() -> Self {
        ClusteringResult {
            labels: vec![0],
            exemplars: vec![0],
            iterations_run: 0,
            converged: true,
        }
    }
}

/// Conventional AP from all-zero messages.
pub fn run_ap(s: &SimilarityMatrix, config: &ApConfig) -> Result<ClusteringResult> {
    let mut state = MessageState::zeros(s.n());
    run_from(s, &mut state, config)
}

/// Runs the message loop starting from `state`, which is left holding the
/// final messages.
pub fn run_from(
    s: &SimilarityMatrix,
    state: &mut MessageState,
    config: &ApConfig,
) -> Result<ClusteringResult> {
    config.validate()?;
    state.check(s)?;
    if s.n() == 1 {
        return Ok(ClusteringResult::singleton());
    }

    let jittered;
    let s = match config.jitter_seed {
        Some(seed) => {
            jittered = jitter(s, seed);
            &jittered
        }
        None => s,
    };

    let mut previous: Option<Vec<usize>> = None;
    let mut unchanged = 0usize;
    let mut converged = false;
    let mut iterations_run = 0;
    for it in 1..=config.max_iterations {
        update_responsibilities(s, state, config.damping)?;
        update_availabilities(state, config.damping)?;
        iterations_run = it;

        // A run where nobody elects itself is never converged.
        let exemplars = elected_exemplars(state);
        if previous.as_ref() == Some(&exemplars) {
            unchanged += 1;
        } else {
            unchanged = 1;
            previous = Some(exemplars);
        }
        // As in the scikit-learn loop, the window is only inspected once it
        // has been filled after the first sweep.
        if it > config.convergence_window
            && unchanged >= config.convergence_window
            && previous.as_ref().is_some_and(|e| !e.is_empty())
        {
            converged = true;
            break;
        }
    }

    let exemplars = decode_exemplars(state);
    let Assignment { labels, exemplars } = assign_to_exemplars(s, exemplars);
    Ok(ClusteringResult {
        labels,
        exemplars,
        iterations_run,
        converged,
    })
}

fn jitter(s: &SimilarityMatrix, seed: u64) -> SimilarityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = s.clone();
    for v in out.values_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += (f64::EPSILON * *v + f64::MIN_POSITIVE * 100.0) * z;
    }
    out
}
