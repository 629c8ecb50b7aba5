//! External clustering-quality measures against gold categories.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use crate::error::{Error, Result};

/// Predicted cluster ids paired with gold category ids, one per object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPartition<P = usize, G = usize> {
    predicted: Vec<P>,
    gold: Vec<G>,
}

impl<P: Copy + Eq + Hash, G: Copy + Eq + Hash> LabeledPartition<P, G> {
    pub fn new(predicted: Vec<P>, gold: Vec<G>) -> Result<Self> {
        if predicted.is_empty() {
            return Err(Error::invalid("partition must contain at least one object"));
        }
        if predicted.len() != gold.len() {
            return Err(Error::invalid(format!(
                "{} predicted labels but {} gold labels",
                predicted.len(),
                gold.len()
            )));
        }
        Ok(LabeledPartition { predicted, gold })
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }

    pub fn predicted(&self) -> &[P] {
        &self.predicted
    }

    pub fn gold(&self) -> &[G] {
        &self.gold
    }

    /// Sparse contingency table plus row (cluster) and column (category)
    /// marginals.
    fn contingency(&self) -> Contingency {
        let mut cluster_ix: HashMap<P, usize> = HashMap::new();
        let mut category_ix: HashMap<G, usize> = HashMap::new();
        let mut cells: HashMap<(usize, usize), usize> = HashMap::new();
        for (&p, &g) in self.predicted.iter().zip(&self.gold) {
            let next = cluster_ix.len();
            let row = *cluster_ix.entry(p).or_insert(next);
            let next = category_ix.len();
            let col = *category_ix.entry(g).or_insert(next);
            *cells.entry((row, col)).or_default() += 1;
        }
        let mut rows = vec![0usize; cluster_ix.len()];
        let mut cols = vec![0usize; category_ix.len()];
        for (&(r, c), &count) in &cells {
            rows[r] += count;
            cols[c] += count;
        }
        // Fixed order so floating-point sums do not depend on hash order.
        let mut cells: Vec<((usize, usize), usize)> = cells.into_iter().collect();
        cells.sort_unstable();
        Contingency { cells, rows, cols }
    }
}

struct Contingency {
    cells: Vec<((usize, usize), usize)>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

fn entropy(counts: &[usize], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Fraction of objects belonging to the majority category of their cluster.
pub fn purity<P, G>(p: &LabeledPartition<P, G>) -> f64
where
    P: Copy + Eq + Hash,
    G: Copy + Eq + Hash,
{
    let table = p.contingency();
    let mut best = vec![0usize; table.rows.len()];
    for &((r, _), count) in &table.cells {
        best[r] = best[r].max(count);
    }
    best.iter().sum::<usize>() as f64 / p.len() as f64
}

/// Mutual information normalized by the mean of the two entropies
/// (natural log). Two single-block partitions score 1.
pub fn nmi<P, G>(p: &LabeledPartition<P, G>) -> f64
where
    P: Copy + Eq + Hash,
    G: Copy + Eq + Hash,
{
    let table = p.contingency();
    let n = p.len() as f64;
    let h_clusters = entropy(&table.rows, n);
    let h_categories = entropy(&table.cols, n);
    if h_clusters == 0.0 && h_categories == 0.0 {
        return 1.0;
    }
    let mutual: f64 = table
        .cells
        .iter()
        .map(|&((r, c), count)| {
            let joint = count as f64 / n;
            let independent = (table.rows[r] as f64 / n) * (table.cols[c] as f64 / n);
            joint * (joint / independent).ln()
        })
        .sum();
    if mutual <= 0.0 {
        return 0.0;
    }
    (mutual / ((h_clusters + h_categories) / 2.0)).clamp(0.0, 1.0)
}

/// Number of distinct predicted ids.
pub fn cluster_count<P: Eq + Hash>(predicted: &[P]) -> usize {
    predicted.iter().collect::<HashSet<_>>().len()
}
