//! Fixtures shared by the criterion benches.

use apstream::data::gaussian_blobs;
use apstream::{ArrivalSchedule, Dataset, FeatureVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `k` well separated blobs of `per_blob` points in `dim` dimensions.
pub fn blobs(k: usize, per_blob: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_blobs(&vec![per_blob; k], dim, 6.0, 0.6, &mut rng).expect("valid blob parameters")
}

/// Shuffled stream of `ds`: `first` objects, then `steps - 1` batches of `step`.
pub fn stream(ds: &Dataset, first: usize, step: usize, steps: usize, seed: u64) -> ArrivalSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    apstream::uniform_schedule(ds.len(), first, step, steps, &mut rng).expect("schedule fits dataset")
}

pub fn batch(ds: &Dataset, indices: &[usize]) -> Vec<FeatureVector> {
    indices.iter().map(|&i| ds.objects[i].clone()).collect()
}
