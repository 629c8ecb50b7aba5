//! Affinity Propagation and two incremental variants over arriving batches:
//! IAPNA, which warm-starts messages from nearest neighbours, and APP,
//! which folds earlier clusters into centroids and prunes stale ones.
//!
//! ```
//! use apstream::{build_similarity_matrix, run_ap, ApConfig, FeatureVector, PreferencePolicy};
//!
//! let points: Vec<FeatureVector> = [[0.0, 0.0], [0.2, 0.0], [0.0, 0.2], [5.0, 5.0], [5.2, 5.0], [5.0, 5.2]]
//!     .iter()
//!     .map(|p| FeatureVector::new(p.to_vec()).unwrap())
//!     .collect();
//! let s = build_similarity_matrix(&points, PreferencePolicy::Fixed(-2.0)).unwrap();
//! let result = run_ap(&s, &ApConfig::default()).unwrap();
//! assert_eq!(result.labels[0], result.labels[2]);
//! assert_ne!(result.labels[0], result.labels[3]);
//! ```

pub mod ap;
pub mod app;
pub mod data;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod iapna;
pub mod metrics;

pub use ap::{
    extract_assignment, run_ap, run_from, update_availabilities, update_responsibilities, ApConfig,
    Assignment, ClusteringResult, MessageState, EMPTY_MAX_SENTINEL,
};
pub use app::{
    classify_stratification, pack, split, unpack_and_update, AppState, Cluster, ClusterId, EventKind,
    ObjectId, PruningThreshold, StepOutcome, StratificationEvent, Stratum,
};
pub use data::{
    load_csv, normalize_cumulative, subset_top_categories, uniform_schedule, variable_schedule,
    ArrivalSchedule, Dataset, DatasetSchema, Normalization, Schema, SubsetSize,
};
pub use error::{Error, Result};
pub use geometry::{
    build_similarity_matrix, build_similarity_matrix_with, negative_euclidean, negative_squared_euclidean,
    FeatureVector, PreferencePolicy, Similarity, SimilarityMatrix, SimilarityMeasure,
};
pub use harness::{run_experiment, Algorithm, ExperimentConfig, Setting, StepRecord};
pub use iapna::{nearest_neighbor, IapnaState};
pub use metrics::{cluster_count, nmi, purity, LabeledPartition};
