//! Seeded benchmark runs of AP, IAPNA and APP over arrival schedules.
//!
//! Every seed produces one schedule that is replayed for each requested
//! algorithm. At each step the objects that have arrived so far are
//! normalized together, the algorithm is fed the new batch, and the
//! retained objects are scored against their gold categories.

mod export;

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ap::{run_ap, ApConfig};
use crate::app::{AppState, ObjectId, PruningThreshold, StratificationEvent};
use crate::data::{
    default_q, normalize_cumulative, uniform_schedule, variable_schedule, ArrivalSchedule, Dataset,
    Normalization, SchemaAssignment, VariableScheduleParams,
};
use crate::error::{Error, Result};
use crate::geometry::{build_similarity_matrix_with, FeatureVector, Similarity};
use crate::iapna::IapnaState;
use crate::metrics::{cluster_count, nmi, purity, LabeledPartition};

pub use export::{read_schedules, 
    export, read_records, write_medians, ExportPaths, EVENTS_FILE, LABELS_FILE, MEDIANS_FILE,
    RECORDS_FILE, SCHEDULES_FILE, SERIES_FILE, TIMINGS_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ap,
    Iapna,
    App,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ap => "ap",
            Algorithm::Iapna => "iapna",
            Algorithm::App => "app",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ap" => Ok(Algorithm::Ap),
            "iapna" => Ok(Algorithm::Iapna),
            "app" => Ok(Algorithm::App),
            other => Err(Error::invalid(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// Fixed batch sizes, category-agnostic.
    #[default]
    Uniform,
    /// Per-category growing/shrinking/stable arrivals with a minimum batch q.
    Variable,
    /// Variable arrivals with the q minimum disabled.
    Ablation,
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(Setting::Uniform),
            "variable" => Ok(Setting::Variable),
            "ablation" => Ok(Setting::Ablation),
            other => Err(Error::invalid(format!("unknown setting `{other}`"))),
        }
    }
}

/// Parameters of an experiment over an in-memory dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithms: Vec<Algorithm>,
    pub setting: Setting,
    pub ap: ApConfig,
    pub th_gamma: PruningThreshold,
    pub steps: usize,
    /// Uniform setting: objects at step 0. Defaults to everything not
    /// consumed by the later batches.
    pub first_n: Option<usize>,
    /// Uniform setting: objects per later step.
    pub step_n: usize,
    /// Variable setting: minimum per active category; defaults to
    /// `default_q(n, categories)`.
    pub q: Option<usize>,
    pub max_schedule_retries: usize,
    pub normalization: Normalization,
    pub similarity: Similarity,
    pub seeds: Vec<u64>,
    /// Run seeds on the rayon pool.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithms: vec![Algorithm::Ap, Algorithm::Iapna, Algorithm::App],
            setting: Setting::Uniform,
            ap: ApConfig::default(),
            th_gamma: PruningThreshold::default(),
            steps: 6,
            first_n: None,
            step_n: 10,
            q: None,
            max_schedule_retries: 1000,
            normalization: Normalization::MinMax,
            similarity: Similarity::NegativeEuclidean,
            seeds: (0..100).collect(),
            parallel: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.ap.validate()?;
        if self.algorithms.is_empty() {
            return Err(Error::invalid("at least one algorithm is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seed list must not be empty"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be positive"));
        }
        Ok(())
    }

    /// The q actually used for `ds` under the configured setting.
    pub fn effective_q(&self, ds: &Dataset) -> usize {
        match self.setting {
            Setting::Ablation => 0,
            _ => self.q.unwrap_or_else(|| default_q(ds.len(), ds.category_count())),
        }
    }

    /// Schedule for one seed; a pure function of (dataset, config, seed).
    pub fn schedule_for(&self, ds: &Dataset, seed: u64) -> Result<ScheduleRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self.setting {
            Setting::Uniform => {
                let later = (self.steps - 1) * self.step_n;
                let first_n = match self.first_n {
                    Some(n) => n,
                    None => ds.len().checked_sub(later).filter(|&n| n > 0).ok_or_else(|| {
                        Error::invalid(format!(
                            "{} objects cannot fill {} later batches of {}",
                            ds.len(),
                            self.steps - 1,
                            self.step_n
                        ))
                    })?,
                };
                let schedule = uniform_schedule(ds.len(), first_n, self.step_n, self.steps, &mut rng)?;
                Ok(ScheduleRecord {
                    seed,
                    setting: self.setting,
                    q: None,
                    batches: schedule.batches,
                    schemas: None,
                })
            }
            Setting::Variable | Setting::Ablation => {
                let q = self.effective_q(ds);
                let params = VariableScheduleParams {
                    q,
                    steps: self.steps,
                    max_retries: self.max_schedule_retries,
                };
                let (schedule, schemas) = variable_schedule(&ds.gold, params, &mut rng)?;
                Ok(ScheduleRecord {
                    seed,
                    setting: self.setting,
                    q: Some(q),
                    batches: schedule.batches,
                    schemas: Some(schemas),
                })
            }
        }
    }
}

/// A schedule as stored for replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub seed: u64,
    pub setting: Setting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    pub batches: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schemas: Option<SchemaAssignment>,
}

impl ScheduleRecord {
    pub fn schedule(&self) -> ArrivalSchedule {
        ArrivalSchedule {
            batches: self.batches.clone(),
        }
    }
}

/// Metrics of one algorithm at one time-step of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub step: usize,
    /// Objects evaluated (all retained objects).
    pub objects: usize,
    pub purity: f64,
    pub nmi: f64,
    pub clusters: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Dimension of the similarity matrix the step's AP run worked on.
    pub matrix_size: usize,
    /// Similarity plus message matrices at 8 bytes per entry, in MiB.
    pub memory_mb: f64,
    /// Wall-clock of the algorithm call.
    pub ct_seconds: f64,
}

/// Predicted label of one evaluated object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub step: usize,
    pub object: usize,
    pub predicted: u64,
    pub gold: usize,
}

/// An APP stratification event tagged with its run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRow {
    pub seed: u64,
    pub algorithm: Algorithm,
    #[serde(flatten)]
    pub event: StratificationEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<StepRecord>,
    pub labels: Vec<LabelRow>,
    pub events: Vec<EventRow>,
    pub schedules: Vec<ScheduleRecord>,
    pub failures: Vec<SeedFailure>,
}

/// `3 · n² · 8` bytes in MiB.
pub fn matrix_footprint_mb(n: usize) -> f64 {
    (3 * n * n * 8) as f64 / (1024.0 * 1024.0)
}

/// Generates one schedule per seed and runs every configured algorithm on it.
/// A seed whose schedule cannot be generated is reported in `failures`.
pub fn run_experiment(config: &ExperimentConfig, ds: &Dataset) -> Result<ExperimentOutput> {
    config.validate()?;
    let schedules: Vec<std::result::Result<ScheduleRecord, SeedFailure>> = config
        .seeds
        .iter()
        .map(|&seed| {
            config.schedule_for(ds, seed).map_err(|e| SeedFailure {
                seed,
                message: e.to_string(),
            })
        })
        .collect();
    run_schedules(config, ds, schedules)
}

/// Replays stored schedules for the configured seeds.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    ds: &Dataset,
    stored: &[ScheduleRecord],
) -> Result<ExperimentOutput> {
    config.validate()?;
    let by_seed: HashMap<u64, &ScheduleRecord> = stored.iter().map(|s| (s.seed, s)).collect();
    let schedules = config
        .seeds
        .iter()
        .map(|&seed| {
            let record = by_seed.get(&seed).ok_or_else(|| SeedFailure {
                seed,
                message: "no stored schedule for this seed".into(),
            })?;
            record.schedule().check(ds.len()).map_err(|e| SeedFailure {
                seed,
                message: e.to_string(),
            })?;
            Ok((*record).clone())
        })
        .collect();
    run_schedules(config, ds, schedules)
}

struct SeedOutput {
    records: Vec<StepRecord>,
    labels: Vec<LabelRow>,
    events: Vec<EventRow>,
}

fn run_schedules(
    config: &ExperimentConfig,
    ds: &Dataset,
    schedules: Vec<std::result::Result<ScheduleRecord, SeedFailure>>,
) -> Result<ExperimentOutput> {
    let run_one = |entry: &std::result::Result<ScheduleRecord, SeedFailure>| match entry {
        Ok(schedule) => run_seed(config, ds, schedule).map_err(|e| SeedFailure {
            seed: schedule.seed,
            message: e.to_string(),
        }),
        Err(f) => Err(f.clone()),
    };
    let results: Vec<std::result::Result<SeedOutput, SeedFailure>> = if config.parallel {
        schedules.par_iter().map(run_one).collect()
    } else {
        schedules.iter().map(run_one).collect()
    };

    let mut out = ExperimentOutput::default();
    for (entry, result) in schedules.into_iter().zip(results) {
        match result {
            Ok(seed_out) => {
                out.records.extend(seed_out.records);
                out.labels.extend(seed_out.labels);
                out.events.extend(seed_out.events);
                out.schedules.push(entry.expect("successful runs have schedules"));
            }
            Err(failure) => out.failures.push(failure),
        }
    }
    Ok(out)
}

enum Runner {
    Ap,
    Iapna(IapnaState),
    App(AppState),
}

fn run_seed(config: &ExperimentConfig, ds: &Dataset, schedule: &ScheduleRecord) -> Result<SeedOutput> {
    let mut out = SeedOutput {
        records: Vec::new(),
        labels: Vec::new(),
        events: Vec::new(),
    };
    for &algorithm in &config.algorithms {
        let mut runner = match algorithm {
            Algorithm::Ap => Runner::Ap,
            Algorithm::Iapna => Runner::Iapna(IapnaState::with_measure(config.similarity)),
            Algorithm::App => Runner::App(AppState::with_measure(config.similarity)),
        };
        let mut arrived: Vec<usize> = Vec::new();
        let mut position: HashMap<usize, usize> = HashMap::new();

        for (step, batch) in schedule.batches.iter().enumerate() {
            if batch.is_empty() {
                return Err(Error::invalid(format!("seed {}: step {step} has no arrivals", schedule.seed)));
            }
            let old = arrived.len();
            for &i in batch {
                position.insert(i, arrived.len());
                arrived.push(i);
            }
            let raw: Vec<FeatureVector> = arrived.iter().map(|&i| ds.objects[i].clone()).collect();
            let normalized = normalize_cumulative(&raw, config.normalization);

            let started = Instant::now();
            let (evaluated, predicted, iterations, converged, matrix_size): (Vec<usize>, Vec<u64>, usize, bool, usize) =
                match &mut runner {
                    Runner::Ap => {
                        let s = build_similarity_matrix_with(&normalized, &config.similarity, config.ap.preference)?;
                        let res = run_ap(&s, &config.ap)?;
                        let predicted = res.labels.iter().map(|&l| res.exemplars[l] as u64).collect();
                        (arrived.clone(), predicted, res.iterations_run, res.converged, arrived.len())
                    }
                    Runner::Iapna(state) => {
                        if old > 0 {
                            state.replace_objects(normalized[..old].to_vec())?;
                        }
                        let res = state.step(normalized[old..].to_vec(), &config.ap)?;
                        let predicted = res.labels.iter().map(|&l| res.exemplars[l] as u64).collect();
                        (arrived.clone(), predicted, res.iterations_run, res.converged, arrived.len())
                    }
                    Runner::App(state) => {
                        state.revectorize(|id: ObjectId, _| normalized[position[&id]].clone())?;
                        let new: Vec<(ObjectId, FeatureVector)> =
                            batch.iter().map(|&i| (i, normalized[position[&i]].clone())).collect();
                        let outcome = state.step_with_ids(new, &config.ap, config.th_gamma)?;
                        out.events.extend(outcome.events.into_iter().map(|event| EventRow {
                            seed: schedule.seed,
                            algorithm,
                            event,
                        }));
                        let (ids, clusters): (Vec<usize>, Vec<u64>) = state.labels().into_iter().unzip();
                        (
                            ids,
                            clusters,
                            outcome.ap_result.iterations_run,
                            outcome.ap_result.converged,
                            outcome.ap_size,
                        )
                    }
                };
            let ct_seconds = started.elapsed().as_secs_f64();

            let gold: Vec<usize> = evaluated.iter().map(|&i| ds.gold[i]).collect();
            let partition = LabeledPartition::new(predicted.clone(), gold.clone())?;
            out.records.push(StepRecord {
                seed: schedule.seed,
                algorithm,
                step,
                objects: evaluated.len(),
                purity: purity(&partition),
                nmi: nmi(&partition),
                clusters: cluster_count(&predicted),
                iterations,
                converged,
                matrix_size,
                memory_mb: matrix_footprint_mb(matrix_size),
                ct_seconds,
            });
            out.labels.extend(evaluated.iter().zip(predicted).zip(gold).map(|((&object, predicted), gold)| {
                LabelRow {
                    seed: schedule.seed,
                    algorithm,
                    step,
                    object,
                    predicted,
                    gold,
                }
            }));
        }
    }
    Ok(out)
}

/// Median over seeds of every metric at one (algorithm, step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub algorithm: Algorithm,
    pub step: usize,
    pub purity: f64,
    pub nmi: f64,
    pub clusters: f64,
    pub iterations: f64,
    pub ct_seconds: f64,
    pub memory_mb: f64,
    pub seeds: usize,
}

/// Median of a non-empty sample; even counts average the central pair.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    Some(crate::geometry::median_in_place(&mut v))
}

/// Per-(algorithm, step) medians over all records, ascending by algorithm
/// then step. Step 0 is included; callers drop it where needed.
pub fn aggregate_median(records: &[StepRecord]) -> Vec<MedianRow> {
    let mut groups: BTreeMap<(Algorithm, usize), Vec<&StepRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.algorithm, r.step)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((algorithm, step), rows)| {
            let col = |f: fn(&StepRecord) -> f64| {
                median(&rows.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("groups are non-empty")
            };
            MedianRow {
                algorithm,
                step,
                purity: col(|r| r.purity),
                nmi: col(|r| r.nmi),
                clusters: col(|r| r.clusters as f64),
                iterations: col(|r| r.iterations as f64),
                ct_seconds: col(|r| r.ct_seconds),
                memory_mb: col(|r| r.memory_mb),
                seeds: rows.len(),
            }
        })
        .collect()
}
