//! On-disk result files.
//!
//! `records.csv`, `labels.csv`, `events.jsonl` and `schedules.jsonl` depend
//! only on (dataset, config, seeds) and are byte-identical across reruns.
//! Wall-clock figures go to `timings.csv` and into the medians.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{aggregate_median, Algorithm, ExperimentOutput, MedianRow, ScheduleRecord, StepRecord};
use crate::error::{Error, Result};

pub const RECORDS_FILE: &str = "records.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const MEDIANS_FILE: &str = "medians.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SCHEDULES_FILE: &str = "schedules.jsonl";
pub const SERIES_FILE: &str = "series.json";
const FAILURES_FILE: &str = "failures.jsonl";

/// Paths written by [`export`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportPaths {
    pub records: PathBuf,
    pub timings: PathBuf,
    pub medians: PathBuf,
    pub labels: PathBuf,
    pub events: PathBuf,
    pub schedules: PathBuf,
    pub series: PathBuf,
    pub failures: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct RecordRow {
    seed: u64,
    algorithm: Algorithm,
    step: usize,
    objects: usize,
    purity: f64,
    nmi: f64,
    clusters: usize,
    iterations: usize,
    converged: bool,
    matrix_size: usize,
    memory_mb: f64,
}

#[derive(Serialize, Deserialize)]
struct TimingRow {
    seed: u64,
    algorithm: Algorithm,
    step: usize,
    ct_seconds: f64,
}

#[derive(Serialize, Default)]
struct Series {
    steps: Vec<usize>,
    purity: Vec<f64>,
    nmi: Vec<f64>,
    clusters: Vec<f64>,
    iterations: Vec<f64>,
    ct_seconds: Vec<f64>,
    memory_mb: Vec<f64>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes medians with step 0 excluded.
pub fn write_medians(path: &Path, rows: &[MedianRow]) -> Result<()> {
    write_csv(path, rows.iter().filter(|r| r.step > 0))
}

/// Writes every result file into `dir`, creating it if needed.
pub fn export(out: &ExperimentOutput, dir: &Path) -> Result<ExportPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = ExportPaths {
        records: dir.join(RECORDS_FILE),
        timings: dir.join(TIMINGS_FILE),
        medians: dir.join(MEDIANS_FILE),
        labels: dir.join(LABELS_FILE),
        events: dir.join(EVENTS_FILE),
        schedules: dir.join(SCHEDULES_FILE),
        series: dir.join(SERIES_FILE),
        failures: (!out.failures.is_empty()).then(|| dir.join(FAILURES_FILE)),
    };

    write_csv(
        &paths.records,
        out.records.iter().map(|r| RecordRow {
            seed: r.seed,
            algorithm: r.algorithm,
            step: r.step,
            objects: r.objects,
            purity: r.purity,
            nmi: r.nmi,
            clusters: r.clusters,
            iterations: r.iterations,
            converged: r.converged,
            matrix_size: r.matrix_size,
            memory_mb: r.memory_mb,
        }),
    )?;
    write_csv(
        &paths.timings,
        out.records.iter().map(|r| TimingRow {
            seed: r.seed,
            algorithm: r.algorithm,
            step: r.step,
            ct_seconds: r.ct_seconds,
        }),
    )?;
    write_csv(&paths.labels, &out.labels)?;
    write_jsonl(&paths.events, &out.events)?;
    write_jsonl(&paths.schedules, &out.schedules)?;
    if let Some(path) = &paths.failures {
        write_jsonl(path, &out.failures)?;
    }

    let medians = aggregate_median(&out.records);
    write_medians(&paths.medians, &medians)?;

    let mut series: BTreeMap<Algorithm, Series> = BTreeMap::new();
    for m in &medians {
        let s = series.entry(m.algorithm).or_default();
        s.steps.push(m.step);
        s.purity.push(m.purity);
        s.nmi.push(m.nmi);
        s.clusters.push(m.clusters);
        s.iterations.push(m.iterations);
        s.ct_seconds.push(m.ct_seconds);
        s.memory_mb.push(m.memory_mb);
    }
    let mut w = create(&paths.series)?;
    serde_json::to_writer_pretty(&mut w, &series)?;
    w.flush().map_err(|e| Error::io(&paths.series, e))?;

    Ok(paths)
}

/// Reads `records.csv` from `dir`, joining `timings.csv` when present
/// (missing timings read as 0).
pub fn read_records(dir: &Path) -> Result<Vec<StepRecord>> {
    let path = dir.join(RECORDS_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut timings: HashMap<(u64, Algorithm, usize), f64> = HashMap::new();
    let timing_path = dir.join(TIMINGS_FILE);
    if timing_path.exists() {
        let file = File::open(&timing_path).map_err(|e| Error::io(&timing_path, e))?;
        for row in csv::Reader::from_reader(file).deserialize::<TimingRow>() {
            let row = row?;
            timings.insert((row.seed, row.algorithm, row.step), row.ct_seconds);
        }
    }
    csv::Reader::from_reader(file)
        .deserialize::<RecordRow>()
        .map(|row| {
            let r = row?;
            Ok(StepRecord {
                ct_seconds: timings.get(&(r.seed, r.algorithm, r.step)).copied().unwrap_or(0.0),
                seed: r.seed,
                algorithm: r.algorithm,
                step: r.step,
                objects: r.objects,
                purity: r.purity,
                nmi: r.nmi,
                clusters: r.clusters,
                iterations: r.iterations,
                converged: r.converged,
                matrix_size: r.matrix_size,
                memory_mb: r.memory_mb,
            })
        })
        .collect()
}

/// Reads a `schedules.jsonl` file.
pub fn read_schedules(path: &Path) -> Result<Vec<ScheduleRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}
