//! Datasets, cumulative normalization and arrival schedules.

mod schedule;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FeatureVector;

pub use schedule::{
    audit_variable_schedule, default_q, uniform_schedule, variable_schedule, ArrivalSchedule,
    Schema, SchemaAssignment, VariableScheduleParams, Violation,
};

/// Labeled objects: feature vectors plus one gold category per object.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub objects: Vec<FeatureVector>,
    /// Index into `categories` for every object.
    pub gold: Vec<usize>,
    pub categories: Vec<String>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        objects: Vec<FeatureVector>,
        gold: Vec<usize>,
        categories: Vec<String>,
    ) -> Result<Self> {
        if objects.len() != gold.len() {
            return Err(Error::invalid(format!(
                "{} objects but {} gold labels",
                objects.len(),
                gold.len()
            )));
        }
        if let Some(first) = objects.first() {
            if let Some(bad) = objects.iter().position(|v| v.dim() != first.dim()) {
                return Err(Error::invalid(format!(
                    "object {bad} has dimension {} instead of {}",
                    objects[bad].dim(),
                    first.dim()
                )));
            }
        }
        let used: BTreeSet<usize> = gold.iter().copied().collect();
        if used.iter().any(|&c| c >= categories.len()) {
            return Err(Error::invalid("gold label refers to an unknown category"));
        }
        if used.len() != categories.len() {
            return Err(Error::invalid("every category needs at least one object"));
        }
        Ok(Dataset {
            name: name.into(),
            objects,
            gold,
            categories,
        })
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.objects.first().map_or(0, |v| v.dim())
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    /// Object count per category, indexed like `categories`.
    pub fn category_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.categories.len()];
        for &g in &self.gold {
            sizes[g] += 1;
        }
        sizes
    }

    /// Keeps the objects at `indices`, in that order, compacting category ids.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("object index {bad} out of range")));
        }
        let kept: BTreeSet<usize> = indices.iter().map(|&i| self.gold[i]).collect();
        let remap: BTreeMap<usize, usize> = kept.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        Dataset::new(
            self.name.clone(),
            indices.iter().map(|&i| self.objects[i].clone()).collect(),
            indices.iter().map(|&i| remap[&self.gold[i]]).collect(),
            kept.iter().map(|&c| self.categories[c].clone()).collect(),
        )
    }
}

/// Sidecar description of a CSV dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSchema {
    /// First row holds column names. On by default.
    pub header: bool,
    /// Zero-based feature columns to one-hot encode.
    pub categorical: Vec<usize>,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        DatasetSchema {
            header: true,
            categorical: Vec::new(),
        }
    }
}

impl DatasetSchema {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Reads feature columns followed by a trailing category column.
pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let parse_err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(0, format!("{other:?}")),
        })?;

    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(i + 1, e.to_string()))?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if schema.header && rows.is_empty() && i == 0 {
            continue;
        }
        if record.iter().all(str::is_empty) {
            continue;
        }
        rows.push((line, record));
    }
    let Some((_, first)) = rows.first() else {
        return Err(parse_err(1, "file contains no data rows".into()));
    };
    let width = first.len();
    if width < 2 {
        return Err(parse_err(rows[0].0, "need at least one feature column and a label column".into()));
    }
    let n_features = width - 1;
    if let Some(&bad) = schema.categorical.iter().find(|&&c| c >= n_features) {
        return Err(Error::invalid(format!("categorical column {bad} is not a feature column")));
    }
    for (line, record) in &rows {
        if record.len() != width {
            return Err(parse_err(*line, format!("expected {width} fields, found {}", record.len())));
        }
    }

    let categorical: BTreeSet<usize> = schema.categorical.iter().copied().collect();
    let levels: BTreeMap<usize, Vec<String>> = categorical
        .iter()
        .map(|&col| {
            let distinct: BTreeSet<&str> = rows.iter().map(|(_, r)| &r[col]).collect();
            (col, distinct.into_iter().map(String::from).collect())
        })
        .collect();
    let label_names: BTreeSet<&str> = rows.iter().map(|(_, r)| &r[n_features]).collect();
    let categories: Vec<String> = label_names.into_iter().map(String::from).collect();

    let mut objects = Vec::with_capacity(rows.len());
    let mut gold = Vec::with_capacity(rows.len());
    for (line, record) in &rows {
        let mut values = Vec::with_capacity(n_features);
        for col in 0..n_features {
            let cell = &record[col];
            if let Some(levels) = levels.get(&col) {
                values.extend(levels.iter().map(|l| if l == cell { 1.0 } else { 0.0 }));
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    parse_err(*line, format!("column {col}: `{cell}` is not numeric"))
                })?;
                if !v.is_finite() {
                    return Err(parse_err(*line, format!("column {col}: `{cell}` is not finite")));
                }
                values.push(v);
            }
        }
        objects.push(FeatureVector::new(values).map_err(|e| parse_err(*line, e.to_string()))?);
        gold.push(categories.binary_search(&record[n_features].to_string()).expect("label collected above"));
    }

    let name = path
        .file_stem()
        .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, objects, gold, categories)
}

/// How many objects `subset_top_categories` keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetSize {
    /// Uniform sample of this many objects from the retained categories.
    Total(usize),
    /// Uniform sample of this many objects from each retained category.
    PerCategory(usize),
}

/// Keeps the `top_k` most populous categories (ties to the lower category
/// id) and samples objects from them without replacement. Retained objects
/// keep their original relative order.
pub fn subset_top_categories<R: Rng + ?Sized>(
    ds: &Dataset,
    top_k: usize,
    size: SubsetSize,
    rng: &mut R,
) -> Result<Dataset> {
    if top_k == 0 || top_k > ds.category_count() {
        return Err(Error::invalid(format!(
            "cannot keep {top_k} of {} categories",
            ds.category_count()
        )));
    }
    let sizes = ds.category_sizes();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let kept: BTreeSet<usize> = order[..top_k].iter().copied().collect();

    let mut chosen = Vec::new();
    match size {
        SubsetSize::Total(total) => {
            let pool: Vec<usize> = (0..ds.len()).filter(|&i| kept.contains(&ds.gold[i])).collect();
            if total > pool.len() {
                return Err(Error::invalid(format!(
                    "requested {total} objects but only {} are available",
                    pool.len()
                )));
            }
            chosen.extend(sample(rng, pool.len(), total).into_iter().map(|i| pool[i]));
        }
        SubsetSize::PerCategory(per) => {
            for &c in &kept {
                let pool: Vec<usize> = (0..ds.len()).filter(|&i| ds.gold[i] == c).collect();
                if per > pool.len() {
                    return Err(Error::invalid(format!(
                        "category `{}` has {} objects, {per} requested",
                        ds.categories[c],
                        pool.len()
                    )));
                }
                chosen.extend(sample(rng, pool.len(), per).into_iter().map(|i| pool[i]));
            }
        }
    }
    chosen.sort_unstable();
    ds.select(&chosen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Per-feature scaling to [0, 1]; constant features map to 0.
    #[default]
    MinMax,
    /// Per-feature standardization; constant features map to 0.
    ZScore,
    None,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-max" | "minmax" => Ok(Normalization::MinMax),
            "z-score" | "zscore" => Ok(Normalization::ZScore),
            "none" => Ok(Normalization::None),
            other => Err(Error::invalid(format!("unknown normalization `{other}`"))),
        }
    }
}

/// Normalizes exactly the given objects, with statistics computed over them.
pub fn normalize_cumulative(objects: &[FeatureVector], method: Normalization) -> Vec<FeatureVector> {
    let Some(first) = objects.first() else {
        return Vec::new();
    };
    let d = first.dim();
    let n = objects.len() as f64;
    let column = |j: usize| objects.iter().map(move |v| v[j]);
    let transforms: Vec<(f64, f64)> = (0..d)
        .map(|j| match method {
            Normalization::None => (0.0, 1.0),
            Normalization::MinMax => {
                let lo = column(j).fold(f64::INFINITY, f64::min);
                let hi = column(j).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi - lo)
            }
            Normalization::ZScore => {
                let mean = column(j).sum::<f64>() / n;
                let var = column(j).map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            }
        })
        .collect();
    objects
        .iter()
        .map(|v| {
            let values = v
                .iter()
                .zip(&transforms)
                .map(|(&x, &(shift, scale))| if scale > 0.0 { (x - shift) / scale } else { 0.0 })
                .collect();
            FeatureVector::new(values).expect("finite input stays finite")
        })
        .collect()
}

/// Isotropic Gaussian blobs, one category per blob, centers on a scaled
/// grid of the first two axes.
pub fn gaussian_blobs<R: Rng + ?Sized>(
    sizes: &[usize],
    dim: usize,
    separation: f64,
    spread: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if dim == 0 || sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::invalid("blobs need dim >= 1 and non-empty categories"));
    }
    let noise = Normal::new(0.0, spread).map_err(|e| Error::invalid(e.to_string()))?;
    let side = (sizes.len() as f64).sqrt().ceil() as usize;
    let mut objects = Vec::new();
    let mut gold = Vec::new();
    for (c, &size) in sizes.iter().enumerate() {
        let mut center = vec![0.0; dim];
        center[0] = (c % side) as f64 * separation;
        if dim > 1 {
            center[1] = (c / side) as f64 * separation;
        }
        for _ in 0..size {
            let v = center.iter().map(|&m| m + noise.sample(rng)).collect();
            objects.push(FeatureVector::new(v)?);
            gold.push(c);
        }
    }
    let categories = (0..sizes.len()).map(|c| format!("blob-{c}")).collect();
    Dataset::new("blobs", objects, gold, categories)
}
