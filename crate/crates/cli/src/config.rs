//! Experiment settings assembled from a TOML file and command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use apstream::data::SubsetSize;
use apstream::harness::{Algorithm, ExperimentConfig, Setting};
use apstream::{DatasetSchema, Normalization, PreferencePolicy, PruningThreshold};
use serde::Deserialize;

/// `seeds = 100` (count, i.e. 0..100) or `seeds = [1, 5, 9]`.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn expand(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

impl std::str::FromStr for Seeds {
    type Err = String;

    /// `100` → 0..100, `3..7` → 3,4,5,6, `1,4,9` → those seeds.
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = |_| format!("invalid seed specification `{s}`");
        if let Some((lo, hi)) = s.split_once("..") {
            let (lo, hi): (u64, u64) = (lo.trim().parse().map_err(bad)?, hi.trim().parse().map_err(bad)?);
            if lo >= hi {
                return Err(format!("empty seed range `{s}`"));
            }
            return Ok(Seeds::List((lo..hi).collect()));
        }
        if s.contains(',') {
            return s
                .split(',')
                .map(|p| p.trim().parse::<u64>().map_err(bad))
                .collect::<Result<Vec<_>, _>>()
                .map(Seeds::List);
        }
        s.trim().parse().map(Seeds::Count).map_err(bad)
    }
}

/// A value given either as a TOML string or a TOML number.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Text(String),
}

impl Scalar {
    fn text(&self) -> String {
        match self {
            Scalar::Number(v) => v.to_string(),
            Scalar::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetConfig {
    pub top_k: usize,
    pub total: Option<usize>,
    pub per_category: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl SubsetConfig {
    pub fn size(&self) -> Result<SubsetSize> {
        match (self.total, self.per_category) {
            (Some(n), None) => Ok(SubsetSize::Total(n)),
            (None, Some(n)) => Ok(SubsetSize::PerCategory(n)),
            _ => bail!("subset needs exactly one of `total` or `per_category`"),
        }
    }
}

/// Every field optional; unset fields fall back to library defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub no_header: Option<bool>,
    pub algorithms: Option<Vec<Algorithm>>,
    pub setting: Option<Setting>,
    pub seeds: Option<Seeds>,
    pub steps: Option<usize>,
    pub first_n: Option<usize>,
    pub step_n: Option<usize>,
    pub q: Option<usize>,
    pub th_gamma: Option<Scalar>,
    pub damping: Option<f64>,
    pub max_iterations: Option<usize>,
    pub convergence_window: Option<usize>,
    pub preference: Option<Scalar>,
    pub normalization: Option<Normalization>,
    pub schedule_file: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub sequential: Option<bool>,
    pub subset: Option<SubsetConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Fields set in `other` replace ours.
    pub fn overlay(self, other: FileConfig) -> FileConfig {
        macro_rules! pick {
            ($($f:ident),*) => { FileConfig { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            dataset, schema, no_header, algorithms, setting, seeds, steps, first_n, step_n, q, th_gamma, damping,
            max_iterations, convergence_window, preference, normalization, schedule_file, output_dir, sequential,
            subset
        )
    }
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub dataset: PathBuf,
    pub schema: DatasetSchema,
    pub subset: Option<SubsetConfig>,
    pub schedule_file: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub experiment: ExperimentConfig,
}

impl FileConfig {
    pub fn resolve(self) -> Result<RunPlan> {
        let dataset = self.dataset.context("no dataset given (use --dataset or `dataset` in the config file)")?;
        let mut schema = match &self.schema {
            Some(p) => DatasetSchema::from_path(p).with_context(|| format!("reading schema {}", p.display()))?,
            None => DatasetSchema::default(),
        };
        if self.no_header == Some(true) {
            schema.header = false;
        }

        let mut e = ExperimentConfig::default();
        if let Some(v) = self.algorithms {
            e.algorithms = v;
        }
        if let Some(v) = self.setting {
            e.setting = v;
        }
        if let Some(v) = self.seeds {
            e.seeds = v.expand();
        }
        if let Some(v) = self.steps {
            e.steps = v;
        }
        e.first_n = self.first_n.or(e.first_n);
        if let Some(v) = self.step_n {
            e.step_n = v;
        }
        e.q = self.q.or(e.q);
        if let Some(v) = self.th_gamma {
            e.th_gamma = v.text().parse::<PruningThreshold>()?;
        }
        if let Some(v) = self.damping {
            e.ap.damping = v;
        }
        if let Some(v) = self.max_iterations {
            e.ap.max_iterations = v;
        }
        if let Some(v) = self.convergence_window {
            e.ap.convergence_window = v;
        }
        if let Some(v) = self.preference {
            e.ap.preference = v.text().parse::<PreferencePolicy>()?;
        }
        if let Some(v) = self.normalization {
            e.normalization = v;
        }
        if self.sequential == Some(true) {
            e.parallel = false;
        }
        e.validate()?;

        Ok(RunPlan {
            dataset,
            schema,
            subset: self.subset,
            schedule_file: self.schedule_file,
            output_dir: self.output_dir.unwrap_or_else(|| PathBuf::from("results")),
            experiment: e,
        })
    }
}
