//! Uniform and variable arrival schedules.
//!
//! A schedule lists, for every time-step, the dataset indices arriving at
//! that step. Variable schedules additionally assign each category one of
//! three arrival schemas.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalSchedule {
    /// Dataset indices arriving at each time-step.
    pub batches: Vec<Vec<usize>>,
}

impl ArrivalSchedule {
    pub fn steps(&self) -> usize {
        self.batches.len()
    }

    pub fn total(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    pub fn batch_sizes(&self) -> Vec<usize> {
        self.batches.iter().map(Vec::len).collect()
    }

    /// Disjoint, in range for a dataset of `n` objects, first batch non-empty.
    pub fn check(&self, n: usize) -> Result<()> {
        if self.batches.first().is_none_or(Vec::is_empty) {
            return Err(Error::invalid("schedule needs a non-empty first batch"));
        }
        let mut seen = BTreeSet::new();
        for (t, batch) in self.batches.iter().enumerate() {
            for &i in batch {
                if i >= n {
                    return Err(Error::invalid(format!("step {t}: index {i} out of range for {n} objects")));
                }
                if !seen.insert(i) {
                    return Err(Error::invalid(format!("step {t}: index {i} scheduled twice")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Growing,
    Shrinking,
    Stable,
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schema::Growing => "growing",
            Schema::Shrinking => "shrinking",
            Schema::Stable => "stable",
        })
    }
}

/// Category id → arrival schema.
pub type SchemaAssignment = BTreeMap<usize, Schema>;

/// Shuffles `0..n` and cuts `first_n` then `steps − 1` batches of `step_n`.
pub fn uniform_schedule<R: Rng + ?Sized>(
    n: usize,
    first_n: usize,
    step_n: usize,
    steps: usize,
    rng: &mut R,
) -> Result<ArrivalSchedule> {
    if steps == 0 || first_n == 0 {
        return Err(Error::invalid("uniform schedule needs steps >= 1 and first_n >= 1"));
    }
    let needed = first_n + (steps - 1) * step_n;
    if needed > n {
        return Err(Error::invalid(format!(
            "schedule needs {needed} objects but the dataset has {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches = vec![order[..first_n].to_vec()];
    for t in 1..steps {
        let start = first_n + (t - 1) * step_n;
        batches.push(order[start..start + step_n].to_vec());
    }
    Ok(ArrivalSchedule { batches })
}

/// Ten percent of the dataset size divided by the category count, rounded
/// to the nearest integer (halves up), at least 1.
pub fn default_q(n: usize, categories: usize) -> usize {
    if categories == 0 {
        return 1;
    }
    ((0.1 * n as f64 / categories as f64).round() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableScheduleParams {
    /// Minimum objects per active (category, step) pair; 0 disables it.
    pub q: usize,
    pub steps: usize,
    /// Fresh schema draws attempted before giving up.
    pub max_retries: usize,
}

impl Default for VariableScheduleParams {
    fn default() -> Self {
        VariableScheduleParams {
            q: 1,
            steps: 6,
            max_retries: 1000,
        }
    }
}

/// Strictly ascending integer ramp of `len` counts starting at `floor`,
/// summing to `total`, or `None` when that is impossible.
fn ascending_ramp(total: usize, len: usize, floor: usize) -> Option<Vec<usize>> {
    if len == 0 {
        return None;
    }
    if len == 1 {
        return (total >= floor).then(|| vec![total]);
    }
    let pairs = len * (len - 1) / 2;
    let extra = total.checked_sub(len * floor)?;
    if extra < pairs {
        return None;
    }
    // floor + ⌊i · extra / pairs⌋ increases by at least 1 per step.
    let mut counts: Vec<usize> = (0..len).map(|i| floor + i * extra / pairs).collect();
    let used: usize = counts.iter().sum();
    *counts.last_mut().expect("len >= 2") += total - used;
    Some(counts)
}

/// Per-step counts for one category, or `None` if the drawn schema cannot be
/// realized.
fn plan_counts<R: Rng + ?Sized>(
    schema: Schema,
    total: usize,
    steps: usize,
    q: usize,
    rng: &mut R,
) -> Option<Vec<usize>> {
    let floor = q.max(1);
    match schema {
        Schema::Stable => {
            let base = total / steps;
            if q > 0 && base < q {
                return None;
            }
            let rem = total % steps;
            Some((0..steps).map(|t| base + usize::from(t < rem)).collect())
        }
        Schema::Growing | Schema::Shrinking => {
            let lengths: Vec<usize> = (2..=steps)
                .filter(|&len| ascending_ramp(total, len, floor).is_some())
                .collect();
            let len = match lengths.as_slice() {
                [] if total >= floor => 1,
                [] => return None,
                options => *options.choose(rng).expect("non-empty"),
            };
            let ramp = ascending_ramp(total, len, floor)?;
            let mut counts = vec![0; steps];
            if schema == Schema::Growing {
                counts[steps - len..].copy_from_slice(&ramp);
            } else {
                for (slot, v) in counts.iter_mut().zip(ramp.into_iter().rev()) {
                    *slot = v;
                }
            }
            Some(counts)
        }
    }
}

/// Draws a schema per category and lays out its objects over `steps`
/// time-steps, retrying until every step mixes at least two categories.
pub fn variable_schedule<R: Rng + ?Sized>(
    gold: &[usize],
    params: VariableScheduleParams,
    rng: &mut R,
) -> Result<(ArrivalSchedule, SchemaAssignment)> {
    let VariableScheduleParams { q, steps, max_retries } = params;
    if steps == 0 {
        return Err(Error::invalid("variable schedule needs steps >= 1"));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &g) in gold.iter().enumerate() {
        members.entry(g).or_default().push(i);
    }
    if members.len() < 2 {
        return Err(Error::invalid("variable schedule needs at least two categories"));
    }
    if let Some((c, m)) = members.iter().find(|(_, m)| q > 0 && m.len() < 2 * q) {
        return Err(Error::invalid(format!(
            "category {c} has {} objects, fewer than 2q = {}",
            m.len(),
            2 * q
        )));
    }
    for m in members.values_mut() {
        m.shuffle(rng);
    }

    const SCHEMAS: [Schema; 3] = [Schema::Growing, Schema::Shrinking, Schema::Stable];
    for _ in 0..max_retries.max(1) {
        let mut assignment = SchemaAssignment::new();
        let mut plans = BTreeMap::new();
        let mut feasible = true;
        for (&c, m) in &members {
            let schema = SCHEMAS[rng.gen_range(0..SCHEMAS.len())];
            match plan_counts(schema, m.len(), steps, q, rng) {
                Some(counts) => {
                    assignment.insert(c, schema);
                    plans.insert(c, counts);
                }
                None => {
                    feasible = false;
                    break;
                }
            }
        }
        if !feasible {
            continue;
        }
        let mixes = (0..steps).all(|t| plans.values().filter(|counts| counts[t] > 0).count() >= 2);
        if !mixes {
            continue;
        }

        let mut batches = vec![Vec::new(); steps];
        for (c, counts) in &plans {
            let mut cursor = members[c].iter();
            for (batch, &count) in batches.iter_mut().zip(counts) {
                batch.extend(cursor.by_ref().take(count));
            }
        }
        for batch in &mut batches {
            batch.shuffle(rng);
        }
        return Ok((ArrivalSchedule { batches }, assignment));
    }
    Err(Error::Schedule(format!(
        "no valid layout for q = {q} over {steps} steps after {max_retries} attempts"
    )))
}

/// One failed check reported by [`audit_variable_schedule`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    OutOfRange { step: usize, index: usize },
    Duplicate { step: usize, index: usize },
    EmptyFirstBatch,
    MissingSchema { category: usize },
    BelowMinimum { step: usize, category: usize, count: usize },
    TooFewCategories { step: usize, categories: usize },
    NonContiguous { category: usize },
    NotMonotone { category: usize, schema: Schema },
    UnevenStable { category: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfRange { step, index } => write!(f, "step {step}: index {index} out of range"),
            Violation::Duplicate { step, index } => write!(f, "step {step}: index {index} repeated"),
            Violation::EmptyFirstBatch => f.write_str("first batch is empty"),
            Violation::MissingSchema { category } => write!(f, "category {category} has no schema"),
            Violation::BelowMinimum { step, category, count } => {
                write!(f, "step {step}: category {category} contributes only {count}")
            }
            Violation::TooFewCategories { step, categories } => {
                write!(f, "step {step}: only {categories} categories")
            }
            Violation::NonContiguous { category } => {
                write!(f, "category {category}: active steps are not contiguous")
            }
            Violation::NotMonotone { category, schema } => {
                write!(f, "category {category}: counts are not {schema}")
            }
            Violation::UnevenStable { category } => {
                write!(f, "category {category}: stable counts differ by more than one")
            }
        }
    }
}

/// Re-derives per-category counts from the batches and checks every
/// variable-schedule constraint. `q = 0` skips the minimum-size check.
pub fn audit_variable_schedule(
    schedule: &ArrivalSchedule,
    schemas: &SchemaAssignment,
    gold: &[usize],
    q: usize,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    let steps = schedule.steps();
    if schedule.batches.first().is_none_or(Vec::is_empty) {
        violations.push(Violation::EmptyFirstBatch);
    }

    let mut seen = vec![false; gold.len()];
    let mut counts: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (step, batch) in schedule.batches.iter().enumerate() {
        for &index in batch {
            let Some(&category) = gold.get(index) else {
                violations.push(Violation::OutOfRange { step, index });
                continue;
            };
            if std::mem::replace(&mut seen[index], true) {
                violations.push(Violation::Duplicate { step, index });
            }
            counts.entry(category).or_insert_with(|| vec![0; steps])[step] += 1;
        }
    }

    for step in 0..steps {
        let active = counts.values().filter(|c| c[step] > 0).count();
        if active < 2 {
            violations.push(Violation::TooFewCategories { step, categories: active });
        }
    }

    for (&category, per_step) in &counts {
        if q > 0 {
            for (step, &count) in per_step.iter().enumerate() {
                if count > 0 && count < q {
                    violations.push(Violation::BelowMinimum { step, category, count });
                }
            }
        }
        let Some(&schema) = schemas.get(&category) else {
            violations.push(Violation::MissingSchema { category });
            continue;
        };
        let active: Vec<usize> = (0..steps).filter(|&t| per_step[t] > 0).collect();
        if active.windows(2).any(|w| w[1] != w[0] + 1) {
            violations.push(Violation::NonContiguous { category });
        }
        let values: Vec<usize> = active.iter().map(|&t| per_step[t]).collect();
        match schema {
            Schema::Growing if values.windows(2).any(|w| w[1] <= w[0]) => {
                violations.push(Violation::NotMonotone { category, schema });
            }
            Schema::Shrinking if values.windows(2).any(|w| w[1] >= w[0]) => {
                violations.push(Violation::NotMonotone { category, schema });
            }
            Schema::Stable => {
                let lo = values.iter().min().copied().unwrap_or(0);
                let hi = values.iter().max().copied().unwrap_or(0);
                if hi - lo > 1 {
                    violations.push(Violation::UnevenStable { category });
                }
            }
            _ => {}
        }
    }
    violations
}
