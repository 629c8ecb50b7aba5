//! A-posteriori affinity propagation.
//!
//! At every time-step after the first, each live cluster is packed into its
//! centroid and affinity propagation runs over those centroids together with
//! the newly arrived objects only. Prior objects follow their centroid's new
//! label, so the historical partition can only coarsen (through merges).
//! Every change is recorded as a stratification event, and clusters that
//! stay unchanged for longer than the pruning threshold are forgotten.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ap::{run_ap, ApConfig, ClusteringResult};
use crate::error::{Error, Result};
use crate::geometry::{build_similarity_matrix_with, FeatureVector, Similarity};

pub type ObjectId = usize;
pub type ClusterId = u64;

/// Maximum number of unchanged steps before a cluster is pruned; a cluster is
/// dropped when `t − γ > threshold`. Ranges over `[1, +∞]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PruningThreshold(f64);

impl PruningThreshold {
    pub const NEVER: PruningThreshold = PruningThreshold(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value < 1.0 {
            return Err(Error::invalid(format!(
                "pruning threshold must lie in [1, inf], got {value}"
            )));
        }
        Ok(PruningThreshold(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_exceeded(self, now: usize, gamma: usize) -> bool {
        now.saturating_sub(gamma) as f64 > self.0
    }
}

impl Default for PruningThreshold {
    fn default() -> Self {
        PruningThreshold(1.0)
    }
}

impl fmt::Display for PruningThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl std::str::FromStr for PruningThreshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" | "never" => Ok(PruningThreshold::NEVER),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("invalid pruning threshold `{s}`")))
                .and_then(PruningThreshold::new),
        }
    }
}

impl Serialize for PruningThreshold {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for PruningThreshold {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(v) => PruningThreshold::new(v),
            Raw::Text(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: ClusterId,
    /// Member object ids, ascending.
    pub members: Vec<ObjectId>,
    pub centroid: FeatureVector,
    /// Aging index: last time-step the cluster was created or changed.
    pub gamma: usize,
    pub created_at: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Creation,
    Enrichment,
    Merge,
    Prune,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Creation => "creation",
            EventKind::Enrichment => "enrichment",
            EventKind::Merge => "merge",
            EventKind::Prune => "prune",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratificationEvent {
    pub time: usize,
    pub kind: EventKind,
    /// Prior clusters involved; empty for creation, the pruned id for prune.
    pub sources: Vec<ClusterId>,
    /// Resulting cluster; absent for prune.
    pub target: Option<ClusterId>,
    /// Newly arrived objects absorbed by the target.
    pub new_members: usize,
    /// Size of the target after the event (of the removed cluster for prune).
    pub member_count: usize,
}

/// Per-cluster centroids, in the order of `clusters`.
pub fn pack(
    clusters: &[Cluster],
    store: &BTreeMap<ObjectId, FeatureVector>,
) -> Result<Vec<(ClusterId, FeatureVector)>> {
    clusters
        .iter()
        .map(|c| {
            let vectors = c
                .members
                .iter()
                .map(|id| {
                    store
                        .get(id)
                        .ok_or_else(|| Error::invalid(format!("object {id} of cluster {} is not stored", c.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            if vectors.is_empty() {
                return Err(Error::invalid(format!("cluster {} has no members", c.id)));
            }
            Ok((c.id, FeatureVector::mean(vectors)?))
        })
        .collect()
}

/// Positional split of temporary labels into centroid labels and new-object
/// labels; centroids come first in the combined ordering.
pub fn split(labels: &[usize], n_centroids: usize) -> Result<(&[usize], &[usize])> {
    if n_centroids > labels.len() {
        return Err(Error::invalid(format!(
            "{n_centroids} centroids but only {} labels",
            labels.len()
        )));
    }
    Ok(labels.split_at(n_centroids))
}

/// Maps every member of each prior cluster to the temporary label given to
/// that cluster's centroid.
pub fn unpack_and_update(
    centroid_labels: &[usize],
    clusters: &[Cluster],
) -> Result<BTreeMap<ObjectId, usize>> {
    if centroid_labels.len() != clusters.len() {
        return Err(Error::invalid(format!(
            "{} centroid labels for {} clusters",
            centroid_labels.len(),
            clusters.len()
        )));
    }
    Ok(clusters
        .iter()
        .zip(centroid_labels)
        .flat_map(|(c, &label)| c.members.iter().map(move |&id| (id, label)))
        .collect())
}

/// Everything that shares one temporary label in a step's AP run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stratum {
    pub label: usize,
    /// Ids of the prior clusters whose centroids carry this label.
    pub sources: Vec<ClusterId>,
    /// Positions (within the step's new batch) of arrivals with this label.
    pub new_objects: Vec<usize>,
    /// `None` for a lone centroid with no arrivals: the cluster is unchanged.
    pub kind: Option<EventKind>,
}

/// Groups the step's temporary labels (centroids first, then new objects)
/// and classifies each group as creation, enrichment, merge or unchanged.
/// Strata are returned in ascending label order.
pub fn classify_stratification(prior: &[Cluster], temp_labels: &[usize]) -> Result<Vec<Stratum>> {
    let (centroid_labels, new_labels) = split(temp_labels, prior.len())?;
    let mut groups: BTreeMap<usize, (Vec<ClusterId>, Vec<usize>)> = BTreeMap::new();
    for (c, &label) in prior.iter().zip(centroid_labels) {
        groups.entry(label).or_default().0.push(c.id);
    }
    for (pos, &label) in new_labels.iter().enumerate() {
        groups.entry(label).or_default().1.push(pos);
    }
    Ok(groups
        .into_iter()
        .map(|(label, (sources, new_objects))| {
            let kind = match (sources.len(), new_objects.is_empty()) {
                (0, _) => Some(EventKind::Creation),
                (1, true) => None,
                (1, false) => Some(EventKind::Enrichment),
                _ => Some(EventKind::Merge),
            };
            Stratum {
                label,
                sources,
                new_objects,
                kind,
            }
        })
        .collect())
}

/// What a single `AppState::step` did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub time: usize,
    /// Object ids assigned to the batch, in batch order.
    pub object_ids: Vec<ObjectId>,
    /// Result of the AP run over centroids plus arrivals.
    pub ap_result: ClusteringResult,
    /// Number of objects that AP run clustered (centroids + arrivals).
    pub ap_size: usize,
    /// Events emitted at this step, pruning included.
    pub events: Vec<StratificationEvent>,
}

/// A pruned cluster retained for audit when archiving is enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchivedCluster {
    pub pruned_at: usize,
    pub cluster: Cluster,
    pub vectors: Vec<FeatureVector>,
}

/// Session state of an APP run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppState {
    /// Number of completed steps; the next step runs at this time.
    steps_done: usize,
    clusters: Vec<Cluster>,
    objects: BTreeMap<ObjectId, FeatureVector>,
    history: Vec<StratificationEvent>,
    next_cluster_id: ClusterId,
    next_object_id: ObjectId,
    #[serde(default)]
    measure: Similarity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    archive: Option<Vec<ArchivedCluster>>,
}

impl Default for AppState {
    fn default() -> Self {
        AppState::new()
    }
}

impl AppState {
    pub fn new() -> Self {
        AppState::with_measure(Similarity::NegativeEuclidean)
    }

    pub fn with_measure(measure: Similarity) -> Self {
        AppState {
            steps_done: 0,
            clusters: Vec::new(),
            objects: BTreeMap::new(),
            history: Vec::new(),
            next_cluster_id: 0,
            next_object_id: 0,
            measure,
            archive: None,
        }
    }

    /// Keep pruned clusters and their vectors in an audit archive.
    pub fn enable_archive(&mut self) {
        self.archive.get_or_insert_with(Vec::new);
    }

    pub fn archive(&self) -> &[ArchivedCluster] {
        self.archive.as_deref().unwrap_or(&[])
    }

    /// Time of the next step.
    pub fn time(&self) -> usize {
        self.steps_done
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn objects(&self) -> &BTreeMap<ObjectId, FeatureVector> {
        &self.objects
    }

    pub fn history(&self) -> &[StratificationEvent] {
        &self.history
    }

    /// Cluster id of every retained object, ascending by object id.
    pub fn labels(&self) -> BTreeMap<ObjectId, ClusterId> {
        self.clusters
            .iter()
            .flat_map(|c| c.members.iter().map(move |&id| (id, c.id)))
            .collect()
    }

    /// Replaces stored vectors (e.g. after cumulative re-normalization) and
    /// recomputes every centroid.
    pub fn revectorize<F>(&mut self, mut f: F) -> Result<()>
    where
        F: FnMut(ObjectId, &FeatureVector) -> FeatureVector,
    {
        for (&id, v) in self.objects.iter_mut() {
            *v = f(id, v);
        }
        self.refresh_centroids()
    }

    fn refresh_centroids(&mut self) -> Result<()> {
        let packed = pack(&self.clusters, &self.objects)?;
        for (c, (_, centroid)) in self.clusters.iter_mut().zip(packed) {
            c.centroid = centroid;
        }
        Ok(())
    }

    /// Runs one step with sequentially assigned object ids.
    pub fn step(
        &mut self,
        batch: Vec<FeatureVector>,
        config: &ApConfig,
        threshold: PruningThreshold,
    ) -> Result<StepOutcome> {
        let start = self.next_object_id;
        let batch = batch.into_iter().enumerate().map(|(i, v)| (start + i, v)).collect();
        self.step_with_ids(batch, config, threshold)
    }

    /// Runs one step; ids must not collide with any retained object.
    pub fn step_with_ids(
        &mut self,
        batch: Vec<(ObjectId, FeatureVector)>,
        config: &ApConfig,
        threshold: PruningThreshold,
    ) -> Result<StepOutcome> {
        if batch.is_empty() {
            return Err(Error::invalid(format!(
                "time-step {} received no objects",
                self.steps_done
            )));
        }
        config.validate()?;
        let mut seen = BTreeSet::new();
        for (id, _) in &batch {
            if self.objects.contains_key(id) || !seen.insert(*id) {
                return Err(Error::invalid(format!("object id {id} is already in use")));
            }
        }

        let time = self.steps_done;
        let history_mark = self.history.len();
        let (ids, vectors): (Vec<ObjectId>, Vec<FeatureVector>) = batch.into_iter().unzip();

        let (ap_result, ap_size) = if self.clusters.is_empty() {
            self.initial_step(time, &ids, &vectors, config)?
        } else {
            self.consolidating_step(time, &ids, &vectors, config)?
        };

        self.next_object_id = self.next_object_id.max(ids.iter().max().map_or(0, |m| m + 1));
        self.objects.extend(ids.iter().copied().zip(vectors));
        self.refresh_centroids()?;
        self.prune(time, threshold);
        self.steps_done += 1;

        Ok(StepOutcome {
            time,
            object_ids: ids,
            ap_result,
            ap_size,
            events: self.history[history_mark..].to_vec(),
        })
    }

    fn mint(&mut self) -> ClusterId {
        let id = self.next_cluster_id;
        self.next_cluster_id += 1;
        id
    }

    /// Plain AP over the batch; every cluster is a creation.
    fn initial_step(
        &mut self,
        time: usize,
        ids: &[ObjectId],
        vectors: &[FeatureVector],
        config: &ApConfig,
    ) -> Result<(ClusteringResult, usize)> {
        let s = build_similarity_matrix_with(vectors, &self.measure, config.preference)?;
        let result = run_ap(&s, config)?;
        let mut groups: BTreeMap<usize, Vec<ObjectId>> = BTreeMap::new();
        for (&id, &label) in ids.iter().zip(&result.labels) {
            groups.entry(label).or_default().push(id);
        }
        for (_, mut members) in groups {
            members.sort_unstable();
            let id = self.mint();
            self.history.push(StratificationEvent {
                time,
                kind: EventKind::Creation,
                sources: Vec::new(),
                target: Some(id),
                new_members: members.len(),
                member_count: members.len(),
            });
            self.clusters.push(Cluster {
                id,
                centroid: vectors[0].clone(),
                members,
                gamma: time,
                created_at: time,
            });
        }
        Ok((result, vectors.len()))
    }

    fn consolidating_step(
        &mut self,
        time: usize,
        ids: &[ObjectId],
        vectors: &[FeatureVector],
        config: &ApConfig,
    ) -> Result<(ClusteringResult, usize)> {
        let centroids = pack(&self.clusters, &self.objects)?;
        let mut combined: Vec<FeatureVector> = centroids.into_iter().map(|(_, c)| c).collect();
        combined.extend(vectors.iter().cloned());
        let ap_size = combined.len();

        let s = build_similarity_matrix_with(&combined, &self.measure, config.preference)?;
        let result = run_ap(&s, config)?;
        let (centroid_labels, _) = split(&result.labels, self.clusters.len())?;
        let unpacked = unpack_and_update(centroid_labels, &self.clusters)?;
        let strata = classify_stratification(&self.clusters, &result.labels)?;

        let mut prior: BTreeMap<ClusterId, Cluster> =
            std::mem::take(&mut self.clusters).into_iter().map(|c| (c.id, c)).collect();
        let mut next = Vec::with_capacity(strata.len());
        for stratum in strata {
            let arrivals: Vec<ObjectId> = stratum.new_objects.iter().map(|&p| ids[p]).collect();
            let Some(kind) = stratum.kind else {
                next.push(prior.remove(&stratum.sources[0]).expect("source cluster exists"));
                continue;
            };
            let mut members: Vec<ObjectId> = unpacked
                .iter()
                .filter(|(_, &label)| label == stratum.label)
                .map(|(&id, _)| id)
                .chain(arrivals.iter().copied())
                .collect();
            members.sort_unstable();

            let cluster = match kind {
                EventKind::Enrichment => {
                    let mut c = prior.remove(&stratum.sources[0]).expect("source cluster exists");
                    c.members = members;
                    c.gamma = time;
                    c
                }
                EventKind::Creation | EventKind::Merge => {
                    for src in &stratum.sources {
                        prior.remove(src);
                    }
                    Cluster {
                        id: self.mint(),
                        centroid: vectors[0].clone(),
                        members,
                        gamma: time,
                        created_at: time,
                    }
                }
                EventKind::Prune => unreachable!("classification never yields prune"),
            };
            self.history.push(StratificationEvent {
                time,
                kind,
                sources: stratum.sources,
                target: Some(cluster.id),
                new_members: arrivals.len(),
                member_count: cluster.members.len(),
            });
            next.push(cluster);
        }
        debug_assert!(prior.is_empty());
        self.clusters = next;
        Ok((result, ap_size))
    }

    /// Removes every cluster with `now − γ > threshold`, dropping its objects
    /// from the store. Returns the prune events it appended.
    pub fn prune(&mut self, now: usize, threshold: PruningThreshold) -> Vec<StratificationEvent> {
        let mark = self.history.len();
        let (stale, kept): (Vec<Cluster>, Vec<Cluster>) = std::mem::take(&mut self.clusters)
            .into_iter()
            .partition(|c| threshold.is_exceeded(now, c.gamma));
        self.clusters = kept;
        for cluster in stale {
            let vectors: Vec<FeatureVector> = cluster
                .members
                .iter()
                .filter_map(|id| self.objects.remove(id))
                .collect();
            self.history.push(StratificationEvent {
                time: now,
                kind: EventKind::Prune,
                sources: vec![cluster.id],
                target: None,
                new_members: 0,
                member_count: cluster.members.len(),
            });
            if let Some(archive) = self.archive.as_mut() {
                archive.push(ArchivedCluster {
                    pruned_at: now,
                    cluster,
                    vectors,
                });
            }
        }
        self.history[mark..].to_vec()
    }

    /// Structured JSON snapshot of the whole state.
    pub fn to_snapshot_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_snapshot_json(text: &str) -> Result<Self> {
        let state: AppState = serde_json::from_str(text)?;
        state.check_consistency()?;
        Ok(state)
    }

    fn check_consistency(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.clusters {
            if c.members.is_empty() {
                return Err(Error::invalid(format!("cluster {} has no members", c.id)));
            }
            if c.id >= self.next_cluster_id {
                return Err(Error::invalid(format!("cluster id {} not below next id", c.id)));
            }
            for id in &c.members {
                if !self.objects.contains_key(id) || !seen.insert(*id) {
                    return Err(Error::invalid(format!(
                        "object {id} is missing or belongs to several clusters"
                    )));
                }
            }
        }
        if seen.len() != self.objects.len() {
            return Err(Error::invalid("stored objects not covered by any cluster"));
        }
        Ok(())
    }
}
