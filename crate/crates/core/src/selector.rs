//! Feature quality scoring and model construction.
//!
//! Each descriptor is scored on its own axis. For every scenario `i` with
//! center `c_i`, let `c_k` be the nearest other center; `d_ii` is the mean
//! distance of the scenario's points to `c_i` and `d_ik` their mean distance
//! to `c_k`. The score is the average of `(d_ik - d_ii) / max(d_ik, d_ii)`
//! over scenarios. This needs one pass over the points per descriptor
//! instead of the all-pairs distances of a silhouette coefficient.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detector::DetectionCalibration;
use crate::detector::EventSegment;
use crate::error::{invalid, Error, Result};
use crate::features::{extract_candidates, FeatureDescriptor, FeatureKind, FeatureMatrix, Normalizer, DEFAULT_CUTOFFS};
use crate::scenario::ScenarioId;

pub const DEFAULT_SELECTED: usize = 5;
pub const DEFAULT_TRAINING_PER_SCENARIO: usize = 5;

/// Per-scenario centers and spreads in normalized feature units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCenters {
    /// Sorted scenario ids; index `s` of `centers` / `stds` refers to `scenarios[s]`.
    pub scenarios: Vec<ScenarioId>,
    pub descriptors: Vec<FeatureDescriptor>,
    pub centers: Vec<Vec<f64>>,
    /// Population standard deviation of each scenario's training values.
    pub stds: Vec<Vec<f64>>,
}

impl ClusterCenters {
    pub fn scenario_index(&self, id: &ScenarioId) -> Option<usize> {
        self.scenarios.binary_search(id).ok()
    }

    /// Centers of every scenario for descriptor `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.centers.iter().map(|c| c[j]).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let pick = |rows: &Vec<Vec<f64>>| rows.iter().map(|r| indices.iter().map(|&i| r[i]).collect()).collect();
        Self {
            scenarios: self.scenarios.clone(),
            descriptors: indices.iter().map(|&i| self.descriptors[i].clone()).collect(),
            centers: pick(&self.centers),
            stds: pick(&self.stds),
        }
    }
}

fn label_indices(matrix: &FeatureMatrix, scenarios: &[ScenarioId]) -> Result<Vec<usize>> {
    matrix
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let l = l.as_ref().ok_or_else(|| Error::InvalidArgument(format!("row {i} is unlabeled")))?;
            scenarios
                .binary_search(l)
                .map_err(|_| Error::UnknownScenario(l.to_string()))
        })
        .collect()
}

/// Centers for an explicit scenario set; every scenario needs at least one row.
pub fn compute_centers_for(training: &FeatureMatrix, scenarios: &[ScenarioId]) -> Result<ClusterCenters> {
    let mut scenarios = scenarios.to_vec();
    scenarios.sort();
    scenarios.dedup();
    if scenarios.len() < 2 {
        return invalid(format!("need at least 2 scenarios, got {}", scenarios.len()));
    }
    let idx = label_indices(training, &scenarios)?;
    let cols = training.num_columns();
    let mut counts = vec![0usize; scenarios.len()];
    let mut sums = vec![vec![0.0; cols]; scenarios.len()];
    for (row, &s) in training.rows.iter().zip(&idx) {
        counts[s] += 1;
        sums[s].iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    if let Some(s) = counts.iter().position(|&c| c == 0) {
        return invalid(format!("scenario `{}` has no training rows", scenarios[s]));
    }
    let centers: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(sum, &n)| sum.iter().map(|v| v / n as f64).collect())
        .collect();
    let mut sq = vec![vec![0.0; cols]; scenarios.len()];
    for (row, &s) in training.rows.iter().zip(&idx) {
        for j in 0..cols {
            sq[s][j] += (row[j] - centers[s][j]).powi(2);
        }
    }
    let stds = sq
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s.iter().map(|v| (v / n as f64).sqrt()).collect())
        .collect();
    Ok(ClusterCenters {
        scenarios,
        descriptors: training.descriptors.clone(),
        centers,
        stds,
    })
}

/// Centers for the scenarios present in the labels.
pub fn compute_centers(training: &FeatureMatrix) -> Result<ClusterCenters> {
    let mut scenarios = Vec::new();
    for (i, l) in training.labels.iter().enumerate() {
        match l {
            Some(l) => scenarios.push(l.clone()),
            None => return invalid(format!("row {i} is unlabeled")),
        }
    }
    compute_centers_for(training, &scenarios)
}

/// Index of the center nearest to `centers[i]` among the others; ties go to
/// the lower index.
pub fn nearest_other_center(centers: &[f64], i: usize) -> usize {
    let mut best = None;
    for (k, &c) in centers.iter().enumerate() {
        if k == i {
            continue;
        }
        let d = (c - centers[i]).abs();
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((k, d)),
        }
    }
    best.expect("at least two centers").0
}

/// Quality score of one descriptor. `scenario_of[r]` indexes into `centers`.
pub fn quality_score(values: &[f64], scenario_of: &[usize], centers: &[f64]) -> f64 {
    let n = centers.len();
    let nearest: Vec<usize> = (0..n).map(|i| nearest_other_center(centers, i)).collect();
    let mut own = vec![0.0; n];
    let mut other = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (&v, &s) in values.iter().zip(scenario_of) {
        own[s] += (v - centers[s]).abs();
        other[s] += (v - centers[nearest[s]]).abs();
        count[s] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        if count[i] == 0 {
            continue;
        }
        let d_ii = own[i] / count[i] as f64;
        let d_ik = other[i] / count[i] as f64;
        let denom = d_ii.max(d_ik);
        if denom > 0.0 {
            total += (d_ik - d_ii) / denom;
        }
    }
    total / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureQualityReport {
    pub descriptors: Vec<FeatureDescriptor>,
    pub scores: Vec<f64>,
    pub degenerate: Vec<bool>,
    /// Descriptor indices, best first. Degenerate descriptors come last;
    /// equal scores keep descriptor order.
    pub ranking: Vec<usize>,
}

impl FeatureQualityReport {
    pub fn new(descriptors: Vec<FeatureDescriptor>, mut scores: Vec<f64>, degenerate: Vec<bool>) -> Result<Self> {
        if scores.len() != descriptors.len() || degenerate.len() != descriptors.len() {
            return invalid("scores, degenerate flags and descriptors differ in length");
        }
        for (s, &d) in scores.iter_mut().zip(&degenerate) {
            if d {
                *s = 0.0;
            }
        }
        let mut ranking: Vec<usize> = (0..descriptors.len()).collect();
        ranking.sort_by(|&a, &b| {
            degenerate[a]
                .cmp(&degenerate[b])
                .then(scores[b].total_cmp(&scores[a]))
                .then(a.cmp(&b))
        });
        Ok(Self {
            descriptors,
            scores,
            degenerate,
            ranking,
        })
    }
}

/// Scores every descriptor of a normalized, labeled matrix.
pub fn feature_quality(values: &FeatureMatrix, centers: &ClusterCenters) -> Result<Vec<f64>> {
    if values.descriptors != centers.descriptors {
        return Err(Error::DescriptorMismatch("matrix and centers describe different features".into()));
    }
    let idx = label_indices(values, &centers.scenarios)?;
    Ok((0..values.num_columns())
        .map(|j| quality_score(&values.column(j), &idx, &centers.column(j)))
        .collect())
}

/// The `m` best descriptors of `report`.
pub fn select_top(report: &FeatureQualityReport, m: usize) -> Result<Vec<usize>> {
    if m == 0 {
        return invalid("number of selected features must be at least 1");
    }
    if m > report.descriptors.len() {
        return invalid(format!("cannot select {m} of {} descriptors", report.descriptors.len()));
    }
    Ok(report.ranking[..m].to_vec())
}

/// Detection parameters carried by a model so that monitoring reproduces the
/// training-time segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSettings {
    pub calibration: DetectionCalibration,
    pub interval_len: f64,
    pub trigger_channel: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub events_per_scenario: BTreeMap<ScenarioId, usize>,
    pub candidate_count: usize,
    pub library_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    /// Selected descriptors, best first.
    pub descriptors: Vec<FeatureDescriptor>,
    pub normalizer: Normalizer,
    pub centers: ClusterCenters,
    pub fc: Vec<f64>,
    pub detection: Option<DetectionSettings>,
    pub scenario_cycle: Vec<ScenarioId>,
    pub sample_rate: f64,
    pub summary: TrainingSummary,
}

impl Model {
    pub fn scenarios(&self) -> &[ScenarioId] {
        &self.centers.scenarios
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.descriptors.len();
        if m == 0 {
            return invalid("model has no selected descriptors");
        }
        for (i, d) in self.descriptors.iter().enumerate() {
            if self.descriptors[..i].contains(d) {
                return invalid(format!("descriptor {d} selected twice"));
            }
        }
        if self.normalizer.descriptors != self.descriptors || self.centers.descriptors != self.descriptors {
            return Err(Error::DescriptorMismatch("normalizer/centers do not match the selected descriptors".into()));
        }
        if self.fc.len() != m {
            return invalid("fc scores do not match the selected descriptors");
        }
        let ns = self.centers.scenarios.len();
        if ns < 2 || self.centers.centers.len() != ns || self.centers.stds.len() != ns {
            return invalid("model needs centers for at least two scenarios");
        }
        if self.centers.centers.iter().chain(&self.centers.stds).any(|r| r.len() != m) {
            return invalid("center table is not rectangular");
        }
        if !(self.sample_rate > 0.0) {
            return invalid("model sample rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub cutoffs: Vec<f64>,
    pub kinds: Vec<FeatureKind>,
    pub selected: usize,
    /// Events used per scenario, taken in stream order. `None` uses all.
    pub per_scenario: Option<usize>,
    /// Labeling cycle stored in the model; defaults to first-appearance order.
    pub scenario_cycle: Option<Vec<ScenarioId>>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            kinds: FeatureKind::ALL.to_vec(),
            selected: DEFAULT_SELECTED,
            per_scenario: Some(DEFAULT_TRAINING_PER_SCENARIO),
            scenario_cycle: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Training {
    pub model: Model,
    /// Scores of the full candidate bank.
    pub report: FeatureQualityReport,
    pub warnings: Vec<String>,
}

/// Training events: the first `per_scenario` of each label, in stream order.
pub fn training_subset(events: &[EventSegment], per_scenario: Option<usize>) -> Result<Vec<EventSegment>> {
    let mut counts: BTreeMap<ScenarioId, usize> = BTreeMap::new();
    let mut picked = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let label = e
            .label
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("training event {i} is unlabeled")))?;
        let c = counts.entry(label.clone()).or_default();
        if per_scenario.is_none_or(|limit| *c < limit) {
            *c += 1;
            picked.push(e.clone());
        }
    }
    if counts.len() < 2 {
        return invalid(format!("training needs at least 2 scenarios, got {}", counts.len()));
    }
    if let Some(limit) = per_scenario {
        for (s, &c) in &counts {
            if c < limit {
                return invalid(format!("scenario `{s}` has {c} training events, {limit} required"));
            }
        }
    }
    Ok(picked)
}

/// Extraction, normalization, scoring and selection in one step.
pub fn train(events: &[EventSegment], options: &TrainOptions) -> Result<Training> {
    let events = training_subset(events, options.per_scenario)?;
    let sample_rate = events[0].samples.sample_rate();
    let raw = extract_candidates(&events, &options.cutoffs, &options.kinds)?;
    let normalizer = Normalizer::fit(&raw)?;
    let normalized = normalizer.apply(&raw)?;
    let centers = compute_centers(&normalized)?;
    let scores = feature_quality(&normalized, &centers)?;
    let report = FeatureQualityReport::new(raw.descriptors.clone(), scores, normalizer.degenerate.clone())?;
    let chosen = select_top(&report, options.selected)?;

    let mut warnings = Vec::new();
    if report.scores.iter().all(|&s| s <= 0.0) {
        warnings.push("no candidate feature separates the scenarios (all quality scores <= 0)".to_string());
    }
    let degenerate_picks = chosen.iter().filter(|&&i| report.degenerate[i]).count();
    if degenerate_picks > 0 {
        warnings.push(format!("{degenerate_picks} selected descriptor(s) are constant over the training data"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let mut events_per_scenario = BTreeMap::new();
    for e in &events {
        *events_per_scenario.entry(e.label.clone().expect("checked")).or_insert(0) += 1;
    }
    let scenario_cycle = match &options.scenario_cycle {
        Some(c) => c.clone(),
        None => {
            let mut cycle: Vec<ScenarioId> = Vec::new();
            for e in &events {
                let l = e.label.as_ref().expect("checked");
                if !cycle.contains(l) {
                    cycle.push(l.clone());
                }
            }
            cycle
        }
    };

    let model = Model {
        descriptors: chosen.iter().map(|&i| raw.descriptors[i].clone()).collect(),
        normalizer: normalizer.subset(&chosen),
        centers: centers.subset(&chosen),
        fc: chosen.iter().map(|&i| report.scores[i]).collect(),
        detection: None,
        scenario_cycle,
        sample_rate,
        summary: TrainingSummary {
            events_per_scenario,
            candidate_count: raw.num_columns(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };
    model.validate()?;
    Ok(Training {
        model,
        report,
        warnings,
    })
}
