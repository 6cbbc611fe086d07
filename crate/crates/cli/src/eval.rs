//! Detection and classification metrics against ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use switchsel_core::classifier::{descriptor_votes, infer, majority_vote, DriftConfig, DriftState, VoteMode};
use switchsel_core::detector::EventSegment;
use switchsel_core::synth::TruthEvent;
use switchsel_core::{Model, ScenarioId, TimeSeries};

use crate::error::{CliError, Result};
use crate::pipeline::segment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub truth_events: usize,
    pub detected: usize,
    pub matched: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    /// Matched events the accuracies are computed over.
    pub evaluated: usize,
    pub single_best_descriptor: String,
    pub single_best: Option<f64>,
    pub majority_vote: BTreeMap<String, Option<f64>>,
    pub updated_centers_mode: VoteMode,
    pub updated_centers: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detection: DetectionMetrics,
    pub classification: ClassificationMetrics,
}

pub fn mode_name(mode: VoteMode) -> &'static str {
    match mode {
        VoteMode::Equal => "equal",
        VoteMode::FcWeighted => "fc_weighted",
        VoteMode::ProbWeighted => "prob_weighted",
    }
}

pub fn check_truth(truth: &[TruthEvent], duration: f64) -> Result<()> {
    for (i, t) in truth.iter().enumerate() {
        if !(t.end > t.start) || t.start < 0.0 {
            return Err(CliError::Data(format!("truth event {i} has an invalid span")));
        }
        if t.start >= duration {
            return Err(CliError::Data(format!(
                "truth event {i} starts at {} s, after the recording ends ({duration} s)",
                t.start
            )));
        }
        if i > 0 && t.start < truth[i - 1].start {
            return Err(CliError::Data(format!("truth events are not time-ordered at index {i}")));
        }
    }
    Ok(())
}

/// Pairs each detection with the first unused truth event whose span, widened
/// by `lead` seconds at the front, contains the detected start.
pub fn match_events(starts: &[f64], truth: &[TruthEvent], lead: f64) -> Vec<Option<usize>> {
    let mut used = vec![false; truth.len()];
    let mut lo = 0;
    starts
        .iter()
        .map(|&s| {
            while lo < truth.len() && truth[lo].end < s {
                lo += 1;
            }
            let hit = (lo..truth.len())
                .take_while(|&i| truth[i].start - lead <= s)
                .find(|&i| !used[i] && s <= truth[i].end);
            if let Some(i) = hit {
                used[i] = true;
            }
            hit
        })
        .collect()
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn accuracy(predicted: &[ScenarioId], actual: &[ScenarioId]) -> Option<f64> {
    let hits = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    ratio(hits, actual.len())
}

/// Detects events with the model's settings and scores them against `truth`.
pub fn evaluate(
    series: &TimeSeries,
    truth: &[TruthEvent],
    model: &Model,
    drift: DriftConfig,
    updated_mode: VoteMode,
) -> Result<EvalReport> {
    check_truth(truth, series.duration())?;
    let settings = model
        .detection
        .as_ref()
        .ok_or_else(|| CliError::Model("model carries no detection settings".into()))?;
    let events = segment(series, settings)?;
    let starts: Vec<f64> = events.iter().map(|e| e.start).collect();
    let matches = match_events(&starts, truth, settings.interval_len);
    let matched = matches.iter().flatten().count();
    let detection = DetectionMetrics {
        truth_events: truth.len(),
        detected: events.len(),
        matched,
        precision: ratio(matched, events.len()).unwrap_or(1.0),
        recall: ratio(matched, truth.len()).unwrap_or(1.0),
    };
    let classification = classify_matched(&events, &matches, truth, model, drift, updated_mode)?;
    Ok(EvalReport {
        detection,
        classification,
    })
}

fn classify_matched(
    events: &[EventSegment],
    matches: &[Option<usize>],
    truth: &[TruthEvent],
    model: &Model,
    drift: DriftConfig,
    updated_mode: VoteMode,
) -> Result<ClassificationMetrics> {
    let best = (0..model.fc.len())
        .max_by(|&a, &b| model.fc[a].total_cmp(&model.fc[b]).then(b.cmp(&a)))
        .expect("model has descriptors");
    let mut actual = Vec::new();
    let mut single = Vec::new();
    let mut voted: Vec<Vec<ScenarioId>> = vec![Vec::new(); VoteMode::ALL.len()];
    let mut updated = Vec::new();
    let mut state = DriftState::from_model(model, drift)?;
    for (e, m) in events.iter().zip(matches) {
        // the drifting centers see every detection, matched or not
        let tracked = infer(e, model, Some(&mut state), updated_mode)?;
        let Some(t) = m else { continue };
        actual.push(truth[*t].label.clone());
        updated.push(tracked.estimate.scenario);
        let votes = descriptor_votes(model, &tracked.features, None);
        single.push(votes[best].scenario.clone());
        for (k, mode) in VoteMode::ALL.iter().enumerate() {
            voted[k].push(majority_vote(&votes, *mode)?.scenario);
        }
    }
    Ok(ClassificationMetrics {
        evaluated: actual.len(),
        single_best_descriptor: model.descriptors[best].to_string(),
        single_best: accuracy(&single, &actual),
        majority_vote: VoteMode::ALL
            .iter()
            .zip(&voted)
            .map(|(m, p)| (mode_name(*m).to_string(), accuracy(p, &actual)))
            .collect(),
        updated_centers_mode: updated_mode,
        updated_centers: accuracy(&updated, &actual),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(start: f64, label: &str) -> TruthEvent {
        TruthEvent {
            start,
            end: start + 0.5,
            label: label.into(),
        }
    }

    #[test]
    fn matching_is_one_to_one() {
        let truth = [t(1.0, "on"), t(2.0, "off"), t(3.0, "on")];
        let m = match_events(&[0.99, 1.2, 2.01, 5.0], &truth, 0.033);
        assert_eq!(m, vec![Some(0), None, Some(1), None]);
    }

    #[test]
    fn early_start_within_lead_matches() {
        let truth = [t(1.0, "on")];
        assert_eq!(match_events(&[0.97], &truth, 0.033), vec![Some(0)]);
        assert_eq!(match_events(&[0.9], &truth, 0.033), vec![None]);
    }

    #[test]
    fn accuracy_extremes() {
        let a: Vec<ScenarioId> = vec!["on".into(), "off".into()];
        let flipped: Vec<ScenarioId> = vec!["off".into(), "on".into()];
        assert_eq!(accuracy(&a, &a), Some(1.0));
        assert_eq!(accuracy(&flipped, &a), Some(0.0));
        assert_eq!(accuracy(&[], &[]), None);
    }

    #[test]
    fn truth_checks() {
        assert!(check_truth(&[t(1.0, "on"), t(0.5, "off")], 10.0).is_err());
        assert!(check_truth(&[t(11.0, "on")], 10.0).is_err());
        assert!(check_truth(&[t(1.0, "on"), t(2.0, "off")], 10.0).is_ok());
    }
}
