//! Inference: nearest-center estimation per selected descriptor, a vote over
//! descriptors, and EWMA tracking of the centers with aging alarms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detector::EventSegment;
use crate::error::{invalid, Error, Result};
use crate::features::extract_descriptors;
use crate::scenario::ScenarioId;
use crate::selector::Model;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_GATE_SIGMAS: f64 = 3.0;
pub const DEFAULT_ALARM_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    #[default]
    Equal,
    FcWeighted,
    ProbWeighted,
}

impl VoteMode {
    pub const ALL: [VoteMode; 3] = [VoteMode::Equal, VoteMode::FcWeighted, VoteMode::ProbWeighted];
}

/// Assigns `value` to the nearest of `centers` and returns its index with the
/// probability `1 - d_own / d`, where `d` is the distance between the two
/// centers nearest to the value. Ties go to the lower index. Coinciding
/// centers give probability 0.5.
pub fn classify_one(value: f64, centers: &[f64]) -> (usize, f64) {
    assert!(centers.len() >= 2, "classification needs at least two centers");
    let mut order: Vec<usize> = (0..centers.len()).collect();
    order.sort_by(|&a, &b| (value - centers[a]).abs().total_cmp(&(value - centers[b]).abs()).then(a.cmp(&b)));
    let (a, b) = (order[0], order[1]);
    let d = (centers[a] - centers[b]).abs();
    if d == 0.0 {
        return (a.min(b), 0.5);
    }
    let own = (value - centers[a]).abs();
    (a, (1.0 - own / d).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub scenario: ScenarioId,
    pub probability: f64,
    /// Quality score of the voting descriptor.
    pub fc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEstimate {
    pub scenario: ScenarioId,
    pub probability: f64,
    pub votes: Vec<Vote>,
    pub mode: VoteMode,
}

fn vote_weight(v: &Vote, mode: VoteMode) -> f64 {
    match mode {
        VoteMode::Equal => 1.0,
        VoteMode::FcWeighted => v.fc.max(0.0),
        VoteMode::ProbWeighted => v.probability,
    }
}

/// Combines per-descriptor votes. The estimate's probability is the winner's
/// share of the total weight. When every weight is zero the votes count
/// equally.
pub fn majority_vote(votes: &[Vote], mode: VoteMode) -> Result<ScenarioEstimate> {
    if votes.is_empty() {
        return invalid("majority vote needs at least one vote");
    }
    let mut effective = mode;
    if votes.iter().map(|v| vote_weight(v, mode)).sum::<f64>() <= 0.0 {
        effective = VoteMode::Equal;
    }
    // (summed weight, summed probability) per scenario
    let mut tally: BTreeMap<&ScenarioId, (f64, f64)> = BTreeMap::new();
    for v in votes {
        let e = tally.entry(&v.scenario).or_default();
        e.0 += vote_weight(v, effective);
        e.1 += v.probability;
    }
    let total: f64 = tally.values().map(|t| t.0).sum();
    let mut best: Option<(&ScenarioId, (f64, f64))> = None;
    for (&s, &t) in &tally {
        best = match best {
            Some((_, b)) if t.0 < b.0 || (t.0 == b.0 && t.1 <= b.1) => best,
            _ => Some((s, t)),
        };
    }
    let (winner, (weight, _)) = best.expect("non-empty tally");
    Ok(ScenarioEstimate {
        scenario: winner.clone(),
        probability: weight / total,
        votes: votes.to_vec(),
        mode,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub alpha: f64,
    /// Half-width of the update gate in training standard deviations.
    pub gate_sigmas: f64,
    /// Alarm when the center rises more than this many training standard
    /// deviations above its initial position.
    pub alarm_upper: f64,
    /// Same, for falling centers.
    pub alarm_lower: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            gate_sigmas: DEFAULT_GATE_SIGMAS,
            alarm_upper: DEFAULT_ALARM_THRESHOLD,
            alarm_lower: DEFAULT_ALARM_THRESHOLD,
        }
    }
}

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return invalid(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.gate_sigmas >= 0.0) {
            return invalid("gate width must be non-negative");
        }
        if !(self.alarm_upper > 0.0) || !(self.alarm_lower > 0.0) {
            return invalid("alarm thresholds must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterTrack {
    pub current: f64,
    pub initial: f64,
    /// Training standard deviation, frozen.
    pub sigma: f64,
    pub alarm: bool,
    /// Stream time of the first alarm, kept after the alarm clears.
    pub first_alarm: Option<f64>,
}

impl CenterTrack {
    pub fn displacement(&self) -> f64 {
        self.current - self.initial
    }

    /// Displacement in training standard deviations.
    pub fn sigma_displacement(&self) -> f64 {
        let d = self.displacement();
        if d == 0.0 {
            0.0
        } else {
            d / self.sigma
        }
    }
}

/// Tracked centers, indexed `[scenario][descriptor]` like the model's centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftState {
    pub scenarios: Vec<ScenarioId>,
    pub config: DriftConfig,
    pub tracks: Vec<Vec<CenterTrack>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub scenario: ScenarioId,
    pub descriptor: usize,
    pub displacement: f64,
    pub sigma_displacement: f64,
    pub first_triggered: f64,
    /// Raised by this check rather than carried over.
    pub new: bool,
}

impl DriftState {
    pub fn from_model(model: &Model, config: DriftConfig) -> Result<Self> {
        config.validate()?;
        let tracks = model
            .centers
            .centers
            .iter()
            .zip(&model.centers.stds)
            .map(|(cs, ss)| {
                cs.iter()
                    .zip(ss)
                    .map(|(&c, &s)| CenterTrack {
                        current: c,
                        initial: c,
                        sigma: s,
                        alarm: false,
                        first_alarm: None,
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            scenarios: model.centers.scenarios.clone(),
            config,
            tracks,
        })
    }

    pub fn scenario_index(&self, id: &ScenarioId) -> Option<usize> {
        self.scenarios.iter().position(|s| s == id)
    }

    /// Current centers of every scenario for descriptor `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.tracks.iter().map(|t| t[j].current).collect()
    }

    /// EWMA step for the assigned scenario. Values farther than
    /// `gate_sigmas * sigma` from the current center are ignored. Returns the
    /// number of centers that moved.
    pub fn update_centers(&mut self, scenario: &ScenarioId, features: &[f64]) -> Result<usize> {
        let s = self
            .scenario_index(scenario)
            .ok_or_else(|| Error::UnknownScenario(scenario.to_string()))?;
        if features.len() != self.tracks[s].len() {
            return Err(Error::DescriptorMismatch(format!(
                "{} feature values for {} tracked descriptors",
                features.len(),
                self.tracks[s].len()
            )));
        }
        let alpha = self.config.alpha;
        let gate = self.config.gate_sigmas;
        let mut moved = 0;
        for (t, &f) in self.tracks[s].iter_mut().zip(features) {
            if (f - t.current).abs() <= gate * t.sigma {
                let next = alpha * f + (1.0 - alpha) * t.current;
                if next != t.current {
                    moved += 1;
                }
                t.current = next;
            }
        }
        Ok(moved)
    }

    /// Re-evaluates every alarm flag at stream time `time` and returns the
    /// active alarms.
    pub fn check_alarms(&mut self, time: f64) -> Vec<AlarmEvent> {
        let (upper, lower) = (self.config.alarm_upper, self.config.alarm_lower);
        let mut out = Vec::new();
        for (s, row) in self.tracks.iter_mut().enumerate() {
            for (j, t) in row.iter_mut().enumerate() {
                let z = t.sigma_displacement();
                let active = z > upper || -z > lower;
                let new = active && t.first_alarm.is_none();
                if new {
                    t.first_alarm = Some(time);
                }
                t.alarm = active;
                if active {
                    out.push(AlarmEvent {
                        scenario: self.scenarios[s].clone(),
                        descriptor: j,
                        displacement: t.displacement(),
                        sigma_displacement: z,
                        first_triggered: t.first_alarm.expect("set above"),
                        new,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub estimate: ScenarioEstimate,
    /// Normalized values of the selected descriptors.
    pub features: Vec<f64>,
    pub alarms: Vec<AlarmEvent>,
}

/// Per-descriptor votes for already normalized feature values.
pub fn descriptor_votes(model: &Model, features: &[f64], state: Option<&DriftState>) -> Vec<Vote> {
    features
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let centers = match state {
                Some(st) => st.column(j),
                None => model.centers.column(j),
            };
            let (s, p) = classify_one(v, &centers);
            Vote {
                scenario: model.centers.scenarios[s].clone(),
                probability: p,
                fc: model.fc[j],
            }
        })
        .collect()
}

/// Classifies one event. Only the model's selected descriptors are computed.
/// With a drift state, classification uses the tracked centers, and the
/// winning scenario's centers are then updated and alarms re-evaluated.
pub fn infer(event: &EventSegment, model: &Model, state: Option<&mut DriftState>, mode: VoteMode) -> Result<Inference> {
    let raw = extract_descriptors(event, &model.descriptors)?;
    let features = model.normalizer.apply_values(&raw)?;
    let votes = descriptor_votes(model, &features, state.as_deref());
    let estimate = majority_vote(&votes, mode)?;
    let alarms = match state {
        Some(st) => {
            st.update_centers(&estimate.scenario, &features)?;
            st.check_alarms(event.start)
        }
        None => Vec::new(),
    };
    Ok(Inference {
        estimate,
        features,
        alarms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vote(s: &str, p: f64, fc: f64) -> Vote {
        Vote {
            scenario: s.into(),
            probability: p,
            fc,
        }
    }

    fn state(centers: &[f64], sigma: f64) -> DriftState {
        DriftState {
            scenarios: vec!["a".into(), "b".into()],
            config: DriftConfig::default(),
            tracks: vec![centers
                .iter()
                .map(|&c| CenterTrack {
                    current: c,
                    initial: c,
                    sigma,
                    alarm: false,
                    first_alarm: None,
                })
                .collect(); 2],
        }
    }

    #[test]
    fn value_at_center() {
        assert_eq!(classify_one(2.0, &[2.0, 6.0]), (0, 1.0));
        assert_eq!(classify_one(6.0, &[2.0, 6.0]), (1, 1.0));
    }

    #[test]
    fn midpoint_is_half() {
        assert_eq!(classify_one(4.0, &[2.0, 6.0]), (0, 0.5));
    }

    #[test]
    fn fifth_of_the_way() {
        let (s, p) = classify_one(0.2, &[0.0, 1.0]);
        assert_eq!(s, 0);
        assert!((p - 0.8).abs() < 1e-12);
    }

    #[test]
    fn beyond_the_far_side_is_clamped() {
        assert_eq!(classify_one(-10.0, &[0.0, 1.0]), (0, 0.0));
    }

    #[test]
    fn equal_centers_are_ambiguous() {
        assert_eq!(classify_one(1.0, &[3.0, 3.0]), (0, 0.5));
    }

    #[test]
    fn three_scenarios_use_two_nearest() {
        // nearest centers 10 and 11; 0 is ignored
        let (s, p) = classify_one(10.2, &[0.0, 10.0, 11.0]);
        assert_eq!(s, 1);
        assert!((p - 0.8).abs() < 1e-9);
    }

    #[test]
    fn four_of_five() {
        let votes: Vec<_> = (0..4).map(|_| vote("on", 0.9, 0.5)).chain([vote("off", 0.9, 0.5)]).collect();
        let e = majority_vote(&votes, VoteMode::Equal).unwrap();
        assert_eq!(e.scenario.as_str(), "on");
        assert!((e.probability - 0.8).abs() < 1e-12);
        assert_eq!(e.votes.len(), 5);
    }

    #[test]
    fn probability_weighted_split() {
        let votes = [vote("a", 0.6, 1.0), vote("b", 0.9, 1.0)];
        assert_eq!(majority_vote(&votes, VoteMode::ProbWeighted).unwrap().scenario.as_str(), "b");
        // equal weights tie; summed probability decides
        assert_eq!(majority_vote(&votes, VoteMode::Equal).unwrap().scenario.as_str(), "b");
    }

    #[test]
    fn fc_weighted() {
        let votes = [vote("a", 1.0, 0.2), vote("a", 1.0, 0.2), vote("b", 0.5, 0.9)];
        let e = majority_vote(&votes, VoteMode::FcWeighted).unwrap();
        assert_eq!(e.scenario.as_str(), "b");
        assert!((e.probability - 0.9 / 1.3).abs() < 1e-12);
    }

    #[test]
    fn full_tie_goes_to_first_scenario() {
        let votes = [vote("b", 0.7, 0.5), vote("a", 0.7, 0.5)];
        assert_eq!(majority_vote(&votes, VoteMode::Equal).unwrap().scenario.as_str(), "a");
    }

    #[test]
    fn single_vote_wins_in_every_mode() {
        for mode in VoteMode::ALL {
            let e = majority_vote(&[vote("x", 0.3, 0.1)], mode).unwrap();
            assert_eq!(e.scenario.as_str(), "x");
            assert_eq!(e.probability, 1.0);
        }
    }

    #[test]
    fn zero_weights_fall_back_to_counting() {
        let votes = [vote("a", 0.0, 0.0), vote("a", 0.0, 0.0), vote("b", 0.0, 0.0)];
        let e = majority_vote(&votes, VoteMode::ProbWeighted).unwrap();
        assert_eq!(e.scenario.as_str(), "a");
        assert!((e.probability - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_vote_is_an_error() {
        assert!(majority_vote(&[], VoteMode::Equal).is_err());
    }

    #[test]
    fn ewma_fixed_point() {
        let mut st = state(&[0.5], 1.0);
        st.update_centers(&"a".into(), &[0.5]).unwrap();
        assert_eq!(st.tracks[0][0].current, 0.5);
    }

    #[test]
    fn ewma_step() {
        let mut st = state(&[0.0], 100.0);
        assert_eq!(st.update_centers(&"a".into(), &[1.0]).unwrap(), 1);
        assert!((st.tracks[0][0].current - 0.05).abs() < 1e-15);
        // the other scenario is untouched
        assert_eq!(st.tracks[1][0].current, 0.0);
    }

    #[test]
    fn gate_blocks_outliers() {
        let mut st = state(&[0.0], 0.1);
        assert_eq!(st.update_centers(&"a".into(), &[0.31]).unwrap(), 0);
        assert_eq!(st.tracks[0][0].current, 0.0);
        // exactly on the gate edge is admitted
        st.update_centers(&"a".into(), &[0.25]).unwrap();
        assert!(st.tracks[0][0].current > 0.0);
    }

    #[test]
    fn update_errors() {
        let mut st = state(&[0.0], 1.0);
        assert!(matches!(st.update_centers(&"zz".into(), &[0.0]), Err(Error::UnknownScenario(_))));
        assert!(st.update_centers(&"a".into(), &[0.0, 1.0]).is_err());
    }

    #[test]
    fn alarm_rules() {
        let mut st = state(&[0.0], 1.0);
        assert!(st.check_alarms(0.0).is_empty());
        st.tracks[0][0].current = 3.0;
        assert!(st.check_alarms(1.0).is_empty(), "exactly at threshold");
        st.tracks[0][0].current = 3.5;
        let a = st.check_alarms(2.0);
        assert_eq!(a.len(), 1);
        assert!(a[0].new);
        assert_eq!(a[0].first_triggered, 2.0);
        let again = st.check_alarms(3.0);
        assert!(!again[0].new);
        assert_eq!(again[0].first_triggered, 2.0);
        st.tracks[0][0].current = -3.5;
        assert_eq!(st.check_alarms(4.0).len(), 1);
        st.tracks[0][0].current = 0.0;
        assert!(st.check_alarms(5.0).is_empty());
        assert!(!st.tracks[0][0].alarm);
        assert_eq!(st.tracks[0][0].first_alarm, Some(2.0));
    }

    #[test]
    fn drift_config_validation() {
        let bad = DriftConfig {
            alpha: 1.5,
            ..DriftConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = DriftConfig {
            alarm_upper: 0.0,
            ..DriftConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
