//! Run configuration, loaded from TOML and overridden by flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use switchsel_core::classifier::{DriftConfig, VoteMode, DEFAULT_ALARM_THRESHOLD, DEFAULT_ALPHA, DEFAULT_GATE_SIGMAS};
use switchsel_core::detector::DEFAULT_MARGIN_K;
use switchsel_core::features::{FeatureKind, DEFAULT_CUTOFFS};
use switchsel_core::selector::{TrainOptions, DEFAULT_SELECTED, DEFAULT_TRAINING_PER_SCENARIO};
use switchsel_core::ScenarioId;

use crate::error::{CliError, Result};

pub const DEFAULT_INTERVAL_LEN: f64 = 0.033;
pub const DEFAULT_MERGE_GAP: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Interval length of the power series, seconds.
    pub interval_len: f64,
    /// Detection threshold in noise standard deviations above the noise mean.
    pub margin_k: f64,
    pub cutoffs: Vec<f64>,
    pub kinds: Vec<FeatureKind>,
    /// Number of descriptors kept.
    pub selected: usize,
    pub alpha: f64,
    pub gate_sigmas: f64,
    pub vote_mode: VoteMode,
    pub alarm_upper: f64,
    pub alarm_lower: f64,
    /// Channel the detector runs on; the first channel when unset.
    pub trigger_channel: Option<String>,
    pub scenario_cycle: Vec<ScenarioId>,
    /// Label of the first detected event; the first cycle entry when unset.
    pub start_state: Option<ScenarioId>,
    pub training_per_scenario: usize,
    /// Known switching time in seconds. Estimated from the recording when unset.
    pub switching_time: Option<f64>,
    /// Bursts closer than this (seconds) count as one actuation when
    /// estimating switching time.
    pub merge_gap: f64,
    /// Overrides the seed of synthesized corpora.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            interval_len: DEFAULT_INTERVAL_LEN,
            margin_k: DEFAULT_MARGIN_K,
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            kinds: FeatureKind::ALL.to_vec(),
            selected: DEFAULT_SELECTED,
            alpha: DEFAULT_ALPHA,
            gate_sigmas: DEFAULT_GATE_SIGMAS,
            vote_mode: VoteMode::Equal,
            alarm_upper: DEFAULT_ALARM_THRESHOLD,
            alarm_lower: DEFAULT_ALARM_THRESHOLD,
            trigger_channel: None,
            scenario_cycle: vec!["on".into(), "off".into()],
            start_state: None,
            training_per_scenario: DEFAULT_TRAINING_PER_SCENARIO,
            switching_time: None,
            merge_gap: DEFAULT_MERGE_GAP,
            seed: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if !(self.interval_len > 0.0) || !self.interval_len.is_finite() {
            return bad(format!("interval_len must be positive, got {}", self.interval_len));
        }
        if !(self.margin_k >= 0.0) || !self.margin_k.is_finite() {
            return bad(format!("margin_k must be non-negative, got {}", self.margin_k));
        }
        if self.cutoffs.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return bad("cutoffs must be positive".into());
        }
        if self.kinds.is_empty() {
            return bad("kinds must not be empty".into());
        }
        if self.selected == 0 {
            return bad("selected must be at least 1".into());
        }
        if self.training_per_scenario == 0 {
            return bad("training_per_scenario must be at least 1".into());
        }
        if self.scenario_cycle.len() < 2 {
            return bad("scenario_cycle needs at least two scenarios".into());
        }
        let mut seen = self.scenario_cycle.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.scenario_cycle.len() {
            return bad("scenario_cycle has duplicate entries".into());
        }
        if let Some(s) = &self.start_state {
            if !self.scenario_cycle.contains(s) {
                return bad(format!("start_state `{s}` is not in scenario_cycle"));
            }
        }
        if let Some(t) = self.switching_time {
            if !(t > 0.0) || !t.is_finite() {
                return bad(format!("switching_time must be positive, got {t}"));
            }
        }
        if !(self.merge_gap >= 0.0) || !self.merge_gap.is_finite() {
            return bad(format!("merge_gap must be non-negative, got {}", self.merge_gap));
        }
        self.drift_config().validate().map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn start_state(&self) -> ScenarioId {
        self.start_state.clone().unwrap_or_else(|| self.scenario_cycle[0].clone())
    }

    pub fn drift_config(&self) -> DriftConfig {
        DriftConfig {
            alpha: self.alpha,
            gate_sigmas: self.gate_sigmas,
            alarm_upper: self.alarm_upper,
            alarm_lower: self.alarm_lower,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            cutoffs: self.cutoffs.clone(),
            kinds: self.kinds.clone(),
            selected: self.selected,
            per_scenario: Some(self.training_per_scenario),
            scenario_cycle: Some(self.scenario_cycle.clone()),
        }
    }
}
