//! Recording-level steps shared by the commands.

use switchsel_core::detector::{
    auto_label, calibrate, detect, estimate_noise, estimate_switching_durations, EventSegment,
};
use switchsel_core::selector::{train, DetectionSettings, Training};
use switchsel_core::TimeSeries;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub fn trigger_index(series: &TimeSeries, name: Option<&str>) -> Result<usize> {
    match name {
        None => Ok(0),
        Some(n) => series
            .channel_index(n)
            .ok_or_else(|| CliError::Data(format!("recording has no channel `{n}`"))),
    }
}

/// Calibrates detection on a training recording and returns the settings with
/// the detected, unlabeled events.
pub fn calibrate_recording(series: &TimeSeries, config: &RunConfig) -> Result<(DetectionSettings, Vec<EventSegment>)> {
    let trigger = trigger_index(series, config.trigger_channel.as_deref())?;
    let psd = series.interval_psd(trigger, config.interval_len)?;
    let noise = estimate_noise(&psd, config.margin_k)?;
    let durations = match config.switching_time {
        Some(t) => vec![t],
        None => {
            let threshold = calibrate(&noise, config.margin_k, &[1.0])?.threshold;
            let d = estimate_switching_durations(&psd, threshold, config.merge_gap);
            if d.is_empty() {
                return Err(CliError::Data("no actuation rises above the detection threshold".into()));
            }
            d
        }
    };
    let calibration = calibrate(&noise, config.margin_k, &durations)?;
    let settings = DetectionSettings {
        calibration,
        interval_len: psd.interval_len,
        trigger_channel: series.channel_names()[trigger].clone(),
    };
    let events = segment(series, &settings)?;
    Ok((settings, events))
}

/// Detects and excerpts events with fixed detection settings.
pub fn segment(series: &TimeSeries, settings: &DetectionSettings) -> Result<Vec<EventSegment>> {
    let trigger = trigger_index(series, Some(&settings.trigger_channel))?;
    let psd = series.interval_psd(trigger, settings.interval_len)?;
    detect(&psd, &settings.calibration)
        .into_iter()
        .map(|w| EventSegment::excerpt(series, w, None).map_err(CliError::from))
        .collect()
}

/// Detect, label, extract, select. The model carries the detection settings.
pub fn train_recording(series: &TimeSeries, config: &RunConfig) -> Result<Training> {
    config.validate()?;
    let (settings, events) = calibrate_recording(series, config)?;
    let required = config.scenario_cycle.len() * config.training_per_scenario;
    if events.len() < required {
        return Err(CliError::Data(format!(
            "insufficient events: detected {}, required {required} ({} scenarios x {})",
            events.len(),
            config.scenario_cycle.len(),
            config.training_per_scenario
        )));
    }
    let labeled = auto_label(events, &config.scenario_cycle, &config.start_state())?;
    let mut training = train(&labeled, &config.train_options())?;
    training.model.detection = Some(settings);
    Ok(training)
}
