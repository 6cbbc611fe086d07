//! Threshold detection of actuations on interval power streams.
//!
//! The threshold is `mean + k * std` of actuation-free interval powers. An
//! event starts at the first interval above threshold; further crossings
//! within the refractory period (the average switching time) are ignored, so
//! secondary peaks such as a spring snapping into place do not produce a
//! second event. Every event spans exactly one refractory period.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scenario::ScenarioId;
use crate::signal::{IntervalPsdSeries, TimeSeries};

pub const DEFAULT_MARGIN_K: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCalibration {
    pub threshold: f64,
    pub mean_noise: f64,
    pub std_noise: f64,
    pub margin_k: f64,
    /// Average switching time in seconds.
    pub refractory: f64,
}

/// Start/end of a detected actuation, in seconds from the start of the stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventWindow {
    pub start: f64,
    pub end: f64,
}

impl EventWindow {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// A detected actuation with its per-channel excerpt.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSegment {
    pub start: f64,
    pub end: f64,
    pub label: Option<ScenarioId>,
    pub samples: TimeSeries,
}

impl EventSegment {
    /// Cuts `window` out of `series`. A window running past the end of the
    /// recording is truncated; see [`EventSegment::is_complete`].
    pub fn excerpt(series: &TimeSeries, window: EventWindow, label: Option<ScenarioId>) -> Result<Self> {
        if !(window.end > window.start) {
            return invalid(format!("event window end {} <= start {}", window.end, window.start));
        }
        let fs = series.sample_rate();
        let first = (window.start * fs).round().max(0.0) as usize;
        let last = ((window.end * fs).round() as usize).min(series.len());
        if first >= last {
            return invalid(format!("event window at {} s lies outside the recording", window.start));
        }
        let channels = series.channels().iter().map(|c| c[first..last].to_vec()).collect();
        Ok(Self {
            start: window.start,
            end: window.end,
            label,
            samples: TimeSeries::new(channels, fs, series.channel_names().to_vec())?,
        })
    }

    pub fn window(&self) -> EventWindow {
        EventWindow {
            start: self.start,
            end: self.end,
        }
    }

    /// True when the excerpt holds the full window (within one sample).
    pub fn is_complete(&self) -> bool {
        let expected = (self.end - self.start) * self.samples.sample_rate();
        (self.samples.len() as f64 - expected).abs() <= 1.0
    }

    pub fn with_label(mut self, label: ScenarioId) -> Self {
        self.label = Some(label);
        self
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Threshold and refractory period from actuation-free interval powers and
/// known switching durations.
pub fn calibrate(noise_psd: &IntervalPsdSeries, margin_k: f64, switching_durations: &[f64]) -> Result<DetectionCalibration> {
    if noise_psd.len() < 10 {
        return invalid(format!("calibration needs at least 10 noise intervals, got {}", noise_psd.len()));
    }
    if switching_durations.is_empty() {
        return invalid("calibration needs at least one switching duration");
    }
    if !(margin_k >= 0.0) || !margin_k.is_finite() {
        return invalid(format!("margin k must be non-negative, got {margin_k}"));
    }
    if switching_durations.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return invalid("switching durations must be positive");
    }
    let (mean_noise, std_noise) = mean_std(&noise_psd.values);
    let refractory = switching_durations.iter().sum::<f64>() / switching_durations.len() as f64;
    Ok(DetectionCalibration {
        threshold: mean_noise + margin_k * std_noise,
        mean_noise,
        std_noise,
        margin_k,
        refractory,
    })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Picks the actuation-free intervals of a recording that also contains
/// actuations. Starts from `median + k * MAD` (scaled to a standard
/// deviation), then repeatedly discards values above `mean + k * std` of the
/// kept set until it stops changing.
pub fn estimate_noise(psd: &IntervalPsdSeries, margin_k: f64) -> Result<IntervalPsdSeries> {
    if psd.is_empty() {
        return invalid("empty interval power series");
    }
    let mut sorted = psd.values.clone();
    sorted.sort_by(f64::total_cmp);
    let med = median(&sorted);
    let mut dev: Vec<f64> = sorted.iter().map(|v| (v - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let cut = med + margin_k * 1.4826 * median(&dev);
    let mut kept: Vec<f64> = psd.values.iter().copied().filter(|&v| v <= cut).collect();
    for _ in 0..50 {
        let (mean, std) = mean_std(&kept);
        let cut = mean + margin_k * std;
        let next: Vec<f64> = psd.values.iter().copied().filter(|&v| v <= cut).collect();
        if next.len() == kept.len() || next.is_empty() {
            break;
        }
        kept = next;
    }
    Ok(IntervalPsdSeries {
        values: kept,
        ..psd.clone()
    })
}

/// Durations of above-threshold bursts. Bursts separated by less than
/// `merge_gap` seconds count as one actuation.
pub fn estimate_switching_durations(psd: &IntervalPsdSeries, threshold: f64, merge_gap: f64) -> Vec<f64> {
    let gap_intervals = (merge_gap / psd.interval_len).ceil() as usize;
    let mut out = Vec::new();
    let mut run: Option<(usize, usize)> = None;
    for (i, &v) in psd.values.iter().enumerate() {
        if v > threshold {
            run = match run {
                Some((start, last)) if i - last <= gap_intervals => Some((start, i)),
                Some((start, last)) => {
                    out.push((last - start + 1) as f64 * psd.interval_len);
                    Some((i, i))
                }
                None => Some((i, i)),
            };
        }
    }
    if let Some((start, last)) = run {
        out.push((last - start + 1) as f64 * psd.interval_len);
    }
    out
}

/// Single-writer streaming detector over interval power values.
#[derive(Debug, Clone)]
pub struct StreamingDetector {
    calibration: DetectionCalibration,
    interval_len: f64,
    next_index: usize,
    last_start: Option<f64>,
}

impl StreamingDetector {
    pub fn new(calibration: DetectionCalibration, interval_len: f64) -> Result<Self> {
        if !(calibration.refractory > 0.0) {
            return invalid("refractory period must be positive");
        }
        if !(interval_len > 0.0) {
            return invalid("interval length must be positive");
        }
        Ok(Self {
            calibration,
            interval_len,
            next_index: 0,
            last_start: None,
        })
    }

    pub fn calibration(&self) -> &DetectionCalibration {
        &self.calibration
    }

    /// Consumes the next interval power; returns a window if an event starts here.
    pub fn push(&mut self, value: f64) -> Option<EventWindow> {
        let t = self.next_index as f64 * self.interval_len;
        self.next_index += 1;
        if !(value > self.calibration.threshold) {
            return None;
        }
        if let Some(last) = self.last_start {
            // Tolerate the rounding of index * interval_len.
            if t - last < self.calibration.refractory - 1e-9 {
                return None;
            }
        }
        self.last_start = Some(t);
        Some(EventWindow {
            start: t,
            end: t + self.calibration.refractory,
        })
    }
}

/// Batch detection over a whole interval power series.
pub fn detect(psd: &IntervalPsdSeries, calibration: &DetectionCalibration) -> Vec<EventWindow> {
    let Ok(mut detector) = StreamingDetector::new(calibration.clone(), psd.interval_len) else {
        return Vec::new();
    };
    psd.values.iter().filter_map(|&v| detector.push(v)).collect()
}

/// Assigns labels by walking `cycle`, beginning at `start_state`.
pub fn auto_label(events: Vec<EventSegment>, cycle: &[ScenarioId], start_state: &ScenarioId) -> Result<Vec<EventSegment>> {
    if cycle.is_empty() {
        return invalid("scenario cycle is empty");
    }
    let offset = cycle
        .iter()
        .position(|s| s == start_state)
        .ok_or_else(|| Error::UnknownScenario(start_state.to_string()))?;
    Ok(events
        .into_iter()
        .enumerate()
        .map(|(i, e)| e.with_label(cycle[(offset + i) % cycle.len()].clone()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: Vec<f64>, interval_len: f64) -> IntervalPsdSeries {
        IntervalPsdSeries {
            values,
            interval_len,
            interval_samples: 10,
            channel: "ch0".into(),
        }
    }

    fn calib(threshold: f64, refractory: f64) -> DetectionCalibration {
        DetectionCalibration {
            threshold,
            mean_noise: 0.0,
            std_noise: 0.0,
            margin_k: 0.0,
            refractory,
        }
    }

    fn dummy_event(i: usize) -> EventSegment {
        EventSegment {
            start: i as f64,
            end: i as f64 + 0.5,
            label: None,
            samples: TimeSeries::mono(vec![0.0; 5], 10.0).unwrap(),
        }
    }

    #[test]
    fn constant_noise_threshold_equals_level() {
        let c = calibrate(&series(vec![0.7; 12], 0.1), 6.0, &[0.5]).unwrap();
        assert!((c.threshold - 0.7).abs() < 1e-12);
        assert!(c.std_noise < 1e-12);
    }

    #[test]
    fn threshold_arithmetic() {
        // mean 1.0, population std 0.2
        let mut v = vec![0.8; 6];
        v.extend(vec![1.2; 6]);
        let c = calibrate(&series(v, 0.1), 5.0, &[0.3, 0.5]).unwrap();
        assert!((c.mean_noise - 1.0).abs() < 1e-12);
        assert!((c.std_noise - 0.2).abs() < 1e-12);
        assert!((c.threshold - 2.0).abs() < 1e-12);
        assert!((c.refractory - 0.4).abs() < 1e-12);
    }

    #[test]
    fn calibrate_errors() {
        assert!(calibrate(&series(vec![1.0; 9], 0.1), 6.0, &[0.5]).is_err());
        assert!(calibrate(&series(vec![1.0; 10], 0.1), 6.0, &[]).is_err());
        assert!(calibrate(&series(vec![1.0; 10], 0.1), -1.0, &[0.5]).is_err());
        assert!(calibrate(&series(vec![1.0; 10], 0.1), 6.0, &[0.0]).is_err());
    }

    #[test]
    fn nothing_above_threshold() {
        assert!(detect(&series(vec![0.5; 50], 0.1), &calib(1.0, 0.3)).is_empty());
    }

    #[test]
    fn one_burst_one_event() {
        let mut v = vec![0.0; 40];
        v[10..14].iter_mut().for_each(|x| *x = 5.0);
        let ev = detect(&series(v, 0.1), &calib(1.0, 0.5));
        assert_eq!(ev.len(), 1);
        assert!((ev[0].start - 1.0).abs() < 1e-12);
        assert!((ev[0].end - 1.5).abs() < 1e-12);
    }

    #[test]
    fn second_peak_within_refractory_is_suppressed() {
        let mut v = vec![0.0; 40];
        v[10] = 5.0;
        v[11] = 3.0;
        v[14] = 4.0; // 0.4 s later, refractory 0.5 s
        let ev = detect(&series(v, 0.1), &calib(1.0, 0.5));
        assert_eq!(ev.len(), 1);
    }

    #[test]
    fn crossing_exactly_at_refractory_starts_new_event() {
        let mut v = vec![0.0; 40];
        v[10] = 5.0;
        v[15] = 5.0;
        let ev = detect(&series(v, 0.1), &calib(1.0, 0.5));
        assert_eq!(ev.len(), 2);
        assert!(ev[1].start - ev[0].start >= 0.5 - 1e-9);
    }

    #[test]
    fn raising_threshold_never_adds_events() {
        let v: Vec<f64> = (0..200).map(|i| ((i * 37) % 11) as f64).collect();
        let s = series(v, 0.05);
        let mut prev = usize::MAX;
        for t in 0..12 {
            let n = detect(&s, &calib(t as f64, 0.2)).len();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn noise_estimate_drops_bursts() {
        let mut v = vec![1.0; 100];
        for i in (0..100).step_by(2) {
            v[i] = 1.1;
        }
        v[20] = 500.0;
        v[60] = 800.0;
        let noise = estimate_noise(&series(v, 0.1), 6.0).unwrap();
        assert_eq!(noise.len(), 98);
        assert!(noise.values.iter().all(|&x| x < 2.0));
    }

    #[test]
    fn switching_durations_merge_close_bursts() {
        let mut v = vec![0.0; 60];
        v[5..8].iter_mut().for_each(|x| *x = 9.0);
        v[10] = 9.0; // gap of 2 intervals, merged
        v[40..42].iter_mut().for_each(|x| *x = 9.0);
        let d = estimate_switching_durations(&series(v, 0.1), 1.0, 0.25);
        assert_eq!(d.len(), 2);
        assert!((d[0] - 0.6).abs() < 1e-12);
        assert!((d[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn alternate_labels() {
        let cycle = [ScenarioId::from("on"), ScenarioId::from("off")];
        let events = (0..4).map(dummy_event).collect();
        let labeled = auto_label(events, &cycle, &"on".into()).unwrap();
        let got: Vec<_> = labeled.iter().map(|e| e.label.clone().unwrap().0).collect();
        assert_eq!(got, ["on", "off", "on", "off"]);
        assert!(labeled.iter().enumerate().all(|(i, e)| e.start == i as f64));
    }

    #[test]
    fn label_cycle_wraps_from_start_state() {
        let cycle: Vec<ScenarioId> = ["A", "B", "C"].into_iter().map(Into::into).collect();
        let labeled = auto_label((0..3).map(dummy_event).collect(), &cycle, &"B".into()).unwrap();
        let got: Vec<_> = labeled.iter().map(|e| e.label.clone().unwrap().0).collect();
        assert_eq!(got, ["B", "C", "A"]);
        assert!(auto_label(Vec::new(), &cycle, &"A".into()).unwrap().is_empty());
    }

    #[test]
    fn label_errors() {
        let cycle = [ScenarioId::from("on")];
        assert!(matches!(
            auto_label(vec![dummy_event(0)], &cycle, &"off".into()),
            Err(Error::UnknownScenario(_))
        ));
        assert!(auto_label(vec![dummy_event(0)], &[], &"off".into()).is_err());
    }

    #[test]
    fn excerpt_window() {
        let ts = TimeSeries::mono((0..100).map(|i| i as f64).collect(), 10.0).unwrap();
        let e = EventSegment::excerpt(&ts, EventWindow { start: 2.0, end: 3.0 }, None).unwrap();
        assert_eq!(e.samples.channel(0), &(20..30).map(|i| i as f64).collect::<Vec<_>>()[..]);
        assert!(e.is_complete());
        let tail = EventSegment::excerpt(&ts, EventWindow { start: 9.5, end: 10.5 }, None).unwrap();
        assert!(!tail.is_complete());
        assert!(EventSegment::excerpt(&ts, EventWindow { start: 11.0, end: 12.0 }, None).is_err());
    }
}
