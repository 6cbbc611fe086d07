//! Synthetic actuation recordings: damped spring oscillations in white
//! Gaussian noise, with per-event parameter scatter and optional linear
//! aging drift. Everything is reproducible from the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::detector::EventSegment;
use crate::error::{invalid, Result};
use crate::scenario::ScenarioId;
use crate::signal::TimeSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partial {
    pub freq: f64,
    pub rel_amplitude: f64,
}

/// Delayed second burst, e.g. a pre-tensioned spring snapping into place.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublePeak {
    pub delay: f64,
    pub rel_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuationSpec {
    pub dominant_freq: f64,
    #[serde(default)]
    pub secondary: Vec<Partial>,
    /// Exponential decay rate in 1/s.
    pub damping: f64,
    pub duration: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub double_peak: Option<DoublePeak>,
}

impl ActuationSpec {
    pub fn damped(dominant_freq: f64) -> Self {
        Self {
            dominant_freq,
            secondary: Vec::new(),
            damping: 30.0,
            duration: 0.5,
            amplitude: 1.0,
            double_peak: None,
        }
    }

    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        let nyquist = sample_rate / 2.0;
        if !(self.dominant_freq > 0.0 && self.dominant_freq < nyquist) {
            return invalid(format!("dominant frequency {} Hz outside (0, {nyquist})", self.dominant_freq));
        }
        if self.secondary.iter().any(|p| !(p.freq > 0.0 && p.freq < nyquist)) {
            return invalid("secondary frequency outside (0, Nyquist)");
        }
        if !(self.damping > 0.0) || !self.damping.is_finite() {
            return invalid(format!("damping must be positive, got {}", self.damping));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return invalid(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return invalid(format!("amplitude must be non-negative, got {}", self.amplitude));
        }
        if let Some(dp) = self.double_peak {
            if !(dp.delay > 0.0 && dp.delay < self.duration) {
                return invalid("double peak delay must lie inside the event duration");
            }
        }
        Ok(())
    }
}

fn burst(spec: &ActuationSpec, t: f64) -> f64 {
    let env = (-spec.damping * t).exp();
    let mut v = (2.0 * PI * spec.dominant_freq * t).sin();
    for p in &spec.secondary {
        v += p.rel_amplitude * (2.0 * PI * p.freq * t).sin();
    }
    env * v
}

/// Clean waveform of one actuation, `round(duration * sample_rate)` samples.
pub fn generate_event(spec: &ActuationSpec, sample_rate: f64) -> Result<Vec<f64>> {
    spec.validate(sample_rate)?;
    let n = (spec.duration * sample_rate).round() as usize;
    Ok((0..n)
        .map(|i| {
            let t = i as f64 / sample_rate;
            let mut v = burst(spec, t);
            if let Some(dp) = spec.double_peak {
                if t >= dp.delay {
                    v += dp.rel_amplitude * burst(spec, t - dp.delay);
                }
            }
            spec.amplitude * v
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub label: ScenarioId,
    pub actuation: ActuationSpec,
}

/// Relative standard deviations of the per-event parameter scatter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variability {
    pub freq: f64,
    pub damping: f64,
    pub amplitude: f64,
}

impl Default for Variability {
    fn default() -> Self {
        Self {
            freq: 0.02,
            damping: 0.05,
            amplitude: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftParameter {
    DominantFreq,
    Damping,
    Amplitude,
}

/// Linear trajectory of one parameter from the first to the last event of
/// the corpus; replaces the nominal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    /// Affected scenario; all scenarios when absent.
    #[serde(default)]
    pub scenario: Option<ScenarioId>,
    pub parameter: DriftParameter,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub sample_rate: f64,
    pub snr_db: f64,
    pub seed: u64,
    /// Scenarios in labeling order; events cycle through them.
    pub scenarios: Vec<ScenarioSpec>,
    pub events: usize,
    /// Start-to-start spacing, uniform in `[gap_min, gap_max]` seconds.
    pub gap_min: f64,
    pub gap_max: f64,
    /// Noise before the first event, seconds.
    pub lead_in: f64,
    #[serde(default)]
    pub variability: Variability,
    #[serde(default)]
    pub drift: Vec<DriftSpec>,
    pub channels: Vec<ChannelSpec>,
}

impl CorpusSpec {
    /// Two-class benchmark: 400 Hz (`on`) vs 700 Hz (`off`) damped springs at
    /// 48 kHz and 20 dB SNR.
    pub fn benchmark(events: usize, seed: u64) -> Self {
        Self {
            sample_rate: 48_000.0,
            snr_db: 20.0,
            seed,
            scenarios: vec![
                ScenarioSpec {
                    label: "on".into(),
                    actuation: ActuationSpec::damped(400.0),
                },
                ScenarioSpec {
                    label: "off".into(),
                    actuation: ActuationSpec::damped(700.0),
                },
            ],
            events,
            gap_min: 1.0,
            gap_max: 1.5,
            lead_in: 2.0,
            variability: Variability::default(),
            drift: Vec::new(),
            channels: vec![ChannelSpec {
                name: "ch0".into(),
                gain: 1.0,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) {
            return invalid("sample rate must be positive");
        }
        if !self.snr_db.is_finite() {
            return invalid("SNR must be finite");
        }
        if self.scenarios.is_empty() {
            return invalid("corpus needs at least one scenario");
        }
        if self.channels.is_empty() {
            return invalid("corpus needs at least one channel");
        }
        let mut max_duration: f64 = 0.0;
        for s in &self.scenarios {
            s.actuation.validate(self.sample_rate)?;
            max_duration = max_duration.max(s.actuation.duration);
        }
        if !(self.gap_min > max_duration) || self.gap_max < self.gap_min {
            return invalid(format!(
                "gaps [{}, {}] must exceed the longest event duration {max_duration}",
                self.gap_min, self.gap_max
            ));
        }
        if !(self.lead_in >= 0.0) {
            return invalid("lead-in must be non-negative");
        }
        let v = self.variability;
        if [v.freq, v.damping, v.amplitude].iter().any(|x| !(*x >= 0.0)) {
            return invalid("variability must be non-negative");
        }
        for d in &self.drift {
            if let Some(s) = &d.scenario {
                if !self.scenarios.iter().any(|sc| &sc.label == s) {
                    return invalid(format!("drift refers to unknown scenario `{s}`"));
                }
            }
        }
        Ok(())
    }

    fn drifted(&self, scenario: usize, event_index: usize) -> ActuationSpec {
        let mut spec = self.scenarios[scenario].actuation.clone();
        let frac = if self.events > 1 {
            event_index as f64 / (self.events - 1) as f64
        } else {
            0.0
        };
        for d in &self.drift {
            if d.scenario.as_ref().is_some_and(|s| s != &self.scenarios[scenario].label) {
                continue;
            }
            let v = d.from + (d.to - d.from) * frac;
            match d.parameter {
                DriftParameter::DominantFreq => spec.dominant_freq = v,
                DriftParameter::Damping => spec.damping = v,
                DriftParameter::Amplitude => spec.amplitude = v,
            }
        }
        spec
    }

    /// Nominal mean event power over the schedule, the SNR reference.
    fn reference_power(&self) -> Result<f64> {
        let n = self.scenarios.len();
        let mut weights = vec![0usize; n];
        if self.events == 0 {
            weights.iter_mut().for_each(|w| *w = 1);
        } else {
            for i in 0..self.events {
                weights[i % n] += 1;
            }
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for (s, w) in weights.iter().enumerate() {
            let x = generate_event(&self.scenarios[s].actuation, self.sample_rate)?;
            total += *w as f64 * mean_square(&x);
            count += w;
        }
        Ok(total / count as f64)
    }

    pub fn noise_power(&self) -> Result<f64> {
        Ok(self.reference_power()? / 10f64.powf(self.snr_db / 10.0))
    }
}

fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

fn scatter(rng: &mut ChaCha8Rng, nominal: f64, rel_std: f64) -> f64 {
    if rel_std == 0.0 {
        return nominal;
    }
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    // keep the parameter strictly positive
    (nominal * (1.0 + rel_std * z)).max(nominal * 0.05)
}

/// Parameters of one scheduled event after scatter and drift.
fn event_parameters(spec: &CorpusSpec, rng: &mut ChaCha8Rng, index: usize) -> (usize, ActuationSpec) {
    let scenario = index % spec.scenarios.len();
    let mut a = spec.drifted(scenario, index);
    let v = spec.variability;
    a.dominant_freq = scatter(rng, a.dominant_freq, v.freq).min(spec.sample_rate / 2.0 * 0.999);
    a.damping = scatter(rng, a.damping, v.damping);
    a.amplitude = scatter(rng, a.amplitude, v.amplitude);
    (scenario, a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub start: f64,
    pub end: f64,
    pub label: ScenarioId,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub series: TimeSeries,
    pub truth: Vec<TruthEvent>,
    pub noise_power: f64,
    /// Clean power of each event on the first channel, for SNR checks.
    pub event_powers: Vec<f64>,
}

/// Renders a full recording with ground truth.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let fs = spec.sample_rate;
    let noise_power = spec.noise_power()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut schedule = Vec::with_capacity(spec.events);
    let mut t = spec.lead_in;
    for i in 0..spec.events {
        if i > 0 {
            t += rng.random_range(spec.gap_min..=spec.gap_max);
        }
        let (s, a) = event_parameters(spec, &mut rng, i);
        schedule.push((t, s, a));
    }
    let end_time = match schedule.last() {
        Some((t, _, _)) => t + spec.gap_min,
        None => spec.lead_in.max(spec.gap_min),
    };
    let len = ((end_time * fs).round() as usize).max(1);

    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(1);
    let mut channels = Vec::with_capacity(spec.channels.len());
    for ch in &spec.channels {
        let normal = Normal::new(0.0, ch.gain.abs() * noise_power.sqrt())
            .map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
        channels.push((0..len).map(|_| normal.sample(&mut noise_rng)).collect::<Vec<f64>>());
    }

    let mut truth = Vec::with_capacity(schedule.len());
    let mut event_powers = Vec::with_capacity(schedule.len());
    for (start, s, a) in &schedule {
        let clean = generate_event(a, fs)?;
        let first = (start * fs).round() as usize;
        for (ch, spec_ch) in channels.iter_mut().zip(&spec.channels) {
            for (k, v) in clean.iter().enumerate() {
                if let Some(slot) = ch.get_mut(first + k) {
                    *slot += spec_ch.gain * v;
                }
            }
        }
        event_powers.push(spec.channels[0].gain.powi(2) * mean_square(&clean));
        truth.push(TruthEvent {
            start: *start,
            end: start + a.duration,
            label: spec.scenarios[*s].label.clone(),
        });
    }

    let names = spec.channels.iter().map(|c| c.name.clone()).collect();
    Ok(Corpus {
        series: TimeSeries::new(channels, fs, names)?,
        truth,
        noise_power: spec.channels[0].gain.powi(2) * noise_power,
        event_powers,
    })
}

/// Renders the corpus schedule as isolated, labeled event windows instead of
/// one long recording. Each window is `window` seconds of noise with the
/// actuation starting after a random delay in `[0, max_onset_delay)`, the
/// way a detected window starts somewhat before the true onset.
pub fn generate_event_windows(spec: &CorpusSpec, window: f64, max_onset_delay: f64) -> Result<Vec<EventSegment>> {
    spec.validate()?;
    if !(window > 0.0) || !(max_onset_delay >= 0.0) || max_onset_delay >= window {
        return invalid("window must be positive and longer than the onset delay");
    }
    let fs = spec.sample_rate;
    let noise_power = spec.noise_power()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(1);
    let n = (window * fs).round() as usize;
    let mut out = Vec::with_capacity(spec.events);
    let mut t = spec.lead_in;
    for i in 0..spec.events {
        if i > 0 {
            t += rng.random_range(spec.gap_min..=spec.gap_max);
        }
        let (s, a) = event_parameters(spec, &mut rng, i);
        let delay = if max_onset_delay > 0.0 {
            rng.random_range(0.0..max_onset_delay)
        } else {
            0.0
        };
        let clean = generate_event(&a, fs)?;
        let offset = (delay * fs).round() as usize;
        let mut channels = Vec::with_capacity(spec.channels.len());
        for ch in &spec.channels {
            let normal = Normal::new(0.0, ch.gain.abs() * noise_power.sqrt())
                .map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
            let mut x: Vec<f64> = (0..n).map(|_| normal.sample(&mut noise_rng)).collect();
            for (k, v) in clean.iter().enumerate() {
                if let Some(slot) = x.get_mut(offset + k) {
                    *slot += ch.gain * v;
                }
            }
            channels.push(x);
        }
        let names = spec.channels.iter().map(|c| c.name.clone()).collect();
        let start = t - delay;
        out.push(EventSegment {
            start,
            end: start + window,
            label: Some(spec.scenarios[s].label.clone()),
            samples: TimeSeries::new(channels, fs, names)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{compute_feature, FeatureKind};
    use crate::signal::compute_interval_psd;

    #[test]
    fn zero_amplitude_is_silent() {
        let spec = ActuationSpec {
            amplitude: 0.0,
            ..ActuationSpec::damped(400.0)
        };
        assert!(generate_event(&spec, 48_000.0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lightly_damped_event_has_spec_frequency() {
        let spec = ActuationSpec {
            damping: 1e-3,
            duration: 1.0,
            ..ActuationSpec::damped(440.0)
        };
        let x = generate_event(&spec, 48_000.0).unwrap();
        let f = compute_feature(FeatureKind::DominantFrequency, &x, 48_000.0).unwrap();
        assert!((f - 440.0).abs() <= 1.0);
    }

    #[test]
    fn double_peak_shows_two_maxima() {
        let fs = 48_000.0;
        let spec = ActuationSpec {
            duration: 0.6,
            double_peak: Some(DoublePeak {
                delay: 0.2,
                rel_amplitude: 0.8,
            }),
            ..ActuationSpec::damped(400.0)
        };
        let x = generate_event(&spec, fs).unwrap();
        let psd = compute_interval_psd(&x, fs, 0.01).unwrap();
        let v = &psd.values;
        let peaks: Vec<usize> = (0..v.len())
            .filter(|&i| (i == 0 || v[i] > v[i - 1]) && (i + 1 == v.len() || v[i] >= v[i + 1]))
            .collect();
        assert_eq!(peaks.len(), 2, "{peaks:?}");
        let gap = psd.time_of(peaks[1]) - psd.time_of(peaks[0]);
        assert!((gap - 0.2).abs() <= 0.01 + 1e-9);
    }

    #[test]
    fn invalid_specs() {
        let fs = 1000.0;
        assert!(generate_event(&ActuationSpec::damped(600.0), fs).is_err());
        assert!(generate_event(&ActuationSpec { damping: 0.0, ..ActuationSpec::damped(100.0) }, fs).is_err());
        assert!(generate_event(&ActuationSpec { duration: 0.0, ..ActuationSpec::damped(100.0) }, fs).is_err());
        let mut c = CorpusSpec::benchmark(4, 1);
        c.gap_min = 0.4;
        assert!(generate_corpus(&c).is_err());
    }

    #[test]
    fn empty_schedule_is_pure_noise() {
        let c = generate_corpus(&CorpusSpec::benchmark(0, 3)).unwrap();
        assert!(c.truth.is_empty());
        assert!(!c.series.is_empty());
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = CorpusSpec::benchmark(4, 42);
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a.series, b.series);
        assert_eq!(a.truth, b.truth);
        let other = generate_corpus(&CorpusSpec::benchmark(4, 43)).unwrap();
        assert_ne!(a.series, other.series);
    }

    #[test]
    fn labels_alternate_in_scenario_order() {
        let c = generate_corpus(&CorpusSpec::benchmark(5, 1)).unwrap();
        let labels: Vec<_> = c.truth.iter().map(|t| t.label.as_str()).collect();
        assert_eq!(labels, ["on", "off", "on", "off", "on"]);
        assert!(c.truth.windows(2).all(|w| w[1].start - w[0].start >= 1.0));
    }

    #[test]
    fn realized_snr_matches_request() {
        let spec = CorpusSpec::benchmark(24, 9);
        let c = generate_corpus(&spec).unwrap();
        // noise variance from the stretch before the first event
        let lead = (spec.lead_in * spec.sample_rate) as usize;
        let noise = mean_square(&c.series.channel(0)[..lead]);
        let signal = c.event_powers.iter().sum::<f64>() / c.event_powers.len() as f64;
        let snr = 10.0 * (signal / noise).log10();
        assert!((snr - 20.0).abs() <= 0.5, "{snr}");
    }

    #[test]
    fn frequency_drift_is_applied() {
        let mut spec = CorpusSpec::benchmark(11, 2);
        spec.variability = Variability {
            freq: 0.0,
            damping: 0.0,
            amplitude: 0.0,
        };
        spec.drift.push(DriftSpec {
            scenario: Some("on".into()),
            parameter: DriftParameter::DominantFreq,
            from: 400.0,
            to: 500.0,
        });
        let windows = generate_event_windows(&spec, 0.5, 0.0).unwrap();
        let on: Vec<f64> = windows
            .iter()
            .filter(|e| e.label.as_ref().unwrap().as_str() == "on")
            .map(|e| compute_feature(FeatureKind::DominantFrequency, e.samples.channel(0), 48_000.0).unwrap())
            .collect();
        assert_eq!(on.len(), 6);
        assert!(on.windows(2).all(|w| w[1] >= w[0] - 2.0));
        assert!(on[5] - on[0] > 80.0);
    }
}
