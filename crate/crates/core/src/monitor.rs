//! Bounded-memory monitoring: detection, excerpting and inference over a
//! sample stream fed in arbitrary chunks.

use std::collections::VecDeque;

use crate::classifier::{infer, DriftState, Inference, VoteMode};
use crate::detector::{EventSegment, EventWindow, StreamingDetector};
use crate::error::{invalid, Error, Result};
use crate::selector::Model;
use crate::signal::{IntervalPowerMeter, TimeSeries};

#[derive(Debug, Clone)]
pub struct MonitorOutput {
    pub window: EventWindow,
    pub inference: Inference,
    /// The stream ended before the window was complete.
    pub truncated: bool,
    /// Tracked centers right after this event, when tracking.
    pub drift: Option<DriftState>,
}

pub struct StreamingMonitor<'m> {
    model: &'m Model,
    state: Option<DriftState>,
    mode: VoteMode,
    channel_names: Vec<String>,
    sample_rate: f64,
    trigger: usize,
    meter: IntervalPowerMeter,
    interval_samples: usize,
    detector: StreamingDetector,
    /// Per-channel samples starting at absolute index `buffer_start`.
    buffer: Vec<VecDeque<f64>>,
    buffer_start: usize,
    received: usize,
    pending: VecDeque<EventWindow>,
}

impl<'m> StreamingMonitor<'m> {
    pub fn new(
        model: &'m Model,
        channel_names: Vec<String>,
        sample_rate: f64,
        state: Option<DriftState>,
        mode: VoteMode,
    ) -> Result<Self> {
        let settings = model
            .detection
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model carries no detection calibration".into()))?;
        if (sample_rate - model.sample_rate).abs() > 1e-9 {
            return invalid(format!(
                "stream sample rate {sample_rate} Hz differs from the model's {} Hz",
                model.sample_rate
            ));
        }
        let trigger = channel_names
            .iter()
            .position(|n| n == &settings.trigger_channel)
            .ok_or_else(|| Error::InvalidArgument(format!("stream has no trigger channel `{}`", settings.trigger_channel)))?;
        for d in &model.descriptors {
            if !channel_names.contains(&d.channel) {
                return Err(Error::DescriptorMismatch(format!("stream has no channel `{}`", d.channel)));
            }
        }
        let interval_samples = (settings.interval_len * sample_rate).round() as usize;
        let meter = IntervalPowerMeter::new(interval_samples)?;
        let detector = StreamingDetector::new(settings.calibration.clone(), interval_samples as f64 / sample_rate)?;
        Ok(Self {
            model,
            state,
            mode,
            buffer: vec![VecDeque::new(); channel_names.len()],
            channel_names,
            sample_rate,
            trigger,
            meter,
            interval_samples,
            detector,
            buffer_start: 0,
            received: 0,
            pending: VecDeque::new(),
        })
    }

    pub fn state(&self) -> Option<&DriftState> {
        self.state.as_ref()
    }

    pub fn into_state(self) -> Option<DriftState> {
        self.state
    }

    /// Samples currently held; bounded by one event window plus one interval.
    pub fn buffered_samples(&self) -> usize {
        self.buffer[0].len()
    }

    fn sample_index(&self, t: f64) -> usize {
        (t * self.sample_rate).round() as usize
    }

    /// Feeds one chunk (one sample vector per channel, equal lengths).
    pub fn push(&mut self, chunk: &[Vec<f64>]) -> Result<Vec<MonitorOutput>> {
        if chunk.len() != self.channel_names.len() {
            return invalid(format!("chunk has {} channels, stream has {}", chunk.len(), self.channel_names.len()));
        }
        let n = chunk[0].len();
        if chunk.iter().any(|c| c.len() != n) {
            return invalid("chunk channels differ in length");
        }
        for (buf, c) in self.buffer.iter_mut().zip(chunk) {
            buf.extend(c.iter().copied());
        }
        self.received += n;
        for power in self.meter.push(&chunk[self.trigger]) {
            if let Some(w) = self.detector.push(power) {
                self.pending.push_back(w);
            }
        }

        let mut out = Vec::new();
        while let Some(&w) = self.pending.front() {
            if self.sample_index(w.end) > self.received {
                break;
            }
            self.pending.pop_front();
            out.push(self.emit(w, false)?);
        }
        self.trim();
        Ok(out)
    }

    /// Flushes windows cut short by the end of the stream.
    pub fn finish(mut self) -> Result<(Vec<MonitorOutput>, Option<DriftState>)> {
        let mut out = Vec::new();
        while let Some(w) = self.pending.pop_front() {
            let first = self.sample_index(w.start);
            if self.received.saturating_sub(first) >= 4 {
                out.push(self.emit(w, true)?);
            }
        }
        Ok((out, self.state))
    }

    fn emit(&mut self, w: EventWindow, truncated: bool) -> Result<MonitorOutput> {
        let first = self.sample_index(w.start) - self.buffer_start;
        let last = (self.sample_index(w.end).min(self.received)) - self.buffer_start;
        let channels = self
            .buffer
            .iter()
            .map(|b| b.range(first..last).copied().collect())
            .collect();
        let segment = EventSegment {
            start: w.start,
            end: w.end,
            label: None,
            samples: TimeSeries::new(channels, self.sample_rate, self.channel_names.clone())?,
        };
        let inference = infer(&segment, self.model, self.state.as_mut(), self.mode)?;
        Ok(MonitorOutput {
            window: w,
            inference,
            truncated,
            drift: self.state.clone(),
        })
    }

    fn trim(&mut self) {
        // the interval being accumulated may still open an event
        let open_interval = self.received - self.received % self.interval_samples;
        let keep_from = match self.pending.front() {
            Some(w) => self.sample_index(w.start).min(open_interval),
            None => open_interval,
        };
        if keep_from > self.buffer_start {
            let drop = keep_from - self.buffer_start;
            for b in &mut self.buffer {
                b.drain(..drop);
            }
            self.buffer_start = keep_from;
        }
    }
}
