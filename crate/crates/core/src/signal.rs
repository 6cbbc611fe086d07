//! Signal containers and the DSP primitives the rest of the pipeline is
//! built on: one-sided power spectra, interval power compression and a
//! zero-phase low-pass filter.

use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_fft(buf: &mut [Complex<f64>]) {
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    fft.process(buf);
}

fn inverse_fft(buf: &mut [Complex<f64>]) {
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()));
    fft.process(buf);
}

/// Multi-channel sampled signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    channels: Vec<Vec<f64>>,
    sample_rate: f64,
    channel_names: Vec<String>,
}

impl TimeSeries {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: f64, channel_names: Vec<String>) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return invalid(format!("sample rate must be positive, got {sample_rate}"));
        }
        if channels.is_empty() {
            return invalid("time series needs at least one channel");
        }
        if channel_names.len() != channels.len() {
            return invalid(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                channels.len()
            ));
        }
        let len = channels[0].len();
        if len == 0 {
            return invalid("time series must contain at least one sample");
        }
        if channels.iter().any(|c| c.len() != len) {
            return invalid("all channels must have the same length");
        }
        Ok(Self {
            channels,
            sample_rate,
            channel_names,
        })
    }

    /// Single channel named `ch0`.
    pub fn mono(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        Self::new(vec![samples], sample_rate, vec!["ch0".to_string()])
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|n| n == name)
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Interval power series of one channel.
    pub fn interval_psd(&self, channel: usize, interval_len: f64) -> Result<IntervalPsdSeries> {
        let mut psd = compute_interval_psd(self.channel(channel), self.sample_rate, interval_len)?;
        psd.channel = self.channel_names[channel].clone();
        Ok(psd)
    }
}

/// Per-interval signal power, the compressed stream used for detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalPsdSeries {
    pub values: Vec<f64>,
    /// Effective interval length in seconds (whole samples per interval).
    pub interval_len: f64,
    pub interval_samples: usize,
    pub channel: String,
}

impl IntervalPsdSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Start time of interval `i` in seconds.
    pub fn time_of(&self, i: usize) -> f64 {
        i as f64 * self.interval_len
    }
}

/// One-sided power spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bin_frequencies: Vec<f64>,
    pub bin_powers: Vec<f64>,
    pub resolution: f64,
}

impl Spectrum {
    pub fn total_power(&self) -> f64 {
        self.bin_powers.iter().sum()
    }
}

/// Number of whole samples making up one interval of `interval_len` seconds.
pub fn interval_sample_count(sample_rate: f64, interval_len: f64) -> Result<usize> {
    if !(interval_len > 0.0) || !interval_len.is_finite() {
        return invalid(format!("interval length must be positive, got {interval_len}"));
    }
    let n = (interval_len * sample_rate).round();
    if n < 2.0 {
        return invalid(format!(
            "interval of {interval_len} s at {sample_rate} Hz holds fewer than 2 samples"
        ));
    }
    Ok(n as usize)
}

/// Sum of the rectangular-window periodogram of `samples`, scaled so that it
/// equals the mean squared sample value.
fn periodogram_power(samples: &[f64], buf: &mut Vec<Complex<f64>>) -> f64 {
    let n = samples.len();
    buf.clear();
    buf.extend(samples.iter().map(|&x| Complex::new(x, 0.0)));
    forward_fft(buf);
    let scale = 1.0 / (n as f64 * n as f64);
    buf.iter().map(|c| c.norm_sqr()).sum::<f64>() * scale
}

/// Compresses a channel into per-interval power values. The trailing partial
/// interval is dropped.
pub fn compute_interval_psd(samples: &[f64], sample_rate: f64, interval_len: f64) -> Result<IntervalPsdSeries> {
    if samples.is_empty() {
        return invalid("empty signal");
    }
    if !(sample_rate > 0.0) {
        return invalid(format!("sample rate must be positive, got {sample_rate}"));
    }
    let n = interval_sample_count(sample_rate, interval_len)?;
    if samples.len() < n {
        return invalid(format!(
            "signal of {} samples is shorter than one interval ({n} samples)",
            samples.len()
        ));
    }
    let mut buf = Vec::with_capacity(n);
    let values = samples
        .chunks_exact(n)
        .map(|chunk| periodogram_power(chunk, &mut buf))
        .collect();
    Ok(IntervalPsdSeries {
        values,
        interval_len: n as f64 / sample_rate,
        interval_samples: n,
        channel: String::new(),
    })
}

/// Incremental counterpart of [`compute_interval_psd`] for streamed input.
#[derive(Debug, Clone)]
pub struct IntervalPowerMeter {
    interval_samples: usize,
    pending: Vec<f64>,
    buf: Vec<Complex<f64>>,
}

impl IntervalPowerMeter {
    pub fn new(interval_samples: usize) -> Result<Self> {
        if interval_samples < 2 {
            return invalid("interval must hold at least 2 samples");
        }
        Ok(Self {
            interval_samples,
            pending: Vec::with_capacity(interval_samples),
            buf: Vec::with_capacity(interval_samples),
        })
    }

    /// Feeds samples and returns the power of every interval completed by them.
    pub fn push(&mut self, samples: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        let mut rest = samples;
        while !rest.is_empty() {
            let take = (self.interval_samples - self.pending.len()).min(rest.len());
            self.pending.extend_from_slice(&rest[..take]);
            rest = &rest[take..];
            if self.pending.len() == self.interval_samples {
                out.push(periodogram_power(&self.pending, &mut self.buf));
                self.pending.clear();
            }
        }
        out
    }
}

/// One-sided power spectrum with a rectangular window. Bin powers sum to the
/// mean squared sample value.
pub fn segment_spectrum(samples: &[f64], sample_rate: f64) -> Result<Spectrum> {
    let n = samples.len();
    if n < 4 {
        return invalid(format!("segment of {n} samples is too short for a spectrum (need 4)"));
    }
    if !(sample_rate > 0.0) {
        return invalid(format!("sample rate must be positive, got {sample_rate}"));
    }
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    forward_fft(&mut buf);

    let scale = 1.0 / (n as f64 * n as f64);
    let half = n / 2;
    let resolution = sample_rate / n as f64;
    let mut bin_powers = Vec::with_capacity(half + 1);
    for (k, c) in buf.iter().take(half + 1).enumerate() {
        let p = c.norm_sqr() * scale;
        // DC and (for even n) the Nyquist bin have no mirror image.
        let folded = if k == 0 || (n.is_multiple_of(2) && k == half) { p } else { 2.0 * p };
        bin_powers.push(folded);
    }
    let bin_frequencies = (0..=half).map(|k| k as f64 * resolution).collect();
    Ok(Spectrum {
        bin_frequencies,
        bin_powers,
        resolution,
    })
}

/// Blackman-windowed sinc taps; transition band spans roughly 0.83 to 1.17 of
/// the cutoff, unity DC gain.
fn lowpass_kernel(sample_rate: f64, cutoff: f64) -> Vec<f64> {
    let mut taps = (16.0 * sample_rate / cutoff).ceil() as usize;
    if taps.is_multiple_of(2) {
        taps += 1;
    }
    let fc = cutoff / sample_rate;
    let mid = (taps - 1) as f64 / 2.0;
    let denom = (taps - 1) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let t = i as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * t).sin() / (PI * t)
            };
            let phase = 2.0 * PI * i as f64 / denom;
            let w = 0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Zero-phase low-pass of a single channel. The signal is extended at both
/// ends by odd reflection before filtering; output length equals input length.
/// A cutoff at or above Nyquist returns the input unchanged.
pub fn lowpass_samples(samples: &[f64], sample_rate: f64, cutoff: f64) -> Result<Vec<f64>> {
    if !(cutoff > 0.0) || cutoff.is_nan() {
        return invalid(format!("cutoff must be positive, got {cutoff}"));
    }
    if !(sample_rate > 0.0) {
        return invalid(format!("sample rate must be positive, got {sample_rate}"));
    }
    let n = samples.len();
    if cutoff >= sample_rate / 2.0 || n == 0 {
        return Ok(samples.to_vec());
    }
    let kernel = lowpass_kernel(sample_rate, cutoff);
    let half = (kernel.len() - 1) / 2;
    let pad = half.min(n - 1);

    // [left pad | signal | right pad], odd reflection about the end samples.
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let first = samples[0];
    let last = samples[n - 1];
    ext.extend((1..=pad).rev().map(|k| 2.0 * first - samples[k]));
    ext.extend_from_slice(samples);
    ext.extend((1..=pad).map(|k| 2.0 * last - samples[n - 1 - k]));

    let full_len = ext.len() + kernel.len() - 1;
    let size = full_len.next_power_of_two();
    let mut a: Vec<Complex<f64>> = ext.iter().map(|&x| Complex::new(x, 0.0)).collect();
    a.resize(size, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = kernel.iter().map(|&x| Complex::new(x, 0.0)).collect();
    b.resize(size, Complex::new(0.0, 0.0));
    forward_fft(&mut a);
    forward_fft(&mut b);
    a.iter_mut().zip(&b).for_each(|(x, y)| *x *= *y);
    inverse_fft(&mut a);

    let scale = 1.0 / size as f64;
    let offset = pad + half;
    Ok(a[offset..offset + n].iter().map(|c| c.re * scale).collect())
}

/// Low-passes every channel of `signal`.
pub fn lowpass(signal: &TimeSeries, cutoff: f64) -> Result<TimeSeries> {
    let channels = signal
        .channels()
        .iter()
        .map(|c| lowpass_samples(c, signal.sample_rate(), cutoff))
        .collect::<Result<Vec<_>>>()?;
    TimeSeries::new(channels, signal.sample_rate(), signal.channel_names().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn mean_square(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }

    /// Naive O(n^2) DFT, independent of the FFT path.
    fn dft_power(x: &[f64], k: usize) -> f64 {
        let n = x.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let ang = -2.0 * PI * k as f64 * i as f64 / n;
            re += v * ang.cos();
            im += v * ang.sin();
        }
        (re * re + im * im) / (n * n)
    }

    #[test]
    fn time_series_rejects_bad_shapes() {
        assert!(TimeSeries::new(vec![vec![1.0], vec![1.0, 2.0]], 10.0, vec!["a".into(), "b".into()]).is_err());
        assert!(TimeSeries::mono(vec![1.0], 0.0).is_err());
        assert!(TimeSeries::mono(vec![], 10.0).is_err());
        assert!(TimeSeries::new(vec![vec![1.0]], 10.0, vec![]).is_err());
    }

    #[test]
    fn zero_signal_has_zero_interval_power() {
        let psd = compute_interval_psd(&vec![0.0; 4800], 48_000.0, 0.01).unwrap();
        assert_eq!(psd.len(), 10);
        assert!(psd.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_interval_power_matches_mean_square() {
        let fs = 48_000.0;
        // 10 ms holds exactly one period of 100 Hz.
        let x = sine(100.0, fs, 48_000, 1.0);
        let psd = compute_interval_psd(&x, fs, 0.01).unwrap();
        assert_eq!(psd.len(), 100);
        for (i, v) in psd.values.iter().enumerate() {
            let chunk = &x[i * 480..(i + 1) * 480];
            assert!((v - mean_square(chunk)).abs() < 1e-9);
            assert!((v - 0.5).abs() < 1e-3);
        }
    }

    #[test]
    fn impulse_is_localized() {
        let mut x = vec![0.0; 1000];
        x[3 * 100 + 17] = 1.0;
        let psd = compute_interval_psd(&x, 1000.0, 0.1).unwrap();
        assert_eq!(psd.len(), 10);
        for (i, v) in psd.values.iter().enumerate() {
            if i == 3 {
                assert!(*v > 0.0);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn trailing_partial_interval_is_dropped() {
        let psd = compute_interval_psd(&vec![1.0; 1050], 1000.0, 0.1).unwrap();
        assert_eq!(psd.len(), 10);
    }

    #[test]
    fn interval_psd_errors() {
        assert!(compute_interval_psd(&[], 1000.0, 0.1).is_err());
        assert!(compute_interval_psd(&[1.0; 10], 1000.0, 0.1).is_err());
        assert!(compute_interval_psd(&[1.0; 10], 1000.0, 0.001).is_err());
        assert!(compute_interval_psd(&[1.0; 10], 1000.0, -1.0).is_err());
    }

    #[test]
    fn interval_psd_is_shift_covariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = 3;
        let mut delayed = vec![0.0; k * 100];
        delayed.extend_from_slice(&x);
        let a = compute_interval_psd(&x, 1000.0, 0.1).unwrap();
        let b = compute_interval_psd(&delayed, 1000.0, 0.1).unwrap();
        assert_eq!(&b.values[k..], &a.values[..]);
    }

    #[test]
    fn streaming_meter_matches_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..5000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = compute_interval_psd(&x, 1000.0, 0.033).unwrap();
        let mut meter = IntervalPowerMeter::new(batch.interval_samples).unwrap();
        let mut streamed = Vec::new();
        for chunk in x.chunks(77) {
            streamed.extend(meter.push(chunk));
        }
        assert_eq!(streamed, batch.values);
    }

    #[test]
    fn dc_spectrum() {
        let s = segment_spectrum(&[3.0; 64], 64.0).unwrap();
        assert!((s.bin_powers[0] - 9.0).abs() < 1e-12);
        assert!(s.bin_powers[1..].iter().all(|&p| p < 1e-20));
        assert_eq!(s.bin_frequencies.len(), 33);
        assert_eq!(s.resolution, 1.0);
    }

    #[test]
    fn bin_centered_sine_concentrates_power() {
        let fs = 1024.0;
        let x = sine(64.0, fs, 1024, 1.0);
        let s = segment_spectrum(&x, fs).unwrap();
        let k = 64;
        let oracle = 2.0 * dft_power(&x, k);
        assert!((s.bin_powers[k] - oracle).abs() < 1e-9);
        assert!(s.bin_powers[k] / s.total_power() >= 0.99);
    }

    #[test]
    fn spectrum_matches_naive_dft_odd_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..37).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = segment_spectrum(&x, 37.0).unwrap();
        assert_eq!(s.bin_powers.len(), 19);
        assert!((s.bin_powers[0] - dft_power(&x, 0)).abs() < 1e-12);
        for k in 1..19 {
            assert!((s.bin_powers[k] - 2.0 * dft_power(&x, k)).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_too_short() {
        assert!(segment_spectrum(&[1.0, 2.0, 3.0], 10.0).is_err());
    }

    #[test]
    fn lowpass_identity_at_nyquist() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = lowpass_samples(&x, 1000.0, 500.0).unwrap();
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-9));
        let y = lowpass_samples(&x, 1000.0, 2000.0).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn lowpass_rejects_nonpositive_cutoff() {
        assert!(lowpass_samples(&[1.0; 10], 1000.0, 0.0).is_err());
        assert!(lowpass_samples(&[1.0; 10], 1000.0, -5.0).is_err());
    }

    #[test]
    fn lowpass_keeps_length_and_dc() {
        let y = lowpass_samples(&[2.0; 300], 1000.0, 50.0).unwrap();
        assert_eq!(y.len(), 300);
        assert!(y.iter().all(|v| (v - 2.0).abs() < 1e-9));
    }

    #[test]
    fn lowpass_pass_and_stop_probes() {
        let fs = 48_000.0;
        let cutoff = 1000.0;
        let n = 48_000;
        // measure away from the edges
        let inner = 6000..(n - 6000);
        for (freq, pass) in [(0.1 * cutoff, true), (0.8 * cutoff, true), (2.0 * cutoff, false), (4.0 * cutoff, false)] {
            let x = sine(freq, fs, n, 1.0);
            let y = lowpass_samples(&x, fs, cutoff).unwrap();
            let gain_db = 20.0 * (rms(&y[inner.clone()]) / rms(&x[inner.clone()])).log10();
            if pass {
                assert!(gain_db.abs() <= 1.0, "{freq} Hz: {gain_db} dB");
            } else {
                assert!(gain_db <= -40.0, "{freq} Hz: {gain_db} dB");
            }
        }
    }

    #[test]
    fn lowpass_is_zero_phase() {
        let fs = 8000.0;
        let x = sine(50.0, fs, 8000, 1.0);
        let y = lowpass_samples(&x, fs, 500.0).unwrap();
        let xcorr = |lag: i64| -> f64 {
            (2000..6000).map(|i| x[i] * y[(i as i64 + lag) as usize]).sum()
        };
        let best = (-20..=20).max_by(|&a, &b| xcorr(a).total_cmp(&xcorr(b))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn lowpass_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = lowpass_samples(&x, 8000.0, 300.0).unwrap();
        let b = lowpass_samples(&x, 8000.0, 300.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lowpass_short_signal() {
        // kernel far longer than the signal
        let y = lowpass_samples(&[1.0, -1.0, 0.5], 1000.0, 10.0).unwrap();
        assert_eq!(y.len(), 3);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn lowpass_every_channel() {
        let ts = TimeSeries::new(vec![vec![1.0; 100], vec![0.0; 100]], 1000.0, vec!["a".into(), "b".into()]).unwrap();
        let out = lowpass(&ts, 100.0).unwrap();
        assert_eq!(out.num_channels(), 2);
        assert_eq!(out.channel_names(), ts.channel_names());
    }
}
