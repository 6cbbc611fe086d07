//! Candidate feature bank: 12 time-domain and 9 frequency-domain statistics,
//! each evaluated on the raw signal and on low-passed copies, per channel.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::EventSegment;
use crate::error::{invalid, Error, Result};
use crate::scenario::ScenarioId;
use crate::signal::{lowpass_samples, segment_spectrum, Spectrum};

const EPS: f64 = 1e-12;

/// Default low-pass cutoffs in Hz; only those below Nyquist are used.
pub const DEFAULT_CUTOFFS: [f64; 5] = [500.0, 1000.0, 2000.0, 5000.0, 10000.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Mean,
    Variance,
    Skew,
    Kurtosis,
    Power,
    Flatness,
    Rms,
    AbsMean,
    Maximum,
    Minimum,
    DynamicRange,
    CrestFactor,
    SpectralMean,
    SpectralVariance,
    SpectralSkew,
    SpectralKurtosis,
    SpectralPower,
    SpectralFlatness,
    SpectralCentroid,
    MedianFrequency,
    DominantFrequency,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 21] = [
        FeatureKind::Mean,
        FeatureKind::Variance,
        FeatureKind::Skew,
        FeatureKind::Kurtosis,
        FeatureKind::Power,
        FeatureKind::Flatness,
        FeatureKind::Rms,
        FeatureKind::AbsMean,
        FeatureKind::Maximum,
        FeatureKind::Minimum,
        FeatureKind::DynamicRange,
        FeatureKind::CrestFactor,
        FeatureKind::SpectralMean,
        FeatureKind::SpectralVariance,
        FeatureKind::SpectralSkew,
        FeatureKind::SpectralKurtosis,
        FeatureKind::SpectralPower,
        FeatureKind::SpectralFlatness,
        FeatureKind::SpectralCentroid,
        FeatureKind::MedianFrequency,
        FeatureKind::DominantFrequency,
    ];

    pub fn is_spectral(self) -> bool {
        self >= FeatureKind::SpectralMean
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Mean => "mean",
            FeatureKind::Variance => "variance",
            FeatureKind::Skew => "skew",
            FeatureKind::Kurtosis => "kurtosis",
            FeatureKind::Power => "power",
            FeatureKind::Flatness => "flatness",
            FeatureKind::Rms => "rms",
            FeatureKind::AbsMean => "abs_mean",
            FeatureKind::Maximum => "maximum",
            FeatureKind::Minimum => "minimum",
            FeatureKind::DynamicRange => "dynamic_range",
            FeatureKind::CrestFactor => "crest_factor",
            FeatureKind::SpectralMean => "spectral_mean",
            FeatureKind::SpectralVariance => "spectral_variance",
            FeatureKind::SpectralSkew => "spectral_skew",
            FeatureKind::SpectralKurtosis => "spectral_kurtosis",
            FeatureKind::SpectralPower => "spectral_power",
            FeatureKind::SpectralFlatness => "spectral_flatness",
            FeatureKind::SpectralCentroid => "spectral_centroid",
            FeatureKind::MedianFrequency => "median_frequency",
            FeatureKind::DominantFrequency => "dominant_frequency",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One candidate feature: statistic, low-pass cutoff (`None` = unfiltered)
/// and channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub kind: FeatureKind,
    pub cutoff: Option<f64>,
    pub channel: String,
}

impl fmt::Display for FeatureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.cutoff {
            Some(c) => write!(f, "{}@{}Hz[{}]", self.kind, c, self.channel),
            None => write!(f, "{}@raw[{}]", self.kind, self.channel),
        }
    }
}

/// Central moments (mean, population variance, skew, non-excess kurtosis).
/// Skew and kurtosis are 0 when the variance vanishes.
fn moments(x: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m2 <= 0.0 || m2.sqrt() <= EPS * scale {
        return (mean, m2.max(0.0), 0.0, 0.0);
    }
    (mean, m2, m3 / m2.powf(1.5), m4 / (m2 * m2))
}

fn flatness(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let log_mean = x.iter().map(|v| (v.abs() + EPS).ln()).sum::<f64>() / n;
    let arith = x.iter().map(|v| v.abs() + EPS).sum::<f64>() / n;
    log_mean.exp() / arith
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Frequency of the strongest bin; ties go to the lowest frequency.
pub fn dominant_frequency(spectrum: &Spectrum) -> f64 {
    let mut best = 0;
    for (i, p) in spectrum.bin_powers.iter().enumerate() {
        if *p > spectrum.bin_powers[best] {
            best = i;
        }
    }
    spectrum.bin_frequencies[best]
}

/// Feature evaluation for one segment; the spectrum is computed on first use.
pub struct SegmentFeatures<'a> {
    samples: &'a [f64],
    sample_rate: f64,
    spectrum: Option<Spectrum>,
}

impl<'a> SegmentFeatures<'a> {
    pub fn new(samples: &'a [f64], sample_rate: f64) -> Result<Self> {
        if samples.len() < 4 {
            return invalid(format!("segment of {} samples is too short (need 4)", samples.len()));
        }
        if !(sample_rate > 0.0) {
            return invalid(format!("sample rate must be positive, got {sample_rate}"));
        }
        Ok(Self {
            samples,
            sample_rate,
            spectrum: None,
        })
    }

    fn spectrum(&mut self) -> Result<&Spectrum> {
        if self.spectrum.is_none() {
            self.spectrum = Some(segment_spectrum(self.samples, self.sample_rate)?);
        }
        Ok(self.spectrum.as_ref().expect("spectrum computed above"))
    }

    pub fn value(&mut self, kind: FeatureKind) -> Result<f64> {
        let x = self.samples;
        let v = match kind {
            FeatureKind::Mean => moments(x).0,
            FeatureKind::Variance => moments(x).1,
            FeatureKind::Skew => moments(x).2,
            FeatureKind::Kurtosis => moments(x).3,
            FeatureKind::Power => mean_square(x),
            FeatureKind::Flatness => flatness(x),
            FeatureKind::Rms => mean_square(x).sqrt(),
            FeatureKind::AbsMean => x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64,
            FeatureKind::Maximum => x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            FeatureKind::Minimum => x.iter().copied().fold(f64::INFINITY, f64::min),
            FeatureKind::DynamicRange => {
                let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let min = x.iter().copied().fold(f64::INFINITY, f64::min);
                max - min
            }
            FeatureKind::CrestFactor => {
                let rms = mean_square(x).sqrt();
                if rms < EPS {
                    0.0
                } else {
                    x.iter().fold(0.0f64, |a, v| a.max(v.abs())) / rms
                }
            }
            FeatureKind::SpectralMean => moments(&self.spectrum()?.bin_powers).0,
            FeatureKind::SpectralVariance => moments(&self.spectrum()?.bin_powers).1,
            FeatureKind::SpectralSkew => moments(&self.spectrum()?.bin_powers).2,
            FeatureKind::SpectralKurtosis => moments(&self.spectrum()?.bin_powers).3,
            FeatureKind::SpectralPower => mean_square(&self.spectrum()?.bin_powers),
            FeatureKind::SpectralFlatness => flatness(&self.spectrum()?.bin_powers),
            FeatureKind::SpectralCentroid => {
                let s = self.spectrum()?;
                let total = s.total_power();
                if total <= 0.0 {
                    0.0
                } else {
                    s.bin_frequencies.iter().zip(&s.bin_powers).map(|(f, p)| f * p).sum::<f64>() / total
                }
            }
            FeatureKind::MedianFrequency => {
                let s = self.spectrum()?;
                let total = s.total_power();
                if total <= 0.0 {
                    0.0
                } else {
                    let mut cum = 0.0;
                    let mut median = *s.bin_frequencies.last().expect("non-empty spectrum");
                    for (f, p) in s.bin_frequencies.iter().zip(&s.bin_powers) {
                        cum += p;
                        if cum >= 0.5 * total {
                            median = *f;
                            break;
                        }
                    }
                    median
                }
            }
            FeatureKind::DominantFrequency => dominant_frequency(self.spectrum()?),
        };
        Ok(v)
    }
}

/// Value of one feature on one single-channel segment.
pub fn compute_feature(kind: FeatureKind, samples: &[f64], sample_rate: f64) -> Result<f64> {
    SegmentFeatures::new(samples, sample_rate)?.value(kind)
}

/// Cutoffs below Nyquist for `sample_rate`, ascending.
pub fn effective_cutoffs(cutoffs: &[f64], sample_rate: f64) -> Vec<f64> {
    let mut out: Vec<f64> = cutoffs
        .iter()
        .copied()
        .filter(|&c| c > 0.0 && c < sample_rate / 2.0)
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Feature values, one row per event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub descriptors: Vec<FeatureDescriptor>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Option<ScenarioId>>,
}

impl FeatureMatrix {
    pub fn new(descriptors: Vec<FeatureDescriptor>, rows: Vec<Vec<f64>>, labels: Vec<Option<ScenarioId>>) -> Result<Self> {
        if labels.len() != rows.len() {
            return invalid(format!("{} labels for {} rows", labels.len(), rows.len()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != descriptors.len() {
                return invalid(format!("row {i} has {} values for {} descriptors", row.len(), descriptors.len()));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return invalid(format!("row {i} has a non-finite value for {}", descriptors[j]));
            }
        }
        Ok(Self {
            descriptors,
            rows,
            labels,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_columns(&self) -> usize {
        self.descriptors.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

/// Extracts the full candidate bank for every event. Descriptors are ordered
/// by kind, then cutoff ascending (unfiltered last), then channel.
pub fn extract_candidates(events: &[EventSegment], cutoffs: &[f64], kinds: &[FeatureKind]) -> Result<FeatureMatrix> {
    let Some(first) = events.first() else {
        return invalid("no events to extract features from");
    };
    if kinds.is_empty() {
        return invalid("no feature kinds requested");
    }
    if cutoffs.iter().any(|c| !(*c > 0.0)) {
        return invalid("cutoffs must be positive");
    }
    let names = first.samples.channel_names();
    let fs = first.samples.sample_rate();
    let len = first.samples.len();
    for (i, e) in events.iter().enumerate() {
        if e.samples.channel_names() != names || e.samples.sample_rate() != fs {
            return invalid(format!("event {i} has a different channel layout or sample rate"));
        }
        if e.samples.len().abs_diff(len) > 1 {
            return invalid(format!(
                "events must have equal duration: event {i} has {} samples, event 0 has {len}",
                e.samples.len()
            ));
        }
    }

    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();
    let mut filter_set: Vec<Option<f64>> = {
        let mut c = cutoffs.to_vec();
        c.sort_by(f64::total_cmp);
        c.dedup();
        c.into_iter().map(Some).collect()
    };
    filter_set.push(None);

    let mut descriptors = Vec::with_capacity(kinds.len() * filter_set.len() * names.len());
    for &kind in &kinds {
        for &cutoff in &filter_set {
            for name in names {
                descriptors.push(FeatureDescriptor {
                    kind,
                    cutoff,
                    channel: name.clone(),
                });
            }
        }
    }

    let n_filters = filter_set.len();
    let n_channels = names.len();
    let rows = events
        .par_iter()
        .enumerate()
        .map(|(_, event)| {
            let mut row = vec![0.0; descriptors.len()];
            for (fi, cutoff) in filter_set.iter().enumerate() {
                for ch in 0..n_channels {
                    let raw = event.samples.channel(ch);
                    let filtered;
                    let samples = match cutoff {
                        Some(c) => {
                            filtered = lowpass_samples(raw, fs, *c)?;
                            &filtered[..]
                        }
                        None => raw,
                    };
                    let mut seg = SegmentFeatures::new(samples, fs)?;
                    for (ki, &kind) in kinds.iter().enumerate() {
                        row[(ki * n_filters + fi) * n_channels + ch] = seg.value(kind)?;
                    }
                }
            }
            Ok(row)
        })
        .collect::<Vec<Result<Vec<f64>>>>()
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Extraction {
                event: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let labels = events.iter().map(|e| e.label.clone()).collect();
    FeatureMatrix::new(descriptors, rows, labels)
}

/// Values of the given descriptors only; each (cutoff, channel) pair is
/// filtered once.
pub fn extract_descriptors(event: &EventSegment, descriptors: &[FeatureDescriptor]) -> Result<Vec<f64>> {
    let fs = event.samples.sample_rate();
    let mut groups: BTreeMap<(usize, Option<u64>), Vec<usize>> = BTreeMap::new();
    for (i, d) in descriptors.iter().enumerate() {
        let ch = event
            .samples
            .channel_index(&d.channel)
            .ok_or_else(|| Error::DescriptorMismatch(format!("event has no channel `{}`", d.channel)))?;
        groups.entry((ch, d.cutoff.map(f64::to_bits))).or_default().push(i);
    }
    let mut out = vec![0.0; descriptors.len()];
    for ((ch, cutoff_bits), idxs) in groups {
        let raw = event.samples.channel(ch);
        let filtered;
        let samples = match cutoff_bits {
            Some(bits) => {
                filtered = lowpass_samples(raw, fs, f64::from_bits(bits))?;
                &filtered[..]
            }
            None => raw,
        };
        let mut seg = SegmentFeatures::new(samples, fs)?;
        for i in idxs {
            out[i] = seg.value(descriptors[i].kind)?;
        }
    }
    Ok(out)
}

/// Per-descriptor z-score statistics fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub descriptors: Vec<FeatureDescriptor>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Zero-variance descriptors; these normalize to 0.
    pub degenerate: Vec<bool>,
}

impl Normalizer {
    pub fn fit(training: &FeatureMatrix) -> Result<Self> {
        let n = training.num_rows();
        if n < 2 {
            return invalid(format!("normalizer needs at least 2 training rows, got {n}"));
        }
        let mut means = Vec::with_capacity(training.num_columns());
        let mut stds = Vec::with_capacity(training.num_columns());
        let mut degenerate = Vec::with_capacity(training.num_columns());
        for j in 0..training.num_columns() {
            let col = training.column(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            means.push(mean);
            stds.push(std);
            degenerate.push(std == 0.0 || std <= EPS * mean.abs());
        }
        Ok(Self {
            descriptors: training.descriptors.clone(),
            means,
            stds,
            degenerate,
        })
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn normalize(&self, j: usize, value: f64) -> f64 {
        if self.degenerate[j] {
            0.0
        } else {
            (value - self.means[j]) / self.stds[j]
        }
    }

    pub fn apply_values(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.len() {
            return Err(Error::DescriptorMismatch(format!(
                "{} values for {} normalizer descriptors",
                values.len(),
                self.len()
            )));
        }
        Ok(values.iter().enumerate().map(|(j, &v)| self.normalize(j, v)).collect())
    }

    pub fn apply(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        if matrix.descriptors != self.descriptors {
            return Err(Error::DescriptorMismatch(
                "matrix descriptors differ from the fitted normalizer".into(),
            ));
        }
        let rows = matrix
            .rows
            .iter()
            .map(|r| self.apply_values(r))
            .collect::<Result<Vec<_>>>()?;
        FeatureMatrix::new(matrix.descriptors.clone(), rows, matrix.labels.clone())
    }

    /// Restriction to the given descriptor indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            descriptors: indices.iter().map(|&i| self.descriptors[i].clone()).collect(),
            means: indices.iter().map(|&i| self.means[i]).collect(),
            stds: indices.iter().map(|&i| self.stds[i]).collect(),
            degenerate: indices.iter().map(|&i| self.degenerate[i]).collect(),
        }
    }
}
