//! Recording input and output. WAV (integer PCM or 32-bit float) and CSV with
//! a `time` column followed by one column per channel.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use switchsel_core::TimeSeries;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Wav,
    Csv,
}

impl Format {
    pub fn of(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("wav") => Ok(Format::Wav),
            Some("csv") => Ok(Format::Csv),
            _ => Err(CliError::Usage(format!(
                "{}: unknown recording format (expected .wav or .csv)",
                path.display()
            ))),
        }
    }
}

/// Chunked reader over a recording.
pub enum SampleSource {
    Wav(WavSource),
    Csv(CsvSource),
}

pub struct WavSource {
    reader: hound::WavReader<BufReader<File>>,
    channels: usize,
    sample_rate: f64,
    int_scale: Option<f64>,
    path: String,
}

pub struct CsvSource {
    records: csv::StringRecordsIntoIter<BufReader<File>>,
    channel_names: Vec<String>,
    sample_rate: Option<f64>,
    step: f64,
    last_time: Option<f64>,
    /// Rows read ahead while determining the sample rate.
    lookahead: Vec<(f64, Vec<f64>)>,
    row: usize,
    path: String,
}

impl SampleSource {
    pub fn open(path: &Path) -> Result<Self> {
        match Format::of(path)? {
            Format::Wav => WavSource::open(path).map(SampleSource::Wav),
            Format::Csv => CsvSource::open(path).map(SampleSource::Csv),
        }
    }

    pub fn channel_names(&self) -> Vec<String> {
        match self {
            SampleSource::Wav(w) => (0..w.channels).map(|i| format!("ch{i}")).collect(),
            SampleSource::Csv(c) => c.channel_names.clone(),
        }
    }

    /// `None` only for a CSV file without data rows.
    pub fn sample_rate(&self) -> Option<f64> {
        match self {
            SampleSource::Wav(w) => Some(w.sample_rate),
            SampleSource::Csv(c) => c.sample_rate,
        }
    }

    /// Up to `max` samples per channel; `None` at the end of the recording.
    pub fn next_chunk(&mut self, max: usize) -> Result<Option<Vec<Vec<f64>>>> {
        let chunk = match self {
            SampleSource::Wav(w) => w.next_chunk(max)?,
            SampleSource::Csv(c) => c.next_chunk(max)?,
        };
        Ok(if chunk.first().is_none_or(|c| c.is_empty()) {
            None
        } else {
            Some(chunk)
        })
    }
}

impl WavSource {
    fn open(path: &Path) -> Result<Self> {
        let reader = hound::WavReader::open(path).map_err(|e| CliError::io(path, e))?;
        let spec = reader.spec();
        let int_scale = match spec.sample_format {
            hound::SampleFormat::Int => {
                if !(8..=32).contains(&spec.bits_per_sample) {
                    return Err(CliError::io(path, format!("unsupported bit depth {}", spec.bits_per_sample)));
                }
                Some(2f64.powi(spec.bits_per_sample as i32 - 1))
            }
            hound::SampleFormat::Float => {
                if spec.bits_per_sample != 32 {
                    return Err(CliError::io(path, format!("unsupported float bit depth {}", spec.bits_per_sample)));
                }
                None
            }
        };
        Ok(Self {
            channels: spec.channels as usize,
            sample_rate: spec.sample_rate as f64,
            int_scale,
            reader,
            path: path.display().to_string(),
        })
    }

    fn next_chunk(&mut self, max: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![Vec::with_capacity(max); self.channels];
        let total = max * self.channels;
        let path = &self.path;
        let err = |e: hound::Error| CliError::Data(format!("{path}: {e}"));
        match self.int_scale {
            Some(scale) => {
                for (i, s) in self.reader.samples::<i32>().take(total).enumerate() {
                    out[i % self.channels].push(s.map_err(err)? as f64 / scale);
                }
            }
            None => {
                for (i, s) in self.reader.samples::<f32>().take(total).enumerate() {
                    out[i % self.channels].push(s.map_err(err)? as f64);
                }
            }
        }
        let n = out[0].len();
        if out.iter().any(|c| c.len() != n) {
            return Err(CliError::Data(format!("{}: truncated sample frame", self.path)));
        }
        Ok(out)
    }
}

/// Snaps a rate derived from printed timestamps to the nearest integer when
/// it is that close.
fn snap_rate(fs: f64) -> f64 {
    let r = fs.round();
    if (fs - r).abs() <= 1e-6 * fs {
        r
    } else {
        fs
    }
}

impl CsvSource {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(BufReader::new(file));
        let header = reader.headers().map_err(|e| CliError::io(path, e))?.clone();
        let mut src = Self {
            channel_names: header.iter().skip(1).map(str::to_string).collect(),
            records: reader.into_records(),
            sample_rate: None,
            step: 0.0,
            last_time: None,
            lookahead: Vec::new(),
            row: 0,
            path: path.display().to_string(),
        };
        if header.is_empty() {
            // completely empty file
            return Ok(src);
        }
        if header.len() < 2 {
            return Err(CliError::io(path, "CSV needs a time column and at least one channel"));
        }
        while src.lookahead.len() < 2 {
            match src.read_row()? {
                Some(r) => src.lookahead.push(r),
                None => break,
            }
        }
        match src.lookahead.as_slice() {
            [] => {}
            [_] => return Err(CliError::io(path, "a single data row does not define a sample rate")),
            [(t0, _), (t1, _), ..] => {
                let step = t1 - t0;
                if !(step > 0.0) {
                    return Err(CliError::io(path, "time column must increase"));
                }
                src.step = step;
                src.sample_rate = Some(snap_rate(1.0 / step));
            }
        }
        Ok(src)
    }

    fn read_row(&mut self) -> Result<Option<(f64, Vec<f64>)>> {
        let Some(rec) = self.records.next() else {
            return Ok(None);
        };
        self.row += 1;
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", self.path)))?;
        if rec.len() != self.channel_names.len() + 1 {
            return Err(CliError::Data(format!(
                "{}: row {} has {} fields, expected {}",
                self.path,
                self.row,
                rec.len(),
                self.channel_names.len() + 1
            )));
        }
        let mut values = Vec::with_capacity(rec.len());
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::Data(format!("{}: row {}: `{field}` is not a number", self.path, self.row)))?;
            if !v.is_finite() {
                return Err(CliError::Data(format!("{}: row {}: non-finite value", self.path, self.row)));
            }
            values.push(v);
        }
        let t = values.remove(0);
        Ok(Some((t, values)))
    }

    fn next_chunk(&mut self, max: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![Vec::with_capacity(max); self.channel_names.len()];
        let mut taken = 0;
        while taken < max {
            let row = if self.lookahead.is_empty() {
                self.read_row()?
            } else {
                Some(self.lookahead.remove(0))
            };
            let Some((t, values)) = row else { break };
            if let Some(prev) = self.last_time {
                if ((t - prev) - self.step).abs() > 0.01 * self.step {
                    return Err(CliError::Data(format!(
                        "{}: irregular time step at t = {t} (expected {})",
                        self.path, self.step
                    )));
                }
            }
            self.last_time = Some(t);
            for (c, v) in out.iter_mut().zip(values) {
                c.push(v);
            }
            taken += 1;
        }
        Ok(out)
    }
}

/// Reads a whole recording into memory.
pub fn read_recording(path: &Path) -> Result<TimeSeries> {
    let mut src = SampleSource::open(path)?;
    let names = src.channel_names();
    let mut channels = vec![Vec::new(); names.len()];
    while let Some(chunk) = src.next_chunk(1 << 16)? {
        for (c, part) in channels.iter_mut().zip(chunk) {
            c.extend(part);
        }
    }
    let Some(fs) = src.sample_rate() else {
        return Err(CliError::Data(format!("{}: recording has no samples", path.display())));
    };
    Ok(TimeSeries::new(channels, fs, names)?)
}

pub fn write_recording(path: &Path, series: &TimeSeries) -> Result<()> {
    match Format::of(path)? {
        Format::Wav => write_wav(path, series),
        Format::Csv => write_csv(path, series),
    }
}

/// 32-bit float WAV. The sample rate must be a whole number of hertz.
pub fn write_wav(path: &Path, series: &TimeSeries) -> Result<()> {
    let fs = series.sample_rate();
    if fs.fract() != 0.0 || fs > u32::MAX as f64 {
        return Err(CliError::Usage(format!("WAV needs an integer sample rate, got {fs}")));
    }
    let spec = hound::WavSpec {
        channels: series.num_channels() as u16,
        sample_rate: fs as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| CliError::io(path, e))?;
    for i in 0..series.len() {
        for c in series.channels() {
            w.write_sample(c[i] as f32).map_err(|e| CliError::io(path, e))?;
        }
    }
    w.finalize().map_err(|e| CliError::io(path, e))
}

pub fn write_csv(path: &Path, series: &TimeSeries) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let fs = series.sample_rate();
    let io = |e: std::io::Error| CliError::io(path, e);
    write!(w, "time").map_err(io)?;
    for name in series.channel_names() {
        write!(w, ",{name}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for i in 0..series.len() {
        write!(w, "{}", i as f64 / fs).map_err(io)?;
        for c in series.channels() {
            write!(w, ",{}", c[i]).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}
