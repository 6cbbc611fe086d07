//! The five verbs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use switchsel_core::classifier::{DriftState, VoteMode};
use switchsel_core::synth::{generate_corpus, CorpusSpec, TruthEvent};
use switchsel_core::{MonitorOutput, ScenarioId, StreamingMonitor, TimeSeries};

use crate::app::{EvalArgs, InspectArgs, MonitorArgs, SynthArgs, TrainArgs};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::eval::{evaluate, mode_name, EvalReport};
use crate::io::{read_recording, write_recording, SampleSource};
use crate::modelfile::ModelFile;
use crate::pipeline::train_recording;

fn join_recordings(paths: &[PathBuf]) -> Result<TimeSeries> {
    let mut series: Option<TimeSeries> = None;
    for p in paths {
        let next = read_recording(p)?;
        series = Some(match series {
            None => next,
            Some(acc) => {
                if acc.sample_rate() != next.sample_rate() || acc.channel_names() != next.channel_names() {
                    return Err(CliError::Data(format!(
                        "{}: sample rate or channels differ from the first recording",
                        p.display()
                    )));
                }
                let (fs, names) = (acc.sample_rate(), acc.channel_names().to_vec());
                let mut channels = acc.into_channels();
                for (c, more) in channels.iter_mut().zip(next.into_channels()) {
                    c.extend(more);
                }
                TimeSeries::new(channels, fs, names)?
            }
        });
    }
    series.ok_or_else(|| CliError::Usage("no input recordings".into()))
}

fn timestamp(pinned: Option<&str>) -> Result<String> {
    match pinned {
        Some(s) => DateTime::parse_from_rfc3339(s)
            .map(|t| t.to_rfc3339_opts(SecondsFormat::AutoSi, true))
            .map_err(|e| CliError::Usage(format!("--created-at `{s}`: {e}"))),
        None => Ok(Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)),
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let config = args.config.resolve(RunConfig::default())?;
    let created_at = timestamp(args.created_at.as_deref())?;
    let series = join_recordings(&args.inputs)?;
    let training = train_recording(&series, &config)?;
    let file = ModelFile::new(training.model.clone(), config, created_at);
    file.save(&args.output)?;
    if let Some(p) = &args.report {
        let text = serde_json::to_string_pretty(&training.report).expect("report serializes");
        std::fs::write(p, text + "\n").map_err(|e| CliError::io(p, e))?;
    }

    let r = &training.report;
    let selected: Vec<usize> = r.ranking[..training.model.descriptors.len()].to_vec();
    let mut out = io::stdout().lock();
    writeln!(out, "{:>5}  {:<40} {:>9}", "rank", "descriptor", "fc")?;
    for (rank, &i) in r.ranking.iter().take(args.show.max(selected.len())).enumerate() {
        let mark = if selected.contains(&i) { "*" } else { " " };
        let note = if r.degenerate[i] { "  (constant)" } else { "" };
        writeln!(out, "{:>5}{mark} {:<40} {:>9.5}{note}", rank + 1, r.descriptors[i].to_string(), r.scores[i])?;
    }
    writeln!(
        out,
        "selected {} of {} candidates; model written to {}",
        selected.len(),
        r.descriptors.len(),
        args.output.display()
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub descriptor: String,
    pub scenario: ScenarioId,
    pub probability: f64,
    pub fc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmRecord {
    pub scenario: ScenarioId,
    pub descriptor: String,
    pub sigma_displacement: f64,
    pub first_triggered: f64,
    pub new: bool,
}

/// One line of the monitor's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub end: f64,
    pub truncated: bool,
    pub scenario: ScenarioId,
    pub probability: f64,
    pub vote_mode: VoteMode,
    pub votes: Vec<VoteRecord>,
    /// Center displacement from training, in training standard deviations,
    /// per scenario and descriptor. Present when centers are tracked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displacements: Option<BTreeMap<ScenarioId, Vec<f64>>>,
    pub alarms: Vec<AlarmRecord>,
}

fn displacements(state: &DriftState) -> BTreeMap<ScenarioId, Vec<f64>> {
    state
        .scenarios
        .iter()
        .zip(&state.tracks)
        .map(|(s, row)| (s.clone(), row.iter().map(|t| t.sigma_displacement()).collect()))
        .collect()
}

fn record(out: &MonitorOutput, names: &[String]) -> EventRecord {
    let est = &out.inference.estimate;
    EventRecord {
        time: out.window.start,
        end: out.window.end,
        truncated: out.truncated,
        scenario: est.scenario.clone(),
        probability: est.probability,
        vote_mode: est.mode,
        votes: est
            .votes
            .iter()
            .zip(names)
            .map(|(v, n)| VoteRecord {
                descriptor: n.clone(),
                scenario: v.scenario.clone(),
                probability: v.probability,
                fc: v.fc,
            })
            .collect(),
        displacements: out.drift.as_ref().map(displacements),
        alarms: out
            .inference
            .alarms
            .iter()
            .map(|a| AlarmRecord {
                scenario: a.scenario.clone(),
                descriptor: names[a.descriptor].clone(),
                sigma_displacement: a.sigma_displacement,
                first_triggered: a.first_triggered,
                new: a.new,
            })
            .collect(),
    }
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_records(w: &mut dyn Write, outputs: &[MonitorOutput], names: &[String]) -> Result<()> {
    for o in outputs {
        let line = serde_json::to_string(&record(o, names)).expect("record serializes");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn monitor(args: &MonitorArgs) -> Result<()> {
    let file = ModelFile::load(&args.model)?;
    let config = args.config.resolve(file.config.clone())?;
    let model = &file.model;
    if args.chunk == 0 {
        return Err(CliError::Usage("--chunk must be at least 1".into()));
    }
    let mut src = SampleSource::open(&args.input)?;
    let mut out = writer(args.output.as_deref())?;
    let Some(fs) = src.sample_rate() else {
        // no samples at all
        out.flush()?;
        return Ok(());
    };
    let state = if args.update_centers {
        Some(DriftState::from_model(model, config.drift_config())?)
    } else {
        None
    };
    let names: Vec<String> = model.descriptors.iter().map(|d| d.to_string()).collect();
    let mut mon = StreamingMonitor::new(model, src.channel_names(), fs, state, config.vote_mode)?;
    while let Some(chunk) = src.next_chunk(args.chunk)? {
        let outputs = mon.push(&chunk)?;
        write_records(&mut out, &outputs, &names)?;
    }
    let (outputs, _) = mon.finish()?;
    write_records(&mut out, &outputs, &names)?;
    out.flush()?;
    Ok(())
}

fn default_truth_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".truth.json");
    PathBuf::from(s)
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            toml::from_str::<CorpusSpec>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => CorpusSpec::benchmark(args.events, 1),
    };
    let config_seed = match &args.config {
        Some(p) => RunConfig::load(p)?.seed,
        None => None,
    };
    if let Some(seed) = args.seed.or(config_seed) {
        spec.seed = seed;
    }
    if args.dump_spec {
        let text = toml::to_string(&spec).expect("spec serializes");
        std::fs::write(&args.output, text).map_err(|e| CliError::io(&args.output, e))?;
        return Ok(());
    }
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let corpus = generate_corpus(&spec)?;
    write_recording(&args.output, &corpus.series)?;
    let truth_path = args.truth.clone().unwrap_or_else(|| default_truth_path(&args.output));
    let text = serde_json::to_string_pretty(&corpus.truth).expect("truth serializes");
    std::fs::write(&truth_path, text + "\n").map_err(|e| CliError::io(&truth_path, e))?;
    log::info!(
        "{} events, {:.1} s, written to {} and {}",
        corpus.truth.len(),
        corpus.series.duration(),
        args.output.display(),
        truth_path.display()
    );
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthEvent>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

fn fmt_acc(a: Option<f64>) -> String {
    a.map_or_else(|| "n/a".to_string(), |v| format!("{:.4}", v))
}

pub fn print_report(w: &mut dyn Write, r: &EvalReport) -> io::Result<()> {
    let d = &r.detection;
    let c = &r.classification;
    writeln!(
        w,
        "detection: {} truth, {} detected, {} matched, precision {:.4}, recall {:.4}",
        d.truth_events, d.detected, d.matched, d.precision, d.recall
    )?;
    writeln!(w, "classification over {} matched events:", c.evaluated)?;
    writeln!(w, "  single best ({}): {}", c.single_best_descriptor, fmt_acc(c.single_best))?;
    for (mode, acc) in &c.majority_vote {
        writeln!(w, "  majority vote, {mode}: {}", fmt_acc(*acc))?;
    }
    writeln!(
        w,
        "  updated centers, {}: {}",
        mode_name(c.updated_centers_mode),
        fmt_acc(c.updated_centers)
    )
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let file = ModelFile::load(&args.model)?;
    let config = args.config.resolve(file.config.clone())?;
    let series = read_recording(&args.input)?;
    let truth = read_truth(&args.truth)?;
    let report = evaluate(&series, &truth, &file.model, config.drift_config(), config.vote_mode)?;
    if let Some(p) = &args.output {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(p, text + "\n").map_err(|e| CliError::io(p, e))?;
    }
    print_report(&mut io::stdout().lock(), &report)?;
    Ok(())
}

pub fn inspect(args: &InspectArgs) -> Result<()> {
    let file = ModelFile::load(&args.model)?;
    let mut out = io::stdout().lock();
    if args.json {
        write!(out, "{}", file.to_json())?;
        return Ok(());
    }
    let m = &file.model;
    writeln!(out, "schema version {}, created {}", file.schema_version, file.created_at)?;
    let cycle: Vec<&str> = m.scenario_cycle.iter().map(|s| s.as_str()).collect();
    writeln!(out, "sample rate {} Hz, scenario cycle {}", m.sample_rate, cycle.join(" -> "))?;
    let counts: Vec<String> = m.summary.events_per_scenario.iter().map(|(s, n)| format!("{s}: {n}")).collect();
    writeln!(
        out,
        "trained on {} events, {} candidates, library {}",
        counts.join(", "),
        m.summary.candidate_count,
        m.summary.library_version
    )?;
    if let Some(d) = &m.detection {
        let c = &d.calibration;
        writeln!(
            out,
            "detection on `{}`: interval {} s, threshold {:.6e} (noise {:.6e} + {} x {:.6e}), refractory {:.3} s",
            d.trigger_channel, d.interval_len, c.threshold, c.mean_noise, c.margin_k, c.std_noise, c.refractory
        )?;
    }
    let scen: Vec<&str> = m.centers.scenarios.iter().map(|s| s.as_str()).collect();
    writeln!(out, "{:<40} {:>9}  centers ({})", "descriptor", "fc", scen.join(", "))?;
    for (j, d) in m.descriptors.iter().enumerate() {
        let centers: Vec<String> = m.centers.centers.iter().map(|row| format!("{:+.4}", row[j])).collect();
        writeln!(out, "{:<40} {:>9.5}  {}", d.to_string(), m.fc[j], centers.join(" "))?;
    }
    Ok(())
}
