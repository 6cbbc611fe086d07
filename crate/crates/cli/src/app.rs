//! Argument parsing and command dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use switchsel_core::classifier::VoteMode;
use switchsel_core::features::FeatureKind;
use switchsel_core::ScenarioId;

use crate::commands;
use crate::config::RunConfig;
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "switchsel", version, about = "Detect and classify switchgear actuations from vibration or sound")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect and label actuations in a recording, select features, write a model.
    Train(TrainArgs),
    /// Classify every actuation in a recording and write a JSON-lines event log.
    Monitor(MonitorArgs),
    /// Render a synthetic recording with ground truth.
    Synth(SynthArgs),
    /// Score detection and classification against ground truth.
    Eval(EvalArgs),
    /// Print a model summary.
    InspectModel(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VoteModeArg {
    Equal,
    FcWeighted,
    ProbWeighted,
}

impl From<VoteModeArg> for VoteMode {
    fn from(v: VoteModeArg) -> Self {
        match v {
            VoteModeArg::Equal => VoteMode::Equal,
            VoteModeArg::FcWeighted => VoteMode::FcWeighted,
            VoteModeArg::ProbWeighted => VoteMode::ProbWeighted,
        }
    }
}

fn parse_kind(s: &str) -> std::result::Result<FeatureKind, String> {
    FeatureKind::from_name(s).ok_or_else(|| format!("unknown feature kind `{s}`"))
}

/// Flags that override fields of the configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Interval length of the power series, seconds.
    #[arg(long)]
    pub interval_len: Option<f64>,
    /// Threshold margin in noise standard deviations.
    #[arg(long)]
    pub margin_k: Option<f64>,
    /// Low-pass cutoffs in Hz, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub cutoffs: Option<Vec<f64>>,
    /// Feature kinds, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    pub kinds: Option<Vec<FeatureKind>>,
    /// Number of descriptors to keep.
    #[arg(short = 'm', long)]
    pub selected: Option<usize>,
    /// EWMA weight of a new observation.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Update gate half-width in training standard deviations.
    #[arg(long)]
    pub gate_sigmas: Option<f64>,
    #[arg(long, value_enum)]
    pub vote_mode: Option<VoteModeArg>,
    /// Alarm threshold in training standard deviations, both directions.
    #[arg(long)]
    pub alarm_threshold: Option<f64>,
    #[arg(long)]
    pub trigger_channel: Option<String>,
    /// Labeling cycle, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub scenario_cycle: Option<Vec<String>>,
    /// Label of the first detected event.
    #[arg(long)]
    pub start_state: Option<String>,
    #[arg(long)]
    pub training_per_scenario: Option<usize>,
    /// Known switching time in seconds.
    #[arg(long)]
    pub switching_time: Option<f64>,
    #[arg(long)]
    pub merge_gap: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    /// Loads `--config` if given, else uses `base`, then applies the flags.
    pub fn resolve(&self, base: RunConfig) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => base,
        };
        if let Some(v) = self.interval_len {
            c.interval_len = v;
        }
        if let Some(v) = self.margin_k {
            c.margin_k = v;
        }
        if let Some(v) = &self.cutoffs {
            c.cutoffs = v.clone();
        }
        if let Some(v) = &self.kinds {
            c.kinds = v.clone();
        }
        if let Some(v) = self.selected {
            c.selected = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.gate_sigmas {
            c.gate_sigmas = v;
        }
        if let Some(v) = self.vote_mode {
            c.vote_mode = v.into();
        }
        if let Some(v) = self.alarm_threshold {
            c.alarm_upper = v;
            c.alarm_lower = v;
        }
        if let Some(v) = &self.trigger_channel {
            c.trigger_channel = Some(v.clone());
        }
        if let Some(v) = &self.scenario_cycle {
            c.scenario_cycle = v.iter().map(|s| ScenarioId::new(s.clone())).collect();
        }
        if let Some(v) = &self.start_state {
            c.start_state = Some(ScenarioId::new(v.clone()));
        }
        if let Some(v) = self.training_per_scenario {
            c.training_per_scenario = v;
        }
        if let Some(v) = self.switching_time {
            c.switching_time = Some(v);
        }
        if let Some(v) = self.merge_gap {
            c.merge_gap = v;
        }
        if let Some(v) = self.seed {
            c.seed = Some(v);
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training recordings (.wav or .csv). Several files are joined end to end.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Model file to write.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write the full quality ranking as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Rows of the ranking table to print.
    #[arg(long, default_value_t = 20)]
    pub show: usize,
    /// RFC 3339 creation timestamp stored in the model; the current time by default.
    #[arg(long)]
    pub created_at: Option<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// Recording to monitor (.wav or .csv).
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Track the scenario centers and raise drift alarms.
    #[arg(long)]
    pub update_centers: bool,
    /// Event log (JSON lines); stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Samples per channel read at a time.
    #[arg(long, default_value_t = 4096)]
    pub chunk: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus description (TOML). Omit to use the two-class benchmark.
    pub spec: Option<PathBuf>,
    /// Number of events of the benchmark corpus.
    #[arg(long, default_value_t = 200, conflicts_with = "spec")]
    pub events: usize,
    /// Recording to write (.wav or .csv).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Ground truth JSON; `<output>.truth.json` by default.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Overrides the corpus seed; takes precedence over `seed` in `--config`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run configuration; only its `seed` is used here.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the benchmark description as TOML and exit.
    #[arg(long)]
    pub dump_spec: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Report JSON; only the table is printed when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub model: PathBuf,
    /// Print the whole model file as JSON.
    #[arg(long)]
    pub json: bool,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => commands::train(&a),
        Command::Monitor(a) => commands::monitor(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::InspectModel(a) => commands::inspect(&a),
    }
}
