//! The `matnet` command line: argument parsing, run configuration and the
//! subcommand implementations.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::checks::gradient_suite;
use crate::data::{
    generate_synthetic, load_pv_csv, load_weather_csv, prepare_dataset, save_pv_csv,
    save_weather_csv, PreparedData, SampleWindow, SynthConfig, WindowConfig, WEATHER_WIDTH,
};
use crate::error::{Error, Result};
use crate::eval::{ablation_table, rank_days, write_ablation_csv, AblationSpec, Forecasts, RankBy};
use crate::model::{AttentionScale, EncoderKind, InterpolationMode, Model, ModelConfig};
use crate::train::{
    checkpoint_load, checkpoint_save, fit, initialize, write_history, Checkpoint, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

/// Share of calendar days held out for testing when no boundary is given.
const DEFAULT_TEST_SHARE: f64 = 0.25;

#[derive(Debug, Parser)]
#[command(
    name = "matnet",
    version,
    about = "Day-ahead PV generation forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic PV fleet and weather record as CSV.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of simulated days.
        #[arg(long)]
        days: Option<usize>,
    },
    /// Fit a model and write its checkpoint and loss history.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score a checkpoint on the held-out days.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score every non-empty combination of input branches.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Forecast the 24 hours following one window and print them as CSV.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        /// Forecast day; defaults to the last available window.
        #[arg(long)]
        day: Option<NaiveDate>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Export actual, forecast and previous-day curves for one test day.
    Plot {
        #[command(flatten)]
        common: CommonArgs,
        /// Day to export.
        #[arg(long, conflicts_with = "rank")]
        day: Option<NaiveDate>,
        /// Pick the best or worst day instead of naming one.
        #[arg(long, value_parser = ["best", "worst"])]
        rank: Option<String>,
        /// Metric used by --rank.
        #[arg(long, default_value = "mase")]
        rank_by: RankBy,
    },
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Default, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling, dropout and synthesis.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// PV generation CSV.
    #[arg(long, value_name = "PATH")]
    pub pv_csv: Option<PathBuf>,
    /// Hourly weather CSV.
    #[arg(long, value_name = "PATH")]
    pub weather_csv: Option<PathBuf>,
    /// Checkpoint to write (train) or read (other subcommands).
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Encoder used by each branch.
    #[arg(long, value_parser = ["attention", "lstm", "gru", "bilstm", "bigru"])]
    pub encoder: Option<String>,
    /// Dense interpolation weights.
    #[arg(long, value_parser = ["fixed", "learnable"])]
    pub interpolation: Option<String>,
    /// Replace the PV history input with zeros.
    #[arg(long)]
    pub ablate_pv: bool,
    /// Replace the weather history input with zeros.
    #[arg(long)]
    pub ablate_hw: bool,
    /// Replace the weather forecast input with zeros.
    #[arg(long)]
    pub ablate_fw: bool,
    /// Score only points whose actual generation is positive.
    #[arg(long)]
    pub daylight_only: bool,
    /// Training epochs.
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Hours between consecutive window starts.
    #[arg(long, value_name = "N")]
    pub stride: Option<usize>,
}

/// Keys accepted in a config file. All are optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    d_model: Option<usize>,
    heads: Option<usize>,
    layers: Option<usize>,
    interp_factor: Option<usize>,
    step_in: Option<usize>,
    step_out: Option<usize>,
    dropout: Option<f64>,
    interpolation: Option<String>,
    encoder: Option<String>,
    ffn_dim: Option<usize>,
    attention_scale: Option<String>,
    encoder_dropout: Option<bool>,
    recurrent_embedding: Option<bool>,
    initial_output: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    shuffle: Option<bool>,
    validation_fraction: Option<f64>,
    grad_clip: Option<f64>,
    plateau_factor: Option<f64>,
    plateau_patience: Option<usize>,
    plateau_delta: Option<f64>,
    pv_csv: Option<PathBuf>,
    weather_csv: Option<PathBuf>,
    units: Option<Vec<String>>,
    boundary: Option<DateValue>,
    stride: Option<usize>,
    daylight_only: Option<bool>,
    synth_days: Option<usize>,
    synth_start: Option<DateValue>,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
}

/// A date written either as a TOML date or as a quoted string.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DateValue {
    Text(NaiveDate),
    Toml(toml::value::Datetime),
}

impl DateValue {
    fn date(self) -> Result<NaiveDate> {
        match self {
            DateValue::Text(d) => Ok(d),
            DateValue::Toml(t) => t
                .date
                .filter(|_| t.time.is_none())
                .and_then(|d| NaiveDate::from_ymd_opt(d.year.into(), d.month.into(), d.day.into()))
                .ok_or_else(|| Error::Config(format!("'{t}' is not a calendar date"))),
        }
    }
}

/// Merged run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pv_csv: Option<PathBuf>,
    pub weather_csv: Option<PathBuf>,
    /// Unit ids to keep; all units when `None`.
    pub units: Option<Vec<String>>,
    /// First test day. Falls back to the checkpoint's value, then to the
    /// last quarter of the data.
    pub boundary: Option<NaiveDate>,
    pub stride: Option<usize>,
    pub daylight_only: bool,
    pub ablation: AblationSpec,
    pub synth: SynthConfig,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            pv_csv: None,
            weather_csv: None,
            units: None,
            boundary: None,
            stride: None,
            daylight_only: false,
            ablation: AblationSpec::ALL,
            synth: SynthConfig::default(),
            out: PathBuf::from("."),
            checkpoint: None,
        }
    }
}

impl RunConfig {
    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("model.ckpt"))
    }
}

/// Parses a TOML config text and applies it over the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let file: FileConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    let mut c = RunConfig::default();
    let m = &mut c.model;
    macro_rules! take {
        ($($src:ident => $dst:expr),* $(,)?) => { $(if let Some(v) = file.$src { $dst = v; })* };
    }
    take!(
        d_model => m.d_model, heads => m.heads, layers => m.layers,
        interp_factor => m.interp_factor, step_in => m.step_in, step_out => m.step_out,
        dropout => m.dropout_p, ffn_dim => m.ffn_dim, encoder_dropout => m.encoder_dropout,
        recurrent_embedding => m.recurrent_embedding, initial_output => m.initial_output,
    );
    if let Some(v) = &file.interpolation {
        m.interpolation = v.parse()?;
    }
    if let Some(v) = &file.encoder {
        m.encoder = v.parse()?;
    }
    if let Some(v) = &file.attention_scale {
        m.attention_scale = v.parse::<AttentionScale>()?;
    }
    let t = &mut c.train;
    take!(
        epochs => t.epochs, batch_size => t.batch_size, lr => t.lr, seed => t.seed,
        shuffle => t.shuffle, validation_fraction => t.validation_fraction,
        plateau_factor => t.plateau_factor, plateau_patience => t.plateau_patience,
        plateau_delta => t.plateau_delta, daylight_only => c.daylight_only,
        synth_days => c.synth.days, out => c.out,
    );
    if let Some(d) = file.synth_start {
        c.synth.start = d.date()?;
    }
    t.grad_clip = file.grad_clip;
    c.pv_csv = file.pv_csv;
    c.weather_csv = file.weather_csv;
    c.units = file.units;
    c.boundary = file.boundary.map(DateValue::date).transpose()?;
    c.stride = file.stride;
    c.checkpoint = file.checkpoint;
    Ok(c)
}

/// Reads the config file named in `flags` (defaults when absent) and lets
/// every flag that was given override it.
pub fn load_config(flags: &CommonArgs) -> Result<RunConfig> {
    let mut c = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_config(&text).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                other => other,
            })?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = flags.seed {
        c.train.seed = v;
    }
    if let Some(v) = flags.epochs {
        c.train.epochs = v;
    }
    if let Some(v) = &flags.encoder {
        c.model.encoder = v.parse::<EncoderKind>()?;
    }
    if let Some(v) = &flags.interpolation {
        c.model.interpolation = v.parse::<InterpolationMode>()?;
    }
    if flags.stride.is_some() {
        c.stride = flags.stride;
    }
    if flags.pv_csv.is_some() {
        c.pv_csv = flags.pv_csv.clone();
    }
    if flags.weather_csv.is_some() {
        c.weather_csv = flags.weather_csv.clone();
    }
    if flags.checkpoint.is_some() {
        c.checkpoint = flags.checkpoint.clone();
    }
    if let Some(v) = &flags.out {
        c.out = v.clone();
    }
    c.daylight_only |= flags.daylight_only;
    c.ablation = AblationSpec::new(!flags.ablate_pv, !flags.ablate_hw, !flags.ablate_fw);
    c.synth.seed = c.train.seed;
    c.model.validate()?;
    c.train.validate()?;
    c.ablation.validate()?;
    Ok(c)
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Synth { common, days } => {
            let mut c = load_config(&common)?;
            if let Some(d) = days {
                c.synth.days = d;
            }
            synth(&c)
        }
        Command::Train { common } => train(&load_config(&common)?),
        Command::Evaluate { common } => evaluate(&load_config(&common)?),
        Command::Ablate { common } => ablate(&load_config(&common)?),
        Command::Predict { common, day } => predict(&load_config(&common)?, day),
        Command::Gradcheck { common } => {
            load_config(&common)?;
            gradcheck()
        }
        Command::Plot {
            common,
            day,
            rank,
            rank_by,
        } => {
            let c = load_config(&common)?;
            let target = match (day, rank.as_deref()) {
                (Some(d), _) => DaySelector::Named(d),
                (None, Some("worst")) => DaySelector::Ranked(rank_by, true),
                (None, Some(_)) => DaySelector::Ranked(rank_by, false),
                (None, None) => {
                    return Err(Error::Config("plot needs --day or --rank".into()));
                }
            };
            plot(&c, target)
        }
    }
}

fn create_out(c: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&c.out).map_err(|e| Error::io(&c.out, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn synth(c: &RunConfig) -> Result<i32> {
    let data = generate_synthetic(&c.synth)?;
    create_out(c)?;
    let pv = c.out.join("pv.csv");
    let weather = c.out.join("weather.csv");
    save_pv_csv(&pv, &data.pv)?;
    save_weather_csv(&weather, &data.weather)?;
    println!("{}\n{}", pv.display(), weather.display());
    Ok(EXIT_OK)
}

/// Parsed inputs plus the split they were cut into.
struct Loaded {
    prepared: PreparedData,
    boundary: NaiveDate,
    stride: usize,
}

fn load_data(c: &RunConfig, model: &ModelConfig, stored: Option<&Checkpoint>) -> Result<Loaded> {
    let pv_path = c
        .pv_csv
        .as_ref()
        .ok_or_else(|| Error::Config("no PV data: pass --pv-csv or set pv_csv".into()))?;
    let weather_path = c.weather_csv.as_ref().ok_or_else(|| {
        Error::Config("no weather data: pass --weather-csv or set weather_csv".into())
    })?;
    let pv = load_pv_csv(pv_path, c.units.as_deref())?;
    let weather = load_weather_csv(weather_path)?;
    let meta = |key: &str| stored.and_then(|s| s.metadata.get(key));
    let stride = match (c.stride, meta("stride")) {
        (Some(s), _) => s,
        (None, Some(s)) => s
            .parse()
            .map_err(|_| Error::Integrity(format!("bad stored stride '{s}'")))?,
        (None, None) => WindowConfig::default().stride,
    };
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let window = WindowConfig {
        step_in: model.step_in,
        stride,
        step_out: model.step_out,
    };
    let boundary = match (c.boundary, meta("boundary")) {
        (Some(b), _) => b,
        (None, Some(b)) => b
            .parse()
            .map_err(|_| Error::Integrity(format!("bad stored boundary '{b}'")))?,
        (None, None) => default_boundary(&crate::data::fleet_series(&pv)?)?,
    };
    let prepared = prepare_dataset(
        &pv,
        &weather,
        &window,
        boundary,
        stored.and_then(|s| s.scaler.as_ref()),
    )?;
    Ok(Loaded {
        prepared,
        boundary,
        stride,
    })
}

fn default_boundary(fleet: &crate::data::TimeSeries) -> Result<NaiveDate> {
    let mut days: Vec<NaiveDate> = fleet.timestamps().map(|t| t.date()).collect();
    days.dedup();
    if days.len() < 2 {
        return Err(Error::Data(
            "need at least two days of data to split".into(),
        ));
    }
    let test = ((days.len() as f64 * DEFAULT_TEST_SHARE).round() as usize).clamp(1, days.len() - 1);
    Ok(days[days.len() - test])
}

fn load_checkpoint(c: &RunConfig) -> Result<(Checkpoint, Model)> {
    let ckpt = checkpoint_load(&c.checkpoint_path())?;
    let model = ckpt.model()?;
    if model.config.weather_width != WEATHER_WIDTH {
        return Err(Error::Config(format!(
            "checkpoint expects {} weather columns, data has {WEATHER_WIDTH}",
            model.config.weather_width
        )));
    }
    Ok((ckpt, model))
}

fn test_windows(loaded: &Loaded) -> Result<&[SampleWindow]> {
    let test = &loaded.prepared.split.test;
    if test.is_empty() {
        return Err(Error::Data(format!(
            "no test windows on or after {}",
            loaded.boundary
        )));
    }
    Ok(test)
}

fn train(c: &RunConfig) -> Result<i32> {
    let loaded = load_data(c, &c.model, None)?;
    let samples = &loaded.prepared.split.train;
    if samples.is_empty() {
        return Err(Error::Data(format!(
            "no training windows before {}",
            loaded.boundary
        )));
    }
    log::info!(
        "training {} on {} windows ({} held out for test)",
        c.model.encoder,
        samples.len(),
        loaded.prepared.split.test.len()
    );
    let mut model = initialize(c.model.clone(), c.train.seed)?;
    let outcome = fit(&mut model, samples, &c.train)?;
    let mut ckpt = outcome.checkpoint(&model.config);
    ckpt.scaler = Some(loaded.prepared.scaler.clone());
    ckpt.metadata = BTreeMap::from([
        ("boundary".to_string(), loaded.boundary.to_string()),
        ("stride".to_string(), loaded.stride.to_string()),
        ("seed".to_string(), c.train.seed.to_string()),
    ]);
    create_out(c)?;
    let mut history = Vec::new();
    write_history(&outcome.history, &mut history).expect("write to memory");
    write_file(&c.out.join("history.csv"), &history)?;
    let path = c.checkpoint_path();
    checkpoint_save(&path, &ckpt)?;
    log::info!(
        "best epoch {} (monitored mse {:e})",
        outcome.best.epoch,
        outcome.best.metric
    );
    println!("{}", path.display());
    Ok(EXIT_OK)
}

fn evaluate(c: &RunConfig) -> Result<i32> {
    let (ckpt, model) = load_checkpoint(c)?;
    let loaded = load_data(c, &model.config, Some(&ckpt))?;
    let forecasts = Forecasts::compute(&model, test_windows(&loaded)?, c.ablation)?;
    let report = forecasts.report(c.daylight_only)?;
    create_out(c)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).expect("write to memory");
    write_file(&c.out.join("metrics.csv"), &csv)?;
    let summary = report.summary(&model.config.encoder.to_string());
    write_file(&c.out.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(EXIT_OK)
}

fn ablate(c: &RunConfig) -> Result<i32> {
    let (ckpt, model) = load_checkpoint(c)?;
    let loaded = load_data(c, &model.config, Some(&ckpt))?;
    let rows = ablation_table(&model, test_windows(&loaded)?, c.daylight_only)?;
    create_out(c)?;
    let mut csv = Vec::new();
    write_ablation_csv(&rows, &mut csv).expect("write to memory");
    write_file(&c.out.join("ablation.csv"), &csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(EXIT_OK)
}

fn predict(c: &RunConfig, day: Option<NaiveDate>) -> Result<i32> {
    let (ckpt, model) = load_checkpoint(c)?;
    let loaded = load_data(c, &model.config, Some(&ckpt))?;
    let split = &loaded.prepared.split;
    let all: Vec<&SampleWindow> = split.train.iter().chain(&split.test).collect();
    let sample = match day {
        Some(d) => all
            .iter()
            .find(|s| s.day == d)
            .ok_or_else(|| Error::Data(format!("no window forecasts {d}")))?,
        None => all
            .last()
            .ok_or_else(|| Error::Data("no complete window in the data".into()))?,
    };
    let forecast = crate::eval::ablate_forward(&model, &sample.inputs, c.ablation)?;
    let mut out = String::from("timestamp,forecast\n");
    for (t, v) in sample.target_times.iter().zip(&forecast) {
        let _ = writeln!(out, "{},{v}", crate::data::csvio::format_timestamp(t));
    }
    print!("{out}");
    Ok(EXIT_OK)
}

fn gradcheck() -> Result<i32> {
    let checks = gradient_suite()?;
    println!(
        "{:<34}{:>14}{:>14}{:>9}  status",
        "check", "max rel err", "max abs err", "entries"
    );
    let mut failed = 0;
    for c in &checks {
        let r = &c.report;
        println!(
            "{:<34}{:>14.3e}{:>14.3e}{:>9}  {}",
            c.name,
            r.max_rel_error,
            r.max_abs_error,
            r.checked,
            if r.pass { "ok" } else { "FAIL" }
        );
        for f in &r.failures {
            eprintln!("  {}: {f}", c.name);
        }
        failed += usize::from(!r.pass);
    }
    if failed > 0 {
        eprintln!("{failed} of {} gradient checks failed", checks.len());
        return Ok(EXIT_CHECK);
    }
    Ok(EXIT_OK)
}

enum DaySelector {
    Named(NaiveDate),
    /// Metric and whether the largest value is wanted.
    Ranked(RankBy, bool),
}

fn plot(c: &RunConfig, target: DaySelector) -> Result<i32> {
    let (ckpt, model) = load_checkpoint(c)?;
    let loaded = load_data(c, &model.config, Some(&ckpt))?;
    let forecasts = Forecasts::compute(&model, test_windows(&loaded)?, c.ablation)?;
    let day = match target {
        DaySelector::Named(d) => d,
        DaySelector::Ranked(by, worst) => {
            let report = forecasts.report(c.daylight_only)?;
            *rank_days(&report, by, worst)
                .first()
                .ok_or_else(|| Error::Data("no scored days to rank".into()))?
        }
    };
    let rows = forecasts.plot(day)?;
    create_out(c)?;
    let path = c.out.join(format!("plot_{day}.csv"));
    let mut csv = Vec::new();
    crate::eval::write_plot_csv(&rows, &mut csv).expect("write to memory");
    write_file(&path, &csv)?;
    println!("{}", path.display());
    Ok(EXIT_OK)
}
