use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

mod commands;
mod error;
mod manifest;

use error::{CliError, CliResult};

/// Seizure risk pipeline: synthesize or load EEG, preprocess, train the
/// CNNs, score test data and sweep the alarm thresholds.
#[derive(Debug, Parser)]
#[command(name = "eegrisk", version, args_override_self = true)]
pub struct Cli {
    /// TOML file of `key = value` pairs; each key is applied as `--key value`
    /// after the command line, so the file wins over flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic recording with seizures and a pre-ictal signature.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Bandpass, notch, average reference and the optional ICA hook.
    #[command(args_override_self = true)]
    Preprocess(PreprocessArgs),
    /// Train one CNN per (image type, pre-ictal length).
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Score the test data of a recording with one model and emit alarms.
    #[command(args_override_self = true)]
    Risk(RiskArgs),
    /// Score with every model and evaluate the full threshold grid.
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
    /// Pick the best combination and write the summary table.
    #[command(args_override_self = true)]
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Header path; samples go next to it with a `.f32` extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 14.0)]
    pub duration_h: f64,
    /// Evenly spaced seizures (default 3). Ignored when --onsets-h is given.
    #[arg(long)]
    pub seizures: Option<usize>,
    /// Comma-separated onset times in hours.
    #[arg(long)]
    pub onsets_h: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    pub signature_min: f64,
    #[arg(long, default_value_t = 60.0)]
    pub seizure_duration_s: f64,
    #[arg(long, default_value_t = 60.0)]
    pub min_gap_min: f64,
    #[arg(long, default_value = "synthetic")]
    pub patient_id: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub bandpass: bool,
    #[arg(long, default_value_t = 0.5)]
    pub band_low_hz: f64,
    #[arg(long, default_value_t = 100.0)]
    pub band_high_hz: f64,
    #[arg(long, default_value_t = 4)]
    pub band_order: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub notch: bool,
    #[arg(long, default_value_t = 50.0)]
    pub notch_hz: f64,
    #[arg(long, default_value_t = 25.0)]
    pub notch_q: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub average_reference: bool,
    /// `off`, or a command run as `<command> <in-header> <out-header>`.
    #[arg(long, default_value = "off")]
    pub ica_hook: String,
}

/// Settings that decide training sets and test segments.
#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = 60.0)]
    pub guard_min: f64,
    #[arg(long, default_value_t = 4.5)]
    pub test_hours: f64,
    /// `global` or `perchannel`.
    #[arg(long, default_value = "global")]
    pub norm_scope: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Preprocessed recording header.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub models_dir: PathBuf,
    /// Comma-separated subset of 1s,5s,10s.
    #[arg(long, default_value = "1s,5s,10s")]
    pub image_type: String,
    /// Comma-separated pre-ictal lengths in minutes.
    #[arg(long, default_value = "10,20,30,40")]
    pub preictal_min: String,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cap on pre-ictal images (the inter-ictal class follows).
    #[arg(long)]
    pub max_images_per_class: Option<usize>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub z: f64,
    #[arg(long, default_value_t = 0.5)]
    pub y: f64,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub models_dir: PathBuf,
    /// Model file prefix; defaults to the recording's patient id.
    #[arg(long)]
    pub patient: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// `interictal-hours` or `total-test-hours`.
    #[arg(long, default_value = "interictal-hours")]
    pub fpr_mode: String,
    #[arg(long, default_value = "1s,5s,10s")]
    pub image_type: String,
    #[arg(long, default_value = "10,20,30,40")]
    pub preictal_min: String,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of `sweep`.
    #[arg(long)]
    pub sweep_dir: PathBuf,
    /// Defaults to the sweep directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Name in the table; defaults to the patient recorded by `sweep`.
    #[arg(long)]
    pub patient: Option<String>,
}

/// Appends the pairs of the `--config` file (if any) to the arguments.
fn expand_config(mut args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = eegrisk::io_util::read_to_string(&path)?;
    let table: toml::Table = toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    for (key, value) in table {
        if key == "config" {
            continue;
        }
        let v = match value {
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            toml::Value::Array(items) => items
                .into_iter()
                .map(|i| match i {
                    toml::Value::String(s) => s,
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            other => {
                return Err(CliError::Usage(format!(
                    "config {}: key `{key}` has unsupported value {other}",
                    path.display()
                )))
            }
        };
        args.push(format!("--{}", key.replace('_', "-")).into());
        args.push(v.into());
    }
    Ok(args)
}

fn parse(args: Vec<OsString>) -> Result<Cli, ExitCode> {
    let args = expand_config(args).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(e.exit_code())
    })?;
    Cli::command()
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
        .map_err(|e| {
            let _ = e.print();
            if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        })
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args_os().collect()) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match std::panic::catch_unwind(|| commands::run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => ExitCode::from(3),
    }
}
