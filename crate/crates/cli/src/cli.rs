//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sleepnet::eval::fmt_opt;
use sleepnet::loss::LossKind;

use crate::commands::evaluate::EvaluateOptions;
use crate::commands::score::{ExportOptions, ScoreOptions};
use crate::commands::train::TrainOptions;
use crate::commands::{evaluate, prepare, score, train};
use crate::config::{RunConfig, Variant};
use crate::error::{Result, EXIT_USAGE};
use crate::layout::RunLayout;

#[derive(Debug, Parser)]
#[command(name = "sleepnet", version, about = "Single-channel EEG sleep staging")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration. Defaults to <run-dir>/config.toml when that exists.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory (output_dir in the config).
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    /// Worker threads; 1 makes every command single-threaded.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Epochs per input sequence.
    #[arg(long, global = true)]
    pub maxtime: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// EDF pairs to normalized epoch files, a class-count summary and a fold plan.
    Prepare(PrepareArgs),
    /// Cross-validated training, one model per fold.
    Train(TrainArgs),
    /// Scores every fold's held-out subjects and pools the metrics.
    Evaluate(EvaluateArgs),
    /// Hypnogram and attention maps for a single EDF recording.
    Score(ScoreArgs),
    /// Attention maps and hypnogram of a prepared recording from its held-out fold model.
    ExportAttention(ExportArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub raw_dir: Option<PathBuf>,
    /// psg<TAB>hypnogram<TAB>subject[<TAB>recording] lines instead of filename pairing.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub channel: Option<String>,
    /// sleep-edf-13 or sleep-edf-18.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Cross-validation folds.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub trim_wake_minutes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Train only these folds (repeatable).
    #[arg(long = "fold")]
    pub folds: Vec<usize>,
    /// Continue each fold from its latest checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// mfe, msfe or mse.
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2_beta: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub checkpoint_every_epochs: Option<u64>,
    #[arg(long)]
    pub no_smote: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Evaluate only these folds (repeatable).
    #[arg(long = "fold")]
    pub folds: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub psg: PathBuf,
    /// Expert hypnogram to overlay; restricts scoring to its scored epochs.
    #[arg(long)]
    pub hypnogram: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub channel: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub recording: String,
    #[arg(long)]
    pub fold: Option<usize>,
    /// Only these window indices (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub windows: Vec<usize>,
}

/// Config file (explicit, or the run directory's), then command-line overrides.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let from_run_dir = common.run_dir.as_ref().map(|d| RunLayout::new(d).config()).filter(|p| p.exists());
    let mut config = match common.config.as_ref().or(from_run_dir.as_ref()) {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.run_dir {
        config.output_dir = d.clone();
    }
    if common.threads.is_some() {
        config.threads = common.threads;
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(m) = common.maxtime {
        config.model.maxtime = m;
    }
    Ok(config)
}

fn apply_prepare(config: &mut RunConfig, a: &PrepareArgs) {
    if let Some(v) = &a.raw_dir {
        config.data.raw_dir = v.clone();
        config.data.manifest = None;
    }
    if a.manifest.is_some() {
        config.data.manifest = a.manifest.clone();
    }
    if let Some(v) = &a.channel {
        config.data.channel = v.clone();
    }
    if let Some(v) = a.variant {
        config.data.variant = v;
    }
    if a.k.is_some() {
        config.k = a.k;
    }
    if a.trim_wake_minutes.is_some() {
        config.data.trim_wake_minutes = a.trim_wake_minutes;
    }
}

fn apply_train(config: &mut RunConfig, a: &TrainArgs) {
    let t = &mut config.train;
    if let Some(v) = a.loss {
        t.loss = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = a.l2_beta {
        t.l2_beta = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.max_epochs {
        t.max_epochs = v;
    }
    if a.max_steps.is_some() {
        t.max_steps = a.max_steps;
    }
    if let Some(v) = a.checkpoint_every_epochs {
        t.checkpoint_every_epochs = v;
    }
    if a.no_smote {
        config.smote.enabled = false;
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // Fails only when the pool already exists, e.g. on a second in-process run.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_threads: Option<usize>) {}

pub fn execute(cli: Cli) -> Result<()> {
    let mut config = resolve_config(&cli.common)?;
    match &cli.command {
        Command::Prepare(a) => apply_prepare(&mut config, a),
        Command::Train(a) => apply_train(&mut config, a),
        Command::Score(a) => {
            config.output_dir = a.out.clone();
            if let Some(c) = &a.channel {
                config.data.channel = c.clone();
            }
        }
        Command::Evaluate(_) | Command::ExportAttention(_) => {}
    }
    config.validate()?;
    configure_threads(config.threads);

    match cli.command {
        Command::Prepare(_) => {
            let out = prepare::run(&config)?;
            print!("{}", out.table);
            println!("prepared {} recording(s) into {}", out.recordings.len(), config.output_dir.display());
        }
        Command::Train(a) => {
            for f in train::run(&config, &TrainOptions { folds: a.folds, resume: a.resume })? {
                println!(
                    "fold {}: {} step(s), {} epoch(s), {} sequences, last loss {}",
                    f.fold,
                    f.steps,
                    f.epochs,
                    f.sequences,
                    fmt_opt(f.last_loss, 4)
                );
            }
        }
        Command::Evaluate(a) => {
            let report = evaluate::run(&config, &EvaluateOptions { folds: a.folds })?;
            print!("{}", report.pooled.to_table());
        }
        Command::Score(a) => {
            let model = cli.common.config.is_some().then(|| config.model.clone());
            let opts = ScoreOptions { psg: a.psg, hypnogram: a.hypnogram, checkpoint: a.checkpoint, model };
            let out = score::run(&config, &opts)?;
            println!("scored {} epoch(s) in {} window(s)", out.scored.epochs.len(), out.scored.windows.len());
            if let Some(ag) = out.agreement {
                println!("agreement with expert {:.2}%  kappa {}", ag.agreement_percent, fmt_opt(ag.kappa, 3));
            }
        }
        Command::ExportAttention(a) => {
            let opts = ExportOptions { recording: a.recording, fold: a.fold, windows: a.windows };
            let (dir, scored) = score::export_attention(&config, &opts)?;
            println!("wrote {} window(s) to {}", scored.windows.len(), dir.display());
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

