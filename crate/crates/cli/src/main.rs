//! `tala`: batch front end for beat, downbeat and tala cycle tracking.
//!
//! JSON summaries go to stdout, tables and log lines to stderr. Exit codes:
//! 0 success, 1 internal error, 2 usage or input error.

mod cmd;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tala_core::MeterError;

#[derive(Parser, Debug)]
#[command(
    name = "tala",
    version,
    about = "Beat, downbeat and tala cycle tracking"
)]
struct Cli {
    /// Worker threads for per-track work; 0 uses every core.
    #[arg(long, global = true, env = "TALA_JOBS", default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Novelty curve from a WAV file.
    Features(FeaturesArgs),
    /// Beats and downbeats from a novelty curve.
    Track(TrackArgs),
    /// Beats and downbeats from beat/downbeat activations.
    Postprocess(PostprocessArgs),
    /// Score predictions against the annotations of a manifest.
    Evaluate(EvaluateArgs),
    /// Per-tala counts, durations and tempo table of a manifest.
    Stats(StatsArgs),
    /// Stratified two-fold split with validation subsets.
    Split(SplitArgs),
    /// Synthetic annotated corpus with novelty and activation files.
    Synth(SynthArgs),
    /// Frame losses of activation files against manifest annotations.
    ScoreActivations(ScoreArgs),
    /// Fit an observation model for the bar-pointer decoders.
    FitModel(FitModelArgs),
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    pub audio: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    pub fps: f64,
    /// STFT window in samples.
    #[arg(long, default_value_t = 2048)]
    pub window: usize,
    /// Log compression constant; 0 disables compression.
    #[arg(long, default_value_t = 100.0)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value_t = Norm::Max)]
    pub norm: Norm,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    Max,
    MeanClip,
    None,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoder {
    Viterbi,
    Pf,
    Ellis,
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    pub novelty: PathBuf,
    #[arg(long)]
    pub tala: String,
    #[arg(long, default_value_t = 55.0)]
    pub min_tempo: f64,
    #[arg(long, default_value_t = 230.0)]
    pub max_tempo: f64,
    #[arg(long, value_enum, default_value_t = Decoder::Viterbi)]
    pub decoder: Decoder,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub particles: usize,
    /// Observation model from `fit-model`; fitted on synthetic tracks when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Probability of a tempo change at each cycle wrap.
    #[arg(long, default_value_t = 0.02)]
    pub p_tempo: f64,
    /// Tempo deviation weight of the dynamic-programming tracker.
    #[arg(long, default_value_t = 100.0)]
    pub lambda: f64,
    #[arg(long)]
    pub beats_out: PathBuf,
    #[arg(long)]
    pub downbeats_out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Default,
    Cmr,
}

#[derive(Args, Debug)]
pub struct PostprocessArgs {
    pub activations: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    /// Overrides the preset meters, e.g. `3,5,7,8`.
    #[arg(long, value_delimiter = ',')]
    pub beats_per_bar: Option<Vec<u32>>,
    #[arg(long)]
    pub min_tempo: Option<f64>,
    #[arg(long)]
    pub max_tempo: Option<f64>,
    #[arg(long)]
    pub transition_lambda: Option<f64>,
    #[arg(long)]
    pub beats_out: PathBuf,
    #[arg(long)]
    pub downbeats_out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grouping {
    Overall,
    Tala,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    pub manifest: PathBuf,
    /// Directory holding `<track_id>.beats` and `<track_id>.downbeats`.
    pub predictions: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Per-track CSV; defaults to the report path with a `.csv` extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Grouping::Overall)]
    pub group_by: Grouping,
    #[arg(long)]
    pub f_tolerance: Option<f64>,
    #[arg(long)]
    pub phase_tolerance: Option<f64>,
    /// Score downbeat AML on the correct metrical level only.
    #[arg(long)]
    pub no_downbeat_variants: bool,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub tempo_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    pub manifest: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(short, long)]
    pub out_dir: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "adi,rupaka,misra_chapu,khanda_chapu"
    )]
    pub tala: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "60,120,180")]
    pub tempo: Vec<f64>,
    #[arg(long, default_value_t = 30.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 1)]
    pub per_combo: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 100.0)]
    pub fps: f64,
    /// Shift the activation spikes half a beat off the annotated grid.
    #[arg(long)]
    pub off_phase: bool,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Entries without an `activation_path` are reported as missing.
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Positive class weight of the shift-tolerant loss; estimated from
    /// the beat targets when absent.
    #[arg(long)]
    pub positive_weight: Option<f64>,
    /// Spread targets to neighbouring frames (0.5, 0.25) for the plain BCE.
    #[arg(long)]
    pub widen: bool,
}

#[derive(Args, Debug)]
pub struct FitModelArgs {
    #[arg(long)]
    pub tala: String,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 2)]
    pub components: usize,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Train on the manifest tracks of this tala, reading
    /// `<novelty-dir>/<track_id>.novelty`; synthetic tracks otherwise.
    #[arg(long, requires = "novelty_dir")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub novelty_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "70,100,140,170")]
    pub tempi: Vec<f64>,
    #[arg(long, default_value_t = 30.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 10_000)]
    pub seed: u64,
}

/// Caller mistake detected by the front end itself.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<MeterError>() {
            return if e.is_input_error() { 2 } else { 1 };
        }
        if cause.is::<InputError>() || cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()?;
    match cli.command {
        Command::Features(a) => cmd::features(&a),
        Command::Track(a) => cmd::track(&a),
        Command::Postprocess(a) => cmd::postprocess(&a),
        Command::Evaluate(a) => cmd::evaluate(&a),
        Command::Stats(a) => cmd::stats(&a),
        Command::Split(a) => cmd::split(&a),
        Command::Synth(a) => cmd::synth(&a),
        Command::ScoreActivations(a) => cmd::score_activations(&a),
        Command::FitModel(a) => cmd::fit_model(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
