//! The `noisecond` command line: synthesize corpora, train, enhance,
//! evaluate and run the verification suites.

pub mod config;
mod error;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use noisecond_core::corpus::{build_eval_set, load_corpus, synth_corpus, write_corpus, EnvKind, Split, SynthConfig, STANDARD_SNRS};
use noisecond_core::metrics::{evaluate, MetricsReport};
use noisecond_core::trainer::{enhance_utterance, load_checkpoint, train, Checkpoint, TrainOutcome};
use noisecond_core::verify::{self, Suite};
use noisecond_core::wav::{read_wav, write_wav};

pub use config::{parse_override, RunConfig};
pub use error::{CliError, Result};

pub const RUN_CONFIG_FILE: &str = "run_config.txt";
pub const REPORT_JSONL: &str = "report.jsonl";
pub const REPORT_TABLE: &str = "report.txt";

#[derive(Debug, Parser)]
#[command(name = "noisecond", version, about = "Noise-conditioned speech enhancement pipeline")]
pub struct Cli {
    /// Worker threads for parallel sections; 1 gives bit-reproducible runs.
    #[arg(long, global = true, env = "NOISECOND_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus of speech and environment recordings.
    Synth(SynthArgs),
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Enhance one noisy recording given a noise-only hint.
    Enhance(EnhanceArgs),
    /// Score a checkpoint on a held-out split.
    Evaluate(EvaluateArgs),
    /// Run the built-in verification suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Tones,
    Band,
    Mixed,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for WAV files and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of noise environments.
    #[arg(long, default_value_t = 50)]
    pub environments: usize,
    /// Number of speech utterances.
    #[arg(long, default_value_t = 200)]
    pub utterances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Kind of environment noise.
    #[arg(long, value_enum, default_value_t = KindArg::Mixed)]
    pub kind: KindArg,
    /// Utterance length in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub speech_secs: f64,
    /// Noise recording length in seconds.
    #[arg(long, default_value_t = 3.0)]
    pub noise_secs: f64,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    NoiseAware,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus directory holding a manifest.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    pub out: PathBuf,
    /// Train without the noise-embedding subnetwork.
    #[arg(long)]
    pub no_embedding: bool,
    /// Train a baseline instead of the conditioned network.
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
    /// Model preset (full, desk, miniature).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Configuration override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Noisy 16 kHz mono WAV.
    #[arg(long)]
    pub noisy: PathBuf,
    /// Environment-only 16 kHz mono WAV; required unless the model ignores it.
    #[arg(long)]
    pub hint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing output file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Output directory for the report files.
    #[arg(long)]
    pub out: PathBuf,
    /// Label for the model rows; defaults to the checkpoint file stem.
    #[arg(long)]
    pub method: Option<String>,
    /// Seed for the fixed noise and SNR assignment.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Gradcheck,
    Shapes,
    Dsp,
    Metrics,
    All,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::All)]
    pub suite: SuiteArg,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    execute(cli)
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // A second call in one process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(&a).map(|n| println!("wrote {n} records")),
        Command::Train(a) => cmd_train(&a).map(|o| {
            println!(
                "best step {} (validation loss {}), last step {}",
                o.best.step,
                o.best.val_loss.map_or("n/a".into(), |v| format!("{v:.6}")),
                o.last.step
            )
        }),
        Command::Enhance(a) => cmd_enhance(&a).map(|n| println!("wrote {n} samples to {}", a.out.display())),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|r| print!("{}", r.to_table())),
        Command::Verify(a) => cmd_verify(&a),
    }
}

fn is_nonempty_dir(p: &Path) -> bool {
    std::fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && !dir.is_dir() {
        return Err(CliError::Usage(format!("{} exists and is not a directory", dir.display())));
    }
    if is_nonempty_dir(dir) {
        if !force {
            return Err(CliError::RefusingOverwrite(dir.to_path_buf()));
        }
        std::fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(noisecond_core::Error::Io { path: path.to_path_buf(), source })
}

fn require_dir(p: &Path, what: &str) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} directory {} does not exist", p.display())))
    }
}

/// Writes a synthetic corpus; returns the number of manifest records.
pub fn cmd_synth(a: &SynthArgs) -> Result<usize> {
    if a.environments == 0 || a.utterances == 0 {
        return Err(CliError::Usage("--environments and --utterances must be positive".into()));
    }
    let cfg = SynthConfig {
        environments: a.environments,
        utterances: a.utterances,
        speech_secs: a.speech_secs,
        noise_secs: a.noise_secs,
        env_kind: match a.kind {
            KindArg::Tones => EnvKind::Tones,
            KindArg::Band => EnvKind::BandNoise,
            KindArg::Mixed => EnvKind::Mixed,
        },
        ..SynthConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let synth = synth_corpus(&cfg, a.seed)?;
    prepare_out_dir(&a.out, a.force)?;
    write_corpus(&a.out, &synth.corpus)?;
    Ok(synth.corpus.speech.len() + synth.corpus.noise.len())
}

/// The merged configuration `cmd_train` would use.
pub fn train_run_config(a: &TrainArgs) -> Result<RunConfig> {
    let file = match &a.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| io_err(p, e))?),
        None => None,
    };
    let mut cli: Vec<(String, String)> = Vec::new();
    if let Some(p) = &a.preset {
        cli.push((config::PRESET_KEY.into(), p.clone()));
    }
    if let Some(s) = a.steps {
        cli.push(("train.steps".into(), s.to_string()));
    }
    if let Some(s) = a.seed {
        cli.push(("train.seed".into(), s.to_string()));
    }
    if a.no_embedding {
        cli.push(("model.use_noise_embedding".into(), "false".into()));
    }
    if a.baseline == Some(BaselineArg::NoiseAware) {
        cli.push(("model.arch".into(), "noise_aware".into()));
    }
    for s in &a.set {
        cli.push(parse_override(s)?);
    }
    RunConfig::merge(file.as_deref(), &cli)
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainOutcome> {
    let run = train_run_config(a)?;
    require_dir(&a.corpus, "corpus")?;
    let corpus = load_corpus(&a.corpus)?;
    let cfg = run.train(Some(a.out.clone()))?;
    prepare_out_dir(&a.out, a.force)?;
    let p = a.out.join(RUN_CONFIG_FILE);
    std::fs::write(&p, run.to_text()).map_err(|e| io_err(&p, e))?;
    Ok(train(&cfg, &corpus)?)
}

/// Enhances one file; returns the number of samples written.
pub fn cmd_enhance(a: &EnhanceArgs) -> Result<usize> {
    if a.out.exists() && !a.force {
        return Err(CliError::RefusingOverwrite(a.out.clone()));
    }
    let mut ckpt = load_checkpoint(&a.ckpt)?;
    if a.hint.is_none() && ckpt.model.reads_noise() {
        return Err(CliError::Usage("this checkpoint needs --hint".into()));
    }
    let noisy = read_wav(&a.noisy)?;
    let hint = a.hint.as_ref().map(read_wav).transpose()?;
    let out = enhance_utterance(&mut ckpt.model, &noisy, hint.as_ref())?;
    write_wav(&a.out, &out)?;
    Ok(out.len())
}

fn checkpoint_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<MetricsReport> {
    let split: Split = a.split.parse().map_err(|e: noisecond_core::Error| CliError::Usage(e.to_string()))?;
    require_dir(&a.corpus, "corpus")?;
    let bytes = std::fs::read(&a.ckpt).map_err(|e| io_err(&a.ckpt, e))?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    let corpus = load_corpus(&a.corpus)?;
    corpus.check_split_discipline()?;
    let held_out = corpus.subset(split);
    let cfg = ckpt.config();
    let spec = noisecond_core::corpus::SampleSpec::new(cfg.framing()?, cfg.context, cfg.hint)?;
    let pairs = build_eval_set(&held_out.speech, &held_out.noise, &STANDARD_SNRS, &spec, a.seed)?;
    let method = a.method.clone().unwrap_or_else(|| {
        a.ckpt.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned())
    });
    let report = evaluate(&ckpt.model, &pairs, &method, Some(checkpoint_id(&bytes)))?;
    prepare_out_dir(&a.out, a.force)?;
    for (name, text) in [(REPORT_JSONL, report.to_jsonl()), (REPORT_TABLE, report.to_table())] {
        let p = a.out.join(name);
        std::fs::write(&p, text).map_err(|e| io_err(&p, e))?;
    }
    Ok(report)
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<()> {
    let suite = match a.suite {
        SuiteArg::Gradcheck => Suite::Gradcheck,
        SuiteArg::Shapes => Suite::Shapes,
        SuiteArg::Dsp => Suite::Dsp,
        SuiteArg::Metrics => Suite::Metrics,
        SuiteArg::All => Suite::All,
    };
    let checks = verify::run(suite)?;
    for c in &checks {
        println!("{}", c.line());
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::VerificationFailed { failed, total: checks.len() });
    }
    Ok(())
}
