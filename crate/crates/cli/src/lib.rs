//! Command-line front end: `pxm4 <subcommand> [flags]`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
//! failure. Logs go to standard error, artifacts under `--out`.

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use commands::DEFAULT_SUBSAMPLE_SIZES;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "pxm4", version, about = "Tokenizer-free pixel language-model toolkit")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Validate inputs and print the plan without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Output directory (output file for `render`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Flat `key=value` file; keys are flag names, explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render text lines into a patch file.
    Render(RenderArgs),
    /// Masked-patch pretraining on a JSONL corpus.
    Pretrain(PretrainArgs),
    /// Fine-tune a task head on top of an encoder.
    Finetune(FinetuneArgs),
    /// Score a fine-tuned checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Layer-wise word probing with a frozen encoder.
    Probe(ProbeArgs),
    /// Layer-wise cross-lingual sentence retrieval (recall@5).
    Retrieve(RetrieveArgs),
    /// Export pooled sentence embeddings and language centroids.
    ExportEmbeddings(ExportArgs),
    /// Draw seeded fixed-size subsets of a dataset.
    Subsample(SubsampleArgs),
}

/// Encoder source: a checkpoint, or a randomly initialised preset.
#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Encoder or fine-tuned checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Architecture preset for fresh models: desk, base, tiny or smoke.
    #[arg(long, default_value = "smoke")]
    pub preset: String,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Text file, one sequence per line.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 529)]
    pub max_patches: usize,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// JSONL corpus of `{"text", "lang"}` records; built-in toy corpus if absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Save a checkpoint every N steps (0 = only the final model).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    /// cls, udp or ner.
    #[arg(long)]
    pub task: pxm4::train::Task,
    /// Training data (TSV, CoNLL-U or BIO by task), or `toy`.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation data; the training data when absent.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Single learning rate; overrides --lr-grid.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Comma-separated learning rates searched on validation.
    #[arg(long)]
    pub lr_grid: Option<String>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Evaluate every N steps instead of the task default.
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Language tag recorded in the metrics file.
    #[arg(long, default_value = "und")]
    pub lang: String,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Fine-tuned checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "und")]
    pub lang: String,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    /// Directory with `train.tsv`, `val.tsv` (or `dev.tsv`) and `test.tsv`.
    #[arg(long)]
    pub data: PathBuf,
    /// Task name in the report; the directory name when absent.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, default_value = "und")]
    pub lang: String,
    /// `a..b` (inclusive), a comma list, or `all`.
    #[arg(long, default_value = "all")]
    pub layers: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    /// Comma-separated `src-tgt` language pairs.
    #[arg(long, default_value = "eng-ukr,eng-hin,eng-zho")]
    pub pairs: String,
    #[arg(long, default_value = "all")]
    pub layers: String,
    /// Directory of line-aligned `<lang>.txt` files; built-in parallel set if absent.
    #[arg(long)]
    pub parallel: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// JSONL corpus; built-in parallel set if absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    pub layers: String,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct SubsampleArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Comma-separated subset sizes.
    #[arg(long, default_value = "1024,2048,4096,8192")]
    pub sizes: String,
    /// Subsets per size; subset i uses seed `--seed + i`.
    #[arg(long, default_value_t = 8)]
    pub seeds: u64,
    /// `lines` (one item per line) or `blocks` (blank-line separated);
    /// inferred from the extension when absent.
    #[arg(long)]
    pub format: Option<String>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<pxm4::Error> for CliError {
    fn from(e: pxm4::Error) -> Self {
        let msg = e.to_string();
        match e.kind() {
            pxm4::ErrorKind::Config => CliError::Usage(msg),
            pxm4::ErrorKind::Data => CliError::Data(msg),
            pxm4::ErrorKind::Numeric => CliError::Numeric(msg),
        }
    }
}

macro_rules! via_core_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                pxm4::Error::from(e).into()
            }
        }
    )*};
}

via_core_error!(
    pxm4::render::RenderError,
    pxm4::model::ModelError,
    pxm4::data::DataError,
    pxm4::metrics::MetricError,
    pxm4::train::TrainError,
    pxm4::analysis::AnalysisError
);

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Reads a flat `key=value` file; `#` starts a comment line.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().map(|a| a.to_string_lossy());
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(|p| PathBuf::from(p.as_ref()));
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Appends config-file entries as flags unless the flag is already given.
fn merge_config(mut argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let given = |k: &str, argv: &[OsString]| {
        let flag = format!("--{k}");
        argv.iter().any(|a| {
            let a = a.to_string_lossy();
            a == flag || a.starts_with(&format!("{flag}="))
        })
    };
    for (k, v) in read_config_file(&path)? {
        if k == "config" || given(&k, &argv) {
            continue;
        }
        match v.as_str() {
            "true" => argv.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                argv.push(format!("--{k}").into());
                argv.push(v.into());
            }
        }
    }
    Ok(argv)
}

fn init_runtime() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    if let Ok(v) = std::env::var(pxm4::train::THREADS_ENV) {
        if let Ok(n) = v.trim().parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Runs one invocation; `argv[0]` is the program name.
pub fn run<I, A>(argv: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString>,
{
    init_runtime();
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match merge_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", e.message());
            return e.code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    log::info!("resolved config: {cli:?}");
    match commands::dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{}", e.message());
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}
