//! Command-line front end. The binary only calls [`main`].

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{evaluate, translate, EvalReport};
use crate::finetune::{finetune, FinetuneConfig};
use crate::icp::IcpMode;
use crate::io::{export_lexicon, load_lexicon, load_transform, load_vec, save_map, save_transform};
use crate::matching::Retrieval;
use crate::orchestrator::{
    align, convergence_labels, export_run_stats, median, run_many, select_best, write_checkpoints,
    PipelineConfig,
};
use crate::synth::{generate, linear_spectrum};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_ALL_RUNS_FAILED: u8 = 4;
pub const EXIT_NUMERICAL: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "embalign", version, about = "Unsupervised alignment of word embedding spaces")]
pub struct Cli {
    /// Worker threads (all cores by default).
    #[arg(long, global = true, env = "EMBALIGN_THREADS")]
    pub jobs: Option<usize>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn transforms between two embedding files without supervision.
    Align(AlignArgs),
    /// Refine a transform with iterative Procrustes on a large vocabulary.
    Finetune(FinetuneArgs),
    /// Print or export the best translations of source words.
    Translate(TranslateArgs),
    /// Precision@k of a transform against a gold lexicon.
    Evaluate(EvaluateArgs),
    /// Run the multi-seed reduced stage only and export per-run losses.
    Stats(StatsArgs),
    /// Write a synthetic pair with known ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-scale defaults.
    Full,
    /// 50 runs on 1000 words.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Mbc,
    Picp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Csls,
    Nn,
}

impl From<MetricArg> for Retrieval {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Csls => Retrieval::Csls,
            MetricArg::Nn => Retrieval::Nn,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[arg(long, value_enum, default_value = "full")]
    pub preset: Preset,
    /// Most frequent words used for alignment.
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Reduced dimension; overrides the preset's cap.
    #[arg(long)]
    pub pca_dim: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs_pca: Option<usize>,
    #[arg(long)]
    pub epochs_raw: Option<usize>,
    /// First full-dimensional epoch restricted to reciprocal pairs.
    #[arg(long)]
    pub reciprocal_from: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Share one PCA across runs.
    #[arg(long)]
    pub no_random_pca: bool,
    /// Share one mini-batch order across runs.
    #[arg(long)]
    pub no_random_order: bool,
    /// Optimizer for the reduced stage.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

impl PipelineArgs {
    pub fn resolve(&self) -> PipelineConfig {
        let mut c = match self.preset {
            Preset::Full => PipelineConfig::default(),
            Preset::Desk => PipelineConfig::desk(),
        };
        if let Some(v) = self.vocab {
            c.vocab = v;
        }
        if let Some(p) = self.pca_dim {
            c.pca_dim = p;
            c.pca_dim_cap = None;
        }
        for stage in [&mut c.pca_stage, &mut c.raw_stage] {
            if let Some(l) = self.lambda {
                stage.lambda = l;
            }
            if let Some(b) = self.batch_size {
                stage.batch_size = b;
            }
            if let Some(lr) = self.learning_rate {
                stage.learning_rate = lr;
            }
            if let Some(d) = self.lr_decay {
                stage.lr_decay = d;
            }
        }
        if let Some(e) = self.epochs_pca {
            c.pca_stage.epochs = e;
        }
        if let Some(e) = self.epochs_raw {
            c.raw_stage.epochs = e;
        }
        if let Some(r) = self.reciprocal_from {
            c.raw_stage.reciprocal_from_epoch = Some(r);
        }
        if let Some(r) = self.runs {
            c.runs = r;
        }
        if let Some(s) = self.seed {
            c.master_seed = s;
        }
        c.policy.randomize_pca = !self.no_random_pca;
        c.policy.randomize_order = !self.no_random_order;
        if let Some(m) = self.mode {
            c.pca_stage.mode = match m {
                ModeArg::Mbc => IcpMode::Mbc,
                ModeArg::Picp => IcpMode::Picp,
            };
        }
        c
    }
}

#[derive(Debug, Clone, Args)]
pub struct AlignArgs {
    pub source: PathBuf,
    pub target: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write the transform and map of every converged run.
    #[arg(long)]
    pub checkpoints: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FinetuneArgs {
    pub source: PathBuf,
    pub target: PathBuf,
    pub transform: PathBuf,
    /// Refined transform file.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Report accuracy before and after against this lexicon.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub iterations: usize,
    #[arg(long, default_value_t = 200_000)]
    pub vocab_limit: usize,
    #[arg(long, default_value_t = 10_000)]
    pub dictionary_size: usize,
    #[arg(long, value_enum, default_value = "csls")]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 10)]
    pub csls_k: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TranslateArgs {
    pub source: PathBuf,
    pub target: PathBuf,
    pub transform: PathBuf,
    /// Source words to translate.
    pub words: Vec<String>,
    /// Translate every source word.
    #[arg(long, conflicts_with = "words")]
    pub all: bool,
    #[arg(long, value_enum, default_value = "csls")]
    pub metric: MetricArg,
    #[arg(short, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub csls_k: usize,
    /// Only load this many words per side.
    #[arg(long)]
    pub max_words: Option<usize>,
    /// TSV output instead of standard output.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    pub source: PathBuf,
    pub target: PathBuf,
    pub transform: PathBuf,
    pub lexicon: PathBuf,
    #[arg(long, value_enum, default_value = "csls")]
    pub metric: MetricArg,
    #[arg(short, value_delimiter = ',', default_value = "1,5,10")]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub csls_k: usize,
    #[arg(long)]
    pub max_words: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    pub source: PathBuf,
    pub target: PathBuf,
    /// Run statistics CSV.
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub d: usize,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub overlap: f64,
    /// Largest and smallest variance of the linear spectrum.
    #[arg(long, num_args = 2, value_names = ["HIGH", "LOW"], default_values_t = [20.0, 1.0])]
    pub spectrum: Vec<f64>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::AllRunsFailed(_) => EXIT_ALL_RUNS_FAILED,
        Error::NonFiniteLoss { .. } => EXIT_NUMERICAL,
        Error::InvalidP { .. }
        | Error::InvalidConfig(_)
        | Error::InvalidSpectrum(_)
        | Error::KTooLarge { .. } => EXIT_USAGE,
        _ => EXIT_IO,
    }
}

fn print_config<T: Serialize>(config: &T) {
    eprintln!("{}", serde_json::to_string_pretty(config).expect("config serializes"));
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct AlignSummary {
    selected_seed: u64,
    selected_loss: f64,
    median_loss: f64,
    confident: bool,
    raw_loss: f64,
    reduced_dim: usize,
}

fn cmd_align(args: &AlignArgs, jobs: Option<usize>) -> Result<()> {
    let config = args.pipeline.resolve();
    print_config(&config);
    config.validate()?;
    let src = load_vec(&args.source, Some(config.vocab))?;
    let tgt = load_vec(&args.target, Some(config.vocab))?;
    let result = align(&src, &tgt, &config, jobs)?;

    create_dir(&args.out)?;
    save_transform(result.transforms(), &args.out.join("alignment.transform"))?;
    save_map(&result.raw.map, &args.out.join("alignment.map"))?;
    export_run_stats(&result.records, &args.out.join("run_stats.csv"))?;
    write_text(
        &args.out.join("config.json"),
        &serde_json::to_string_pretty(&config).expect("config serializes"),
    )?;
    if args.checkpoints {
        write_checkpoints(&result.records, &args.out.join("checkpoints"))?;
    }
    let best = result.selected_record();
    let summary = AlignSummary {
        selected_seed: best.seed,
        selected_loss: best.final_loss,
        median_loss: result.median_loss,
        confident: result.confident,
        raw_loss: result.raw.final_loss,
        reduced_dim: config.effective_pca_dim(src.dim()),
    };
    if !summary.confident {
        warn!("selected run does not stand out from the median; the alignment may be wrong");
    }
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

#[derive(Serialize)]
struct FinetuneSummary {
    pairs_per_iteration: Vec<(usize, usize)>,
    no_pairs: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy_after: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy_delta: Option<f64>,
}

fn cmd_finetune(args: &FinetuneArgs) -> Result<()> {
    let config = FinetuneConfig {
        iterations: args.iterations,
        vocab_limit: args.vocab_limit,
        match_metric: args.metric.into(),
        dictionary_size: args.dictionary_size,
        csls_k: args.csls_k,
    };
    print_config(&config);
    config.validate()?;
    let src = load_vec(&args.source, Some(config.vocab_limit))?;
    let tgt = load_vec(&args.target, Some(config.vocab_limit))?;
    let init = load_transform(&args.transform)?;
    let out = finetune(src.vectors(), tgt.vectors(), &init, &config)?;
    save_transform(&out.transforms, &args.out)?;

    let (mut before, mut after) = (None, None);
    if let Some(path) = &args.lexicon {
        let lex = load_lexicon(path)?;
        let score = |t| -> Result<f64> {
            let r = evaluate(&src, &tgt, t, &lex, config.match_metric, &[1], config.csls_k)?;
            Ok(r.precision[0])
        };
        before = Some(score(&init)?);
        after = Some(score(&out.transforms)?);
    }
    let summary = FinetuneSummary {
        pairs_per_iteration: out.pairs_per_iteration,
        no_pairs: out.no_pairs,
        accuracy_before: before,
        accuracy_after: after,
        accuracy_delta: before.zip(after).map(|(b, a)| a - b),
    };
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

#[derive(Serialize)]
struct TranslateConfig<'a> {
    metric: Retrieval,
    k: usize,
    csls_k: usize,
    max_words: Option<usize>,
    words: &'a [String],
    all: bool,
}

fn cmd_translate(args: &TranslateArgs) -> Result<bool> {
    print_config(&TranslateConfig {
        metric: args.metric.into(),
        k: args.k,
        csls_k: args.csls_k,
        max_words: args.max_words,
        words: &args.words,
        all: args.all,
    });
    if args.k == 0 {
        return Err(Error::InvalidConfig("-k must be positive".into()));
    }
    if !args.all && args.words.is_empty() {
        return Err(Error::InvalidConfig("give words to translate or --all".into()));
    }
    let src = load_vec(&args.source, args.max_words)?;
    let tgt = load_vec(&args.target, args.max_words)?;
    let transform = load_transform(&args.transform)?;
    let words = (!args.all).then_some(args.words.as_slice());
    let k = args.k.min(tgt.len());
    let (found, unknown) = translate(&src, &tgt, &transform, words, args.metric.into(), k, args.csls_k)?;
    for w in &unknown {
        eprintln!("unknown word: {w}");
    }
    let rows: Vec<(String, String, f64)> = found
        .iter()
        .flat_map(|t| t.candidates.iter().map(|(c, s)| (t.word.clone(), c.clone(), *s)))
        .collect();
    match &args.out {
        Some(path) => export_lexicon(&rows, path)?,
        None => {
            for (s, t, score) in &rows {
                println!("{s}\t{t}\t{score}");
            }
        }
    }
    Ok(!found.is_empty())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvalReport> {
    #[derive(Serialize)]
    struct EvaluateConfig<'a> {
        metric: Retrieval,
        k: &'a [usize],
        csls_k: usize,
        max_words: Option<usize>,
    }
    print_config(&EvaluateConfig {
        metric: args.metric.into(),
        k: &args.k,
        csls_k: args.csls_k,
        max_words: args.max_words,
    });
    let src = load_vec(&args.source, args.max_words)?;
    let tgt = load_vec(&args.target, args.max_words)?;
    let transform = load_transform(&args.transform)?;
    let lex = load_lexicon(&args.lexicon)?;
    let report = evaluate(&src, &tgt, &transform, &lex, args.metric.into(), &args.k, args.csls_k)?;
    println!("{}", report.to_json());
    print!("{report}");
    Ok(report)
}

#[derive(Serialize)]
struct StatsSummary {
    runs: usize,
    converged: usize,
    label_converged: usize,
    median_loss: Option<f64>,
    best_seed: u64,
    best_loss: f64,
}

fn cmd_stats(args: &StatsArgs, jobs: Option<usize>) -> Result<()> {
    let config = args.pipeline.resolve();
    print_config(&config);
    config.validate()?;
    let src = load_vec(&args.source, Some(config.vocab))?;
    let tgt = load_vec(&args.target, Some(config.vocab))?;
    if src.dim() != tgt.dim() {
        return Err(Error::DimensionMismatch {
            expected: src.dim(),
            found: tgt.dim(),
        });
    }
    let records = run_many(src.vectors(), tgt.vectors(), &config, config.runs, config.policy, jobs)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    export_run_stats(&records, &args.out)?;
    let best = select_best(&records)?;
    let losses: Vec<f64> = records.iter().filter(|r| r.converged).map(|r| r.final_loss).collect();
    let summary = StatsSummary {
        runs: records.len(),
        converged: losses.len(),
        label_converged: convergence_labels(&records, config.convergence_ratio)
            .iter()
            .filter(|&&c| c)
            .count(),
        median_loss: median(&losses),
        best_seed: best.record.seed,
        best_loss: best.record.final_loss,
    };
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    #[derive(Serialize)]
    struct SynthConfig {
        n: usize,
        d: usize,
        noise: f64,
        overlap: f64,
        spectrum: [f64; 2],
        seed: u64,
    }
    let spectrum = [args.spectrum[0], args.spectrum[1]];
    print_config(&SynthConfig {
        n: args.n,
        d: args.d,
        noise: args.noise,
        overlap: args.overlap,
        spectrum,
        seed: args.seed,
    });
    if args.d < 2 {
        return Err(Error::InvalidSpectrum(format!("dimension must be at least 2, got {}", args.d)));
    }
    let pair = generate(
        args.n,
        args.d,
        args.noise,
        args.overlap,
        &linear_spectrum(args.d, spectrum[0], spectrum[1]),
        args.seed,
    )?;
    pair.write(&args.out)?;
    info!("wrote synthetic pair to {}", args.out.display());
    Ok(())
}

/// Runs a parsed invocation and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    let outcome = match &cli.command {
        Command::Align(a) => cmd_align(a, cli.jobs).map(|_| 0),
        Command::Finetune(a) => cmd_finetune(a).map(|_| 0),
        Command::Translate(a) => cmd_translate(a).map(|any| if any { 0 } else { EXIT_USAGE }),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| 0),
        Command::Stats(a) => cmd_stats(a, cli.jobs).map(|_| 0),
        Command::Synth(a) => cmd_synth(a).map(|_| 0),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    ExitCode::from(run(cli))
}
