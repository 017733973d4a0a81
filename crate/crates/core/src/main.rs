use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hiernote::ablation::F1Mode;
use hiernote::corpus::GeneratorSpec;
use hiernote::harness::{emit_report, Experiment, ExperimentConfig, ModelKey, ReportFormat, REPORT_DIR};
use hiernote::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "hiernote", version, about = "Hierarchical multi-note classification experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for every artifact and the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use an existing corpus instead of generating one.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    Ms,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
    Radar,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => ReportFormat::Table,
            Format::Json => ReportFormat::Json,
            Format::Radar => ReportFormat::Radar,
        }
    }
}

#[derive(Subcommand)]
enum Verb {
    /// Generate the synthetic corpus.
    Gen {
        /// Generator spec (TOML) replacing the config's `[generator]`.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Partition patients into train/valid/test.
    Split,
    /// Build the vocabulary from training notes.
    Vocab,
    /// Masked-LM pretraining on training notes.
    Pretrain,
    /// Train a model family for every replicate seed (or one).
    Train {
        #[arg(long, value_enum, default_value = "single")]
        mode: Mode,
        /// Notes per patient for `--mode ms`; every configured n when omitted.
        #[arg(long)]
        n: Option<usize>,
        /// Only this replicate seed.
        #[arg(long)]
        run_seed: Option<u64>,
    },
    /// Score all trained models and the dummy baselines on the test split.
    Eval,
    /// Keyword ablation of a trained model.
    Ablate {
        /// `single` or `MS-n`.
        #[arg(long)]
        model: Option<ModelKey>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// `target_class` or `macro`.
        #[arg(long)]
        f1_mode: Option<F1Mode>,
    },
    /// Write tables, the JSON report and radar data.
    Report {
        #[arg(long, value_enum, value_delimiter = ',')]
        format: Vec<Format>,
    },
    /// The full pipeline.
    Run,
    /// Print the effective config as TOML.
    Config,
}

fn load_config(common: &Common) -> hiernote::Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    config.apply_env()?;
    if let Some(out) = &common.out {
        config.paths.out = out.clone();
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(corpus) = &common.corpus {
        config.paths.corpus = Some(corpus.clone());
    }
    Ok(config)
}

fn execute(cli: Cli) -> hiernote::Result<()> {
    let mut config = load_config(&cli.common)?;
    match &cli.verb {
        Verb::Gen { spec: Some(path) } => config.generator = Some(GeneratorSpec::load(path)?),
        Verb::Ablate { model, lexicon, f1_mode } => {
            config.ablation.enabled = true;
            if let Some(m) = model {
                config.ablation.model = *m;
                if let ModelKey::Ms(n) = m {
                    if !config.hierarchy.ns.contains(n) {
                        config.hierarchy.ns.push(*n);
                    }
                }
            }
            if let Some(l) = lexicon {
                config.paths.lexicon = Some(l.clone());
            }
            if let Some(f) = f1_mode {
                config.ablation.f1_mode = *f;
            }
        }
        Verb::Train { mode: Mode::Ms, n: Some(n), .. } if !config.hierarchy.ns.contains(n) => {
            config.hierarchy.ns.push(*n);
        }
        _ => {}
    }
    if let Verb::Config = cli.verb {
        config.validate()?;
        print!("{}", config.to_toml_string()?);
        return Ok(());
    }

    let mut exp = Experiment::new(config)?;
    match cli.verb {
        Verb::Gen { .. } => exp.corpus_stage(),
        Verb::Split => exp.split_stage(),
        Verb::Vocab => exp.vocab_stage(),
        Verb::Pretrain => exp.pretrain_stage(),
        Verb::Train { mode, n, run_seed } => {
            let keys = match (mode, n) {
                (Mode::Single, _) => vec![ModelKey::Single],
                (Mode::Ms, Some(n)) => vec![ModelKey::Ms(n)],
                (Mode::Ms, None) => exp.config().hierarchy.ns.iter().map(|&n| ModelKey::Ms(n)).collect(),
            };
            keys.into_iter().try_for_each(|k| exp.train_stage(k, run_seed))
        }
        Verb::Eval => exp.eval_stage(),
        Verb::Ablate { .. } => exp.ablate_stage(),
        Verb::Report { format } if !format.is_empty() => {
            let report = exp.build_report()?;
            let formats: Vec<ReportFormat> = format.into_iter().map(Into::into).collect();
            let (written, _) = emit_report(&report, &exp.out().join(REPORT_DIR), &formats)?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(())
        }
        Verb::Report { .. } => exp.report_stage().map(|_| ()),
        Verb::Run => {
            let report = exp.run_all()?;
            print!("{}", hiernote::harness::render_markdown(&report.table1));
            println!();
            print!("{}", hiernote::harness::render_markdown(&report.table2));
            for notice in &report.notices {
                eprintln!("note: {notice}");
            }
            Ok(())
        }
        Verb::Config => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Stage { .. } => EXIT_STAGE,
                ref e if e.is_config_error() => EXIT_CONFIG,
                _ => EXIT_STAGE,
            };
            ExitCode::from(code)
        }
    }
}
