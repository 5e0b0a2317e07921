use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use seccode::config::{LoadedConfig, Overrides};
use seccode::extract::Granularity;
use seccode::lang::Language;
use seccode::pipeline::{Pipeline, PipelineError, RunOptions, Stage, StageOutcome, Status};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    Ingest,
    Extract,
    SampleSubsets,
    Audit,
    Generate,
    Classify,
    Report,
    /// Every stage in order.
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GranularityArg {
    File,
    Function,
    Block,
    Line,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LanguageArg {
    C,
    Cpp,
}

/// Curate vulnerability-fix corpora and evaluate the security of generated C/C++ code.
///
/// Exit status: 0 success, 1 I/O or data error, 2 invalid configuration,
/// 3 missing upstream artifact, 4 external tool failure, 5 corpus/prompt overlap.
#[derive(Debug, Parser)]
#[command(name = "seccode", version)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    stage: StageArg,
    /// Overrides `extract.granularity`.
    #[arg(long, value_enum)]
    granularity: Option<GranularityArg>,
    /// Restricts generate/classify/report to one language.
    #[arg(long, value_enum)]
    language: Option<LanguageArg>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `generation.max_parallel` (also bounds compile jobs).
    #[arg(long)]
    max_parallel: Option<usize>,
}

fn print_outcome(o: &StageOutcome) {
    let status = match o.status {
        Status::Ran => "done",
        Status::UpToDate => "up-to-date",
    };
    println!("{}: {status} ({})", o.stage, o.dir.display());
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let overrides = Overrides {
        seed: cli.seed,
        max_parallel: cli.max_parallel,
    };
    let cfg = LoadedConfig::load(&cli.config, &overrides)?;
    let opts = RunOptions {
        granularity: cli.granularity.map(|g| match g {
            GranularityArg::File => Granularity::File,
            GranularityArg::Function => Granularity::Function,
            GranularityArg::Block => Granularity::Block,
            GranularityArg::Line => Granularity::Line,
        }),
        language: cli.language.map(|l| match l {
            LanguageArg::C => Language::C,
            LanguageArg::Cpp => Language::Cpp,
        }),
    };
    let pipeline = Pipeline::new(cfg, opts);
    let stage = match cli.stage {
        StageArg::All => {
            for o in pipeline.run_all()? {
                print_outcome(&o);
            }
            return Ok(());
        }
        StageArg::Ingest => Stage::Ingest,
        StageArg::Extract => Stage::Extract,
        StageArg::SampleSubsets => Stage::SampleSubsets,
        StageArg::Audit => Stage::Audit,
        StageArg::Generate => Stage::Generate,
        StageArg::Classify => Stage::Classify,
        StageArg::Report => Stage::Report,
    };
    print_outcome(&pipeline.run_stage(stage)?);
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
