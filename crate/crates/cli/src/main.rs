use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cgil_core::generative::GeneratorKind;
use cgil_core::harness::{
    emit_report, gen_synthetic_benchmark, load_benchmark, matrix_csv, run_baseline, run_experiment, Baseline,
    BenchmarkSpec, LabelSet, RunConfig, RunReport,
};
use cgil_core::text::PromptMode;
use cgil_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cgil", version, about = "Class-incremental learning with generative replay over frozen embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic clustered benchmark to a directory.
    GenSynth {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 5)]
        tasks: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        /// Training samples per class.
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 100)]
        test_per_class: usize,
        /// Cluster radius over per-coordinate spread.
        #[arg(long, default_value_t = 10.0)]
        sep: f64,
        #[arg(long, default_value_t = 1992)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the continual learner over a benchmark's task stream.
    Run {
        #[command(flatten)]
        common: RunArgs,
        #[arg(long, value_enum, default_value_t = Generator::Vae)]
        generator: Generator,
        #[arg(long, value_enum, default_value_t = Mode::Cgil)]
        prompt_mode: Mode,
    },
    /// Run a reference method over the same protocol.
    Baseline {
        #[command(flatten)]
        common: RunArgs,
        #[arg(long, value_enum)]
        kind: Kind,
    },
    /// Validate a report and print its summary, optionally writing the matrix as CSV.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Benchmark directory written by gen-synth.
    #[arg(long)]
    bench: PathBuf,
    #[arg(long, default_value_t = 1992)]
    seed: u64,
    /// Report path (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Also write the accuracy matrix here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Score each task against seen classes plus its own instead of all classes.
    #[arg(long)]
    restricted: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Vae,
    Mog,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Cgil,
    Class,
    Generated,
    Unified,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Joint,
    Finetune,
    Zeroshot,
}

impl From<Generator> for GeneratorKind {
    fn from(g: Generator) -> Self {
        match g {
            Generator::Vae => GeneratorKind::Vae,
            Generator::Mog => GeneratorKind::Mog,
            Generator::Gaussian => GeneratorKind::Gaussian,
        }
    }
}

impl From<Mode> for PromptMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Cgil => PromptMode::ClassPlusGenerated,
            Mode::Class => PromptMode::ClassOnly,
            Mode::Generated => PromptMode::GeneratedOnly,
            Mode::Unified => PromptMode::Unified,
        }
    }
}

impl From<Kind> for Baseline {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Joint => Baseline::Joint,
            Kind::Finetune => Baseline::Finetune,
            Kind::Zeroshot => Baseline::Zeroshot,
        }
    }
}

fn summary(report: &RunReport) -> String {
    let ci = report
        .ci_transfer
        .map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
    let faa = report.faa.map_or_else(|| "missing".to_string(), |v| format!("{v:.4}"));
    format!(
        "{:?} seed {}: FAA {faa}, CI-Transfer {ci}, {:.1}s",
        report.method, report.seed, report.wall_times.total_seconds
    )
}

fn finish_run(report: &RunReport, args: &RunArgs) -> Result<()> {
    emit_report(report, &args.out, args.csv.as_deref())?;
    println!("{}", summary(report));
    Ok(())
}

fn config_for(generator: GeneratorKind, mode: PromptMode, args: &RunArgs) -> RunConfig {
    let mut config = RunConfig::desk_scale(generator, mode);
    if args.restricted {
        config.label_set = LabelSet::Restricted;
    }
    config
}

fn write_csv(report: &RunReport, path: &Path) -> Result<()> {
    cgil_core::formats::write_atomic(path, &matrix_csv(report)?)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth {
            classes,
            tasks,
            dim,
            per_class,
            test_per_class,
            sep,
            seed,
            out,
        } => {
            let spec = BenchmarkSpec {
                train_per_class: per_class,
                test_per_class,
                ..BenchmarkSpec::synthetic(classes, tasks, dim, sep, seed)
            };
            let bench = gen_synthetic_benchmark(&spec, &out)?;
            println!(
                "wrote {} train and {} test records ({} classes, {} tasks, d={}) to {}",
                bench.train.len(),
                bench.test.len(),
                classes,
                tasks,
                dim,
                out.display()
            );
        }
        Command::Run {
            common,
            generator,
            prompt_mode,
        } => {
            let bench = load_benchmark(&common.bench)?;
            let config = config_for(generator.into(), prompt_mode.into(), &common);
            finish_run(&run_experiment(&bench, &config, common.seed)?, &common)?;
        }
        Command::Baseline { common, kind } => {
            let bench = load_benchmark(&common.bench)?;
            let config = config_for(GeneratorKind::Vae, PromptMode::ClassPlusGenerated, &common);
            finish_run(&run_baseline(&bench, kind.into(), &config, common.seed)?, &common)?;
        }
        Command::Report { input, csv } => {
            let report = RunReport::read(&input)?;
            report.validate()?;
            if let Some(path) = csv {
                write_csv(&report, &path)?;
            }
            println!("{}", summary(&report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}

fn report_error(e: &Error) {
    eprintln!("error [{}]: {e}", e.category().name());
}
