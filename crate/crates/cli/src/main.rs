use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use apga_core::data::{write_dataset, SplitKind};
use apga_core::harness::{
    evaluate_run, run_experiment, run_mask_quality, write_charts, write_gallery, DatasetSource, ExperimentConfig,
    ExperimentOptions,
};
use apga_core::trainer::Augmentation;
use apga_core::verify::{estimator_suite, gradient_suite, EstimatorSuite, VerifyReport};
use apga_core::{Error, Precision};

#[derive(Parser)]
#[command(name = "apga", version, about = "Adversarial policy-gradient mask augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset to disk as PNGs plus labels.csv.
    GenerateData {
        #[command(flatten)]
        common: ConfigArgs,
        /// Dataset seed (synthetic sources only).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run per (augmentation, seed) and write summary.json.
    Train(TrainArgs),
    /// Classifier accuracy of a finished or interrupted run.
    Eval {
        run_dir: PathBuf,
        #[arg(long, default_value = "val")]
        split: SplitKind,
    },
    /// IoU of a run's masks against the ground-truth ROI.
    MaskQuality {
        run_dir: PathBuf,
        #[arg(long, default_value = "val")]
        split: SplitKind,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Gradient and estimator checks.
    Verify {
        #[arg(value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for verify.txt and verify.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SVG charts and a mask gallery for a run directory.
    Plot {
        run_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        columns: usize,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON); built-in defaults if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Train a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Train seeds 0..N.
    #[arg(long)]
    seeds: Option<u64>,
    /// Augmentations to compare, comma separated.
    #[arg(long, value_delimiter = ',')]
    aug: Vec<Augmentation>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long)]
    steps: Option<usize>,
    /// Continue from each run's latest checkpoint.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    All,
    Gradients,
    Estimator,
}

fn load_config(args: &ConfigArgs) -> apga_core::Result<ExperimentConfig> {
    match &args.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    }
}

fn train(args: TrainArgs) -> apga_core::Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if let Some(n) = args.seeds {
        cfg.seeds = (0..n).collect();
    }
    if !args.aug.is_empty() {
        cfg.augmentations = args.aug;
    }
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    if let Some(p) = args.precision {
        cfg.train.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    if let Some(steps) = args.steps {
        cfg.train.steps = steps;
    }
    cfg.validate()?;
    cfg.save(&cfg.out_dir.join("experiment.json"))?;
    let summary = run_experiment(
        &cfg,
        &ExperimentOptions {
            resume: args.resume,
            threads: None,
        },
    )?;
    print!("{}", summary.to_text());
    Ok(())
}

fn generate_data(args: &ConfigArgs, seed: Option<u64>, out: &Path) -> apga_core::Result<()> {
    let mut cfg = load_config(args)?;
    if let (Some(s), DatasetSource::Synthetic(spec)) = (seed, &mut cfg.dataset) {
        spec.seed = s;
    }
    let data = cfg.dataset.load()?;
    match &cfg.dataset {
        DatasetSource::Synthetic(spec) => write_dataset(&data, out, Some(spec))?,
        DatasetSource::Folder { .. } => write_dataset::<()>(&data, out, None)?,
    }
    let sizes: Vec<String> = SplitKind::ALL
        .iter()
        .map(|&k| format!("{} {}", k.name(), data.split(k).len()))
        .collect();
    println!("wrote {} ({})", out.display(), sizes.join(", "));
    Ok(())
}

fn verify(suite: Suite, seed: u64, out: Option<&Path>) -> apga_core::Result<bool> {
    let mut report = VerifyReport::default();
    if suite != Suite::Estimator {
        report.merge(gradient_suite(seed)?);
    }
    if suite != Suite::Gradients {
        report.merge(estimator_suite(EstimatorSuite {
            seed,
            ..Default::default()
        })?);
    }
    let text = report.to_text();
    print!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let txt = dir.join("verify.txt");
        std::fs::write(&txt, &text).map_err(|e| Error::io(&txt, e))?;
        let json = dir.join("verify.json");
        std::fs::write(&json, report.to_json()).map_err(|e| Error::io(&json, e))?;
    }
    Ok(report.passed())
}

fn execute(cli: Cli) -> apga_core::Result<bool> {
    match cli.command {
        Command::GenerateData { common, seed, out } => generate_data(&common, seed, &out)?,
        Command::Train(args) => train(args)?,
        Command::Eval { run_dir, split } => {
            let r = evaluate_run(&run_dir, split)?;
            println!("{} accuracy {:.4} ({} samples)", r.split, r.accuracy, r.samples);
        }
        Command::MaskQuality { run_dir, split, json } => {
            let cfg = ExperimentConfig::load(&run_dir.join(apga_core::harness::RUN_CONFIG_FILE))?;
            let data = cfg.dataset.load()?;
            if !data.has_roi() {
                return Err(Error::Unsupported("dataset has no ground-truth ROI masks".into()));
            }
            match run_mask_quality(&run_dir, &data, split)? {
                Some(q) if json => println!("{}", serde_json::to_string_pretty(&q).expect("report serializes")),
                Some(q) => print!("{}", q.to_text()),
                None => {
                    return Err(Error::Unsupported(format!(
                        "{} runs produce no learned masks",
                        cfg.train.augmentation
                    )))
                }
            }
        }
        Command::Verify { suite, seed, out } => return verify(suite, seed, out.as_deref()),
        Command::Plot { run_dir, columns } => {
            for p in write_charts(&run_dir)? {
                println!("{}", p.display());
            }
            let cfg = ExperimentConfig::load(&run_dir.join(apga_core::harness::RUN_CONFIG_FILE))?;
            println!("{}", write_gallery(&run_dir, &cfg.dataset.load()?, columns)?.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::MissingFile(_) | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
