use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aeforge::eval::{compare_reports, EvalReport, Tolerances};
use aeforge::imaging::{load_ppm, QuantTables};
use aeforge::inference::{decide, DecisionConfig};
use aeforge::models::Detector;
use aeforge::pipeline::{self, PipelineError, RunConfig, Stage};

#[derive(Parser)]
#[command(name = "aeforge", version, about = "Detect autoencoder-reconstructed images from crop-level artifacts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON run configuration; defaults to the chosen profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// desk, paper-shape or smoke.
    #[arg(long, default_value = "desk")]
    profile: String,
    /// Directory for corpus, checkpoints and reports when no config is given.
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Crops per image in the multi-crop mode.
    #[arg(long)]
    tries: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, PipelineError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => {
                let root = self.root.clone().unwrap_or_else(|| PathBuf::from("runs").join(&self.profile));
                RunConfig::profile(&self.profile, root)?
            }
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(tries) = self.tries {
            config.evaluation.tries = tries;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the scenes the autoencoders train on.
    GenData(RunArgs),
    /// Train the surrogate and holdout autoencoders.
    TrainAe(RunArgs),
    /// Write the paired crop corpus and the calibration/evaluation image sets.
    BuildCorpus(RunArgs),
    /// Train the crop detector and score it on held-out crops.
    TrainDetector(RunArgs),
    /// Pick the multi-crop threshold on validation images.
    Calibrate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        fpr_target: Option<f64>,
    },
    /// Image-level decisions on the test images; writes the final report.
    Eval(RunArgs),
    /// Detection rates under JPEG and resize transforms.
    Robustness(RunArgs),
    /// Color statistics of the test card after each autoencoder.
    Artifacts(RunArgs),
    /// Every stage in order.
    Run(RunArgs),
    /// Print the resolved run configuration as JSON.
    Config(RunArgs),
    /// Classify one PPM image.
    Infer {
        image: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1)]
        tries: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Resize images smaller than the crop up instead of rejecting them.
        #[arg(long)]
        upscale_small: bool,
        #[arg(long)]
        json: bool,
    },
    /// Compare two reports field by field.
    ReportDiff {
        left: PathBuf,
        right: PathBuf,
        /// Absolute tolerance for numbers.
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
        /// Per-field override such as `auc=0.01`; repeatable.
        #[arg(long = "field-tolerance", value_parser = parse_field_tolerance)]
        field_tolerance: Vec<(String, f64)>,
    },
    /// Architecture, parameter count and hash of a checkpoint.
    ModelInfo { checkpoint: PathBuf },
    /// Print the JPEG quantization tables for a quality.
    DumpTables {
        #[arg(long, default_value_t = 75)]
        quality: u8,
    },
}

fn parse_field_tolerance(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected name=value")?;
    Ok((k.to_string(), v.parse().map_err(|e| format!("{e}"))?))
}

fn stage(args: &RunArgs, stage: Stage) -> Result<(), PipelineError> {
    pipeline::run_stage(&args.resolve()?, stage).map(|_| ())
}

fn run(command: Command) -> Result<ExitCode, PipelineError> {
    match command {
        Command::GenData(a) => stage(&a, Stage::GenData)?,
        Command::TrainAe(a) => stage(&a, Stage::TrainAe)?,
        Command::BuildCorpus(a) => stage(&a, Stage::BuildCorpus)?,
        Command::TrainDetector(a) => stage(&a, Stage::TrainDetector)?,
        Command::Calibrate { run, fpr_target } => {
            let mut config = run.resolve()?;
            if let Some(t) = fpr_target {
                config.evaluation.fpr_target = t;
            }
            config.validate()?;
            let (_, cal) = pipeline::calibrate(&config)?;
            println!("threshold {}\nfpr {}\nrecall {}", cal.threshold, cal.fpr, cal.recall);
        }
        Command::Eval(a) => {
            let (_, report) = pipeline::evaluate(&a.resolve()?)?;
            for row in &report.decisions {
                println!(
                    "{:<24} {:>5} images  1-try {:>8}  {}-try {:>8}",
                    row.source,
                    row.images,
                    fmt_rate(row.one_try.rate),
                    report.config.tries,
                    fmt_rate(row.multi.rate)
                );
            }
        }
        Command::Robustness(a) => stage(&a, Stage::Robustness)?,
        Command::Artifacts(a) => stage(&a, Stage::Artifacts)?,
        Command::Run(a) => {
            let config = a.resolve()?;
            pipeline::run_all(&config)?;
            println!("{}", config.report_path().display());
        }
        Command::Config(a) => println!("{}", a.resolve()?.to_json()),
        Command::Infer { image, model, tries, threshold, seed, upscale_small, json } => {
            let detector = Detector::load(&model)?;
            let img = load_ppm(&image)?;
            let config = DecisionConfig { tries, threshold, crop_size: detector.crop_size(), seed, upscale_small };
            let verdict = decide(&img, &detector, &config)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&verdict).expect("verdict serializes"));
            } else {
                println!(
                    "{}: {} (aggregate {:.4} over {} crops, threshold {})",
                    image.display(),
                    if verdict.decision == 1 { "generated" } else { "original" },
                    verdict.aggregate,
                    verdict.crops.len(),
                    verdict.threshold
                );
            }
        }
        Command::ReportDiff { left, right, tolerance, field_tolerance } => {
            let tol = Tolerances { default: tolerance, per_field: field_tolerance.into_iter().collect() };
            let diffs = compare_reports(&EvalReport::load(&left)?, &EvalReport::load(&right)?, &tol);
            if diffs.is_empty() {
                println!("reports match");
            } else {
                for d in &diffs {
                    println!("{}: {} != {}", d.path, d.left, d.right);
                }
                return Ok(ExitCode::from(1));
            }
        }
        Command::ModelInfo { checkpoint } => print!("{}", pipeline::model_info(&checkpoint)?),
        Command::DumpTables { quality } => {
            let tables = QuantTables::for_quality(quality).map_err(PipelineError::Image)?;
            print!("{tables}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn fmt_rate(rate: Option<f64>) -> String {
    rate.map_or("-".into(), |r| format!("{:.2}%", 100.0 * r))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Ok(threads) = std::env::var("AEFORGE_THREADS") {
        log::info!("AEFORGE_THREADS={threads}; all work runs on the calling thread");
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
