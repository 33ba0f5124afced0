use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use scanpath_guided::harness::{gen_synthetic, gradcheck, pipeline, Run, RunConfig};
use scanpath_guided::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "scanpath-guided",
    version,
    about = "Scanpath prediction and scanpath-guided classification"
)]
struct Cli {
    /// Run config JSON; missing fields take default values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run output directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Overrides the config dataset directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Default,
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Variant {
    With,
    Without,
    Both,
}

impl Variant {
    fn flags(self) -> &'static [bool] {
        match self {
            Variant::With => &[true],
            Variant::Without => &[false],
            Variant::Both => &[false, true],
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset into the data directory.
    GenSynth,
    /// Train the scanpath predictor.
    TrainPredictor {
        /// Continue from the last saved epoch.
        #[arg(long)]
        resume: bool,
    },
    /// Greedy-decode one scanpath per image.
    PredictScanpaths,
    /// Train the classifier with and/or without scanpaths.
    TrainClassifier {
        #[arg(long, value_enum, default_value_t = Variant::Both)]
        variant: Variant,
    },
    /// Predict test-split probabilities with saved classifiers.
    Classify {
        #[arg(long, value_enum, default_value_t = Variant::Both)]
        variant: Variant,
    },
    /// ScanMatch and MultiMatch report for Radiologist, Random and Model.
    EvalScanpaths,
    /// AUROC/AUPRC report with and without scanpaths.
    EvalClassifier,
    /// Finite-difference gradient checks; exits nonzero on any failure.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Every stage in order.
    Pipeline,
    /// Print the effective config.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => match cli.preset {
            Preset::Default => RunConfig::default(),
            Preset::Desk => RunConfig::desk(),
        },
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.data {
        cfg.data_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    let seed = cfg.seed;
    let run = Run::new(cfg, &cli.out)?;
    match &cli.command {
        Command::GenSynth => {
            let dir = &run.config.data_dir;
            let images = gen_synthetic(&run.config.synth, seed, dir)?;
            println!("wrote {} images to {}", images.len(), dir.display());
        }
        Command::TrainPredictor { resume } => print_json(&pipeline::train_predictor_cmd(&run, *resume)?),
        Command::PredictScanpaths => {
            let out = pipeline::predict_scanpaths_cmd(&run)?;
            println!("generated {} scanpaths", out.len());
        }
        Command::TrainClassifier { variant } => {
            for &with in variant.flags() {
                let log = pipeline::train_classifier_cmd(&run, with)?;
                println!("{}: best epoch {}", log.variant, log.log.best_epoch);
            }
        }
        Command::Classify { variant } => {
            for &with in variant.flags() {
                let preds = pipeline::classify_cmd(&run, with)?;
                println!("classified {} test images", preds.len());
            }
        }
        Command::EvalScanpaths => print_json(&pipeline::eval_scanpaths_cmd(&run)?),
        Command::EvalClassifier => print_json(&pipeline::eval_classifier_cmd(&run)?),
        Command::Gradcheck { seeds } => {
            let mut ok = true;
            for s in 0..*seeds {
                for r in gradcheck::run_all(seed.wrapping_add(s * 1000))? {
                    println!(
                        "{} seed {}: {}",
                        r.name,
                        seed.wrapping_add(s * 1000),
                        if r.passed() { "PASS" } else { "FAIL" }
                    );
                    if !r.passed() {
                        println!("{}", r.report);
                        ok = false;
                    }
                }
            }
            return Ok(ok);
        }
        Command::Pipeline => print_json(&pipeline::run_pipeline(&run)?.classifier),
        Command::ShowConfig => println!("{}", run.config.to_json()),
    }
    Ok(true)
}

fn report(e: &Error) {
    let mut shown = e.to_string();
    eprintln!("error: {shown}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        let msg = s.to_string();
        if !shown.contains(&msg) {
            eprintln!("  caused by: {msg}");
        }
        shown = msg;
        source = s.source();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}
