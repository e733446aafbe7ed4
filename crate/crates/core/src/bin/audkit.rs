use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use audkit::config::PipelineConfig;
use audkit::pipeline::{run_ab_comparison, run_lambda_sweep, Pipeline, StageArtifact};

/// Unsupervised acoustic unit discovery toolkit: synthetic corpus, FHVAE
/// feature unification, DPGMM frame clustering, speaker-adversarial
/// bottleneck training, unit inference and ABX/bitrate evaluation.
#[derive(Parser)]
#[command(name = "audkit", version, about)]
struct Cli {
    /// Config file (sectioned `key = value`); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Adversarial weight; overrides the config value.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Evaluate the smoothed unit sequences.
    #[arg(long, global = true)]
    smooth: bool,
    /// Output directory; overrides the config value.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenCorpus,
    /// Train the FHVAE on the corpus.
    TrainFhvae,
    /// Reconstruct speaker-unified features.
    Reconstruct,
    /// Cluster frames with the DPGMM sampler.
    Cluster,
    /// Train the adversarial bottleneck network.
    TrainAmtl,
    /// Infer unit sequences from posteriorgrams.
    InferUnits,
    /// Apply unit sequence smoothing.
    Smooth,
    /// Evaluate ABX discriminability.
    EvalAbx,
    /// Compute unit-sequence bitrates.
    Bitrate,
    /// Run every stage in order.
    RunAll,
    /// Train one model per adversarial weight and tabulate ABX errors.
    SweepLambda,
    /// Cross raw vs reconstructed-feature labels with lambda in {0, best}.
    CompareLabels,
}

fn load_config(cli: &Cli) -> audkit::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(lambda) = cli.lambda {
        cfg.amtl.lambda = lambda;
    }
    if cli.smooth {
        cfg.smooth = true;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_artifact(a: &StageArtifact) {
    let status = if a.skipped { "cached" } else { "done" };
    println!("{:<12} {status:<7} {} ms  {}", a.stage, a.wall_ms, &a.digest[..12]);
}

fn run(cli: &Cli) -> audkit::Result<()> {
    let cfg = load_config(cli)?;
    let stage = |name: &str| -> audkit::Result<()> {
        let pipe = Pipeline::new(cfg.clone())?;
        print_artifact(&pipe.run_stage(name)?);
        Ok(())
    };
    match &cli.command {
        Command::GenCorpus => stage("gen-corpus")?,
        Command::TrainFhvae => stage("train-fhvae")?,
        Command::Reconstruct => stage("reconstruct")?,
        Command::Cluster => stage("cluster")?,
        Command::TrainAmtl => stage("train-amtl")?,
        Command::InferUnits => stage("infer-units")?,
        Command::Smooth => stage("smooth")?,
        Command::EvalAbx => stage("eval-abx")?,
        Command::Bitrate => stage("bitrate")?,
        Command::RunAll => {
            let pipe = Pipeline::new(cfg.clone())?;
            for artifact in pipe.run_all()? {
                print_artifact(&artifact);
            }
            println!("report: {}", cfg.out_dir.join("report.txt").display());
        }
        Command::SweepLambda => {
            let report = run_lambda_sweep(&cfg)?;
            let text = report.render();
            std::fs::create_dir_all(&cfg.out_dir)?;
            std::fs::write(cfg.out_dir.join("sweep.txt"), &text)?;
            print!("{text}");
        }
        Command::CompareLabels => {
            let report = run_ab_comparison(&cfg)?;
            let text = report.render();
            std::fs::create_dir_all(&cfg.out_dir)?;
            std::fs::write(cfg.out_dir.join("compare.txt"), &text)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
