//! Command-line surface: thin, exit-code-bearing wrappers over the harness.
//!
//! Diagnostics go to stderr; data goes to files and stdout. Distinct exit
//! codes per error family: 0 success, 2 configuration, 3 file or manifest,
//! 4 pipeline, 5 no estimate available, 6 lock contention.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::bench;
use crate::config::{self, Overrides, RunConfig};
use crate::error::{AppError, Result};
use crate::harness::{self, RunPaths};
use crate::manifest::{EstimateStatus, LockFile, Manifest, Record};
use crate::report;

#[derive(Debug, Parser)]
#[command(
    name = "efeval",
    about = "Constant-time estimation of per-class accuracy change under incremental learning",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Key-value run configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the number of incremental rounds.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Override the estimator mini-batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Override the estimator path: per-sample or minibatch.
    #[arg(long)]
    pub estimator: Option<String>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig> {
        let overrides = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            rounds: self.rounds,
            batch_size: self.batch_size,
            estimator: self.estimator.clone(),
        };
        config::load_config(&self.config, &overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan the dataset's round splits and write split.json.
    Split(CommonArgs),
    /// Execute or resume the incremental-learning run.
    Run(RunArgs),
    /// Print the recorded estimates for one round.
    Estimate(EstimateArgs),
    /// Time the constant-time estimate against full re-testing.
    Bench(BenchArgs),
    /// Join estimates with measurements and summarize calibration.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Pause cleanly after this round; re-run the command to resume.
    #[arg(long)]
    pub stop_after_round: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Round to report, counted from the first incremental update.
    pub round: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Evaluation-set sizes, ascending.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Split(args) => cmd_split(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Estimate(args) => cmd_estimate(&args),
        Command::Bench(args) => cmd_bench(&args),
        Command::Report(args) => cmd_report(&args),
    }
}

fn cmd_split(args: &CommonArgs) -> Result<()> {
    let config = args.load()?;
    let paths = RunPaths::new(&config.out);
    fs::create_dir_all(paths.out()).map_err(|e| AppError::io(paths.out(), e))?;
    let _lock = LockFile::acquire(paths.out())?;
    let data = harness::load_or_build_dataset(&config, &paths)?;
    let plan = harness::load_or_plan_split(&config, &paths, data.len())?;

    let increments: Vec<usize> = plan.rounds[1..].iter().map(|r| r.size()).collect();
    println!("split_path={}", paths.split().display());
    println!("dataset={}", plan.dataset_id);
    println!("total_samples={}", plan.total_samples());
    println!("rounds={}", plan.round_count());
    println!("round0_size={}", plan.rounds[0].size());
    println!("round0_test={}", plan.rounds[0].test.len());
    println!(
        "increment_min={}",
        increments.iter().min().expect("at least one round")
    );
    println!(
        "increment_max={}",
        increments.iter().max().expect("at least one round")
    );
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let config = args.common.load()?;
    let manifest = harness::run_incremental(&config, args.stop_after_round)?;
    println!("manifest={}", manifest.path().display());
    Ok(())
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let config = args.common.load()?;
    let s = args.round;
    if s < 1 || s > config.rounds {
        return Err(AppError::Config(format!(
            "round {s} is outside this run's range 1..={}",
            config.rounds
        )));
    }
    if s < report::FIRST_ESTIMABLE_ROUND {
        return Err(AppError::NoEstimate(format!(
            "round {s}: insufficient samples; the regression needs two past updates, \
             so estimates start at round {}",
            report::FIRST_ESTIMABLE_ROUND
        )));
    }
    let paths = RunPaths::new(&config.out);
    let records = Manifest::at(paths.manifest()).read_all()?;
    let mut any_ok = false;
    let mut printed = 0;
    for rec in &records {
        if let Record::Estimate { round, status, .. } = rec {
            if *round != s {
                continue;
            }
            any_ok |= *status == EstimateStatus::Ok;
            let line = serde_json::to_string(rec)
                .map_err(|e| AppError::Manifest(format!("serializing record: {e}")))?;
            println!("{line}");
            printed += 1;
        }
    }
    if printed == 0 {
        return Err(AppError::Manifest(format!(
            "no estimates recorded for round {s}; the run may be incomplete"
        )));
    }
    if !any_ok {
        return Err(AppError::NoEstimate(format!(
            "round {s}: no class produced a calibrated estimate"
        )));
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let config = args.common.load()?;
    let paths = RunPaths::new(&config.out);
    let _lock = LockFile::acquire(paths.out())?;
    let rows = bench::benchmark(&config, &args.sizes)?;
    print!("{}", bench::to_csv(&rows));
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let config = args.common.load()?;
    let paths = RunPaths::new(&config.out);
    let _lock = LockFile::acquire(paths.out())?;
    let records = Manifest::at(paths.manifest()).read_all()?;
    let (rows, summary) = report::build_report(&records)?;
    report::write_report(&paths, &rows, &summary)?;

    let fmt = |v: Option<f64>| v.map_or("na".to_string(), |v| format!("{v:.6}"));
    for class in &summary.classes {
        println!(
            "class={} rows={} pearson={} final_r2={} mean_abs_error={}",
            class.class,
            class.rows,
            fmt(class.pearson),
            fmt(class.final_r2),
            fmt(class.mean_abs_error),
        );
    }
    println!(
        "rounds={} classes={} mean_r2={}",
        summary.rounds,
        summary.classes.len(),
        fmt(summary.mean_r2)
    );
    Ok(())
}
