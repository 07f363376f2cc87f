mod cache;
mod config;
mod stages;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use nlurank::calibration::ComparisonTable;
use nlurank::experiment::{summarize_seeds, SeedMetrics, SeedSummaryRow};

use config::CommonArgs;
use stages::Run;

/// Modular, calibrated re-ranking of NLU hypotheses.
#[derive(Debug, Parser)]
#[command(name = "nlurank", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the seeded train/dev/test corpus.
    GenCorpus(CommonArgs),
    /// Train each domain's classifier, intent model and slot tagger on the train split.
    TrainComponents(CommonArgs),
    /// Train per-domain re-rankers on the dev split for every configured scheme.
    TrainReranker(CommonArgs),
    /// Decode the test split with every scheme and report SemER.
    Evaluate(CommonArgs),
    /// Reliability curves and ECE from the evaluated n-best lists.
    CalibReport(CommonArgs),
    /// Train R3 re-rankers on independent dev subsets and compare with full-data training.
    DesyncExperiment(CommonArgs),
    /// Every stage in order; unchanged stages are skipped.
    RunAll {
        #[command(flatten)]
        common: CommonArgs,
        /// Repeat for this many consecutive seeds, each in its own subdirectory, and summarize.
        #[arg(long)]
        seeds: Option<u64>,
    },
}

fn run(common: &CommonArgs) -> Result<Run> {
    Run::new(common.out.clone(), common.experiment_config()?, common.schema_set()?)
}

fn print_table(table: &ComparisonTable) {
    println!("{:<10} {:>8} {:>8} {:>8}", "scheme", "SemER", "IE", "ECE");
    for r in &table.rows {
        println!("{:<10} {:>8.4} {:>8.4} {:>8.4}", r.scheme, r.semer, r.ie_rate, r.ece);
    }
}

fn print_summary(rows: &[SeedSummaryRow]) {
    println!("{:<10} {:>18} {:>18} {:>18}", "scheme", "SemER", "ECE", "gain %");
    for r in rows {
        let gain = r
            .relative_improvement
            .map(|m| format!("{:.2} ± {:.2}", m.mean, m.std))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<10} {:>18} {:>18} {:>18}",
            r.scheme,
            format!("{:.4} ± {:.4}", r.semer.mean, r.semer.std),
            format!("{:.4} ± {:.4}", r.ece.mean, r.ece.std),
            gain
        );
    }
}

fn seed_metrics(run: &Run) -> Result<SeedMetrics> {
    let table = run.calibration()?;
    let evaluation = run.evaluation()?;
    Ok(SeedMetrics {
        seed: run.cfg.seed,
        rows: table.rows,
        relative_improvement: evaluation
            .schemes
            .iter()
            .filter_map(|s| s.relative_improvement.map(|v| (s.scheme.to_string(), v)))
            .collect(),
    })
}

fn run_all(common: &CommonArgs, seeds: Option<u64>) -> Result<()> {
    let Some(count) = seeds else {
        let run = run(common)?;
        run.run_all()?;
        print_table(&run.calibration()?);
        println!("desync SemER change: {:+.3}%", run.desync_delta()?);
        return Ok(());
    };
    anyhow::ensure!(count > 0, "--seeds must be at least 1");
    let base = common.experiment_config()?;
    let schemas = common.schema_set()?;
    let mut metrics = Vec::new();
    for seed in base.seed..base.seed + count {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let run = Run::new(common.out.join(format!("seed-{seed}")), cfg, schemas.clone())?;
        run.run_all().with_context(|| format!("seed {seed}"))?;
        metrics.push(seed_metrics(&run)?);
    }
    let summary = summarize_seeds(&metrics)?;
    let path = common.out.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    print_summary(&summary);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus(c) => run(&c)?.gen_corpus().map(drop),
        Command::TrainComponents(c) => run(&c)?.train_components().map(drop),
        Command::TrainReranker(c) => run(&c)?.train_reranker().map(drop),
        Command::Evaluate(c) => {
            let run = run(&c)?;
            run.evaluate()?;
            for s in run.evaluation()?.schemes {
                let gain = s.relative_improvement.map(|g| format!("{g:+.2}%")).unwrap_or_default();
                println!("{:<10} SemER {:.4} {gain}", s.scheme.as_str(), s.report.semer);
            }
            Ok(())
        }
        Command::CalibReport(c) => {
            let run = run(&c)?;
            run.calib_report()?;
            print_table(&run.calibration()?);
            Ok(())
        }
        Command::DesyncExperiment(c) => {
            let run = run(&c)?;
            run.desync()?;
            println!("desync SemER change: {:+.3}%", run.desync_delta()?);
            Ok(())
        }
        Command::RunAll { common, seeds } => run_all(&common, seeds),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
