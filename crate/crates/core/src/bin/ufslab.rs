use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use ufslab::harness::{run_experiment, ExperimentConfig, ExperimentId};
use ufslab::hscore::{h_score_report, FeatureDump, ReportExtras, Weighted};

#[derive(Parser)]
#[command(
    name = "ufslab",
    version,
    about = "Local feature-geometry experiments on finite alphabets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment suite and write its reports.
    Run {
        #[arg(long, value_enum)]
        experiment: ExperimentId,
        /// key = value settings applied on top of the experiment defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// H-score report for a feature dump (CSV with a `label` column, or the
    /// binary dump format).
    Hscore {
        #[arg(long)]
        features: PathBuf,
        /// Parameter count for the corrected score.
        #[arg(long)]
        n_params: Option<f64>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run {
            experiment,
            config,
            seed,
            out,
            eps,
            samples,
        } => {
            let mut cfg = match &config {
                Some(path) => {
                    let mut c = ExperimentConfig::from_file(path, experiment)
                        .with_context(|| format!("reading config {}", path.display()))?;
                    c.experiment = experiment;
                    c
                }
                None => ExperimentConfig::defaults(experiment),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(e) = eps {
                cfg.eps = e;
            }
            if let Some(n) = samples {
                cfg.n_samples = n;
            }
            let summary =
                run_experiment(&cfg).with_context(|| format!("experiment {experiment}"))?;
            for c in &summary.checks {
                println!(
                    "{} {}: {:e} (tolerance {:e})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.tolerance
                );
            }
            println!("reports in {}", cfg.experiment_dir().display());
            Ok(summary.all_pass)
        }
        Command::Hscore {
            features,
            n_params,
            out,
        } => {
            let dump = FeatureDump::read_path(&features)
                .with_context(|| format!("reading features {}", features.display()))?;
            let data = Weighted::samples(&dump.features, &dump.labels, dump.ny())?;
            let report = h_score_report(
                &data,
                &ReportExtras {
                    n_params,
                    ..ReportExtras::default()
                },
            )?;
            let text = serde_json::to_string_pretty(&report)? + "\n";
            match out {
                Some(p) => {
                    std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?
                }
                None => print!("{text}"),
            }
            Ok(report.checks.all_pass())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
