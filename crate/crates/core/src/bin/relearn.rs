use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use relearn::cli::{cmd_experiment, cmd_generate, cmd_predict, cmd_train};
use relearn::config::{render_key_help, RunConfig};
use relearn::Result;

#[derive(Parser)]
#[command(name = "relearn", version, about = "Stress classification robust to missing values and outliers")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set pipeline.cv.k=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shorthand for `--set output_dir=DIR`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset, its ground truth, a train/test split and a manifest.
    Generate,
    /// Train the full pipeline and write the artifact and CV report.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Predict every row of a CSV with a trained pipeline.
    Predict {
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to `<output_dir>/predictions.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a study: sweep, handlers or baselines.
    Experiment {
        kind: String,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
}

fn quoted(p: &std::path::Path) -> String {
    format!("{:?}", p.display().to_string())
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = Vec::new();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(o) = &cli.out {
        overrides.push(format!("output_dir={}", quoted(o)));
    }
    match &cli.command {
        Command::Train { train, threshold } => {
            if let Some(t) = train {
                overrides.push(format!("train_data={}", quoted(t)));
            }
            if let Some(t) = threshold {
                overrides.push(format!("pipeline.threshold={t}"));
            }
        }
        Command::Experiment { train, test, .. } => {
            if let Some(t) = train {
                overrides.push(format!("train_data={}", quoted(t)));
            }
            if let Some(t) = test {
                overrides.push(format!("test_data={}", quoted(t)));
            }
        }
        _ => {}
    }
    overrides.extend(cli.overrides.iter().cloned());
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;

    match cli.command {
        Command::Generate => {
            let out = cmd_generate(&config)?;
            print!("{}", out.summary.render());
            println!("wrote {}", config.output_dir.display());
        }
        Command::Train { .. } => {
            let out = cmd_train(&config)?;
            let cv = &out.pipeline.cv_summary;
            println!("cv balanced accuracy {:.4} +/- {:.4}", cv.mean, cv.std);
            println!("wrote {}", out.pipeline_path.display());
        }
        Command::Predict { pipeline, data, output } => {
            let output = output.unwrap_or_else(|| config.output_dir.join("predictions.csv"));
            let n = cmd_predict(&pipeline, &data, &output)?;
            println!("{n} predictions written to {}", output.display());
        }
        Command::Experiment { kind, .. } => {
            let out = cmd_experiment(&kind, &config)?;
            let failed = out.report.rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} rows ({} failed) written to {}", out.report.rows.len(), failed, out.report_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = Cli::command().after_help(render_key_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
