use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use dimprof::config::{Experiment, ExperimentConfig};
use dimprof::experiments::run;
use dimprof::report::{emit_report, Format};

/// Runs one verification experiment and writes its report.
#[derive(Parser, Debug)]
#[command(name = "dimprof", version)]
struct Cli {
    experiment: Experiment,
    /// Flat TOML config; omitted keys take the experiment's defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value`, applied after the config file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "json,csv")]
    format: Vec<OutputFormat>,
    /// Print the resolved config as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let cfg = ExperimentConfig::from_toml(&text, Some(cli.experiment), &cli.overrides)?;
    if cli.print_config {
        print!("{}", toml::to_string(&cfg)?);
        return Ok(true);
    }
    let report = run(&cfg)?;
    let formats: Vec<Format> = cli
        .format
        .iter()
        .map(|f| match f {
            OutputFormat::Json => Format::Json,
            OutputFormat::Csv => Format::Csv,
        })
        .collect();
    let written = emit_report(&report, &cfg.output_dir, &formats)?;
    print!("{}", report.summary());
    for note in &report.notes {
        println!("  note: {note}");
    }
    for p in written {
        println!("  wrote {}", p.display());
    }
    Ok(report.passed())
}
