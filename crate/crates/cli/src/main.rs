use std::fs;
use std::process::ExitCode;

use ccbfnet::commands::{execute_with_manifest, Output};
use ccbfnet::config::{parse_config, ExperimentSpec, Format};
use ccbfnet::reproduce::reproduce;
use ccbfnet::CliError;
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Simulate,
    NuStarSweep,
    EpsilonSurface,
    Reproduce,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Svg,
}

/// Collaborative barrier-certificate experiments on networked SIS epidemics.
#[derive(Debug, Parser)]
#[command(name = "ccbfnet", version)]
struct Args {
    command: Command,
    /// Experiment config (TOML). Optional for `reproduce`, which ships its own.
    #[arg(long)]
    config: Option<String>,
    /// Output directory; defaults to `output.directory` of the config.
    #[arg(long)]
    out: Option<String>,
    /// Comma-separated subset of csv,svg; overrides `output.formats`.
    #[arg(long, value_delimiter = ',')]
    formats: Option<Vec<FormatArg>>,
    /// Figure to reproduce (1-4).
    #[arg(long)]
    figure: Option<u32>,
}

fn config_error(message: String) -> CliError {
    CliError::Config(ccbfnet::config::ConfigErrors(vec![ccbfnet::config::ConfigError { line: None, message }]))
}

fn run(args: Args) -> Result<Vec<String>, CliError> {
    let formats: Option<Vec<Format>> = args.formats.map(|v| {
        v.into_iter()
            .map(|f| match f {
                FormatArg::Csv => Format::Csv,
                FormatArg::Svg => Format::Svg,
            })
            .collect()
    });
    if let Command::Reproduce = args.command {
        let id = args.figure.ok_or_else(|| config_error("reproduce needs --figure N".into()))?;
        return reproduce(id, args.out.as_deref(), formats.as_deref()).map(|(lines, _)| lines);
    }
    let path = args.config.ok_or_else(|| config_error("--config PATH is required".into()))?;
    let text = fs::read_to_string(&path).map_err(|e| config_error(format!("{path}: {e}")))?;
    let cfg = parse_config(&text).map_err(CliError::Config)?;
    let expected = match args.command {
        Command::Simulate => matches!(cfg.experiment, ExperimentSpec::Simulate),
        Command::NuStarSweep => matches!(cfg.experiment, ExperimentSpec::NuStarSweep { .. }),
        Command::EpsilonSurface => matches!(cfg.experiment, ExperimentSpec::EpsilonSurface { .. }),
        Command::Reproduce => unreachable!(),
    };
    if !expected {
        return Err(config_error(format!("{path}: experiment.kind does not match the {:?} command", args.command)));
    }
    let out = Output::new(args.out.unwrap_or_else(|| cfg.output.directory.clone()), formats.as_deref().unwrap_or(&cfg.output.formats))?;
    execute_with_manifest(&cfg, &text, &out).map(|(_, report)| report.lines)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
