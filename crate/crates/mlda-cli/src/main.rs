use std::path::PathBuf;

use clap::{Parser, Subcommand};
use mlda_cli::commands::{self, DATA_FILE};
use mlda_cli::config::{resolve_config, Overrides};
use mlda_cli::Result;

#[derive(Parser)]
#[command(
    name = "mlda",
    version,
    about = "Multilevel delayed acceptance sampling on the Darcy-flow benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize observations from a known field and record the truth.
    GenerateData {
        /// TOML config file; omit to use the benchmark defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for data.csv, truth.csv, fields.csv, generate.json.
        #[arg(long, default_value = "out")]
        output: PathBuf,
        /// Override the base seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run independent MLDA chains and write one trace CSV per chain.
    Sample {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for chain_<i>.csv and run.json.
        #[arg(long, default_value = "out")]
        output: PathBuf,
        /// Observations CSV; defaults to <output>/data.csv.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Override the base seed; chain i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        /// Toggle the adaptive error model.
        #[arg(long, value_parser = parse_on_off, value_name = "on|off")]
        aem: Option<bool>,
        #[arg(long)]
        chains: Option<usize>,
        /// Retained samples per chain.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        burnin: Option<usize>,
    },
    /// Compute ESS and split R-hat per parameter, plus a cost summary.
    Diagnose {
        /// Directory for diagnostics.csv and summary.csv; also searched for
        /// chain_<i>.csv when no traces are listed.
        #[arg(long, default_value = "out")]
        output: PathBuf,
        /// Trace files to analyze (default: <output>/chain_*.csv).
        traces: Vec<PathBuf>,
    },
    /// Export long-format parameter series with running means.
    PlotData {
        #[arg(long, default_value = "out")]
        output: PathBuf,
        /// Comma-separated parameter names (default: theta_1).
        #[arg(long, value_delimiter = ',')]
        parameters: Vec<String>,
        traces: Vec<PathBuf>,
    },
}

fn parse_on_off(value: &str) -> std::result::Result<bool, String> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected `on` or `off`, found {other:?}")),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData {
            config,
            output,
            seed,
        } => {
            let config = resolve_config(
                config.as_ref(),
                Overrides {
                    seed,
                    ..Default::default()
                },
            )?;
            let outputs = commands::cmd_generate_data(&config, &output)?;
            println!(
                "wrote {} observations to {}",
                outputs.data.observations.len(),
                outputs.data_path.display()
            );
        }
        Command::Sample {
            config,
            output,
            data,
            seed,
            aem,
            chains,
            samples,
            burnin,
        } => {
            let config = resolve_config(
                config.as_ref(),
                Overrides {
                    seed,
                    aem,
                    chains,
                    samples,
                    burnin,
                },
            )?;
            let data_path = data.unwrap_or_else(|| output.join(DATA_FILE));
            let outputs = commands::cmd_sample(&config, &data_path, &output)?;
            println!(
                "wrote {} chains of {} samples to {}",
                outputs.trace_paths.len(),
                config.sampling.n_samples,
                output.display()
            );
        }
        Command::Diagnose { output, traces } => {
            let traces = if traces.is_empty() {
                commands::discover_traces(&output)?
            } else {
                traces
            };
            let outputs = commands::cmd_diagnose(&traces, &output)?;
            for row in &outputs.rows {
                println!("{}: ess = {:.1}, rhat = {:.4}", row.parameter, row.ess, row.rhat);
            }
            println!("wrote {}", outputs.diagnostics_path.display());
            if let Some(path) = &outputs.summary_path {
                println!("wrote {}", path.display());
            }
        }
        Command::PlotData {
            output,
            parameters,
            traces,
        } => {
            let traces = if traces.is_empty() {
                commands::discover_traces(&output)?
            } else {
                traces
            };
            let path = commands::cmd_plot_data(&traces, &parameters, &output)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() {
    // Clap itself exits with 2 on usage errors, matching config errors.
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
