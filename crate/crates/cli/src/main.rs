use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use stokes_afem::{run_afem_detailed, RunConfig};

mod plot;

#[derive(Parser)]
#[command(name = "afem", version, about = "Adaptive finite elements for Stokes flow with point forces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the adaptive loop described by a TOML configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Log-log SVG of estimator and error against Ndof.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Overrides `out-csv`.
        #[arg(long)]
        out_csv: Option<PathBuf>,
        /// Overrides `dump-mesh`.
        #[arg(long)]
        dump_mesh: Option<PathBuf>,
        /// Overrides `dump-indicators`.
        #[arg(long)]
        dump_indicators: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { config, plot, out_csv, dump_mesh, dump_indicators } => {
            let mut cfg =
                RunConfig::from_file(&config).with_context(|| format!("reading {}", config.display()))?;
            let outputs = &mut cfg.outputs;
            outputs.csv = out_csv.or(outputs.csv.take());
            outputs.mesh = dump_mesh.or(outputs.mesh.take());
            outputs.indicators = dump_indicators.or(outputs.indicators.take());

            let outcome = run_afem_detailed(&cfg)?;
            print!("{}", outcome.table.to_csv()?);
            if let Some(path) = plot {
                plot::write_svg(&outcome.table, &path).with_context(|| format!("writing {}", path.display()))?;
            }
            log::info!("stopped: {:?}", outcome.stop);
        }
    }
    Ok(())
}
