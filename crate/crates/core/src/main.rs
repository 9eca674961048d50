use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use tfd_relax::config::{parse_config, Scenario};
use tfd_relax::run::{run, RunError};

/// Triple-well reservoir quench simulator.
#[derive(Parser)]
#[command(version)]
struct Cli {
    scenario: Scenario,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output_dir` in the configuration.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Solve sweep points on worker threads.
    #[arg(long)]
    parallel: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    let text = std::fs::read_to_string(&cli.config).map_err(|source| RunError::Io {
        path: cli.config.clone(),
        source,
    })?;
    let mut cfg = parse_config(&text)?;
    cfg.scenario = cli.scenario;
    if let Some(dir) = &cli.output {
        cfg.output_dir = dir.clone();
    }
    let summary = run(&cfg, cli.parallel)?;
    for f in &summary.files {
        println!("{}", f.display());
    }
    Ok(())
}
