use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use pairgen::config::RunConfig;
use pairgen::runner::{run, scan_grid, Overrides, RunError};

#[derive(Parser)]
#[command(name = "pairgen", version, about = "Pair creation in dipolar bilayers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "PAIRGEN_THREADS")]
    threads: Option<usize>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver configuration.
    Run { config: PathBuf },
    /// Sweep one parameter of a bogoliubov-k configuration.
    Scan { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let overrides = Overrides { seed: cli.seed, out: cli.out };
    let (path, scanning) = match &cli.command {
        Command::Run { config } => (config, false),
        Command::Scan { config } => (config, true),
    };
    let result = RunConfig::load(path).map_err(RunError::from).and_then(|cfg| {
        if scanning {
            scan_grid(cfg, &overrides)
        } else {
            run(cfg, &overrides)
        }
    });
    match result {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
