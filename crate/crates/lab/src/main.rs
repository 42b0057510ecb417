use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use subspace_icl::Execution;
use subspace_icl_lab::acceptance::run_suite;
use subspace_icl_lab::experiments::RunOptions;
use subspace_icl_lab::runner::{run_config, RunSettings};
use subspace_icl_lab::{bundled, load_config, LabError};

/// Environment variable holding the default output directory.
const OUT_ENV: &str = "ICL_LAB_OUT";

#[derive(Parser)]
#[command(name = "icl-lab", version, about = "Linear-attention subspace-shift experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment in a config file or bundled config.
    Run {
        config: String,
        /// Output directory [default: $ICL_LAB_OUT, else ./results].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for Monte Carlo trials.
        #[arg(long)]
        threads: Option<usize>,
        /// Override every experiment's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the bundled configurations.
    List,
    /// Run the acceptance suite; exits 0 only if every criterion passes.
    Verify {
        config: String,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn execution(threads: Option<usize>) -> Execution {
    match threads {
        Some(1) => Execution::Sequential,
        Some(n) => Execution::Threads(n),
        None => Execution::Parallel,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<u8, LabError> {
    match command {
        Command::List => {
            for line in bundled::listing() {
                println!("{line}");
            }
            Ok(0)
        }
        Command::Run { config, out, threads, seed } => {
            let (cfg, source) = load_config(&config)?;
            let out = out
                .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("results"));
            let settings = RunSettings { options: RunOptions { exec: execution(threads), seed_override: seed }, threads };
            let manifest = run_config(&cfg, &source, &out, &settings)?;
            for exp in &manifest.experiments {
                for note in &exp.notes {
                    eprintln!("note: {note}");
                }
                let files: Vec<&str> = exp.files.iter().map(|f| f.path.as_str()).collect();
                println!("{:<20} {:>6} rows  {:>8.2} s  {}", exp.id, exp.rows, exp.wall_time_s, files.join(", "));
            }
            println!("manifest: {}", out.join(subspace_icl_lab::runner::MANIFEST_FILE).display());
            Ok(0)
        }
        Command::Verify { config, threads } => {
            let (cfg, _) = load_config(&config)?;
            let acc = cfg.acceptance.unwrap_or(subspace_icl_lab::config::AcceptanceSpec { criteria: Vec::new(), seed: 0 });
            let reports = run_suite(&acc.criteria, acc.seed, execution(threads), |r| println!("{r}"));
            let passed = reports.iter().filter(|r| r.passed).count();
            println!("{passed}/{} criteria passed", reports.len());
            Ok(if passed == reports.len() { 0 } else { 1 })
        }
    }
}
