use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use clutterbridge_cli::pipeline::{run_pipeline, Options};
use clutterbridge_cli::{compare, inspect, CliError};

#[derive(Parser)]
#[command(name = "cb", version, about = "Visuomotor transfer pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) every stage for a config file.
    Pipeline {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Force this stage and all later ones to rerun.
        #[arg(long)]
        stage: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge the evaluation tables of several run directories.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the merged tables as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a checkpoint, dataset bundle or demo corpus.
    Inspect { file: PathBuf },
}

fn threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("CB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("CB_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    threads()?;
    match cli.command {
        Command::Pipeline { config, seed, stage, out } => {
            let outcomes = run_pipeline(&config, &Options { seed, out, force: stage })?;
            for o in outcomes {
                println!("{:<14} {}", o.stage, if o.skipped { "skipped" } else { "ran" });
            }
        }
        Command::Compare { dirs, out } => {
            let c = compare::compare(&dirs)?;
            print!("{}", c.to_text());
            if let Some(out) = out {
                c.write_csv(&out)?;
            }
        }
        Command::Inspect { file } => print!("{}", inspect::inspect(&file)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
