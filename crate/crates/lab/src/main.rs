use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use midpoint_lab::config::load_config;
use midpoint_lab::dump::{blocks_text, config_path};
use midpoint_lab::experiments::run_experiment;
use midpoint_lab::verify::{run_all, Suite};
use midpoint_lab::Result;

#[derive(Parser)]
#[command(name = "midpoint-lab", about = "Midpoint Langevin experiments and acceptance checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write its CSV report.
    Run {
        config: PathBuf,
        /// Overrides `run.output`; without either the CSV goes to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Add a runtime_ms column (makes the CSV run-dependent).
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the acceptance suite.
    Verify {
        /// Reduced path counts; a smoke test, not the acceptance run.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Write every report CSV here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write the binary noise path `index` of a config's first step size.
    DumpPath {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write the dense Malliavin blocks of one path as text.
    DumpBlocks {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run {
            config,
            output,
            timing,
            threads,
        } => {
            let mut cfg = load_config(&fs::read_to_string(&config)?)?;
            if let Some(t) = threads {
                cfg.threads = t.max(1);
            }
            let report = run_experiment(&cfg)?;
            let csv = report.to_csv(timing);
            match output.or(cfg.output.clone()) {
                Some(p) => fs::write(p, csv)?,
                None => print!("{csv}"),
            }
            eprintln!("{}", report.summary());
            Ok(report.passed())
        }
        Command::Verify {
            quick,
            threads,
            out_dir,
        } => {
            let outcomes = run_all(&Suite::new(quick, threads.max(1)), out_dir.as_deref())?;
            Ok(outcomes.iter().all(|o| o.pass))
        }
        Command::DumpPath {
            config,
            index,
            output,
        } => {
            let cfg = load_config(&fs::read_to_string(&config)?)?;
            let path = config_path(&cfg, index)?;
            let mut w = BufWriter::new(fs::File::create(output)?);
            path.write_to(&mut w)?;
            w.flush()?;
            Ok(true)
        }
        Command::DumpBlocks {
            config,
            index,
            output,
        } => {
            let cfg = load_config(&fs::read_to_string(&config)?)?;
            let text = blocks_text(&cfg, index)?;
            match output {
                Some(p) => fs::write(p, text)?,
                None => print!("{text}"),
            }
            Ok(true)
        }
    }
}
