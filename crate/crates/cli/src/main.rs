use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rellich::identities::IdentityId;
use rellich::presets::list_presets;
use rellich_cli::{explain::explain, report, run_file, run_suite};

/// Numerical checks of Rellich and Pohozaev identities on Riemannian charts.
#[derive(Parser)]
#[command(name = "rellich", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Human,
    Machine,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "human")]
        format: Format,
        /// Also write machine records (JSON Lines) to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every .scn file of a directory in sorted order.
    Suite {
        dir: PathBuf,
        /// Write machine records of all scenarios to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the term structure and inputs of an identity.
    Explain { id: String },
    /// List the preset catalog.
    Presets,
}

const INPUT_ERROR: u8 = 3;

fn write_out(path: &PathBuf, text: &str) -> Result<(), u8> {
    std::fs::write(path, text).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        INPUT_ERROR
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { INPUT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(match dispatch(cli.command) {
        Ok(code) | Err(code) => code,
    })
}

fn dispatch(command: Command) -> Result<u8, u8> {
    match command {
        Command::Run { file, format, out } => {
            let report = run_file(&file).map_err(|e| {
                eprintln!("error: {e}");
                INPUT_ERROR
            })?;
            match format {
                Format::Human => print!("{}", report::human(&report)),
                Format::Machine => print!("{}", report::machine(&report)),
            }
            if let Some(path) = out {
                write_out(&path, &report::machine(&report))?;
            }
            Ok(report.exit_code())
        }
        Command::Suite { dir, out } => {
            let outcome = run_suite(&dir).map_err(|e| {
                eprintln!("error: {e}");
                INPUT_ERROR
            })?;
            print!("{}", report::suite_table(&outcome.rows));
            if let Some(path) = out {
                let text: String = outcome.reports.iter().map(report::machine).collect();
                write_out(&path, &text)?;
            }
            Ok(outcome.exit_code())
        }
        Command::Explain { id } => {
            let id: IdentityId = id.parse().map_err(|e| {
                eprintln!("error: {e}");
                INPUT_ERROR
            })?;
            let text = explain(id).map_err(|e| {
                eprintln!("error: {e}");
                INPUT_ERROR
            })?;
            print!("{text}");
            Ok(0)
        }
        Command::Presets => {
            let list = list_presets().map_err(|e| {
                eprintln!("error: {e}");
                INPUT_ERROR
            })?;
            for p in list {
                println!("{p}");
            }
            Ok(0)
        }
    }
}
