use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use minerr::cli::{cmd_compare, cmd_simulate, cmd_verify, CommandOutput, SimulateOptions};

#[derive(Parser)]
#[command(
    name = "minerr",
    version,
    about = "Interval observers with min/max multi-gain injection"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the Metzler and certificate hypotheses for every gain.
    Verify { file: PathBuf },
    /// Integrate plant and observer, write trajectory.csv and metrics.json.
    Simulate {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
        /// Also integrate the error dynamics directly.
        #[arg(long)]
        oracle: bool,
        /// Simulate even when the gain hypotheses fail.
        #[arg(long)]
        force: bool,
    },
    /// Compare the multi-gain observer against each single gain.
    Compare {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match args.command {
        Command::Verify { file } => cmd_verify(&file),
        Command::Simulate {
            file,
            out,
            dt,
            t_end,
            oracle,
            force,
        } => cmd_simulate(
            &file,
            &out,
            &SimulateOptions {
                dt,
                t_end,
                oracle,
                force,
            },
        ),
        Command::Compare { file, out } => cmd_compare(&file, &out),
    };
    match result {
        Ok(CommandOutput { exit_code, report }) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("json serializes")
            );
            ExitCode::from(exit_code as u8)
        }
        Err(e) => {
            eprintln!("minerr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
