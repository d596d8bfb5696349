use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use tnt_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            // a closed pipe only loses the summary; the files are written
            let mut out = std::io::stdout().lock();
            for line in &report.summary {
                let _ = writeln!(out, "{line}");
            }
            if !report.outputs.is_empty() {
                let _ = writeln!(out, "wrote {} files", report.outputs.len());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
