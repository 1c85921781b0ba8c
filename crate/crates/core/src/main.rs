use std::process::ExitCode;

use clap::Parser;
use serde_json::json;
use yamabe_flow::cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok((report, passed)) => {
            println!("{}", serde_json::to_string_pretty(&report).unwrap_or_default());
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            let report = json!({ "passed": false, "error": e.to_string() });
            println!("{}", serde_json::to_string_pretty(&report).unwrap_or_default());
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
