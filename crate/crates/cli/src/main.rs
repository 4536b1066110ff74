use std::process::ExitCode;

use clap::Parser;
use sigma2lab::{emit, run, Cli, RunConfig};

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().command.split();
    let out = args.out.clone();
    let cfg = match RunConfig::resolve(kind, args) {
        Ok(c) => c,
        Err(e) => {
            // Bad flags still leave a machine-readable trace.
            let json = serde_json::json!({ "pass": false, "error": e.to_string() }).to_string();
            if let Some(p) = out {
                let _ = sigma2_pde::io::write_atomic(&p, json.as_bytes());
            }
            println!("{json}");
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let outcome = run(cfg);
    match emit(&outcome) {
        Ok(json) => println!("{json}"),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    if let Some(e) = &outcome.error {
        eprintln!("error: {e}");
    }
    if outcome.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
