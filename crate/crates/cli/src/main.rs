#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod build;
mod commands;
mod data;
mod tables;

use clap::Parser;
use nbvb_core::NbvbError;

use args::{Cli, Command};

fn error_kind(err: &anyhow::Error) -> &'static str {
    match err.downcast_ref::<NbvbError>() {
        Some(NbvbError::Domain(_)) => "domain",
        Some(NbvbError::Construction(_)) => "construction",
        Some(NbvbError::Extrapolation { .. }) => "extrapolation",
        Some(NbvbError::NotPositiveDefinite { .. })
        | Some(NbvbError::OnlineNotPositiveDefinite { .. }) => "numerical",
        Some(NbvbError::Snapshot(_)) => "snapshot",
        None if err.chain().any(|c| c.is::<std::io::Error>()) => "io",
        None => "input",
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Stream(a) => commands::stream(a),
        Command::Summarize(a) => commands::summarize(a),
    };
    if let Err(err) = result {
        let line = serde_json::json!({ "error": format!("{err:#}"), "kind": error_kind(&err) });
        eprintln!("{line}");
        std::process::exit(1);
    }
}
