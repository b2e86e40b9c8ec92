mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use args::Cli;
use dbdh_core::Error;

fn diagnostic(kind: &str, message: &str) -> String {
    let flat = message.split_whitespace().collect::<Vec<_>>().join(" ");
    serde_json::json!({ "error": kind, "message": flat }).to_string()
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Shape(_) => "shape",
        Error::InputTooSmall(_) => "input_too_small",
        Error::OutOfFrame { .. } => "out_of_frame",
        Error::DegenerateRegion(_) => "degenerate_region",
        Error::DegenerateConfiguration(_) => "degenerate_configuration",
        Error::SampleRejected => "sample_rejected",
        Error::Numeric(_) => "numeric",
        Error::Bounds(_) => "bounds",
        Error::SplitSize { .. } => "split_size",
        Error::NonFiniteLoss { .. } => "non_finite_loss",
        Error::Checkpoint(_) => "checkpoint",
        Error::Io { .. } => "io",
        Error::Image { .. } | Error::Codec(_) => "image",
        Error::Json(_) => "json",
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    if argv.len() < 2 {
        eprintln!("{}", Cli::command().render_usage());
        eprintln!("{}", diagnostic("usage", "no subcommand given"));
        return ExitCode::from(1);
    }
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    ExitCode::from(1)
                }
                _ => {
                    let text = e.render().to_string();
                    let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
                    eprintln!("{}", Cli::command().render_usage());
                    eprintln!("{}", diagnostic("usage", first));
                    ExitCode::from(1)
                }
            };
        }
    };
    match commands::run(cli.command, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", diagnostic(error_kind(&e), &e.to_string()));
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
