use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use privagg_cli::app::{run, Args};
use privagg_cli::{CliError, Protocol};

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain().find_map(|e| e.downcast_ref::<CliError>()).map_or(1, |e| e.exit_code() as u8)
}

pub fn main(preset: Option<Protocol>) -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let tool = preset.map_or("privagg", Protocol::name);
    match run(&args, preset).with_context(|| format!("{tool} failed")) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
