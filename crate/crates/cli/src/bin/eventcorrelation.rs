mod common;

fn main() -> std::process::ExitCode {
    common::main(Some(privagg_cli::Protocol::EventCorrelation))
}
