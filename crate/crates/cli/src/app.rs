//! Command-line front end shared by all binaries.

use std::path::PathBuf;

use clap::Parser;
use privagg::{default_field, Role};
use privagg_bench::{throughput, BenchOp, Transport};

use crate::config::{parse_role, PeerConfig, Protocol};
use crate::error::CliError;
use crate::input::{run_input_peer, run_input_peer_realtime};
use crate::privacy::run_privacy_peer;
use crate::sim::run_local_sim;

#[derive(Debug, Parser)]
#[command(version, about = "Privacy-preserving aggregation peer")]
pub struct Args {
    /// Peer configuration file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured role.
    #[arg(long, value_parser = parse_role)]
    pub role: Option<Role>,
    /// Overrides the configured protocol.
    #[arg(long)]
    pub protocol: Option<Protocol>,
    /// Overrides the configured peer id.
    #[arg(long)]
    pub id: Option<usize>,
    /// Runs all peers in this process over the simulator transport.
    #[arg(long)]
    pub sim: bool,
    /// Number of input peers in simulator mode.
    #[arg(long, requires = "sim")]
    pub peers: Option<usize>,
    /// Number of privacy peers in simulator mode.
    #[arg(long, requires = "sim")]
    pub privacy: Option<usize>,
    /// Randomness seed for simulator mode.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Prints an operations-per-second table for `mult`, `equal` or `lessthan`.
    #[arg(long, value_name = "OP")]
    pub bench: Option<BenchOp>,
    /// Parallel operations per batch in bench mode (comma-separated).
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 100, 1000])]
    pub parallelism: Vec<usize>,
    /// Timed batches per measurement in bench mode.
    #[arg(long, default_value_t = 5)]
    pub batches: usize,
    /// Input peers share each window when it ends on the wall clock.
    #[arg(long)]
    pub realtime: bool,
}

/// Runs one invocation. `preset` is the protocol a dedicated binary speaks.
pub fn run(args: &Args, preset: Option<Protocol>) -> Result<(), CliError> {
    if let Some(op) = args.bench {
        let m = args.privacy.unwrap_or(3);
        return bench(op, m, &args.parallelism, args.batches);
    }
    let path = args.config.as_ref().ok_or_else(|| CliError::Validation("--config is required".into()))?;
    let mut cfg = PeerConfig::load(path)?;
    if let (Some(pre), Some(conf)) = (preset, cfg.protocol) {
        if pre != conf {
            return Err(CliError::Validation(format!(
                "this tool runs {pre}, but {} configures {conf}",
                path.display()
            )));
        }
    }
    cfg.protocol = args.protocol.or(cfg.protocol).or(preset);
    if let Some(id) = args.id {
        cfg.id = id;
    }
    if args.sim {
        if let Some(n) = args.peers {
            cfg.n = n;
        }
        cfg.sim_m =
            Some(args.privacy.unwrap_or(if cfg.privacy_peers.is_empty() { 3 } else { cfg.privacy_peers.len() }));
        let seed = args.seed.or(cfg.seed).unwrap_or(0);
        let results = run_local_sim(&cfg, seed)?;
        for r in results {
            print!("window {}: {}", r.window, r.output.render());
        }
        return Ok(());
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    match args.role.or(cfg.role) {
        Some(Role::Input) if args.realtime => run_input_peer_realtime(&cfg),
        Some(Role::Input) => run_input_peer(&cfg).map(|_| ()),
        Some(Role::Privacy) => run_privacy_peer(&cfg),
        None => Err(CliError::Validation("no role given (config key `role` or --role)".into())),
    }
}

fn bench(op: BenchOp, m: usize, parallelism: &[usize], batches: usize) -> Result<(), CliError> {
    println!(
        "{:<12} {:>3} {:>11} {:>8} {:>13} {:>14}",
        "operation", "m", "parallelism", "batches", "rounds/batch", "ops/s"
    );
    for &par in parallelism {
        let t = throughput(default_field(), op, par, m, Transport::LoopbackTls, batches)
            .map_err(|e| CliError::Abort(e.to_string()))?;
        println!(
            "{:<12} {:>3} {:>11} {:>8} {:>13} {:>14.1}",
            op.label(),
            t.m,
            t.parallelism,
            t.batches,
            t.rounds_per_batch,
            t.ops_per_sec
        );
    }
    Ok(())
}
