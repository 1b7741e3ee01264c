//! Generates a self-signed peer certificate and prints its fingerprint for
//! the trust file.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use privagg::transport::tls::Identity;

#[derive(Parser)]
#[command(version, about = "Create a peer certificate and key")]
struct Args {
    /// Subject name of the certificate.
    #[arg(long, default_value = "privagg-peer")]
    name: String,
    #[arg(long)]
    cert: PathBuf,
    #[arg(long)]
    key: PathBuf,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let id = Identity::generate(&args.name).context("generating key pair")?;
    id.save(&args.cert, &args.key)
        .with_context(|| format!("writing {} and {}", args.cert.display(), args.key.display()))?;
    println!("{}", hex::encode(id.fingerprint()));
    Ok(())
}
