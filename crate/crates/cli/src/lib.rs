//! Per-window command-line tools: input peers read window files and share
//! them, privacy peers aggregate the shares and write result files.

pub mod app;
pub mod config;
pub mod error;
pub mod input;
pub mod output;
pub mod privacy;
pub mod sim;
pub mod window;

pub use config::{PeerConfig, Protocol};
pub use error::CliError;

#[cfg(test)]
mod tests;
