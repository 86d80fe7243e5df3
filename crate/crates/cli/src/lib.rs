//! Operator tooling for a GEPS deployment: gateway client, dataset ingest,
//! a local cluster harness and the single-versus-parallel benchmark.

pub mod bench;
pub mod client;
pub mod cluster;
pub mod config;
pub mod error;
pub mod ingest;

pub use client::{GatewayClient, GatewayError, DEFAULT_GATEWAY};
pub use error::{exit, CliError};
