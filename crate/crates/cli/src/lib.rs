//! Library surface of the pipeline CLI: configuration, agent transports,
//! and the subcommand implementations, shared by the `deid` binary and the
//! integration tests.

pub mod commands;
pub mod config;
pub mod remote;
